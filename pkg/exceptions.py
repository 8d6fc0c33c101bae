from typing import Optional


class NormalsError(Exception):
    """Base error. Carries the process exit code and a one-line detail."""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def one_line(self) -> str:
        detail = self.detail.replace("\n", " ").replace('"', "'")
        return f'error code={self.exit_code} type={type(self).__name__} detail="{detail}"'


class UsageError(NormalsError):
    exit_code = 2


class DataError(NormalsError):
    pass


class ParseError(DataError):
    def __init__(self, path: str, detail: str, line: Optional[int] = None):
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {detail}")
        self.path = path
        self.line = line


class ShapeMismatchError(NormalsError, ValueError):
    def __init__(self, op: str, left: tuple, right: tuple):
        super().__init__(f"{op}: incompatible shapes {tuple(left)} and {tuple(right)}")
        self.op = op


class GradientError(NormalsError):
    pass


class PatchError(NormalsError):
    pass


class DegenerateError(NormalsError):
    pass


class TrainingError(NormalsError):
    def __init__(self, detail: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        if epoch is not None:
            detail = f"epoch {epoch} batch {batch}: {detail}"
        super().__init__(detail)
        self.epoch = epoch
        self.batch = batch


class CheckpointError(NormalsError):
    pass
