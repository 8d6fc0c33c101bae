import logging
import sys
from pathlib import Path
from typing import Optional

from dotenv import dotenv_values
from pydantic_settings import BaseSettings

from exceptions import UsageError


RADIUS_PRESETS: dict[str, list[float]] = {
    "multi1": [0.01, 0.03, 0.05],
    "multi2": [0.03, 0.05, 0.07],
}


class Settings(BaseSettings):
    # Reproducibility / parallelism
    SEED: int = 0
    WORKERS: int = 1
    LOG_LEVEL: str = "INFO"

    # Optional PCPNet-layout dataset on disk
    DATASET_ROOT: Optional[str] = None

    # Patch sampling
    K: int = 500
    RADII: list[float] = RADIUS_PRESETS["multi1"]
    THETA: float = 0.5
    THETA_SMALL: float = 0.8
    SMALL_SCALE_CUTOFF: float = 0.03

    # Optimisation
    LEARNING_RATE: float = 1e-4
    MOMENTUM: float = 0.9
    BATCH_SIZE_SINGLE: int = 64
    BATCH_SIZE_MULTI: int = 16
    EPOCHS: int = 20
    PATCHES_PER_SHAPE: int = 500

    class Config:
        env_file = ".env"
        env_prefix = "NORMALS_"
        case_sensitive = True
        extra = "ignore"


settings = Settings()


def load_config_file(path: str) -> dict[str, str]:
    """
    Read a plain `key = value` file. Keys are lower-cased so they can be
    passed straight into the pydantic config models; comma-separated values
    are left as strings and split by the model validators.
    """
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {key.strip().lower(): value.strip() for key, value in values.items() if value is not None}


def configure_logging(level: str = "INFO") -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_normals_handler", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    handler._normals_handler = True
    root.addHandler(handler)
    root.setLevel(level.upper())
