"""
Reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` wraps a numpy array. Every primitive below computes its value
eagerly and, when any input requires grad, records a closure that maps the
output gradient to one gradient per input. `backward` walks the recorded
graph in reverse topological order.
"""

import itertools
import json
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Union

import numpy as np

from exceptions import CheckpointError, GradientError, ShapeMismatchError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "normals-params/1"
NORMALIZE_EPS = 1e-12

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()
_creation = itertools.count()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording for the current thread."""
    previous = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"
        self._seq = next(_creation)

    @classmethod
    def _result(cls, value: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(value, dtype=np.float64)
        out.grad = None
        out.op = op
        out._seq = next(_creation)
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def custom_op(value: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    """Record an op whose value and vector-Jacobian product are supplied by the caller."""
    return Tensor._result(value, parents, backward_fn, op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(op, a.shape, b.shape) from None


# Elementwise arithmetic ---------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward_fn, "add")


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), backward_fn, "mul")


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatchError("matmul", a.shape, b.shape) from None

    def backward_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data @ b.data, (a, b), backward_fn, "matmul")


def bmv(m: TensorLike, v: TensorLike) -> Tensor:
    """Batched matrix-vector product: (..., n, n) x (..., n) -> (..., n)."""
    m, v = as_tensor(m), as_tensor(v)
    if m.ndim < 2 or v.ndim < 1 or m.shape[-1] != v.shape[-1]:
        raise ShapeMismatchError("bmv", m.shape, v.shape)
    try:
        np.broadcast_shapes(m.shape[:-2], v.shape[:-1])
    except ValueError:
        raise ShapeMismatchError("bmv", m.shape, v.shape) from None
    value = np.einsum("...ij,...j->...i", m.data, v.data)

    def backward_fn(g):
        gm = g[..., :, None] * v.data[..., None, :]
        gv = np.einsum("...ij,...i->...j", m.data, g)
        return _unbroadcast(gm, m.shape), _unbroadcast(gv, v.shape)

    return Tensor._result(value, (m, v), backward_fn, "bmv")


# Nonlinearities -----------------------------------------------------------

def relu(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, x.data, 0.0), (x,), backward_fn, "relu")


def tanh(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1.0 - y * y),)

    return Tensor._result(y, (x,), backward_fn, "tanh")


def sigmoid(x: TensorLike) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return Tensor._result(y, (x,), backward_fn, "sigmoid")


def log(x: TensorLike) -> Tensor:
    x = as_tensor(x)

    def backward_fn(g):
        return (g / x.data,)

    return Tensor._result(np.log(x.data), (x,), backward_fn, "log")


def clip(x: TensorLike, low: float, high: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= low) & (x.data <= high)

    def backward_fn(g):
        return (g * inside,)

    return Tensor._result(np.clip(x.data, low, high), (x,), backward_fn, "clip")


def minimum(a: TensorLike, b: TensorLike) -> Tensor:
    """Elementwise min. Ties send the gradient to `a`."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("minimum", a, b)
    take_a = a.data <= b.data

    def backward_fn(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return Tensor._result(np.where(take_a, a.data, b.data), (a, b), backward_fn, "minimum")


def softmax(x: TensorLike) -> Tensor:
    """Softmax over the last axis."""
    x = as_tensor(x)
    shifted = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = shifted / shifted.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._result(y, (x,), backward_fn, "softmax")


# Reductions -----------------------------------------------------------------

def _check_axis(op: str, x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatchError(op, x.shape, (axis,))
    return axis % x.ndim


def reduce_sum(x: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis("reduce_sum", x, axis)

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward_fn, "reduce_sum")


def mean(x: TensorLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is not None:
        axis = _check_axis("mean", x, axis)
    count = x.data.size if axis is None else x.shape[axis]

    def backward_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return Tensor._result(x.data.mean(axis=axis, keepdims=keepdims), (x,), backward_fn, "mean")


def weighted_mean(x: TensorLike, w: TensorLike, axis: int) -> Tensor:
    """sum(w * x, axis) / sum(w, axis); `w` must broadcast against `x`."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != x.ndim:
        raise ShapeMismatchError("weighted_mean", x.shape, w.shape)
    try:
        compatible = np.broadcast_shapes(x.shape, w.shape) == x.shape
    except ValueError:
        compatible = False
    if not compatible:
        raise ShapeMismatchError("weighted_mean", x.shape, w.shape)
    axis = _check_axis("weighted_mean", x, axis)
    total = w.data.sum(axis=axis, keepdims=True)
    y_kept = (x.data * w.data).sum(axis=axis, keepdims=True) / total

    def backward_fn(g):
        g = np.expand_dims(g, axis)
        gx = g * w.data / total
        gw = g * (x.data - y_kept) / total
        return _unbroadcast(gx, x.shape), _unbroadcast(gw, w.shape)

    return Tensor._result(np.squeeze(y_kept, axis=axis), (x, w), backward_fn, "weighted_mean")


def norm(x: TensorLike, axis: int = -1) -> Tensor:
    """Euclidean norm over `axis`; the gradient at the origin is taken as zero."""
    x = as_tensor(x)
    axis = _check_axis("norm", x, axis)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def backward_fn(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.expand_dims(g, axis) * np.where(n > 0, x.data / safe, 0.0),)

    return Tensor._result(np.squeeze(n, axis=axis), (x,), backward_fn, "norm")


def l2_normalize(x: TensorLike, eps: float = NORMALIZE_EPS) -> Tensor:
    """x / (||x|| + eps) over the last axis."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    d = n + eps
    y = x.data / d

    def backward_fn(g):
        inner = (g * x.data).sum(axis=-1, keepdims=True)
        return (g / d - x.data * inner / (np.maximum(n, 1e-300) * d * d),)

    return Tensor._result(y, (x,), backward_fn, "l2_normalize")


# Shape manipulation ---------------------------------------------------------

def concat(tensors: Sequence[TensorLike], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeMismatchError("concat", (), ())
    first = parts[0]
    axis = _check_axis("concat", first, axis)
    for other in parts[1:]:
        if other.ndim != first.ndim or any(
            i != axis and s != t for i, (s, t) in enumerate(zip(first.shape, other.shape))
        ):
            raise ShapeMismatchError("concat", first.shape, other.shape)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(np.concatenate([p.data for p in parts], axis=axis), parts, backward_fn, "concat")


def reshape(x: TensorLike, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        value = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError("reshape", x.shape, tuple(shape)) from None

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return Tensor._result(value, (x,), backward_fn, "reshape")


def expand(x: TensorLike, shape: tuple[int, ...]) -> Tensor:
    """Broadcast `x` to `shape` (size-1 and missing leading axes only)."""
    x = as_tensor(x)
    try:
        value = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeMismatchError("expand", x.shape, tuple(shape)) from None

    def backward_fn(g):
        return (_unbroadcast(g, x.shape),)

    return Tensor._result(value, (x,), backward_fn, "expand")


def transpose(x: TensorLike) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatchError("transpose", x.shape, ())

    def backward_fn(g):
        return (np.swapaxes(g, -1, -2),)

    return Tensor._result(np.swapaxes(x.data, -1, -2).copy(), (x,), backward_fn, "transpose")


# Backward -------------------------------------------------------------------

def _reachable(root: Tensor) -> list[Tensor]:
    """
    Nodes reachable from `root` through requires-grad edges, newest first.
    Creation order is a topological order that does not depend on which
    loss the graph is entered from, so gradient accumulation order is stable.
    """
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad and id(p) not in seen)
    return sorted(seen.values(), key=lambda node: node._seq, reverse=True)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf that requires grad."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GradientError("loss is not on the tape (no input requires grad)")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in _reachable(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# Parameter container ----------------------------------------------------------

def save_parameters(path: str, params: dict[str, Tensor], metadata: Optional[dict] = None) -> None:
    """Write name -> array pairs plus a versioned header into one .npz container."""
    arrays = {f"param/{name}": tensor.data for name, tensor in params.items()}
    arrays["__format__"] = np.array(CHECKPOINT_FORMAT)
    arrays["__metadata__"] = np.array(json.dumps(metadata or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    logger.info("wrote %d parameter tensors to %s", len(params), path)


def load_parameters(path: str) -> tuple[dict[str, np.ndarray], dict]:
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    with archive:
        if "__format__" not in archive.files or str(archive["__format__"]) != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path}: missing or unsupported header (expected {CHECKPOINT_FORMAT})")
        metadata = json.loads(str(archive["__metadata__"]))
        arrays = {
            key[len("param/"):]: archive[key].astype(np.float64)
            for key in archive.files
            if key.startswith("param/")
        }
    return arrays, metadata


def assign_parameters(params: dict[str, Tensor], arrays: dict[str, np.ndarray], strict: bool = True) -> None:
    for name, tensor in params.items():
        if name not in arrays:
            if strict:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            continue
        if arrays[name].shape != tensor.shape:
            raise CheckpointError(f"parameter {name}: checkpoint shape {arrays[name].shape} != model shape {tensor.shape}")
        tensor.data = arrays[name].copy()


def finite_difference(fn: Callable[[], float], tensor: Tensor, index: tuple, h: float = 1e-6) -> float:
    """Central difference of a scalar function w.r.t. one entry of `tensor`."""
    original = tensor.data[index]
    tensor.data[index] = original + h
    plus = fn()
    tensor.data[index] = original - h
    minus = fn()
    tensor.data[index] = original
    return (plus - minus) / (2.0 * h)

