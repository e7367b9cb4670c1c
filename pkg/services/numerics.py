"""
Dense tensors, neural primitives and a minimal reverse-mode tape.

Every primitive takes and returns ``Tensor`` values, refuses to produce
NaN/Inf, and records a ``TapeNode`` when gradients are enabled and any
input requires them. ``backward`` walks the recorded graph in reverse
topological order.
"""

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from utils.errors import DimensionError, NumericError, TapeError

logger = logging.getLogger(__name__)

DTYPES = {32: np.float32, 64: np.float64}

Scalar = Union[int, float]
GradientMap = Dict['Tensor', np.ndarray]

_grad_mode = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_mode, 'enabled', True)


@contextmanager
def no_grad():
    """Disable tape recording in this thread (inference, finite differences)."""
    previous = is_grad_enabled()
    _grad_mode.enabled = False
    try:
        yield
    finally:
        _grad_mode.enabled = previous


@dataclass(eq=False)
class TapeNode:
    """One recorded operation.

    ``backward_fn`` maps the output gradient to one gradient per input
    (``None`` for inputs that need none). Values needed by the rule are
    captured in its closure.
    """
    op: str
    inputs: Tuple['Tensor', ...]
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense row-major array with an optional link into the tape."""

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        array = np.asarray(data, dtype=dtype)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float32)
        self.data: np.ndarray = np.ascontiguousarray(array)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[TapeNode] = None
        self.name = name

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single value, tensor has shape {list(self.shape)}")
        return float(self.data.reshape(()))

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{label})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other: Scalar):
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


class Parameter(Tensor):
    """A trainable leaf; the optimizer swaps its storage between steps."""

    def __init__(self, data, dtype=None, name: str = ""):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)

    def assign(self, data: np.ndarray) -> None:
        data = np.asarray(data, dtype=self.data.dtype)
        if data.shape != self.data.shape:
            raise DimensionError(
                f"cannot assign shape {list(data.shape)} to parameter {self.name or '?'} "
                f"of shape {list(self.shape)}"
            )
        _check_finite(f"assign({self.name})", data)
        self.data = np.ascontiguousarray(data)


def tensor(data, precision: int = 32, requires_grad: bool = False) -> Tensor:
    """Build a tensor with 32- or 64-bit storage."""
    if precision not in DTYPES:
        raise NumericError(f"precision must be 32 or 64, got {precision}")
    return Tensor(np.asarray(data, dtype=DTYPES[precision]), requires_grad=requires_grad)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _check_finite(op: str, data: np.ndarray) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"{op} produced non-finite values")


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor],
           backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    """Wrap a primitive's output and put it on the tape when needed.

    Also the extension point for primitives defined in other services.
    """
    _check_finite(op, data)
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs_grad)
    if needs_grad:
        out.node = TapeNode(op, tuple(inputs), backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic -----------------------------------------------

def add(a, b) -> Tensor:
    a = _as_tensor(a, b) if not isinstance(a, Tensor) else a
    b = _as_tensor(b, a)
    return record('add', a.data + b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b) if not isinstance(a, Tensor) else a
    b = _as_tensor(b, a)
    return record('sub', a.data - b.data, (a, b),
                  lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b) if not isinstance(a, Tensor) else a
    b = _as_tensor(b, a)
    return record('mul', a.data * b.data, (a, b),
                  lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, factor: Scalar) -> Tensor:
    factor = x.dtype.type(factor)
    return record('scale', x.data * factor, (x,), lambda g: (g * factor,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over='ignore'):
        out = np.exp(x.data)
    return record('exp', out, (x,), lambda g: (g * out,))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return record('sigmoid', out, (x,), lambda g: (g * out * (1 - out),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(x.dtype.type(0), x.data)
    return record('softplus', out, (x,), lambda g: (g * expit(x.data),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record('relu', np.where(mask, x.data, x.dtype.type(0)), (x,), lambda g: (g * mask,))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x), the gating nonlinearity of the SSM branch."""
    s = expit(x.data)
    return record('silu', x.data * s, (x,), lambda g: (g * s * (1 + x.data * (1 - s)),))


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    """Clip values; never recorded on the tape (inference-only)."""
    return Tensor(np.clip(x.data, low, high))


# -- reductions -----------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, x.shape)),)

    return record('sum', np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(tsum(x, axis, keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtraction) along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record('softmax', out, (x,), backward)


# -- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {list(a.shape)} @ {list(b.shape)}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return record('matmul', out, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is [out, in]."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear expects last extent {weight.shape[1]}, got {list(x.shape)}")
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (weight.shape[0],))
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ flat
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return record('linear', out, inputs, backward)


# -- shape manipulation ---------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {list(x.shape)} to {list(shape)}") from e
    return record('reshape', out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid transpose axes {axes} for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return record('transpose', np.transpose(x.data, axes), (x,),
                  lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(f"concat shape mismatch: {[list(t.shape) for t in tensors]}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return record('concat', out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors or len({t.shape for t in tensors}) != 1:
        raise DimensionError(f"stack needs tensors of one shape, got {[list(t.shape) for t in tensors]}")
    out = np.stack([t.data for t in tensors], axis=axis)
    return record('stack', out, tensors,
                  lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def getitem(x: Tensor, index) -> Tensor:
    """Basic indexing (integers, slices, Ellipsis)."""
    out = np.array(x.data[index])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index] += g
        return (gx,)

    return record('getitem', out, (x,), backward)


def take(x: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along one axis; repeated indices accumulate in the gradient."""
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, indices, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return record('take', out, (x,), backward)


# -- convolutions and resampling --------------------------------------------

def _conv_geometry(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tuple[int, int, int, int]:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {list(x.shape)} and {list(weight.shape)}")
    kh, kw = weight.shape[2], weight.shape[3]
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if padding < 0 or stride < 1:
        raise DimensionError(f"conv2d needs padding >= 0 and stride >= 1, got {padding}, {stride}")
    height, width = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    if height < kh or width < kw:
        raise DimensionError(f"conv2d kernel {kh}x{kw} larger than padded input {height}x{width}")
    return kh, kw, (height - kh) // stride + 1, (width - kw) // stride + 1


def _padded_windows(data: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    padded = np.pad(data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else data
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return padded.shape, windows


def _scatter_windows(padded_shape, cols: np.ndarray, kh: int, kw: int, stride: int,
                     out_h: int, out_w: int, padding: int) -> np.ndarray:
    """Adjoint of window extraction: cols is [N, C, out_h, out_w, kh, kw]."""
    gx = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride] += cols[..., i, j]
    if padding:
        gx = gx[:, :, padding:-padding, padding:-padding]
    return gx


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation; weight is [Cout, Cin, kh, kw]."""
    kh, kw, out_h, out_w = _conv_geometry(x, weight, stride, padding)
    if weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d weight expects {weight.shape[1]} input channels, got {x.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"conv2d bias shape {list(bias.shape)} does not match {weight.shape[0]} outputs")
    padded_shape, windows = _padded_windows(x.data, kh, kw, stride, padding)
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, weight.data, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        gx = _scatter_windows(padded_shape, cols, kh, kw, stride, out_h, out_w, padding)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record('conv2d', out, inputs, backward)


def depthwise_conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Per-channel cross-correlation; weight is [C, 1, kh, kw]."""
    kh, kw, out_h, out_w = _conv_geometry(x, weight, stride, padding)
    if weight.shape[0] != x.shape[1] or weight.shape[1] != 1:
        raise DimensionError(f"depthwise weight must be [{x.shape[1]}, 1, kh, kw], got {list(weight.shape)}")
    padded_shape, windows = _padded_windows(x.data, kh, kw, stride, padding)
    kernel = weight.data[:, 0]
    out = np.einsum('nchwij,cij->nchw', windows, kernel)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gw = np.einsum('nchwij,nchw->cij', windows, g)[:, None]
        cols = g[..., None, None] * kernel[None, :, None, None]
        gx = _scatter_windows(padded_shape, cols, kh, kw, stride, out_h, out_w, padding)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return record('depthwise_conv2d', out, inputs, backward)


def causal_conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Depthwise causal convolution over the last axis.

    x is [N, D, L], weight [D, k]; output t sees inputs t-k+1..t only.
    """
    if x.ndim != 3 or weight.ndim != 2 or weight.shape[0] != x.shape[1]:
        raise DimensionError(f"causal_conv1d expects x [N, D, L] and weight [D, k], got "
                             f"{list(x.shape)} and {list(weight.shape)}")
    width, length = weight.shape[1], x.shape[2]
    padded = np.pad(x.data, ((0, 0), (0, 0), (width - 1, 0)))
    windows = sliding_window_view(padded, width, axis=2)
    out = np.einsum('ndlk,dk->ndl', windows, weight.data)
    if bias is not None:
        out = out + bias.data[None, :, None]
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gw = np.einsum('ndlk,ndl->dk', windows, g)
        gx = np.zeros_like(padded)
        for j in range(width):
            gx[:, :, j:j + length] += g * weight.data[None, :, j, None]
        gx = gx[:, :, width - 1:]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return record('causal_conv1d', out, inputs, backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"avg_pool2d factor {factor} does not divide {h}x{w}")
    out = x.data.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))

    def backward(g):
        spread = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3)
        return (spread / (factor * factor),)

    return record('avg_pool2d', out, (x,), backward)


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return record('upsample_nearest2d', out, (x,),
                  lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),))


# -- reverse traversal ------------------------------------------------------

def _topological_order(root: Tensor) -> List[Tensor]:
    """Inputs before outputs; raises TapeError on a cycle."""
    order: List[Tensor] = []
    state: Dict[int, int] = {}  # 1 = on the current path, 2 = finished
    stack: List[Tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, child = stack.pop()
        inputs = node.node.inputs if node.node is not None else ()
        if child == 0:
            if state.get(id(node)) == 2:
                continue
            state[id(node)] = 1
        if child < len(inputs):
            stack.append((node, child + 1))
            nxt = inputs[child]
            mark = state.get(id(nxt))
            if mark == 1:
                raise TapeError(f"cyclic tape detected at operation '{nxt.node.op if nxt.node else 'leaf'}'")
            if mark is None and nxt.requires_grad:
                stack.append((nxt, 0))
        else:
            state[id(node)] = 2
            order.append(node)
    return order


def backward(loss: Tensor) -> GradientMap:
    """Propagate d(loss)/d(.) to every leaf that requires a gradient.

    Returns a map from leaf tensors to gradients; leaves also get ``.grad``
    (overwritten, not accumulated across calls).
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        return {}

    order = _topological_order(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    gradients: GradientMap = {}

    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if grad.shape != node.shape:
            raise TapeError(f"gradient shape {list(grad.shape)} does not match value shape {list(node.shape)}")
        if node.node is None:
            node.grad = grad
            gradients[node] = grad
            continue
        input_grads = node.node.backward_fn(grad)
        for inp, inp_grad in zip(node.node.inputs, input_grads):
            if inp_grad is None or not inp.requires_grad:
                continue
            acc = pending.get(id(inp))
            pending[id(inp)] = inp_grad if acc is None else acc + inp_grad

    return gradients


# -- finite-difference oracle ---------------------------------------------

def _scalar(value) -> float:
    return value.item() if isinstance(value, Tensor) else float(value)


def finite_diff_grad(f: Callable[[], Union[Tensor, float]], params: Sequence[Tensor], h: float = 1e-5,
                     coordinates: Optional[Mapping[Tensor, Iterable[int]]] = None) -> GradientMap:
    """Central differences (f(θ+h·e_i) - f(θ-h·e_i)) / 2h per coordinate.

    ``coordinates`` restricts each parameter to the given flat indices;
    unlisted coordinates are left at zero.
    """
    result: GradientMap = {}
    with no_grad():
        for param in params:
            grad = np.zeros(param.shape, dtype=np.float64)
            flat = param.data.reshape(-1)
            indices = range(flat.size) if coordinates is None else coordinates.get(param, ())
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                f_plus = _scalar(f())
                flat[i] = original - h
                f_minus = _scalar(f())
                flat[i] = original
                grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
            result[param] = grad
    return result


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    analytic, numeric = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradcheckResult:
    max_relative_error: float
    checked: int
    worst: str = ""

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_relative_error <= tolerance


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], samples: Optional[int] = None,
              h: float = 1e-5, seed: int = 0) -> GradcheckResult:
    """Compare ``backward`` against central differences.

    With ``samples`` set, that many coordinates are drawn uniformly over
    all parameter entries; otherwise every coordinate is checked.
    """
    params = list(params)
    analytic = backward(f())

    if samples is None:
        coordinates = {p: range(p.size) for p in params}
    else:
        rng = np.random.default_rng(seed)
        sizes = np.array([p.size for p in params])
        picks = rng.choice(int(sizes.sum()), size=min(samples, int(sizes.sum())), replace=False)
        owners = np.searchsorted(np.cumsum(sizes), picks, side='right')
        offsets = picks - np.concatenate(([0], np.cumsum(sizes)[:-1]))[owners]
        coordinates = {p: [] for p in params}
        for owner, offset in zip(owners, offsets):
            coordinates[params[owner]].append(int(offset))

    numeric = finite_diff_grad(f, params, h=h, coordinates=coordinates)

    worst, worst_label, checked = 0.0, "", 0
    for index, param in enumerate(params):
        coords = list(coordinates[param])
        if not coords:
            continue
        a = analytic.get(param, np.zeros(param.shape)).reshape(-1)[coords]
        n = numeric[param].reshape(-1)[coords]
        errors = relative_error(a, n)
        checked += len(coords)
        if errors.max() > worst:
            worst = float(errors.max())
            position = coords[int(errors.argmax())]
            worst_label = f"{param.name or f'param[{index}]'}[{position}]"
    logger.debug(f"gradcheck: {checked} coordinates, max relative error {worst:.3e} at {worst_label}")
    return GradcheckResult(worst, checked, worst_label)
