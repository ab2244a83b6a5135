"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation returns a new :class:`Tensor`. When gradient recording is
enabled and at least one input requires a gradient, the result keeps a
reference to its inputs and a closure mapping the output gradient to one
gradient per input. :func:`backward` orders those nodes into a :class:`Tape`
and replays it in reverse.
"""

from __future__ import annotations

import contextlib
import contextvars
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractViolation, DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_recording = contextvars.ContextVar("foolhd_grad_recording", default=True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without building a graph."""
    token = _recording.set(False)
    try:
        yield
    finally:
        _recording.reset(token)


def is_recording() -> bool:
    return _recording.get()


class Tensor:
    """Dense float64 array that can take part in a differentiable computation."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        if isinstance(values, Tensor):
            values = values.values
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.op = "leaf"

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        if self.size != 1:
            raise ContractViolation(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def backward(self) -> "Tape":
        return backward(self)

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, key) -> "Tensor":
        return index(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(values: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.op = op
    if is_recording() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -----------------------------------------------------------


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        a.values * b.values,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
        "mul",
    )


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.values == 0):
        raise DomainError("div: division by zero")
    out = a.values / b.values
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.values, a.shape), _unbroadcast(-g * out / b.values, b.shape)),
        "div",
    )


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(-a.values, (a,), lambda g: (-g,), "neg")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError(f"log: input has {int(np.sum(a.values <= 0))} non-positive entries; apply a floor first")
    return _result(np.log(a.values), (a,), lambda g: (g / a.values,), "log")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = expit(a.values)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.values)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    active = a.values > 0
    return _result(np.where(active, a.values, 0.0), (a,), lambda g: (g * active,), "relu")


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _result(a.values * a.values, (a,), lambda g: (2.0 * g * a.values,), "square")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0):
        raise DomainError(f"sqrt: input has {int(np.sum(a.values <= 0))} non-positive entries; apply a floor first")
    out = np.sqrt(a.values)
    return _result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def clamp_min(a: ArrayLike, floor: float) -> Tensor:
    """``max(a, floor)``; the gradient is zero where the floor binds."""
    a = as_tensor(a)
    above = a.values > floor
    return _result(np.where(above, a.values, floor), (a,), lambda g: (g * above,), "clamp_min")


def clip(a: ArrayLike, low: float, high: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.values >= low) & (a.values <= high)
    return _result(np.clip(a.values, low, high), (a,), lambda g: (g * inside,), "clip")


_UNARY = {
    "neg": neg,
    "log": log,
    "exp": exp,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "square": square,
    "sqrt": sqrt,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_code: str, a: ArrayLike, b: Optional[ArrayLike] = None) -> Tensor:
    """Apply the elementwise primitive named ``op_code``."""
    if op_code in _BINARY:
        if b is None:
            raise ContractViolation(f"{op_code} needs two operands")
        return _BINARY[op_code](a, b)
    if op_code in _UNARY:
        if b is not None:
            raise ContractViolation(f"{op_code} takes a single operand")
        return _UNARY[op_code](a)
    raise ContractViolation(f"unknown elementwise op '{op_code}'")


# -- linear algebra and shape ---------------------------------------------


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")

    def _backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.values, -1, -2)
        gb = np.swapaxes(a.values, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(a.values @ b.values, (a, b), _backward, "matmul")


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.values.reshape(tuple(shape))
    except ValueError:
        raise ContractViolation(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.values, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def _normalize_key(key):
    if isinstance(key, np.ndarray) and key.dtype == bool:
        return np.nonzero(key) if key.ndim > 1 else np.flatnonzero(key)
    if isinstance(key, tuple):
        return tuple(_normalize_key(k) for k in key)
    return key


def index(a: ArrayLike, key) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)
    key = _normalize_key(key)
    out = np.array(a.values[key], dtype=np.float64)

    def _backward(g: np.ndarray):
        ga = np.zeros_like(a.values)
        np.add.at(ga, key, g)
        return (ga,)

    return _result(out, (a,), _backward, "index")


def concat(*tensors: ArrayLike, axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; the gradient splits back by slice."""
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ContractViolation("concat needs at least one tensor")
    ndim = parts[0].ndim
    axis = axis % ndim
    for p in parts[1:]:
        if p.ndim != ndim or any(p.shape[d] != parts[0].shape[d] for d in range(ndim) if d != axis):
            raise ContractViolation(
                f"concat along axis {axis}: incompatible shapes {[q.shape for q in parts]}"
            )
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def _backward(g: np.ndarray):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([p.values for p in parts], axis=axis), parts, _backward, "concat")


def frame(signal: ArrayLike, win_len: int, hop: int) -> Tensor:
    """Cut a 1-D signal into ``1 + (D - win_len) // hop`` rows of ``win_len`` samples."""
    signal = as_tensor(signal)
    if signal.ndim != 1:
        raise ContractViolation(f"frame expects a 1-D signal, got shape {signal.shape}")
    if win_len < 1 or hop < 1:
        raise ContractViolation(f"frame: win_len and hop must be positive (got {win_len}, {hop})")
    length = signal.shape[0]
    if length < win_len:
        raise ContractViolation(f"frame: signal of {length} samples is shorter than one window ({win_len})")
    frames = sliding_window_view(signal.values, win_len)[::hop].copy()

    def _backward(g: np.ndarray):
        return (_overlap_add(g, hop, length),)

    return _result(frames, (signal,), _backward, "frame")


def _overlap_add(frames: np.ndarray, hop: int, length: Optional[int] = None) -> np.ndarray:
    count, win_len = frames.shape
    total = hop * (count - 1) + win_len
    out = np.zeros(total if length is None else max(length, total))
    for t in range(count):
        out[t * hop:t * hop + win_len] += frames[t]
    return out if length is None else out[:length]


def overlap_add(frames: ArrayLike, hop: int) -> Tensor:
    """Sum rows of ``frames`` placed ``hop`` samples apart; adjoint of :func:`frame`."""
    frames = as_tensor(frames)
    if frames.ndim != 2:
        raise ContractViolation(f"overlap_add expects frames x samples, got shape {frames.shape}")
    win_len = frames.shape[1]
    return _result(
        _overlap_add(frames.values, hop),
        (frames,),
        lambda g: (sliding_window_view(g, win_len)[::hop].copy(),),
        "overlap_add",
    )


# -- convolutions -----------------------------------------------------------


def conv2d(inputs: ArrayLike, kernels: ArrayLike) -> Tensor:
    """Stride-1 cross-correlation with zero "same" padding.

    ``inputs`` is C_in x H x W, ``kernels`` is C_out x C_in x kh x kw with odd
    spatial extents; the output is C_out x H x W.
    """
    x, k = as_tensor(inputs), as_tensor(kernels)
    if x.ndim != 3 or k.ndim != 4:
        raise ContractViolation(f"conv2d expects C x H x W input and 4-D kernels, got {x.shape} and {k.shape}")
    channels, height, width = x.shape
    if k.shape[1] != channels:
        raise ContractViolation(f"conv2d: kernels expect {k.shape[1]} input channels, input has {channels}")
    kh, kw = k.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractViolation(f"conv2d: kernel extents must be odd for same padding, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.values, ((0, 0), (ph, ph), (pw, pw)))
    windows = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # C, H, W, kh, kw
    out = np.tensordot(k.values, windows, axes=([1, 2, 3], [0, 3, 4]))

    def _backward(g: np.ndarray):
        gk = np.tensordot(g, windows, axes=([1, 2], [1, 2]))
        gwin = np.tensordot(k.values, g, axes=([0], [0]))  # C, kh, kw, H, W
        gpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gpad[:, i:i + height, j:j + width] += gwin[:, i, j]
        return gpad[:, ph:ph + height, pw:pw + width], gk

    return _result(out, (x, k), _backward, "conv2d")


def conv1d_dilated(inputs: ArrayLike, kernels: ArrayLike, dilation: int = 1) -> Tensor:
    """Valid dilated temporal convolution.

    ``inputs`` is C_in x T (optionally with a leading batch axis), ``kernels``
    is C_out x C_in x k. The output has T - (k - 1) * dilation frames.
    """
    x, k = as_tensor(inputs), as_tensor(kernels)
    if x.ndim not in (2, 3) or k.ndim != 3:
        raise ContractViolation(f"conv1d_dilated expects [B x] C x T input and 3-D kernels, got {x.shape}, {k.shape}")
    if dilation < 1:
        raise ContractViolation(f"dilation must be a positive integer, got {dilation}")
    if k.shape[1] != x.shape[-2]:
        raise ContractViolation(f"conv1d_dilated: kernels expect {k.shape[1]} channels, input has {x.shape[-2]}")
    taps = k.shape[2]
    span = (taps - 1) * dilation + 1
    length = x.shape[-1]
    if length < span:
        raise ContractViolation(
            f"conv1d_dilated: input has {length} frames, needs at least {span} (k={taps}, dilation={dilation})"
        )
    out_len = length - span + 1
    windows = sliding_window_view(x.values, span, axis=-1)[..., ::dilation]  # [B,] C, T', k
    out = np.einsum("...ctk,ock->...ot", windows, k.values, optimize=True)

    def _backward(g: np.ndarray):
        gk = np.einsum("...ot,...ctk->ock", g, windows, optimize=True)
        gwin = np.einsum("...ot,ock->...ctk", g, k.values, optimize=True)
        gx = np.zeros_like(x.values)
        for j in range(taps):
            gx[..., j * dilation:j * dilation + out_len] += gwin[..., j]
        return gx, gk

    return _result(out, (x, k), _backward, "conv1d_dilated")


# -- normalization, probabilities, reductions ------------------------------


def softmax(z: ArrayLike, axis: int = -1) -> Tensor:
    z = as_tensor(z)
    shifted = z.values - z.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (z,), _backward, "softmax")


def log_softmax(z: ArrayLike, axis: int = -1) -> Tensor:
    z = as_tensor(z)
    shifted = z.values - z.values.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _backward(g: np.ndarray):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (z,), _backward, "log_softmax")


def _check_reduction(a: Tensor, axis, op: str) -> None:
    if a.size == 0:
        raise ContractViolation(f"{op}: empty reduction")
    if axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in axes:
            if not -a.ndim <= ax < a.ndim:
                raise ContractViolation(f"{op}: axis {ax} invalid for shape {a.shape}")


def reduce_sum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_reduction(a, axis, "sum")
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def _backward(g: np.ndarray):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (a,), _backward, "sum")


def reduce_mean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    _check_reduction(a, axis, "mean")
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return reduce_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def max_with_index(a: ArrayLike, axis: Optional[int] = None) -> Tuple[Tensor, np.ndarray]:
    """Maximum and its index; ties resolve to the lowest index."""
    a = as_tensor(a)
    _check_reduction(a, axis, "max_with_index")
    if axis is None:
        flat = int(np.argmax(a.values))
        idx = np.unravel_index(flat, a.shape)

        def _backward_flat(g: np.ndarray):
            ga = np.zeros_like(a.values)
            ga[idx] = g
            return (ga,)

        return _result(np.asarray(a.values[idx]), (a,), _backward_flat, "max"), np.asarray(flat)

    arg = np.argmax(a.values, axis=axis)
    expanded = np.expand_dims(arg, axis)
    out = np.take_along_axis(a.values, expanded, axis=axis).squeeze(axis)

    def _backward(g: np.ndarray):
        ga = np.zeros_like(a.values)
        np.put_along_axis(ga, expanded, np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _result(out, (a,), _backward, "max"), arg


def reduce(op_code: str, a: ArrayLike, axis: Optional[int] = None):
    if op_code == "sum":
        return reduce_sum(a, axis=axis)
    if op_code == "mean":
        return reduce_mean(a, axis=axis)
    if op_code == "max_with_index":
        return max_with_index(a, axis=axis)
    raise ContractViolation(f"unknown reduction '{op_code}'")


def batch_norm(
    x: ArrayLike,
    gamma: ArrayLike,
    beta: ArrayLike,
    eps_num: float = 1e-5,
    axis: int = 0,
) -> Tensor:
    """Normalize every channel along ``axis`` with statistics over all other axes."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axis = axis % x.ndim
    channels = x.shape[axis]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ContractViolation(
            f"batch_norm: gamma/beta must have shape ({channels},), got {gamma.shape} and {beta.shape}"
        )
    reduce_axes = tuple(d for d in range(x.ndim) if d != axis)
    count = x.size // channels
    if count < 2:
        raise ContractViolation(f"batch_norm needs at least 2 elements per channel, got {count}")
    bshape = [1] * x.ndim
    bshape[axis] = channels
    mean = x.values.mean(axis=reduce_axes, keepdims=True)
    centered = x.values - mean
    var = (centered * centered).mean(axis=reduce_axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps_num)
    xhat = centered * inv_std
    g_scale = gamma.values.reshape(bshape)
    out = xhat * g_scale + beta.values.reshape(bshape)

    def _backward(g: np.ndarray):
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        dxhat = g * g_scale
        dx = inv_std / count * (
            count * dxhat
            - dxhat.sum(axis=reduce_axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=reduce_axes, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), _backward, "batch_norm")


def dropout(x: ArrayLike, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when not training or when ``rate`` is zero."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractViolation("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.values * keep, (x,), lambda g: (g * keep,), "dropout")


# -- tape and backward ------------------------------------------------------


@dataclass
class Tape:
    """Operations reachable from a root, inputs always before their consumers."""

    nodes: List[Tensor] = field(default_factory=list)

    @classmethod
    def record(cls, root: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def replay_backward(self, seed: np.ndarray) -> None:
        self.nodes[-1].grad = seed
        for node in reversed(self.nodes):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g.copy() if parent.grad is None else parent.grad + g


def backward(loss: Tensor) -> Tape:
    """Populate ``grad`` of every tensor on the tape with d(loss)/d(tensor)."""
    if loss.size != 1:
        raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractViolation("backward: loss does not depend on any tensor requiring a gradient")
    tape = Tape.record(loss)
    tape.replay_backward(np.ones_like(loss.values))
    logger.debug(f"Backward pass replayed {len(tape)} nodes.")
    return tape


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    """Moments and hyperparameters of Adam with decoupled weight decay."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(cls, params: Sequence[Tensor], **hyperparams) -> "AdamState":
        state = cls(**hyperparams)
        if state.lr <= 0:
            raise ContractViolation(f"Adam learning rate must be positive, got {state.lr}")
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
        return state


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Apply decoupled weight decay, then one bias-corrected Adam update."""
    if len(params) != len(state.m):
        raise ContractViolation(f"Adam state tracks {len(state.m)} parameters, got {len(params)}")
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ContractViolation(f"adam_step: parameters {missing} have no gradient; call backward first")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for i, p in enumerate(params):
        if p.grad.shape != p.values.shape:
            raise ContractViolation(f"gradient shape {p.grad.shape} differs from parameter shape {p.shape}")
        decayed = p.values * (1.0 - state.lr * state.weight_decay)
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad * p.grad
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.values = decayed - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_num)
