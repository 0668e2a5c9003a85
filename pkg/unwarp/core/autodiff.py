'''
A small eager reverse-mode differentiation engine over numpy arrays.

Operations run immediately. While a `Tape` is active (used as a context
manager), every operation with at least one input that requires gradients is
recorded on it in creation order, which is a topological order. `backward`
walks the tape once in reverse and leaves the gradients on the leaves.

    with Tape() as tape:
        loss = mean(abs_(sub(pred, target)))
    backward(tape, loss)
'''
import contextvars
import logging
import math
import os
import typing as t
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from unwarp.core.raster import interpolation_matrix

LOG = logging.getLogger(__name__)

PRECISION_ENV_VAR = "UNWARP_PRECISION"
_PRECISIONS: dict[str, type[np.floating[t.Any]]] = {
    "f32": np.float32,
    "f64": np.float64,
}
LAYER_NORM_EPS = 1e-5

Operand = t.Union["NdValue", float, int, np.ndarray]
BackwardFn = t.Callable[[np.ndarray], t.Sequence[np.ndarray | None]]


class ShapeError(ValueError):
    pass


class NonFiniteValueError(FloatingPointError):
    pass


class TapeConsumedError(RuntimeError):
    pass


def default_dtype() -> np.dtype[t.Any]:
    '''Engine scalar type, selected with UNWARP_PRECISION (f32 or f64).'''
    name = os.environ.get(PRECISION_ENV_VAR, "f32")
    if name not in _PRECISIONS:
        raise ValueError(f"{PRECISION_ENV_VAR} must be one of "
                         f"{sorted(_PRECISIONS)}, got {name!r}")
    return np.dtype(_PRECISIONS[name])


class NdValue:
    '''A value in the computation, optionally tracked for gradients.'''

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn",
                 "op")

    def __init__(self, data: t.Any, requires_grad: bool = False) -> None:
        self.data: np.ndarray = np.asarray(data, dtype=default_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.parents: tuple[NdValue, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"NdValue(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: Operand) -> "NdValue":
        return add(self, other)

    def __radd__(self, other: Operand) -> "NdValue":
        return add(other, self)

    def __sub__(self, other: Operand) -> "NdValue":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "NdValue":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "NdValue":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "NdValue":
        return mul(other, self)

    def __neg__(self) -> "NdValue":
        return mul(self, -1.0)

    def __matmul__(self, other: "NdValue") -> "NdValue":
        return matmul(self, other)


_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "unwarp_active_tape", default=None)


class Tape:
    '''
    Ordered record of the operations of one computation. A tape can be
    differentiated exactly once.
    '''

    def __init__(self) -> None:
        self.nodes: list[NdValue] = []
        self.leaves: dict[int, NdValue] = {}
        self.consumed = False
        self._token: contextvars.Token["Tape | None"] | None = None

    def __enter__(self) -> "Tape":
        if self.consumed:
            raise TapeConsumedError("Cannot record on a consumed tape")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *_exc: t.Any) -> None:
        assert self._token is not None
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, node: NdValue) -> None:
        for parent in node.parents:
            if parent.requires_grad and parent.is_leaf:
                self.leaves[id(parent)] = parent
        self.nodes.append(node)


def backward(tape: Tape, loss: NdValue) -> dict[NdValue, np.ndarray]:
    '''
    Back-propagates from the scalar `loss` and sets `.grad` on every leaf
    that requires gradients. Returns the leaf → gradient mapping.
    '''
    if tape.consumed:
        raise TapeConsumedError(
            "Tape was already differentiated; record the computation again")
    if loss.data.size != 1:
        raise ShapeError(
            f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("Loss does not depend on any value requiring grad")
    tape.consumed = True

    accumulators: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        grad = accumulators.pop(id(node), None)
        if grad is None:
            continue
        assert node.backward_fn is not None
        parent_grads = node.backward_fn(grad)
        for parent, parent_grad in zip(node.parents, parent_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in accumulators:
                accumulators[key] = accumulators[key] + parent_grad
            else:
                accumulators[key] = parent_grad

    gradients: dict[NdValue, np.ndarray] = {}
    for key, leaf in tape.leaves.items():
        grad = accumulators.get(key)
        if grad is None:
            grad = np.zeros_like(leaf.data)
        leaf.grad = np.asarray(grad, dtype=leaf.data.dtype).reshape(leaf.shape)
        gradients[leaf] = leaf.grad

    tape.nodes.clear()
    return gradients


#
# Elementwise and shape ops.
#


def constant(value: Operand) -> NdValue:
    if isinstance(value, NdValue):
        return value
    return NdValue(value, requires_grad=False)


def add(a: Operand, b: Operand) -> NdValue:
    a, b = constant(a), constant(b)
    return _make("add", a.data + b.data, (a, b), lambda g: (
        unbroadcast(g, a.shape),
        unbroadcast(g, b.shape),
    ))


def sub(a: Operand, b: Operand) -> NdValue:
    a, b = constant(a), constant(b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (
        unbroadcast(g, a.shape),
        unbroadcast(-g, b.shape),
    ))


def mul(a: Operand, b: Operand) -> NdValue:
    a, b = constant(a), constant(b)
    return _make("mul", a.data * b.data, (a, b), lambda g: (
        unbroadcast(g * b.data, a.shape),
        unbroadcast(g * a.data, b.shape),
    ))


def abs_(a: NdValue) -> NdValue:
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a: NdValue) -> NdValue:
    return _make("relu", np.maximum(a.data, 0), (a,), lambda g:
                 (g * (a.data > 0),))


def gelu(a: NdValue) -> NdValue:
    '''Exact (erf-based) GELU.'''
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _make("gelu", x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def reshape(a: NdValue, shape: t.Sequence[int]) -> NdValue:
    return _make("reshape", a.data.reshape(shape), (a,), lambda g:
                 (g.reshape(a.shape),))


def transpose(a: NdValue, axes: t.Sequence[int]) -> NdValue:
    inverse = np.argsort(axes)
    return _make("transpose", np.transpose(a.data, axes), (a,), lambda g:
                 (np.transpose(g, inverse),))


def sum_(a: NdValue,
         axis: int | tuple[int, ...] | None = None,
         keepdims: bool = False) -> NdValue:

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 _backward)


def mean(a: NdValue,
         axis: int | tuple[int, ...] | None = None,
         keepdims: bool = False) -> NdValue:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a: NdValue, b: NdValue) -> NdValue:
    '''
    Matrix product of (M, K) by (K, N), or batched (B, M, K) by (B, K, N).
    '''
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3) \
            or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
    return _make("matmul", a.data @ b.data, (a, b), lambda g: (
        g @ np.swapaxes(b.data, -1, -2),
        np.swapaxes(a.data, -1, -2) @ g,
    ))


def softmax(a: NdValue, axis: int = -1) -> NdValue:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    y = exps / exps.sum(axis=axis, keepdims=True)
    return _make("softmax", y, (a,), lambda g:
                 (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def layer_norm(x: NdValue,
               gain: NdValue,
               bias: NdValue,
               eps: float = LAYER_NORM_EPS) -> NdValue:
    '''Normalizes over the last (channel) axis, then applies gain and bias.'''
    assert eps > 0
    channels = x.shape[-1]
    if gain.shape != (channels,) or bias.shape != (channels,):
        raise ShapeError(f"layer_norm over {channels} channels got gain "
                         f"{gain.shape} and bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    x_hat = (x.data - mu) * inv_std
    leading = tuple(range(x.data.ndim - 1))

    def _backward(g: np.ndarray) -> tuple[np.ndarray, ...]:
        dx_hat = g * gain.data
        dx = inv_std * (dx_hat - dx_hat.mean(axis=-1, keepdims=True) -
                        x_hat * (dx_hat * x_hat).mean(axis=-1, keepdims=True))
        return dx, (g * x_hat).sum(axis=leading), g.sum(axis=leading)

    return _make("layer_norm", x_hat * gain.data + bias.data, (x, gain, bias),
                 _backward)


#
# Convolution and resampling.
#


def conv2d(x: NdValue,
           kernel: NdValue,
           bias: NdValue | None = None,
           stride: int = 1,
           padding: int = 0) -> NdValue:
    '''
    2D cross-correlation of an (H, W, Cin) map with a (kh, kw, Cin, Cout)
    kernel. Output extents are floor((H + 2·padding − kh)/stride) + 1.
    '''
    if x.data.ndim != 3 or kernel.data.ndim != 4 \
            or x.shape[2] != kernel.shape[2]:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel "
                         f"{kernel.shape} (expected H×W×Cin and kh×kw×Cin×Cout)")
    kh, kw, c_in, c_out = kernel.shape
    assert kh % 2 == 1 and kw % 2 == 1, "Kernel extents must be odd"
    assert stride in (1, 2), f"Unsupported stride {stride}"

    padded = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    # (H', W', Cin, kh, kw) -> strided (Ho, Wo, kh, kw, Cin).
    windows = sliding_window_view(padded, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride].transpose(0, 1, 3, 4, 2)
    out_h, out_w = windows.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv2d input {x.shape} too small for kernel "
                         f"{kernel.shape} with padding {padding}")
    cols = windows.reshape(out_h * out_w, kh * kw * c_in)
    weights = kernel.data.reshape(kh * kw * c_in, c_out)
    out = (cols @ weights).reshape(out_h, out_w, c_out)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, ...]:
        g_cols = g.reshape(out_h * out_w, c_out)
        d_kernel = (cols.T @ g_cols).reshape(kernel.shape)
        d_windows = (g_cols @ weights.T).reshape(out_h, out_w, kh, kw, c_in)
        d_padded = np.zeros(padded.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                d_padded[i:i + stride * out_h:stride,
                         j:j + stride * out_w:stride] += d_windows[:, :, i, j]
        d_x = d_padded[padding:padding + x.shape[0],
                       padding:padding + x.shape[1]]
        if bias is None:
            return d_x, d_kernel
        return d_x, d_kernel, g.sum(axis=(0, 1))

    if bias is None:
        return _make("conv2d", out, (x, kernel), _backward)
    return _make("conv2d", out + bias.data, (x, kernel, bias), _backward)


def separable_linear(x: NdValue, rows: np.ndarray,
                     cols: np.ndarray) -> NdValue:
    '''
    Applies constant matrices along the two spatial axes of an (h, w, c)
    map: out = rows · x · colsᵀ per channel.
    '''
    rows = rows.astype(x.data.dtype)
    cols = cols.astype(x.data.dtype)
    out = np.einsum("Hh,hwc,Ww->HWc", rows, x.data, cols, optimize=True)
    return _make("separable_linear", out, (x,), lambda g: (np.einsum(
        "Hh,HWc,Ww->hwc", rows, g, cols, optimize=True),))


def resize_bilinear(x: NdValue,
                    out_h: int,
                    out_w: int,
                    extrapolate: bool = False) -> NdValue:
    '''Pixel-center aligned bilinear resize of an (h, w, c) map.'''
    h, w = x.shape[:2]
    return separable_linear(x, interpolation_matrix(h, out_h, extrapolate),
                            interpolation_matrix(w, out_w, extrapolate))


def pad_edges(x: NdValue, mode: str = "extrapolate") -> NdValue:
    '''
    Pads one pixel on every side of an (h, w, c) map. "extrapolate"
    continues the outermost two samples linearly, "replicate" repeats the
    edge. Single-pixel axes always replicate.
    '''
    assert mode in ("extrapolate", "replicate"), f"Unknown pad mode {mode}"
    h, w = x.shape[:2]
    return separable_linear(x, _pad_matrix(h, mode), _pad_matrix(w, mode))


def unfold3x3(padded: NdValue) -> NdValue:
    '''
    Gathers the 3×3 neighborhood of every interior pixel of an
    (h + 2, w + 2, c) map into (h, w, 9, c). Neighbor k sits at offset
    (k // 3 − 1, k % 3 − 1).
    '''
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    assert h >= 1 and w >= 1
    out = np.stack([
        padded.data[dy:dy + h, dx:dx + w]
        for dy in range(3)
        for dx in range(3)
    ],
                   axis=2)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        d_padded = np.zeros(padded.shape, dtype=g.dtype)
        for k in range(9):
            dy, dx = divmod(k, 3)
            d_padded[dy:dy + h, dx:dx + w] += g[:, :, k]
        return (d_padded,)

    return _make("unfold3x3", out, (padded,), _backward)


#
# Composite ops.
#


def linear(x: NdValue, weight: NdValue, bias: NdValue | None = None) -> NdValue:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def l1_loss(pred: NdValue, target: np.ndarray) -> NdValue:
    '''Mean absolute difference over every entry.'''
    return mean(abs_(sub(pred, constant(target))))


@dataclass(frozen=True)
class AttentionWeights:
    '''Input and output projections of one multi-head attention unit.'''
    wq: NdValue
    bq: NdValue
    wk: NdValue
    bk: NdValue
    wv: NdValue
    bv: NdValue
    wo: NdValue
    bo: NdValue


def multi_head_attention(
        q: NdValue, k: NdValue, v: NdValue, heads: int,
        weights: AttentionWeights) -> tuple[NdValue, NdValue]:
    '''
    Scaled dot-product attention of (Nq, C) queries over (Nk, C) keys and
    values, split into `heads` heads of C/heads channels. Returns the
    (Nq, C) output and the (heads, Nq, Nk) attention weights.
    '''
    n_q, channels = q.shape
    n_k = k.shape[0]
    if channels % heads != 0:
        raise ShapeError(
            f"{channels} channels cannot be split into {heads} heads")
    if k.shape != v.shape or k.shape[1] != channels:
        raise ShapeError(f"Attention shapes disagree: q {q.shape}, "
                         f"k {k.shape}, v {v.shape}")
    head_dim = channels // heads

    queries = transpose(
        reshape(linear(q, weights.wq, weights.bq), (n_q, heads, head_dim)),
        (1, 0, 2))
    keys_t = transpose(
        reshape(linear(k, weights.wk, weights.bk), (n_k, heads, head_dim)),
        (1, 2, 0))
    values = transpose(
        reshape(linear(v, weights.wv, weights.bv), (n_k, heads, head_dim)),
        (1, 0, 2))

    scores = mul(matmul(queries, keys_t), 1.0 / math.sqrt(head_dim))
    attention = softmax(scores, axis=-1)
    mixed = transpose(matmul(attention, values), (1, 0, 2))
    out = linear(reshape(mixed, (n_q, channels)), weights.wo, weights.bo)
    return out, attention


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    '''Sums out broadcast dimensions so `grad` matches `shape`.'''
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


#
# Private helpers.
#


def _make(op: str, data: np.ndarray, parents: tuple[NdValue, ...],
          backward_fn: BackwardFn) -> NdValue:
    if not np.isfinite(data).all():
        raise NonFiniteValueError(
            f"{op} produced non-finite values (output shape {np.shape(data)})")

    tape = _ACTIVE_TAPE.get()
    tracked = tape is not None and any(p.requires_grad for p in parents)
    out = NdValue(data, requires_grad=tracked)
    out.op = op
    if tracked:
        assert tape is not None
        out.parents = parents
        out.backward_fn = backward_fn
        tape.record(out)
    return out


def _pad_matrix(n: int, mode: str) -> np.ndarray:
    matrix = np.zeros((n + 2, n))
    matrix[1:n + 1] = np.eye(n)
    if n == 1 or mode == "replicate":
        matrix[0, 0] = 1.0
        matrix[n + 1, n - 1] = 1.0
    else:
        matrix[0, 0], matrix[0, 1] = 2.0, -1.0
        matrix[n + 1, n - 1], matrix[n + 1, n - 2] = 2.0, -1.0
    return matrix
