"""Reverse-mode automatic differentiation on numpy arrays.

Tensors wrap float64 ndarrays. Every op builds the DAG needed for one
backward pass; constants (requires_grad False everywhere upstream) are
folded eagerly so frozen feature extractors cost only their forward
arithmetic. Convolutions run as im2col/col2im around BLAS matmuls; the
transposed flag computes the exact adjoint of the equivalent forward
convolution, which is also what the gradient with respect to the conv
input needs, so the two share kernels.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .errors import ConfigurationError, DimensionError, UsageError

DTYPE = np.float64


def _as_array(values) -> np.ndarray:
    return np.asarray(values, dtype=DTYPE)


class Tensor:
    """Value node of the autodiff graph.

    values is immutable once consumed by an op (optimizers mutate
    parameters between graphs, never inside one). grad accumulates
    across backward calls until zero_grad.
    """

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_vjps", "_spent")

    def __init__(self, values, requires_grad: bool = False):
        self.values = _as_array(values)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.values) if self.requires_grad else None
        self._parents: tuple = ()
        self._vjps: tuple = ()
        self._spent = False

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise UsageError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        """Constant leaf sharing this tensor's values; no gradient flows through."""
        return Tensor(self.values)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.values)

    def backward(self):
        backward(self)

    # operator sugar
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Trainable leaf. With rng, values is a shape and entries are N(0, scale^2)."""
    if rng is not None:
        shape = tuple(values)
        if scale is None:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else max(1, shape[0])
            scale = float(np.sqrt(2.0 / fan_in))
        return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)
    return Tensor(values, requires_grad=True)


def _make(values: np.ndarray, parents: Sequence[Tensor], vjps: Sequence[Callable]) -> Tensor:
    """Create an op output, recording the tape only if a parent needs it."""
    live = [(p, f) for p, f in zip(parents, vjps) if p.requires_grad or p._parents]
    out = Tensor(values)
    if live:
        out.requires_grad = True
        out._parents = tuple(p for p, _ in live)
        out._vjps = tuple(f for _, f in live)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.values + b.values,
                 (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.values - b.values,
                 (a, b),
                 (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.values * b.values,
                 (a, b),
                 (lambda g: _unbroadcast(g * b.values, a.shape),
                  lambda g: _unbroadcast(g * a.values, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.values / b.values,
                 (a, b),
                 (lambda g: _unbroadcast(g / b.values, a.shape),
                  lambda g: _unbroadcast(-g * a.values / (b.values * b.values), b.shape)))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    return _make(a.values ** p, (a,), (lambda g: g * p * a.values ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_values = np.exp(a.values)
    return _make(out_values, (a,), (lambda g: g * out_values,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.values), (a,), (lambda g: g / a.values,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    root = np.sqrt(a.values)
    return _make(root, (a,), (lambda g: g / (2.0 * root),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.values), (a,), (lambda g: g * np.sign(a.values),))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    a = as_tensor(a)
    inside = (a.values >= lo) & (a.values <= hi)
    return _make(np.clip(a.values, lo, hi), (a,), (lambda g: g * inside,))


# ---------------------------------------------------------------------------
# reductions and shape ops

def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        gk = g if keepdims else np.expand_dims(g, ax)
        return np.broadcast_to(gk, a.shape).copy()

    return _make(a.values.sum(axis=axis, keepdims=keepdims), (a,), (vjp,))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in ax]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.values.reshape(shape), (a,), (lambda g: g.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.values.transpose(axes), (a,), (lambda g: g.transpose(inverse),))


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def make_vjp(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    return _make(np.concatenate([t.values for t in ts], axis=axis),
                 tuple(ts), tuple(make_vjp(i) for i in range(len(ts))))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    return _make(a.values @ b.values,
                 (a, b),
                 (lambda g: g @ b.values.T, lambda g: a.values.T @ g))


# ---------------------------------------------------------------------------
# nonlinear blocks

def softmax(a, axis: int = -1) -> Tensor:
    """Row-stable softmax: the running maximum is subtracted before exp."""
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_values = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * out_values).sum(axis=axis, keepdims=True)
        return out_values * (g - inner)

    return _make(out_values, (a,), (vjp,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.values, 0.0), (a,), (lambda g: g * (a.values > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    out_values = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                          np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _make(out_values, (a,), (lambda g: g * out_values * (1.0 - out_values),))


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x), not the tanh approximation."""
    a = as_tensor(a)
    x = a.values
    cdf = ndtr(x)
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return _make(x * cdf, (a,), (lambda g: g * (cdf + x * pdf),))


_ACTIVATIONS = {"relu": relu, "gelu": gelu, "sigmoid": sigmoid}


def activation(kind: str, a) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {kind!r}; supported: {sorted(_ACTIVATIONS)}") from None
    return fn(a)


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    if eps <= 0.0:
        raise ConfigurationError(f"layer_norm eps must be positive, got {eps}")
    a = as_tensor(a)
    centered = sub(a, mean(a, axis=-1, keepdims=True))
    variance = mean(mul(centered, centered), axis=-1, keepdims=True)
    normed = div(centered, sqrt(add(variance, eps)))
    return add(mul(normed, gain), bias)


# ---------------------------------------------------------------------------
# convolution / pooling

def _conv_geometry(extent: int, k: int, stride: int, padding: int) -> int:
    return (extent + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int):
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    b, c, ho, wo = windows.shape[:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * k * k)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(dcols: np.ndarray, b: int, c: int, h: int, w: int, k: int,
            stride: int, padding: int) -> np.ndarray:
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = _conv_geometry(h, k, stride, padding)
    wo = _conv_geometry(w, k, stride, padding)
    d = dcols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros((b, c, hp, wp), dtype=DTYPE)
    for u in range(k):
        for v in range(k):
            out[:, :, u:u + ho * stride:stride, v:v + wo * stride:stride] += d[:, :, :, :, u, v]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return out


def _check_conv_args(k: int, stride: int, padding: int):
    if k < 1 or k % 2 == 0:
        raise ConfigurationError(f"kernel extent must be odd and positive, got {k}")
    if stride < 1:
        raise ConfigurationError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ConfigurationError(f"padding must be >= 0, got {padding}")


def conv2d(x, kernels, stride: int = 1, padding: int = 0,
           transposed: bool = False, output_size: tuple[int, int] | None = None) -> Tensor:
    """2-D cross-correlation over [B,C,H,W] (or [C,H,W]) input.

    kernels: [C_out, C_in, k, k]. With transposed=True the exact adjoint
    map is applied instead: input carries C_out channels, output C_in, and
    output_size names the forward-conv input extents (several extents can
    share one conv output extent when stride > 1).
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d expects [B,C,H,W] and [O,I,k,k], got {x.shape}, {kernels.shape}")
    c_out, c_in, k, k2 = kernels.shape
    if k != k2:
        raise DimensionError(f"conv2d kernels must be square, got {kernels.shape}")
    _check_conv_args(k, stride, padding)
    out = _conv_transposed(x, kernels, stride, padding, output_size) if transposed \
        else _conv_forward(x, kernels, stride, padding)
    return reshape(out, out.shape[1:]) if squeeze else out


def _conv_forward(x: Tensor, kernels: Tensor, stride: int, padding: int) -> Tensor:
    b, c_in, h, w = x.shape
    c_out, kc_in, k, _ = kernels.shape
    if kc_in != c_in:
        raise DimensionError(f"conv2d channels differ: input {c_in}, kernels expect {kc_in}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(
            f"kernel {k}x{k} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    xp = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.values
    cols, ho, wo = _im2col(xp, k, stride)
    kmat = kernels.values.reshape(c_out, c_in * k * k)
    out_values = (cols @ kmat.T).transpose(0, 2, 1).reshape(b, c_out, ho, wo)

    def vjp_x(g):
        g2 = g.reshape(b, c_out, ho * wo).transpose(0, 2, 1)
        return _col2im(g2 @ kmat, b, c_in, h, w, k, stride, padding)

    def vjp_k(g):
        g2 = g.reshape(b, c_out, ho * wo).transpose(0, 2, 1)
        return np.einsum("bnc,bnf->cf", g2, cols).reshape(kernels.shape)

    return _make(out_values, (x, kernels), (vjp_x, vjp_k))


def _conv_transposed(x: Tensor, kernels: Tensor, stride: int, padding: int,
                     output_size: tuple[int, int] | None) -> Tensor:
    b, c, ho, wo = x.shape
    c_out, c_in, k, _ = kernels.shape
    if c != c_out:
        raise DimensionError(
            f"transposed conv2d input channels {c} differ from kernel C_out {c_out}")
    if output_size is None:
        output_size = ((ho - 1) * stride + k - 2 * padding,
                       (wo - 1) * stride + k - 2 * padding)
    h, w = output_size
    if _conv_geometry(h, k, stride, padding) != ho or _conv_geometry(w, k, stride, padding) != wo:
        raise DimensionError(
            f"output_size {output_size} is not a forward-conv preimage of {(ho, wo)} "
            f"with k={k}, stride={stride}, padding={padding}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(
            f"kernel {k}x{k} larger than padded output {h + 2 * padding}x{w + 2 * padding}")
    kmat = kernels.values.reshape(c_out, c_in * k * k)
    x2 = x.values.reshape(b, c_out, ho * wo).transpose(0, 2, 1)
    out_values = _col2im(x2 @ kmat, b, c_in, h, w, k, stride, padding)

    def vjp_x(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
            if padding else g
        cols, _, _ = _im2col(gp, k, stride)
        return (cols @ kmat.T).transpose(0, 2, 1).reshape(b, c_out, ho, wo)

    def vjp_k(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
            if padding else g
        cols, _, _ = _im2col(gp, k, stride)
        return np.einsum("bnc,bnf->cf", x2, cols).reshape(kernels.shape)

    return _make(out_values, (x, kernels), (vjp_x, vjp_k))


def max_pool2d(x, window, stride=None) -> Tensor:
    """Windowed max over the trailing two axes; ties route gradient to the
    first maximal element in row-major window order."""
    x = as_tensor(x)
    orig_ndim = x.ndim
    if orig_ndim == 2:
        x = reshape(x, (1, 1) + x.shape)
    elif orig_ndim == 3:
        x = reshape(x, (1,) + x.shape)
    elif orig_ndim != 4:
        raise DimensionError(f"max_pool2d expects 2-4 axes, got shape {x.shape}")
    wh, ww = (window, window) if isinstance(window, int) else window
    sh, sw = (wh, ww) if stride is None else \
        ((stride, stride) if isinstance(stride, int) else stride)
    b, c, h, w = x.shape
    if wh > h or ww > w:
        raise DimensionError(f"pool window {wh}x{ww} larger than input {h}x{w}")
    if (h - wh) % sh or (w - ww) % sw:
        raise DimensionError(
            f"pool window {wh}x{ww} stride {sh}x{sw} does not tile input {h}x{w}")
    windows = sliding_window_view(x.values, (wh, ww), axis=(2, 3))[:, :, ::sh, ::sw]
    b_, c_, ho, wo = windows.shape[:4]
    flat = windows.reshape(b, c, ho, wo, wh * ww)
    arg = flat.argmax(axis=-1)  # first max in row-major window order
    out_values = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros((b, c, h, w), dtype=DTYPE)
        du, dv = np.unravel_index(arg.ravel(), (wh, ww))
        bi, ci, oi, oj = np.indices((b, c, ho, wo)).reshape(4, -1)
        np.add.at(gx, (bi, ci, oi * sh + du, oj * sw + dv), g.ravel())
        return gx

    out = _make(out_values, (x,), (vjp,))
    if orig_ndim == 2:
        return reshape(out, out.shape[2:])
    if orig_ndim == 3:
        return reshape(out, out.shape[1:])
    return out


def cosine_similarity(u, v) -> Tensor:
    """Cosine of flattened inputs. Zero-norm operands (either side) give a
    constant 0 with no gradient path; zero-initialized codes would
    otherwise produce NaN early in training."""
    u, v = as_tensor(u), as_tensor(v)
    if u.size != v.size:
        raise DimensionError(f"cosine_similarity size mismatch: {u.shape} vs {v.shape}")
    uf, vf = reshape(u, (u.size,)), reshape(v, (v.size,))
    nu = float(np.linalg.norm(uf.values))
    nv = float(np.linalg.norm(vf.values))
    if nu == 0.0 or nv == 0.0:
        return Tensor(0.0)
    dot = tensor_sum(mul(uf, vf))
    return div(dot, mul(sqrt(tensor_sum(mul(uf, uf))), sqrt(tensor_sum(mul(vf, vf)))))


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle harness

def backward(loss: Tensor):
    """Reverse-accumulate d loss / d node into .grad of every requires_grad
    tensor reachable from loss. Visits each node once in reverse
    topological order; re-running a spent graph raises UsageError."""
    if loss.values.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._spent:
        raise UsageError("backward already ran on this graph; rebuild the forward pass")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    for node in order:
        if node._parents:
            if node._spent:
                raise UsageError("graph node reused across backward calls; rebuild the forward pass")
            node._spent = True

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = node.grad + g if node.grad is not None else g.copy()
        for parent, vjp in zip(node._parents, node._vjps):
            contribution = vjp(g)
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + contribution
            else:
                flowing[key] = contribution


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Worst relative error between f's analytic gradient at x and central
    finite differences, coordinate by coordinate."""
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigurationError(f"grad_check eps must lie in [1e-6, 1e-3], got {eps}")
    x = as_tensor(x)
    leaf = Tensor(x.values.copy(), requires_grad=True)
    out = f(leaf)
    if out.values.size != 1:
        raise UsageError(f"grad_check target must be scalar, got shape {out.shape}")
    out.backward()
    analytic = leaf.grad.copy()

    probe = x.values.copy()
    flat = probe.ravel()
    worst = 0.0
    for i in range(flat.size):
        kept = flat[i]
        flat[i] = kept + eps
        f_plus = f(Tensor(probe)).item()
        flat[i] = kept - eps
        f_minus = f(Tensor(probe)).item()
        flat[i] = kept
        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = analytic.ravel()[i]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
        worst = max(worst, rel)
    return worst
