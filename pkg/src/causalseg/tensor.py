"""Minimal dense-tensor substrate with reverse-mode differentiation.

Tensors wrap numpy arrays (float32 for training, float64 for verification
runs) and record a backward closure per operation.  ``backward`` walks the
graph in deterministic topological order and accumulates gradients into
``.grad``.  ``finite_diff_check`` is the independent central-difference
oracle used by every gradient-fidelity test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327
_SIGMOID_CLIP = 30.0


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or Inf where finite values are required."""


class Tensor:
    """Dense n-dimensional array node in the backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if arr.dtype == np.float64 else np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of this tensor's values, cut out of the graph."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __rtruediv__(self, other):
        return div(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Parameter:
    """Named learnable tensor; names are unique within a registry."""

    tensor: Tensor
    name: str
    learnable: bool = True

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


class ParameterRegistry:
    """Ordered name -> Parameter map owned by one model."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, array, learnable=True) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(Tensor(array, requires_grad=learnable), name, learnable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.tensor.data for name, p in self._params.items()}

    def zero_grad(self):
        for p in self._params.values():
            p.tensor.zero_grad()


def _coerce(value, peer: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=peer.data.dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a: Tensor, b: Tensor, out_data, da, db) -> Tensor:
    req = a.requires_grad or b.requires_grad
    out = Tensor(out_data, requires_grad=req, _parents=(a, b))

    def _bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(da(g), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(db(g), b.shape))

    out._backward = _bw if req else None
    return out


def _unary(a: Tensor, out_data, da) -> Tensor:
    out = Tensor(out_data, requires_grad=a.requires_grad, _parents=(a,))
    if a.requires_grad:
        out._backward = lambda g: a._accumulate(da(g))
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return _binary(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return _binary(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    return _binary(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "div")
    return _binary(
        a, b, a.data / b.data,
        lambda g: g / b.data,
        lambda g: -g * a.data / (b.data * b.data),
    )


def neg(a: Tensor) -> Tensor:
    return _unary(a, -a.data, lambda g: -g)


def log(a: Tensor) -> Tensor:
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _unary(a, out_data, lambda g: g * out_data)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _unary(a, np.clip(a.data, lo, hi), lambda g: g * mask)


# -- activations -----------------------------------------------------------

def gelu(a: Tensor) -> Tensor:
    """Exact error-function GELU: x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out_data = x * phi_cdf
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return _unary(a, out_data.astype(x.dtype), lambda g: g * (phi_cdf + x * pdf))


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.data, -_SIGMOID_CLIP, _SIGMOID_CLIP)
    out_data = 1.0 / (1.0 + np.exp(-x))
    out_data = out_data.astype(a.data.dtype)
    return _unary(a, out_data, lambda g: g * out_data * (1.0 - out_data))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def da(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (g - inner) * out_data

    return _unary(a, out_data, da)


# -- structural ops --------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy() if np.ndim(g) == 0 else np.full(a.shape, g)
        gk = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gk, a.shape).copy()

    return _unary(a, out_data, da)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    out_data = a.data.mean(axis=axis, keepdims=keepdims)

    def da(g):
        if axis is None:
            return np.full(a.shape, g / count, dtype=a.data.dtype)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, a.shape) / count).astype(a.data.dtype)

    return _unary(a, out_data, da)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    return _unary(a, a.data.reshape(shape), lambda g: g.reshape(orig))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got shape {a.shape}")
    return _unary(a, a.data.T.copy(), lambda g: g.T)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def da(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return full

    return _unary(a, a.data[index].copy(), da)


def concat(tensors, axis: int) -> Tensor:
    shapes = [t.shape for t in tensors]
    base = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(base) or any(i != axis and s[i] != base[i] for i in range(len(base))):
            raise ShapeError(f"concat: incompatible shapes {shapes} along axis {axis}")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    req = any(t.requires_grad for t in tensors)
    out = Tensor(out_data, requires_grad=req, _parents=tuple(tensors))
    sizes = [s[axis] for s in shapes]

    def _bw(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(index)])
            offset += n

    out._backward = _bw if req else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        return _binary(a, b, ad @ bd, lambda g: g @ bd.T, lambda g: ad.T @ g)
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        return _binary(a, b, ad @ bd, lambda g: np.outer(g, bd), lambda g: ad.T @ g)
    if ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        return _binary(a, b, ad @ bd, lambda g: bd @ g, lambda g: np.outer(ad, g))
    raise ShapeError(f"matmul supports 1-d/2-d operands, got {ad.shape} @ {bd.shape}")


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight.T + bias with weight shaped (out, in)."""
    return add(matmul(x, transpose(weight)) if x.ndim == 2 else matmul(weight, x), bias)


def repeat_spatial(v: Tensor, h: int, w: int) -> Tensor:
    """Tile an (n,) or (B, n) vector into constant (.., n, h, w) planes."""
    if v.ndim == 1:
        out_data = np.broadcast_to(v.data[:, None, None], (v.shape[0], h, w)).copy()
        return _unary(v, out_data, lambda g: g.sum(axis=(1, 2)))
    if v.ndim == 2:
        b, n = v.shape
        out_data = np.broadcast_to(v.data[:, :, None, None], (b, n, h, w)).copy()
        return _unary(v, out_data, lambda g: g.sum(axis=(2, 3)))
    raise ShapeError(f"repeat_spatial expects 1-d or 2-d input, got shape {v.shape}")


def global_avg_pool(a: Tensor) -> Tensor:
    """Reduce the trailing spatial dims: (N,C,H,W) -> (N,C) or (C,H,W) -> (C,)."""
    if a.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool expects 3-d or 4-d input, got shape {a.shape}")
    h, w = a.shape[-2], a.shape[-1]
    out_data = a.data.mean(axis=(-2, -1))

    def da(g):
        return (np.broadcast_to(g[..., None, None], a.shape) / (h * w)).astype(a.data.dtype)

    return _unary(a, out_data, da)


def _require_even_spatial(a: Tensor, op: str):
    if a.ndim != 4:
        raise ShapeError(f"{op} expects an NCHW tensor, got shape {a.shape}")
    if a.shape[2] % 2 or a.shape[3] % 2:
        raise ShapeError(f"{op}: spatial dims of {a.shape} must be even")


def avgpool2(a: Tensor) -> Tensor:
    _require_even_spatial(a, "avgpool2")
    n, c, h, w = a.shape
    out_data = a.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def da(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0).astype(a.data.dtype)

    return _unary(a, out_data, da)


def maxpool2(a: Tensor) -> Tensor:
    _require_even_spatial(a, "maxpool2")
    n, c, h, w = a.shape
    win = a.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first max wins ties: deterministic
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def da(g):
        gwin = np.zeros_like(win)
        np.put_along_axis(gwin, idx[..., None], g[..., None], axis=-1)
        gwin = gwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return gwin.reshape(n, c, h, w)

    return _unary(a, out_data, da)


def upsample_nearest2(a: Tensor) -> Tensor:
    if a.ndim != 4:
        raise ShapeError(f"upsample_nearest2 expects an NCHW tensor, got shape {a.shape}")
    n, c, h, w = a.shape
    out_data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)

    def da(g):
        return g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return _unary(a, out_data, da)


# -- convolution -----------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Shape-preserving stride-1 cross-correlation, kernels 1x1 or 3x3.

    x: (N, C, H, W); kernel: (O, C, k, k); zero padding (k-1)/2.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OCkk kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d supports 1x1 and 3x3 kernels, got {kh}x{kw}")
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ck}")
    k = kh
    pad = (k - 1) // 2

    if pad:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)
    wmat = kernel.data.reshape(o, c * k * k)
    out_data = (cols @ wmat.T).reshape(n, h, w, o).transpose(0, 3, 1, 2)

    req = x.requires_grad or kernel.requires_grad
    out = Tensor(out_data, requires_grad=req, _parents=(x, kernel))

    def _bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * w, o)
        if kernel.requires_grad:
            kernel._accumulate((g2.T @ cols).reshape(o, c, k, k))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, h, w, c, k, k)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + h, j:j + w] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._accumulate(gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp)

    out._backward = _bw if req else None
    return out


# -- backward pass ---------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # inputs first, root last


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Populate .grad for every requires-grad tensor reachable from ``loss``.

    Returns {id(leaf tensor): grad} for reachable requires-grad leaves.
    Accumulation order is the fixed reverse topological order.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("backward called on a non-finite loss")
    order = _topo_order(loss)
    loss._accumulate(np.ones_like(loss.data))
    leaves = {}
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward(node.grad)
        elif not node._parents and node.requires_grad:
            leaves[id(node)] = node.grad
    return leaves


def ancestors(t: Tensor) -> set[int]:
    """ids of every tensor in ``t``'s backward graph, including ``t``."""
    seen = set()
    stack = [t]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(node._parents)
    return seen


# -- finite-difference oracle ----------------------------------------------

def finite_diff_check(f, params, eps=1e-5, max_probes=None, rng=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f(params) -> scalar Tensor`` must be deterministic (stochastic draws
    frozen).  Relative error per coordinate is
    |analytic - central| / max(1, |central|).  Probes every coordinate
    unless ``max_probes`` caps the count (coordinates then sampled by rng).
    """
    tensors = [p.tensor if isinstance(p, Parameter) else p for p in params]
    for t in tensors:
        t.requires_grad = True
        t.zero_grad()
    loss = f(params)
    backward(loss)
    analytic = [t.grad.copy() for t in tensors]

    coords = [(pi, ci) for pi, t in enumerate(tensors) for ci in range(t.data.size)]
    if max_probes is not None and len(coords) > max_probes:
        rng = rng or np.random.default_rng(0)
        picks = rng.choice(len(coords), size=max_probes, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    for pi, ci in coords:
        flat = tensors[pi].data.reshape(-1)
        saved = flat[ci]
        flat[ci] = saved + eps
        f_plus = f(params).item()
        flat[ci] = saved - eps
        f_minus = f(params).item()
        flat[ci] = saved
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"perturbed evaluation non-finite at param {pi} coord {ci}")
        central = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[pi].reshape(-1)[ci]
        worst = max(worst, abs(a - central) / max(1.0, abs(central)))
    return worst
