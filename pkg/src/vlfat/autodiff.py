"""Float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous float64 numpy buffer. Operations record
the computation graph as they run; calling :meth:`Tensor.backward` on a scalar
result sweeps that graph in reverse topological order and accumulates
gradients into every leaf created with ``requires_grad=True``. Accumulation is
additive: sweeping the same graph twice doubles leaf gradients. Intermediate
nodes never keep a ``.grad``; their contributions live only inside the sweep,
so the graph (and its memory) is released as soon as the result goes out of
scope.

All ops are eager numpy under the hood; shapes follow numpy broadcasting where
noted. A debug guard (:func:`set_debug_checks`) makes every op assert that its
output is finite, which turns silent overflow into an immediate error.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidInputError, ShapeError
from .rng import RngStream

_debug_checks = False


def set_debug_checks(enabled: bool) -> bool:
    """Toggle the finite-output guard on every op; returns the previous state."""
    global _debug_checks
    previous = _debug_checks
    _debug_checks = bool(enabled)
    return previous


class Tensor:
    """N-dimensional float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data outside the graph."""
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse-mode sweep seeding ``grad`` (ones for a scalar) at self.

        Leaf tensors accumulate into ``.grad`` additively; call
        :meth:`zero_grad` (or set ``grad = None``) between steps.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without an explicit grad needs a scalar")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"seed grad shape {grad.shape} != tensor shape {self.data.shape}"
                )

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        flowing: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in flowing:
                    flowing[pid] = flowing[pid] + pg
                else:
                    flowing[pid] = pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(data)):
        raise FloatingPointError("op produced a non-finite value")
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if squeeze:
        grad = grad.sum(axis=squeeze, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and broadcasting arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes through the unclipped region."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return ga, gb

    return _result(np.matmul(ad, bd), (a, b), vjp)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(
        a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),)
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis`` starting at ``start``."""
    a = as_tensor(a)
    if not (0 <= start and start + length <= a.shape[axis]):
        raise ShapeError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}"
        )
    index = tuple(
        slice(start, start + length) if i == axis else slice(None)
        for i in range(a.ndim)
    )

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result(a.data[index], (a,), vjp)


def gather_rows(a, indices) -> Tensor:
    """Select rows of a rank >= 1 tensor along axis 0; duplicates allowed."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    count = a.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), vjp)


def reduce_max(a, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximum."""
    a = as_tensor(a)
    argmax = np.argmax(a.data, axis=axis)

    def vjp(g):
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, np.expand_dims(argmax, axis), 1.0, axis=axis)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (mask * g,)

    return _result(a.data.max(axis=axis, keepdims=keepdims), (a,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax; rows along ``axis`` sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), vjp)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ls = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(ls)

    def vjp(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(ls, (a,), vjp)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(a) -> Tensor:
    """Tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)

    def vjp(g):
        sech2 = 1.0 - t * t
        local = 0.5 * (1.0 + t) + 0.5 * x * sech2 * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)
        return (g * local,)

    return _result(0.5 * x * (1.0 + t), (a,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise InvalidInputError(f"layer_norm eps must be > 0, got {eps}")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def vjp(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + bias.data, (x, gain, bias), vjp)


def dropout(x, p: float, rng: RngStream, train_mode: bool) -> Tensor:
    """Inverted dropout; identity when eval mode or p == 0."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise InvalidInputError(f"dropout rate must be in [0, 1), got {p}")
    if not train_mode or p == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= p).astype(np.float64) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# row interpolation (align-corners)


def interp_row_weights(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray]:
    """Align-corners interpolation stencil: destination row j draws from source
    rows ``lo[j]`` and ``lo[j] + 1`` with weights ``1 - w[j]`` and ``w[j]``.

    Endpoints map to endpoints, so n_dst == n_src is the identity and the
    first/last source rows are always reproduced exactly.
    """
    if n_src < 2:
        raise InvalidInputError(f"interpolation needs n_src >= 2, got {n_src}")
    if n_dst < 1:
        raise InvalidInputError(f"interpolation needs n_dst >= 1, got {n_dst}")
    if n_dst == 1:
        return np.zeros(1, dtype=np.int64), np.zeros(1)
    coords = np.arange(n_dst, dtype=np.float64) * (n_src - 1) / (n_dst - 1)
    lo = np.minimum(np.floor(coords).astype(np.int64), n_src - 2)
    return lo, coords - lo


def interp_linear_rows(src, n_dst: int) -> Tensor:
    """Resample the rows of a rank-2 tensor to ``n_dst`` rows, align-corners.

    Differentiable into ``src``: each output row sends its gradient to the two
    adjacent source rows weighted by the interpolation stencil.
    """
    src = as_tensor(src)
    if src.ndim != 2:
        raise ShapeError(f"interp_linear_rows expects rank 2, got shape {src.shape}")
    n_src = src.shape[0]
    lo, w = interp_row_weights(n_src, n_dst)
    w1 = w[:, None]
    w0 = 1.0 - w1

    def vjp(g):
        full = np.zeros_like(src.data)
        np.add.at(full, lo, w0 * g)
        np.add.at(full, lo + 1, w1 * g)
        return (full,)

    return _result(w0 * src.data[lo] + w1 * src.data[lo + 1], (src,), vjp)


def truncated_normal_init(shape, mean, std, lo, hi, rng: RngStream) -> Tensor:
    """Tensor initialized from a truncated normal; see RngStream.truncated_normal."""
    return Tensor(rng.truncated_normal(shape, mean=mean, std=std, lo=lo, hi=hi))
