"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-free engine in the micrograd style: every op returns a
`Tensor` that remembers its parents and a closure computing the local
vector-Jacobian product. `Tensor.backward()` runs the closures once each
in reverse topological order. Everything is float64; stochastic ops take
an explicit `numpy.random.Generator` so replays are bitwise identical.

Implemented primitives: add/sub/mul (broadcasting), matmul (stacked),
sigmoid, tanh, elu, log, softmax over the last axis, concat, stack,
basic slicing, reshape, swapaxes, sum/mean over an axis, gather along
the last axis, inverted dropout, and layer normalization.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rule."""


class GradCheckError(RuntimeError):
    """Raised when a finite-difference probe produces a non-finite value."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        # Parents and the vjp closure are kept only on differentiable paths,
        # so eval-mode forwards on detached params build no graph at all.
        if self.requires_grad and _parents:
            self._parents = _parents
            self._vjp = _vjp
        else:
            self._parents = ()
            self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        """View of the same array outside the graph (no copy)."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._vjp = None
        return t

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        """Backpropagate from a scalar; fills `.grad` on every
        requires-grad node reachable from this one."""
        if self.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        order = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __getitem__(self, key):
        return tslice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, rng=None) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(data, requires_grad=True)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# -- arithmetic ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data, _parents=(a, b), _vjp=None)

    def vjp(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    out._vjp = vjp if out.requires_grad else None
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data, _parents=(a, b), _vjp=None)

    def vjp(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    out._vjp = vjp if out.requires_grad else None
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(-g)

    out._vjp = vjp if out.requires_grad else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b), _vjp=None)

    def vjp(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.shape))

    out._vjp = vjp if out.requires_grad else None
    return out


# -- pointwise nonlinearities -------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    # Stable two-sided evaluation.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y, _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(g * y * (1.0 - y))

    out._vjp = vjp if out.requires_grad else None
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(g * (1.0 - y * y))

    out._vjp = vjp if out.requires_grad else None
    return out


def elu(a: Tensor, alpha=1.0) -> Tensor:
    x = a.data
    y = np.where(x > 0, x, alpha * np.expm1(x))
    out = Tensor(y, _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(g * np.where(x > 0, 1.0, y + alpha))

    out._vjp = vjp if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(g / a.data)

    out._vjp = vjp if out.requires_grad else None
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, _parents=(a,), _vjp=None)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accum(y * (g - dot))

    out._vjp = vjp if out.requires_grad else None
    return out


# -- structure ops ------------------------------------------------------


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))
        ):
            raise ShapeError(
                f"concat: incompatible shapes {[tuple(x.shape) for x in tensors]} on axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors), _vjp=None)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    out._vjp = vjp if out.requires_grad else None
    return out


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def tslice(a: Tensor, key) -> Tensor:
    view = a.data[key]
    out = Tensor(view.copy(), _parents=(a,), _vjp=None)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] += g
        a._accum(full)

    out._vjp = vjp if out.requires_grad else None
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(g.reshape(a.shape))

    out._vjp = vjp if out.requires_grad else None
    return out


def swapaxes(a: Tensor, ax1, ax2) -> Tensor:
    out = Tensor(np.swapaxes(a.data, ax1, ax2).copy(), _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(np.swapaxes(g, ax1, ax2))

    out._vjp = vjp if out.requires_grad else None
    return out


def tsum(a: Tensor, axis=None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis), _parents=(a,), _vjp=None)

    def vjp(g):
        if axis is None:
            a._accum(np.broadcast_to(g, a.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    out._vjp = vjp if out.requires_grad else None
    return out


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis), _parents=(a,), _vjp=None)

    def vjp(g):
        if axis is None:
            a._accum(np.broadcast_to(g / n, a.shape).copy())
        else:
            a._accum(np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy())

    out._vjp = vjp if out.requires_grad else None
    return out


def gather_last(a: Tensor, idx) -> Tensor:
    """out[..., i] = a[..., i, idx[..., i]]: picks one entry per row along
    the last axis. Used for class-probability lookup."""
    idx = np.asarray(idx)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"gather_last: index shape {idx.shape} vs data {a.shape}")
    picked = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]
    out = Tensor(picked, _parents=(a,), _vjp=None)

    def vjp(g):
        full = np.zeros_like(a.data)
        flat = full.reshape(-1, a.shape[-1])
        flat[np.arange(flat.shape[0]), idx.ravel()] = g.ravel()
        a._accum(full)

    out._vjp = vjp if out.requires_grad else None
    return out


# -- stochastic / normalizing ops ---------------------------------------


def dropout(a: Tensor, p: float, train_flag: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: kept activations divided by (1-p). Exact identity
    when train_flag is false or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {p}")
    if not train_flag or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * keep, _parents=(a,), _vjp=None)

    def vjp(g):
        a._accum(g * keep)

    out._vjp = vjp if out.requires_grad else None
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gain.shape != a.shape[-1:] or bias.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last dim of {a.shape}"
        )
    x = a.data
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, _parents=(a, gain, bias), _vjp=None)

    def vjp(g):
        if a.requires_grad:
            gx = g * gain.data
            term = n * gx - gx.sum(axis=-1, keepdims=True) \
                - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
            a._accum(inv / n * term)
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.shape))

    out._vjp = vjp if out.requires_grad else None
    return out


# -- gradient checking ---------------------------------------------------


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Compare analytic gradients of `loss = f(params)` against central
    finite differences.

    Returns max over parameter entries of
    |analytic - central| / max(1, |central|). Non-finite probe values
    raise GradCheckError naming the offending parameter entry.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    params = list(params)
    for p in params:
        p.grad = None
    loss = f(params)
    if loss.size != 1:
        raise ValueError(f"f must return a scalar, got shape {loss.shape}")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = float(f(params).data)
            flat[j] = orig - eps
            lo = float(f(params).data)
            flat[j] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise GradCheckError(
                    f"non-finite probe at parameter {k}, element {j}"
                )
            fd = (hi - lo) / (2.0 * eps)
            err = abs(analytic[k].reshape(-1)[j] - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return float(worst)
