"""Reverse-mode automatic differentiation over dense numpy arrays.

Tape semantics: each tracked operation stores its parents and a vector-
Jacobian closure on the output tensor, together with a global creation
index. ``backward`` walks the tensors reachable from the loss in reverse
creation order — the order operations were recorded at forward time — so
no recursive topological sort is needed and arbitrarily deep graphs are
safe. Gradients land on leaves (tensors created with ``requires_grad``)
and accumulate across repeated calls until ``zero_grad``.
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeError, ValidationError

_ORDER = itertools.count()
_STATE = threading.local()

LAYERNORM_EPS = 1e-5
GELU_K0 = math.sqrt(2.0 / math.pi)
GELU_K1 = 0.044715


def _grad_enabled() -> bool:
    return _STATE.__dict__.get("grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


class Tensor:
    """Dense float array with optional gradient and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_order")

    def __init__(self, data, requires_grad: bool = False):
        if type(data) is not np.ndarray:
            data = np.asarray(data)
        if data.dtype.kind != "f":
            data = data.astype(np.float64)
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None
        self._order = next(_ORDER)

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(data, copy=True), requires_grad=True)


def constant(data) -> Tensor:
    """A non-trainable leaf (inputs, masks, fixed tables)."""
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(out_data: np.ndarray, parents: tuple, vjp: Callable) -> Tensor:
    out = Tensor(out_data)
    if _STATE.__dict__.get("grad_enabled", True):
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._parents = parents
                out._vjp = vjp
                break
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from a scalar ``loss``."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    # Reachable subgraph, keyed by creation order.
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._order in nodes:
            continue
        nodes[t._order] = t
        stack.extend(t._parents)

    grads: dict[int, np.ndarray] = {
        loss._order: np.ones_like(loss.data, dtype=loss.data.dtype)
    }
    for order in sorted(nodes, reverse=True):
        t = nodes[order]
        g = grads.pop(order, None)
        if g is None:
            continue
        if t._vjp is None:
            if t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._vjp(g)):
            if pg is None or not (p.requires_grad or p._vjp is not None):
                continue
            if p._order in grads:
                grads[p._order] = grads[p._order] + pg
            else:
                grads[p._order] = pg


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data
    try:
        out = da + db
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {da.shape} with {db.shape}") from exc

    def vjp(g):
        return _unbroadcast(g, da.shape), _unbroadcast(g, db.shape)

    return _track(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _track(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data
    try:
        out = da * db
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {da.shape} with {db.shape}") from exc

    def vjp(g):
        return (
            _unbroadcast(g * db, da.shape),
            _unbroadcast(g * da, db.shape),
        )

    return _track(out, (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    da, db = a.data, b.data
    if da.ndim < 2 or db.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if da.shape[-1] != db.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {da.shape} @ {db.shape}")

    if db.ndim == 2 and da.ndim > 2:
        # Stacked x [*, k] against one weight [k, n]: a single flattened
        # GEMM reuses the weight instead of re-reading it per batch slice.
        a2 = da.reshape(-1, da.shape[-1])
        out = (a2 @ db).reshape(da.shape[:-1] + (db.shape[-1],))

        def vjp(g):
            g2 = g.reshape(-1, db.shape[-1])
            ga = (g2 @ db.T).reshape(da.shape)
            gb = a2.T @ g2
            return ga, gb

        return _track(out, (a, b), vjp)

    out = da @ db

    def vjp(g):
        ga = g @ np.swapaxes(db, -1, -2)
        gb = np.swapaxes(da, -1, -2) @ g
        return _unbroadcast(ga, da.shape), _unbroadcast(gb, db.shape)

    return _track(out, (a, b), vjp)


def linear(x, w, b) -> Tensor:
    """Affine map x @ w + b as one recorded op (training hot path)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    dx, dw, dbias = x.data, w.data, b.data
    if dw.ndim != 2 or dbias.shape != dw.shape[-1:]:
        raise ShapeError(f"linear: weight {dw.shape} and bias {dbias.shape} mismatch")
    if dx.shape[-1] != dw.shape[0]:
        raise ShapeError(f"linear: input {dx.shape} does not match weight {dw.shape}")
    x2 = dx.reshape(-1, dx.shape[-1])
    out = x2 @ dw
    out += dbias
    out = out.reshape(dx.shape[:-1] + (dw.shape[-1],))

    def vjp(g):
        g2 = g.reshape(-1, dw.shape[-1])
        gx = (g2 @ dw.T).reshape(dx.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return _track(out, (x, w, b), vjp)


def transpose(a, axis1: int = -2, axis2: int = -1) -> Tensor:
    a = _as_tensor(a)
    out = np.swapaxes(a.data, axis1, axis2)
    return _track(out, (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _track(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        shapes = tuple(t.shape for t in ts)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from exc

    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(ts))
        )

    return _track(out, tuple(ts), vjp)


def slice_(a, key) -> Tensor:
    """Basic slicing with a tuple of ``slice``/int entries."""
    a = _as_tensor(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _track(out, (a,), vjp)


def gelu(a) -> Tensor:
    """Tanh-form gaussian error linear unit with exact analytic derivative."""
    a = _as_tensor(a)
    x = a.data
    # In-place chains: these arrays sit on the training hot path.
    u = x * x
    u *= GELU_K1
    u += 1.0
    u *= x
    u *= GELU_K0
    th = np.tanh(u, out=u)
    out = th + 1.0
    out *= x
    out *= 0.5

    def vjp(g):
        du = x * x
        du *= 3.0 * GELU_K1
        du += 1.0
        du *= GELU_K0
        w = th * th
        w = np.subtract(1.0, w, out=w)
        w *= du
        w *= x
        w += 1.0
        w += th
        w *= 0.5
        w *= g
        return (w,)

    return _track(out, (a,), vjp)


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    p = np.exp(shifted, out=shifted)
    p /= p.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - dot),)

    return _track(p, (a,), vjp)


def layernorm_nobias(a, gain, eps: float = LAYERNORM_EPS) -> Tensor:
    """Normalize the last axis and scale by ``gain``; no additive term."""
    a, gain = _as_tensor(a), _as_tensor(gain)
    if gain.shape != a.shape[-1:]:
        raise ShapeError(
            f"layernorm gain shape {gain.shape} != last axis of {a.shape}"
        )
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data

    def vjp(g):
        gxhat = g * gain.data
        ggain = (g * xhat).sum(axis=tuple(range(g.ndim - 1)))
        m1 = gxhat.mean(axis=-1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gxhat - m1 - xhat * m2)
        return gx, ggain

    return _track(out, (a, gain), vjp)


def embedding_lookup(table, indices) -> Tensor:
    """Rows of ``table`` at integer ``indices``; scatter-add on backward."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValidationError(
            f"embedding index out of range for table of {table.shape[0]} rows"
        )
    out = table.data[idx]

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return (full,)

    return _track(out, (table,), vjp)


def mean_pool(a, axis: int, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"mean_pool: axis {axis} out of range for shape {a.shape}")
    n = a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _track(out, (a,), vjp)


def sum_all(a) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum())
    return _track(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def cross_entropy(logits, classes) -> Tensor:
    """Mean negative log-likelihood of integer ``classes`` under ``logits``.

    ``logits`` is [batch, n_classes] (a single row is promoted); gradient
    is the textbook softmax-minus-onehot, divided by the batch size.
    """
    logits = _as_tensor(logits)
    if logits.ndim == 1:
        logits = reshape(logits, (1, logits.shape[0]))
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch, classes], got {logits.shape}")
    cls = np.atleast_1d(np.asarray(classes))
    if not np.issubdtype(cls.dtype, np.integer):
        raise ValidationError("cross_entropy classes must be integers")
    b, c = logits.shape
    if cls.shape != (b,):
        raise ShapeError(f"classes shape {cls.shape} != batch ({b},)")
    if cls.size and (cls.min() < 0 or cls.max() >= c):
        raise ValidationError(f"class id out of range 0..{c - 1}")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    nll = lse - x[np.arange(b), cls]
    out = np.asarray(nll.mean())

    def vjp(g):
        p = np.exp(x - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(b), cls] -= 1.0
        return (g * p / b,)

    return _track(out, (logits,), vjp)


# ---------------------------------------------------------------------------
# finite-difference verification


def grad_check(
    f: Callable[[], Tensor],
    params,
    eps: float = 1e-5,
    samples_per_array: int = 200,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` re-evaluates the scalar loss from the current parameter values;
    it must be deterministic and double precision. Up to
    ``samples_per_array`` coordinates are probed per parameter (all of
    them for smaller arrays). The relative error denominator is floored
    at 1e-8 to avoid 0/0.
    """
    if isinstance(params, dict):
        items = list(params.items())
    else:
        items = [(f"p{i}", p) for i, p in enumerate(params)]
    rng = rng if rng is not None else np.random.default_rng(0)

    for _, p in items:
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in items
    }

    max_err = 0.0
    for name, p in items:
        n = p.size
        if n <= samples_per_array:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_array, replace=False)
        flat = p.data.reshape(-1)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                f_plus = float(f().data)
                flat[i] = orig - eps
                f_minus = float(f().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            ana = float(analytic[name].reshape(-1)[i])
            err = abs(ana - numeric) / max(1e-8, abs(ana) + abs(numeric))
            max_err = max(max_err, err)
    return max_err


def primitive_grad_checks(seed: int = 0) -> dict:
    """Gradient-check every primitive in isolation; returns name -> error."""
    rng = np.random.default_rng(seed)

    def rnd(*shape):
        return parameter(rng.standard_normal(shape))

    def proj(t: Tensor) -> Tensor:
        # Fixed random projection keeps the scalarization well conditioned.
        r = constant(np.random.default_rng(seed + 1).standard_normal(t.shape))
        return sum_all(mul(t, r))

    checks = {}

    a, b = rnd(3, 4), rnd(3, 4)
    checks["add"] = grad_check(lambda: proj(add(a, b)), {"a": a, "b": b}, rng=rng)

    a, b = rnd(3, 4), rnd(4)
    checks["mul"] = grad_check(lambda: proj(mul(a, b)), {"a": a, "b": b}, rng=rng)

    a, b = rnd(2, 3, 4), rnd(4, 5)
    checks["matmul"] = grad_check(lambda: proj(matmul(a, b)), {"a": a, "b": b}, rng=rng)

    x, w, bias = rnd(2, 3, 4), rnd(4, 5), rnd(5)
    checks["linear"] = grad_check(
        lambda: proj(linear(x, w, bias)), {"x": x, "w": w, "b": bias}, rng=rng
    )

    a = rnd(2, 3, 4)
    checks["transpose"] = grad_check(lambda: proj(transpose(a)), {"a": a}, rng=rng)
    checks["reshape"] = grad_check(lambda: proj(reshape(a, (6, 4))), {"a": a}, rng=rng)
    checks["slice"] = grad_check(
        lambda: proj(slice_(a, (slice(None), slice(1, 3), slice(0, 2)))),
        {"a": a},
        rng=rng,
    )
    checks["mean_pool"] = grad_check(lambda: proj(mean_pool(a, axis=1)), {"a": a}, rng=rng)

    a, b = rnd(2, 3), rnd(2, 5)
    checks["concat"] = grad_check(
        lambda: proj(concat([a, b], axis=1)), {"a": a, "b": b}, rng=rng
    )

    a = rnd(3, 7)
    checks["gelu"] = grad_check(lambda: proj(gelu(a)), {"a": a}, rng=rng)
    checks["softmax"] = grad_check(lambda: proj(softmax(a, axis=-1)), {"a": a}, rng=rng)

    a, g = rnd(4, 8), rnd(8)
    checks["layernorm_nobias"] = grad_check(
        lambda: proj(layernorm_nobias(a, g)), {"a": a, "g": g}, rng=rng
    )

    table = rnd(6, 5)
    idx = np.array([[0, 2, 2], [5, 1, 0]])
    checks["embedding_lookup"] = grad_check(
        lambda: proj(embedding_lookup(table, idx)), {"table": table}, rng=rng
    )

    logits = rnd(4, 3)
    cls = np.array([0, 2, 1, 1])
    checks["cross_entropy"] = grad_check(
        lambda: cross_entropy(logits, cls), {"logits": logits}, rng=rng
    )

    x = rnd(5, 5)
    checks["sum_all"] = grad_check(lambda: sum_all(mul(x, x)), {"x": x}, rng=rng)
    return checks
