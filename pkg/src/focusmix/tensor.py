"""Reverse-mode autodiff over dense numpy arrays.

Small by design: only the ops the selector and generator need. Tensors carry
a `.data` array and accumulate into `.grad` on `backward()`. float32 is the
training dtype; gradient checks run the same graphs in float64.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform."""


def _require_shapes(cond: bool, op: str, *shapes) -> None:
    if not cond:
        raise DimensionError(f"{op}: incompatible shapes {[tuple(s) for s in shapes]}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad: bool = False, _prev=()):
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _prev)
        self._backward = None
        self._prev = _prev

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backprop from a scalar loss; accumulates into .grad of the graph."""
        assert self.data.size == 1, "backward() requires a scalar"
        topo, seen = [], set()

        def visit(t: Tensor) -> None:
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._prev:
                visit(p)
            topo.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data + other.data, _prev=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        out._backward = bw
        return out

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out = Tensor(self.data * other.data, _prev=(self, other))

        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        out._backward = bw
        return out

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    __radd__ = __add__
    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        out = Tensor(self.data.sum(keepdims=False), _prev=(self,))

        def bw(g):
            if self.requires_grad:
                self._accum(np.broadcast_to(g, self.data.shape).copy())

        out._backward = bw
        return out

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def row(self, i: int) -> "Tensor":
        """Row i of a 2-D tensor; backward scatters into that row only."""
        _require_shapes(self.data.ndim == 2, "row", self.shape)
        out = Tensor(self.data[i], _prev=(self,))

        def bw(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[i] = g
                self._accum(full)

        out._backward = bw
        return out


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_shapes(
        a.data.ndim in (1, 2) and b.data.ndim in (1, 2)
        and a.data.shape[-1] == b.data.shape[0],
        "matmul", a.shape, b.shape,
    )
    out = Tensor(a.data @ b.data, _prev=(a, b))
    ad, bd = a.data, b.data

    def bw(g):
        if a.requires_grad:
            if ad.ndim == 1 and bd.ndim == 1:      # dot -> scalar
                a._accum(g * bd)
            elif ad.ndim == 2 and bd.ndim == 1:    # (m,n)@(n,) -> (m,)
                a._accum(np.outer(g, bd))
            elif ad.ndim == 1 and bd.ndim == 2:    # (n,)@(n,k) -> (k,)
                a._accum(bd @ g)
            else:                                   # (m,n)@(n,k) -> (m,k)
                a._accum(g @ bd.T)
        if b.requires_grad:
            if ad.ndim == 1 and bd.ndim == 1:
                b._accum(g * ad)
            elif ad.ndim == 2 and bd.ndim == 1:
                b._accum(ad.T @ g)
            elif ad.ndim == 1 and bd.ndim == 2:
                b._accum(np.outer(ad, g))
            else:
                b._accum(ad.T @ g)

    out._backward = bw
    return out


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """y = W x + b for a vector x."""
    _require_shapes(
        W.data.ndim == 2 and x.data.ndim == 1 and W.data.shape[1] == x.data.shape[0]
        and b.data.shape == (W.data.shape[0],),
        "affine", W.shape, x.shape, b.shape,
    )
    return matmul(W, x) + b


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_d = np.empty_like(d)
    pos = d >= 0
    out_d[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_d[~pos] = ex / (1.0 + ex)
    out = Tensor(out_d, _prev=(x,))

    def bw(g):
        if x.requires_grad:
            x._accum(g * out_d * (1.0 - out_d))

    out._backward = bw
    return out


def tanh(x: Tensor) -> Tensor:
    out_d = np.tanh(x.data)
    out = Tensor(out_d, _prev=(x,))

    def bw(g):
        if x.requires_grad:
            x._accum(g * (1.0 - out_d * out_d))

    out._backward = bw
    return out


def concat(parts) -> Tensor:
    parts = list(parts)
    _require_shapes(all(p.data.ndim == 1 for p in parts), "concat",
                    *[p.shape for p in parts])
    out = Tensor(np.concatenate([p.data for p in parts]), _prev=tuple(parts))
    sizes = [p.data.shape[0] for p in parts]

    def bw(g):
        off = 0
        for p, n in zip(parts, sizes):
            if p.requires_grad:
                p._accum(g[off:off + n])
            off += n

    out._backward = bw
    return out


def stack(rows) -> Tensor:
    """Stack equal-length vectors into a matrix, one per row."""
    rows = list(rows)
    _require_shapes(rows and all(r.data.shape == rows[0].data.shape and
                                 r.data.ndim == 1 for r in rows),
                    "stack", *[r.shape for r in rows])
    out = Tensor(np.stack([r.data for r in rows]), _prev=tuple(rows))

    def bw(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r._accum(g[i])

    out._backward = bw
    return out


def embedding_lookup(E: Tensor, ids) -> Tensor:
    """Gather rows of E; backward scatter-adds into the gathered rows."""
    _require_shapes(E.data.ndim == 2, "embedding_lookup", E.shape)
    ids = list(ids)
    V = E.data.shape[0]
    for i in ids:
        if not (0 <= i < V):
            raise IndexError(f"embedding id {i} out of range [0, {V})")
    idx = np.asarray(ids, dtype=np.intp)
    out = Tensor(E.data[idx].reshape(len(ids), E.data.shape[1]), _prev=(E,))

    def bw(g):
        if E.requires_grad:
            full = np.zeros_like(E.data)
            np.add.at(full, idx, g)
            E._accum(full)

    out._backward = bw
    return out


def softmax(x: Tensor) -> Tensor:
    d = x.data - x.data.max()
    e = np.exp(d)
    out_d = e / e.sum()
    out = Tensor(out_d, _prev=(x,))

    def bw(g):
        if x.requires_grad:
            x._accum(out_d * (g - np.dot(g, out_d)))

    out._backward = bw
    return out


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log-softmax on a raw array (no graph)."""
    m = logits.max()
    s = logits - m
    return s - np.log(np.exp(s).sum())


def softmax_xent(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target], stable via max subtraction."""
    V = logits.data.shape[0]
    _require_shapes(logits.data.ndim == 1, "softmax_xent", logits.shape)
    if not (0 <= target < V):
        raise IndexError(f"target {target} out of range [0, {V})")
    ls = log_softmax_values(logits.data)
    out = Tensor(np.asarray(-ls[target], dtype=logits.dtype), _prev=(logits,))
    p = np.exp(ls)

    def bw(g):
        if logits.requires_grad:
            grad = p.copy()
            grad[target] -= 1.0
            logits._accum(g * grad)

    out._backward = bw
    return out


NLL_EPS = 1e-7


def bernoulli_nll(p: Tensor, m) -> Tensor:
    """Sum of -[m log p + (1-m) log(1-p)], with p clamped to [eps, 1-eps]."""
    m = np.asarray(m, dtype=p.dtype)
    if m.shape != p.data.shape:
        raise DimensionError(
            f"bernoulli_nll: probs shape {p.shape} vs mask shape {m.shape}")
    pc = np.clip(p.data, NLL_EPS, 1.0 - NLL_EPS)
    loss = -(m * np.log(pc) + (1.0 - m) * np.log(1.0 - pc)).sum()
    out = Tensor(np.asarray(loss, dtype=p.dtype), _prev=(p,))
    inside = (p.data > NLL_EPS) & (p.data < 1.0 - NLL_EPS)

    def bw(g):
        if p.requires_grad:
            dp = (-m / pc + (1.0 - m) / (1.0 - pc)) * inside
            p._accum(g * dp)

    out._backward = bw
    return out
