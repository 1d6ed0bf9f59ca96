"""Named parameter store, Adam, and finite-difference gradient checking."""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor


class GradCheckError(RuntimeError):
    """Loss became non-finite while probing a parameter entry."""


class ParamStore:
    """Ordered name -> Tensor map with per-parameter Adam state.

    Iteration order is insertion order, so training and checkpointing are
    deterministic. Moment tensors and step counters are created lazily and
    advance only for parameters that actually receive a gradient.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def collect_grads(self) -> dict[str, np.ndarray]:
        """Gradients accumulated since the last zero_grad; untouched params absent."""
        return {n: t.grad for n, t in self._params.items() if t.grad is not None}

    def step_count(self, name: str) -> int:
        return self._t.get(name, 0)

    def astype(self, dtype) -> "ParamStore":
        """Copy of values in another dtype with fresh optimizer state."""
        out = ParamStore(dtype)
        for n, t in self._params.items():
            out.add(n, t.data.astype(dtype))
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self._params.items():
            if n not in arrays:
                raise KeyError(f"checkpoint is missing parameter {n!r}")
            a = np.asarray(arrays[n], dtype=self.dtype)
            if a.shape != t.data.shape:
                raise DimensionError(
                    f"parameter {n!r}: checkpoint shape {a.shape} vs model {t.data.shape}")
            t.data[...] = a


def adam_step(store: ParamStore, grads: dict[str, np.ndarray],
              lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Bias-corrected Adam update on exactly the parameters present in grads."""
    for name, g in grads.items():
        p = store[name]
        g = np.asarray(g, dtype=p.dtype)
        if g.shape != p.data.shape:
            raise DimensionError(
                f"adam_step: grad shape {g.shape} vs parameter {name!r} shape {p.data.shape}")
        if name not in store._m:
            store._m[name] = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
            store._t[name] = 0
        store._t[name] += 1
        t = store._t[name]
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def grad_check(loss_fn, store: ParamStore, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry: |a - n| / max(1e-8, |a| + |n|). Run the store
    in float64; float32 rounding drowns the eps=1e-5 differences.
    """
    store.zero_grad()
    loss = loss_fn(store)
    if not np.isfinite(loss.data):
        raise GradCheckError("loss is non-finite at the base point")
    loss.backward()
    analytic = {n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for n, t in store.items()}

    worst = 0.0
    for name, t in store.items():
        flat = t.data.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(loss_fn(store).data)
            flat[i] = orig - eps
            f_minus = float(loss_fn(store).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"non-finite loss probing {name}[{i}]")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
