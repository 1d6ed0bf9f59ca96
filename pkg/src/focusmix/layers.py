"""GRU, Bi-GRU and additive attention built on the autodiff tensor ops.

GRU gate convention (fixed for testability of closed forms):
    r  = sigmoid(Wr x + Ur h + br)
    z  = sigmoid(Wz x + Uz h + bz)
    n  = tanh(Wn x + Un (r*h) + bn)
    h' = z*h + (1-z)*n
With all weights and biases zero this yields h' = 0.5*h.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, affine, concat, matmul, sigmoid, softmax, stack, tanh

GRU_KEYS = ("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wn", "Un", "bn")

INIT_SCALE = 0.1


def init_gru_arrays(rng: np.random.Generator, d_in: int, d_h: int,
                    dtype=np.float32) -> dict[str, np.ndarray]:
    def u(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(dtype)

    out = {}
    for gate in "rzn":
        out[f"W{gate}"] = u(d_h, d_in)
        out[f"U{gate}"] = u(d_h, d_h)
        out[f"b{gate}"] = np.zeros(d_h, dtype=dtype)
    return out


def gru_step(p, x: Tensor, h: Tensor) -> Tensor:
    """One GRU step under the documented gate convention."""
    r = sigmoid(affine(x, p["Wr"], p["br"]) + matmul(p["Ur"], h))
    z = sigmoid(affine(x, p["Wz"], p["bz"]) + matmul(p["Uz"], h))
    n = tanh(affine(x, p["Wn"], p["bn"]) + matmul(p["Un"], r * h))
    return z * h + (1.0 - z) * n


def bigru_encode(p_fwd, p_bwd, X: Tensor) -> Tensor:
    """Run forward and backward GRUs over the rows of X (S x d_in).

    Returns an S x 2*d_h matrix whose row t is [fwd_h_t ; bwd_h_t].
    Both directions start from h_0 = 0.
    """
    S = X.data.shape[0]
    if S < 1:
        raise ValueError("bigru_encode: input must contain at least one row")
    d_h = p_fwd["Ur"].data.shape[0]
    h = Tensor(np.zeros(d_h, dtype=X.dtype))
    fwd = []
    for t in range(S):
        h = gru_step(p_fwd, X.row(t), h)
        fwd.append(h)
    h = Tensor(np.zeros(d_h, dtype=X.dtype))
    bwd = [None] * S
    for t in reversed(range(S)):
        h = gru_step(p_bwd, X.row(t), h)
        bwd[t] = h
    return stack([concat([fwd[t], bwd[t]]) for t in range(S)])


def additive_attention(s: Tensor, H: Tensor, Wa: Tensor, Ua: Tensor,
                       v: Tensor) -> tuple[Tensor, Tensor]:
    """score_i = v . tanh(Wa s + Ua H_i); returns (context, softmax weights).

    Ua is stored (2*d_h, d_a) so H @ Ua needs no transpose.
    """
    proj = tanh(matmul(H, Ua) + matmul(Wa, s))   # S x d_a, query broadcast
    weights = softmax(matmul(proj, v))           # S
    context = matmul(weights, H)                 # 2*d_h
    return context, weights
