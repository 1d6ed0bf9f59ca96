"""Hard mixture-of-experts focus selector.

K experts share the Bi-GRU and FC parameters and the word embedding
(storage shared with the generator); only the expert embedding e_z differs.
Per position t the focus probability is
    o_t = sigmoid(FC2(tanh(FC1([h_t; h_1; h_S; e_z]))))
Training is hard-EM: each example is assigned to the expert with minimum
Bernoulli NLL against its focus guide, and only that expert's embedding
(plus all shared parameters) receives gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import GRU_KEYS, bigru_encode, init_gru_arrays
from .optim import ParamStore, adam_step
from .tensor import Tensor, bernoulli_nll, concat, embedding_lookup, matmul, sigmoid, stack, tanh

SHARED_EMB = "shared.word_emb"


@dataclass
class SelectorConfig:
    d_w: int = 64
    d_h: int = 64
    d_e: int = 64            # expert embedding dim, defaults to d_w
    num_experts: int = 3
    threshold: float = 0.15  # focus binarization threshold


@dataclass
class FocusMask:
    bits: list[int]
    expert_id: int                    # 1-based
    probs: np.ndarray | None = None


def ensure_shared_embedding(store: ParamStore, vocab_size: int, d_w: int,
                            rng: np.random.Generator) -> Tensor:
    if SHARED_EMB in store:
        return store[SHARED_EMB]
    emb = rng.uniform(-0.1, 0.1, size=(vocab_size, d_w))
    return store.add(SHARED_EMB, emb.astype(store.dtype))


class Selector:
    def __init__(self, store: ParamStore, vocab_size: int, cfg: SelectorConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.store = store
        self.word_emb = ensure_shared_embedding(store, vocab_size, cfg.d_w, rng)
        self.fwd = {k: store.add(f"selector.gru_fwd.{k}", v) for k, v in
                    init_gru_arrays(rng, cfg.d_w, cfg.d_h, store.dtype).items()}
        self.bwd = {k: store.add(f"selector.gru_bwd.{k}", v) for k, v in
                    init_gru_arrays(rng, cfg.d_w, cfg.d_h, store.dtype).items()}
        d_in = 6 * cfg.d_h + cfg.d_e  # [h_t; h_1; h_S; e_z], h's are 2*d_h
        u = lambda *s: rng.uniform(-0.1, 0.1, size=s).astype(store.dtype)
        self.fc1_W = store.add("selector.fc1.W", u(d_in, cfg.d_h))
        self.fc1_b = store.add("selector.fc1.b", np.zeros(cfg.d_h, dtype=store.dtype))
        self.fc2_W = store.add("selector.fc2.W", u(cfg.d_h))
        self.fc2_b = store.add("selector.fc2.b", np.zeros(1, dtype=store.dtype))
        # O(1) init (vs the 0.1 scale used elsewhere): experts must differ
        # enough at step one for hard-EM to break symmetry; at 0.1 scale all
        # experts produce near-identical focus probabilities and training
        # settles on one expert owning every example
        ue = lambda *s: rng.uniform(-1.0, 1.0, size=s).astype(store.dtype)
        self.expert_emb = [store.add(f"selector.expert_emb.{z}", ue(cfg.d_e))
                           for z in range(1, cfg.num_experts + 1)]

    @classmethod
    def wire(cls, store: ParamStore, cfg: SelectorConfig) -> "Selector":
        """Rebind to parameters that already exist in store (checkpoint load)."""
        obj = cls.__new__(cls)
        obj.cfg = cfg
        obj.store = store
        obj.word_emb = store[SHARED_EMB]
        obj.fwd = {k: store[f"selector.gru_fwd.{k}"] for k in GRU_KEYS}
        obj.bwd = {k: store[f"selector.gru_bwd.{k}"] for k in GRU_KEYS}
        obj.fc1_W = store["selector.fc1.W"]
        obj.fc1_b = store["selector.fc1.b"]
        obj.fc2_W = store["selector.fc2.W"]
        obj.fc2_b = store["selector.fc2.b"]
        obj.expert_emb = [store[f"selector.expert_emb.{z}"]
                          for z in range(1, cfg.num_experts + 1)]
        return obj

    def encode(self, x_ids: list[int]) -> Tensor:
        X = embedding_lookup(self.word_emb, x_ids)
        return bigru_encode(self.fwd, self.bwd, X)

    def _probs_from_states(self, H: Tensor, z: int) -> Tensor:
        S = H.data.shape[0]
        h1, hS = H.row(0), H.row(S - 1)
        e_z = self.expert_emb[z - 1]
        feats = stack([concat([H.row(t), h1, hS, e_z]) for t in range(S)])
        hidden = tanh(matmul(feats, self.fc1_W) + self.fc1_b)
        return sigmoid(matmul(hidden, self.fc2_W) + self.fc2_b)

    def forward(self, x_ids: list[int], z: int) -> Tensor:
        """Per-position focus probabilities o^z in (0,1)^S for expert z."""
        if not (1 <= z <= self.cfg.num_experts):
            raise IndexError(f"expert id {z} out of range [1, {self.cfg.num_experts}]")
        return self._probs_from_states(self.encode(x_ids), z)

    def forward_all(self, x_ids: list[int]) -> list[Tensor]:
        """All experts' probabilities, sharing one Bi-GRU pass."""
        H = self.encode(x_ids)
        return [self._probs_from_states(H, z)
                for z in range(1, self.cfg.num_experts + 1)]

    def estep(self, x_ids: list[int], guide: list[int]) -> tuple[int, list[Tensor]]:
        """Per-expert guide NLLs and the argmin expert (ties -> lowest z)."""
        losses = [bernoulli_nll(o, guide) for o in self.forward_all(x_ids)]
        z_best = 1 + int(np.argmin([l.item() for l in losses]))
        return z_best, losses

    def train_step(self, batch: list[tuple[list[int], list[int]]],
                   lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8,
                   usage: dict[int, int] | None = None) -> float:
        """One hard-EM step over a batch; returns mean chosen-expert loss.

        Only chosen experts' embeddings appear in the gradient map, so
        never-chosen experts stay byte-identical through the Adam update.
        If `usage` is given, it accumulates per-expert assignment counts.
        """
        self.store.zero_grad()
        total = None
        for x_ids, guide in batch:
            z_best, losses = self.estep(x_ids, guide)
            if usage is not None:
                usage[z_best] = usage.get(z_best, 0) + 1
            chosen = losses[z_best - 1]
            total = chosen if total is None else total + chosen
        mean_loss = total * (1.0 / len(batch))
        mean_loss.backward()
        adam_step(self.store, self.store.collect_grads(),
                  lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        return mean_loss.item()

    def infer_all_focus(self, x_ids: list[int]) -> list[FocusMask]:
        """Thresholded mask from each expert, in expert order."""
        return [threshold_focus(o.data, self.cfg.threshold, expert_id=z)
                for z, o in enumerate(self.forward_all(x_ids), start=1)]

    def mixture_prob(self, x_ids: list[int], bits: list[int]) -> float:
        """Uniform-mixture likelihood (1/K) sum_z p(bits | x, z)."""
        nlls = [bernoulli_nll(o, bits).item() for o in self.forward_all(x_ids)]
        return float(np.mean([np.exp(-l) for l in nlls]))


def revive_unused_experts(sel: Selector, usage: dict[int, int],
                          rng: np.random.Generator,
                          min_share: float = 0.05) -> list[int]:
    """Re-seed starved experts as noisy clones of the busiest one.

    Hard-EM never updates an expert that is never the argmin, so an expert
    that loses every example early stays dead forever while another expert
    absorbs two clusters. Cloning the busiest expert's embedding (plus small
    noise) puts the dead expert in a near-tie with it; subsequent hard-EM
    steps split the absorbed clusters between the two. Call between epochs
    with the epoch's assignment counts; returns the revived expert ids.
    """
    total = sum(usage.values())
    if total == 0:
        return []
    busiest = max(range(1, sel.cfg.num_experts + 1),
                  key=lambda z: (usage.get(z, 0), -z))
    revived = []
    for z in range(1, sel.cfg.num_experts + 1):
        if usage.get(z, 0) / total < min_share:
            noise = rng.uniform(-0.1, 0.1, size=sel.cfg.d_e)
            sel.expert_emb[z - 1].data[...] = (
                sel.expert_emb[busiest - 1].data
                + noise.astype(sel.store.dtype))
            revived.append(z)
    return revived


def threshold_focus(probs: np.ndarray, th: float, expert_id: int = 1) -> FocusMask:
    """bits_t = 1 iff probs_t >= th (inclusive boundary)."""
    probs = np.asarray(probs)
    return FocusMask(bits=[int(p >= th) for p in probs],
                     expert_id=expert_id, probs=probs)


def sample_focus(probs: np.ndarray, seed: int, expert_id: int = 1) -> FocusMask:
    """Independent Bernoulli draw per position from a seeded PCG64 stream."""
    probs = np.asarray(probs)
    rng = np.random.default_rng(seed)
    bits = (rng.random(probs.shape) < probs).astype(int)
    return FocusMask(bits=bits.tolist(), expert_id=expert_id, probs=probs)
