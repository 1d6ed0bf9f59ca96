"""Diverse-decoding baselines sharing the generator's step function.

Beam scoring is the raw log-probability sum (no length normalization);
finished hypotheses retire and the search continues until B are finished
or max_len is hit. Diverse beam search partitions the B per-step picks
into G ordered groups selecting from a shared candidate pool; group g's
candidate tokens are penalized by lambda * (times that token was already
picked at this step by earlier groups). With lambda = 0 the groups jointly
pick the overall top-B, which is exactly plain beam search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import EOS, SOS
from .generator import Generator, Hypothesis
from .optim import adam_step
from .tensor import Tensor, log_softmax_values


class DecodeConfigError(ValueError):
    pass


@dataclass
class _Partial:
    tokens: list[int]
    log_prob: float
    state: Tensor
    prev: int
    attn: list[np.ndarray]


def _finalize(p: _Partial, mask, truncated: bool) -> Hypothesis:
    attention = (np.stack(p.attn) if p.attn else np.zeros((0, len(mask))))
    return Hypothesis(tokens=p.tokens, log_prob=p.log_prob, attention=attention,
                      mask=list(mask), truncated=truncated)


def diverse_beam_search(gen: Generator, x_ids: list[int], mask: list[int],
                        B: int, G: int, lam: float,
                        max_len: int | None = None,
                        sos_emb=None) -> list[Hypothesis]:
    if B < 1:
        raise DecodeConfigError(f"beam width must be >= 1, got {B}")
    if G < 1 or B % G != 0:
        raise DecodeConfigError(f"beam width {B} not divisible into {G} groups")
    max_len = max_len if max_len is not None else gen.cfg.max_len
    group_size = B // G

    H = gen.encode(x_ids, mask)
    root = _Partial(tokens=[], log_prob=0.0, state=gen.initial_state(H),
                    prev=SOS, attn=[])
    active = [root]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        if not active or len(finished) >= B:
            break
        # expand every active hypothesis once
        pool = []  # (base_score, token, hyp_idx, parent, new_state, attn_row)
        for idx, p in enumerate(active):
            logits, h_new, weights = gen.step(p.state, p.prev, H, sos_emb)
            lps = log_softmax_values(logits.data)
            for tok in range(len(lps)):
                pool.append((p.log_prob + float(lps[tok]), tok, idx, p,
                             h_new, weights.data))
        taken = [False] * len(pool)
        step_counts: dict[int, int] = {}
        picks = []
        for g in range(G):
            # fixed group order; penalty counts earlier groups' picks only
            order = sorted(
                range(len(pool)),
                key=lambda i: (-(pool[i][0] - lam * step_counts.get(pool[i][1], 0)),
                               pool[i][1], pool[i][2]))
            chosen = [i for i in order if not taken[i]][:group_size]
            for i in chosen:
                taken[i] = True
            picks.extend(chosen)
            for i in chosen:
                step_counts[pool[i][1]] = step_counts.get(pool[i][1], 0) + 1
        next_active = []
        for i in picks[:B]:
            score, tok, _, parent, h_new, attn_row = pool[i]
            if tok == EOS:
                done = _Partial(tokens=list(parent.tokens), log_prob=score,
                                state=h_new, prev=tok, attn=list(parent.attn))
                finished.append(_finalize(done, mask, truncated=False))
            else:
                next_active.append(_Partial(
                    tokens=parent.tokens + [tok], log_prob=score, state=h_new,
                    prev=tok, attn=parent.attn + [attn_row.copy()]))
        active = next_active

    results = sorted(finished, key=lambda h: -h.log_prob)
    if len(results) < B:
        leftovers = [_finalize(p, mask, truncated=True) for p in active]
        results += sorted(leftovers, key=lambda h: -h.log_prob)
    return results[:B]


def beam_search(gen: Generator, x_ids: list[int], mask: list[int], B: int,
                max_len: int | None = None, sos_emb=None) -> list[Hypothesis]:
    """Top-B hypotheses by total log-probability, descending."""
    return diverse_beam_search(gen, x_ids, mask, B, G=1, lam=0.0,
                               max_len=max_len, sos_emb=sos_emb)


def truncated_sampling(gen: Generator, x_ids: list[int], mask: list[int],
                       k: int, seed: int, max_len: int | None = None,
                       sos_emb=None) -> Hypothesis:
    """Ancestral sampling over the top-k tokens per step, renormalized.

    Uses a PCG64 stream seeded per call, so the draw is reproducible across
    platforms. K diverse samples come from K distinct seeds.
    """
    if k < 1:
        raise DecodeConfigError(f"top-k must be >= 1, got {k}")
    max_len = max_len if max_len is not None else gen.cfg.max_len
    rng = np.random.default_rng(seed)
    H = gen.encode(x_ids, mask)
    h = gen.initial_state(H)
    prev = SOS
    tokens: list[int] = []
    attn_rows = []
    log_prob = 0.0
    truncated = True
    for _ in range(max_len):
        logits, h, weights = gen.step(h, prev, H, sos_emb)
        lps = log_softmax_values(logits.data)
        kk = min(k, len(lps))
        order = sorted(range(len(lps)), key=lambda t: (-lps[t], t))
        survivors = order[:kk]
        sub = np.exp(lps[survivors] - lps[survivors].max())
        sub /= sub.sum()
        choice = int(rng.choice(len(survivors), p=sub))
        tok = survivors[choice]
        log_prob += float(lps[tok])
        if tok == EOS:
            truncated = False
            break
        tokens.append(tok)
        attn_rows.append(weights.data.copy())
        prev = tok
    attention = np.stack(attn_rows) if attn_rows else np.zeros((0, len(x_ids)))
    return Hypothesis(tokens=tokens, log_prob=log_prob, attention=attention,
                      mask=list(mask), truncated=truncated)


class MixtureDecoder:
    """Hard-MoE of K decoders sharing all parameters except the K
    start-of-sequence embeddings; trained with minimum-loss assignment."""

    def __init__(self, gen: Generator, num_experts: int,
                 rng: np.random.Generator):
        self.gen = gen
        self.num_experts = num_experts
        store = gen.store
        self.sos_emb = [
            store.add(f"mixdec.sos_emb.{z}",
                      rng.uniform(-0.1, 0.1, size=gen.cfg.d_w).astype(store.dtype))
            for z in range(1, num_experts + 1)]

    @classmethod
    def wire(cls, gen: Generator, num_experts: int) -> "MixtureDecoder":
        obj = cls.__new__(cls)
        obj.gen = gen
        obj.num_experts = num_experts
        obj.sos_emb = [gen.store[f"mixdec.sos_emb.{z}"]
                       for z in range(1, num_experts + 1)]
        return obj

    def _zero_mask(self, x_ids: list[int]) -> list[int]:
        return [0] * len(x_ids)

    def estep(self, x_ids: list[int], y_ids: list[int]):
        losses = [self.gen.teacher_forced_loss(x_ids, self._zero_mask(x_ids),
                                               y_ids, sos_emb=s)
                  for s in self.sos_emb]
        z_best = 1 + int(np.argmin([l.item() for l in losses]))
        return z_best, losses

    def train_step(self, batch: list[tuple[list[int], list[int]]],
                   lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> float:
        """Hard-EM step; unchosen SOS embeddings stay byte-identical."""
        store = self.gen.store
        store.zero_grad()
        total = None
        for x_ids, y_ids in batch:
            _, losses = self.estep(x_ids, y_ids)
            chosen = min(losses, key=lambda l: l.item())
            total = chosen if total is None else total + chosen
        mean_loss = total * (1.0 / len(batch))
        mean_loss.backward()
        adam_step(store, store.collect_grads(),
                  lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        return mean_loss.item()

    def generate(self, x_ids: list[int],
                 max_len: int | None = None) -> list[Hypothesis]:
        """One greedy decode per SOS embedding, in expert order."""
        hyps = []
        for z, s in enumerate(self.sos_emb, start=1):
            hyp = self.gen.greedy_decode(x_ids, self._zero_mask(x_ids),
                                         max_len, sos_emb=s, expert_id=z)
            hyps.append(hyp)
        return hyps
