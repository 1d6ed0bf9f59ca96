"""Focus-conditioned attention encoder-decoder.

Encoder input row t is [word_emb(x_t); focus_emb(m_t)] over a 2-row focus
table. The word embedding is one shared tensor: encoder input, decoder
input and the output logits (emb @ projected state + bias) all read it, so
weight tying holds by storage identity. Decoder step t queries attention
with the previous hidden state, consumes [word_emb(prev); context], and
projects [state; context] down to d_w before the tied output product.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .corpus import EOS, SOS
from .layers import GRU_KEYS, additive_attention, bigru_encode, gru_step, init_gru_arrays
from .optim import ParamStore, adam_step
from .selector import SHARED_EMB, Selector, ensure_shared_embedding
from .tensor import (
    Tensor,
    affine,
    concat,
    embedding_lookup,
    log_softmax_values,
    matmul,
    softmax_xent,
    stack,
    tanh,
)


@dataclass
class GeneratorConfig:
    d_w: int = 64
    d_h: int = 64
    d_f: int = 16   # focus embedding width
    max_len: int = 30


@dataclass
class Hypothesis:
    tokens: list[int]                      # surface tokens: no SOS, no EOS
    log_prob: float                        # sum of chosen-token log-probs (incl. EOS)
    attention: np.ndarray                  # one row per emitted surface token
    mask: list[int] | None = None
    truncated: bool = False                # max_len hit before EOS
    expert_id: int | None = None

    @property
    def score(self) -> float:
        """Length-normalized ranking score."""
        steps = len(self.tokens) + (0 if self.truncated else 1)
        return self.log_prob / max(1, steps)


class Generator:
    def __init__(self, store: ParamStore, vocab_size: int, cfg: GeneratorConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.store = store
        self.vocab_size = vocab_size
        dt = store.dtype
        u = lambda *s: rng.uniform(-0.1, 0.1, size=s).astype(dt)
        self.word_emb = ensure_shared_embedding(store, vocab_size, cfg.d_w, rng)
        # signed indicator init: a strong focused/unfocused signal from step
        # one, so training cannot settle on a mask-ignoring plateau
        focus_init = np.vstack([np.full(cfg.d_f, -1.0), np.full(cfg.d_f, 1.0)])
        self.focus_emb = store.add("generator.focus_emb", focus_init.astype(dt))
        self.enc_fwd = {k: store.add(f"generator.enc_fwd.{k}", v) for k, v in
                        init_gru_arrays(rng, cfg.d_w + cfg.d_f, cfg.d_h, dt).items()}
        self.enc_bwd = {k: store.add(f"generator.enc_bwd.{k}", v) for k, v in
                        init_gru_arrays(rng, cfg.d_w + cfg.d_f, cfg.d_h, dt).items()}
        self.dec = {k: store.add(f"generator.dec.{k}", v) for k, v in
                    init_gru_arrays(rng, cfg.d_w + 2 * cfg.d_h, cfg.d_h, dt).items()}
        self.att_Wa = store.add("generator.att.Wa", u(cfg.d_h, cfg.d_h))
        self.att_Ua = store.add("generator.att.Ua", u(2 * cfg.d_h, cfg.d_h))
        self.att_v = store.add("generator.att.v", u(cfg.d_h))
        self.bridge_W = store.add("generator.bridge.W", u(cfg.d_h, 2 * cfg.d_h))
        self.bridge_b = store.add("generator.bridge.b", np.zeros(cfg.d_h, dtype=dt))
        self.out_W = store.add("generator.out.W", u(cfg.d_w, 3 * cfg.d_h))
        self.out_b = store.add("generator.out.b", np.zeros(cfg.d_w, dtype=dt))
        self.out_bias = store.add("generator.out_bias", np.zeros(vocab_size, dtype=dt))

    @classmethod
    def wire(cls, store: ParamStore, vocab_size: int, cfg: GeneratorConfig) -> "Generator":
        obj = cls.__new__(cls)
        obj.cfg = cfg
        obj.store = store
        obj.vocab_size = vocab_size
        obj.word_emb = store[SHARED_EMB]
        obj.focus_emb = store["generator.focus_emb"]
        obj.enc_fwd = {k: store[f"generator.enc_fwd.{k}"] for k in GRU_KEYS}
        obj.enc_bwd = {k: store[f"generator.enc_bwd.{k}"] for k in GRU_KEYS}
        obj.dec = {k: store[f"generator.dec.{k}"] for k in GRU_KEYS}
        obj.att_Wa = store["generator.att.Wa"]
        obj.att_Ua = store["generator.att.Ua"]
        obj.att_v = store["generator.att.v"]
        obj.bridge_W = store["generator.bridge.W"]
        obj.bridge_b = store["generator.bridge.b"]
        obj.out_W = store["generator.out.W"]
        obj.out_b = store["generator.out.b"]
        obj.out_bias = store["generator.out_bias"]
        return obj

    # -- forward pieces --------------------------------------------------

    def encode(self, x_ids: list[int], mask: list[int]) -> Tensor:
        if len(mask) != len(x_ids):
            raise ValueError(
                f"focus mask length {len(mask)} does not match source length {len(x_ids)}")
        W = embedding_lookup(self.word_emb, x_ids)
        F = embedding_lookup(self.focus_emb, mask)
        rows = [concat([W.row(t), F.row(t)]) for t in range(len(x_ids))]
        return bigru_encode(self.enc_fwd, self.enc_bwd, stack(rows))

    def initial_state(self, H: Tensor) -> Tensor:
        S = H.data.shape[0]
        d_h = self.cfg.d_h
        final_fwd = H.row(S - 1)
        final_bwd = H.row(0)
        finals = concat([_slice(final_fwd, 0, d_h), _slice(final_bwd, d_h, 2 * d_h)])
        return tanh(affine(finals, self.bridge_W, self.bridge_b))

    def _prev_embedding(self, prev_id: int, sos_emb: Tensor | None) -> Tensor:
        if prev_id == SOS and sos_emb is not None:
            return sos_emb
        return embedding_lookup(self.word_emb, [prev_id]).row(0)

    def step(self, h: Tensor, prev_id: int, H: Tensor,
             sos_emb: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
        """One decoder step. Returns (logits, new_state, attention_weights)."""
        context, weights = additive_attention(h, H, self.att_Wa, self.att_Ua,
                                              self.att_v)
        inp = concat([self._prev_embedding(prev_id, sos_emb), context])
        h_new = gru_step(self.dec, inp, h)
        proj = affine(concat([h_new, context]), self.out_W, self.out_b)
        logits = matmul(self.word_emb, proj) + self.out_bias
        return logits, h_new, weights

    # -- training --------------------------------------------------------

    def teacher_forced_loss(self, x_ids: list[int], mask: list[int],
                            y_ids: list[int],
                            sos_emb: Tensor | None = None) -> Tensor:
        """Mean cross-entropy over y + EOS under teacher forcing."""
        if not y_ids:
            raise ValueError("teacher forcing requires a nonempty target")
        H = self.encode(x_ids, mask)
        h = self.initial_state(H)
        inputs = [SOS] + list(y_ids)
        targets = list(y_ids) + [EOS]
        total = None
        for prev, tgt in zip(inputs, targets):
            logits, h, _ = self.step(h, prev, H, sos_emb)
            loss = softmax_xent(logits, tgt)
            total = loss if total is None else total + loss
        return total * (1.0 / len(targets))

    def train_step(self, batch: list[tuple[list[int], list[int], list[int]]],
                   lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> float:
        """Adam step on the mean teacher-forced loss of (x, mask, y) triples."""
        self.store.zero_grad()
        total = None
        for x_ids, mask, y_ids in batch:
            loss = self.teacher_forced_loss(x_ids, mask, y_ids)
            total = loss if total is None else total + loss
        mean_loss = total * (1.0 / len(batch))
        mean_loss.backward()
        adam_step(self.store, self.store.collect_grads(),
                  lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        return mean_loss.item()

    # -- decoding --------------------------------------------------------

    def greedy_decode(self, x_ids: list[int], mask: list[int],
                      max_len: int | None = None,
                      sos_emb: Tensor | None = None,
                      expert_id: int | None = None) -> Hypothesis:
        max_len = max_len if max_len is not None else self.cfg.max_len
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        H = self.encode(x_ids, mask)
        h = self.initial_state(H)
        prev = SOS
        tokens: list[int] = []
        attn_rows = []
        log_prob = 0.0
        truncated = True
        for _ in range(max_len):
            logits, h, weights = self.step(h, prev, H, sos_emb)
            lps = log_softmax_values(logits.data)
            choice = int(np.argmax(lps))
            log_prob += float(lps[choice])
            if choice == EOS:
                truncated = False
                break
            tokens.append(choice)
            attn_rows.append(weights.data.copy())
            prev = choice
        attention = (np.stack(attn_rows) if attn_rows
                     else np.zeros((0, len(x_ids))))
        return Hypothesis(tokens=tokens, log_prob=log_prob, attention=attention,
                          mask=list(mask), truncated=truncated,
                          expert_id=expert_id)

    def sequence_log_prob(self, x_ids: list[int], mask: list[int],
                          tokens: list[int], include_eos: bool = True,
                          sos_emb: Tensor | None = None) -> float:
        """Log-probability of a given token sequence (scoring oracle)."""
        H = self.encode(x_ids, mask)
        h = self.initial_state(H)
        seq = list(tokens) + ([EOS] if include_eos else [])
        prev = SOS
        lp = 0.0
        for tok in seq:
            logits, h, _ = self.step(h, prev, H, sos_emb)
            lp += float(log_softmax_values(logits.data)[tok])
            prev = tok
        return lp

    def upper_bound_decode(self, x_ids: list[int], guide: list[int] | None,
                           max_len: int | None = None) -> Hypothesis:
        """Greedy decoding with the ground-truth focus guide as mask."""
        if guide is None:
            raise ValueError("record has no focus guide for upper-bound decoding")
        return self.greedy_decode(x_ids, guide, max_len)


def generate_diverse(selector: Selector, generator: Generator,
                     x_ids: list[int],
                     max_len: int | None = None) -> list[Hypothesis]:
    """Threshold each expert's focus, then greedy-decode once per mask."""
    hyps = []
    for fm in selector.infer_all_focus(x_ids):
        hyp = generator.greedy_decode(x_ids, fm.bits, max_len,
                                      expert_id=fm.expert_id)
        hyps.append(hyp)
    return hyps


def dump_attention(hyp: Hypothesis, source_tokens: list[str], path: str,
                   emitted_labels: list[str] | None = None) -> None:
    """CSV heatmap: rows = emitted tokens, columns = source tokens."""
    if hyp.attention.shape[0] != len(hyp.tokens):
        raise ValueError("hypothesis has no usable attention trace")
    labels = emitted_labels if emitted_labels is not None else hyp.tokens
    if len(labels) != len(hyp.tokens):
        raise ValueError("one label per emitted token required")
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow([""] + list(source_tokens))
        for tok_label, row in zip(labels, hyp.attention):
            w.writerow([tok_label] + [f"{x:.6f}" for x in row])


def _slice(vec: Tensor, lo: int, hi: int) -> Tensor:
    out = Tensor(vec.data[lo:hi], _prev=(vec,))

    def bw(g):
        if vec.requires_grad:
            full = np.zeros_like(vec.data)
            full[lo:hi] = g
            vec._accum(full)

    out._backward = bw
    return out
