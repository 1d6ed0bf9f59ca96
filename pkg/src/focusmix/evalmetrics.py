"""BLEU-4 / ROUGE-2 metrics and Top-1 / Oracle / Pairwise aggregates.

Corpus BLEU-4 is unsmoothed (clipped n-gram counts pooled over the corpus,
geometric mean n=1..4, brevity penalty). Sentence BLEU-4 applies add-one
smoothing to the clipped and total counts for n >= 2 only, so identity
still scores exactly 1.0 while short sequences stay comparable. ROUGE-2 is
plain token-bigram F1 with multiset clipping. Pairwise diversity averages
the sentence metric over ordered hypothesis pairs, which keeps the value
invariant under permuting hypotheses even though the metrics are asymmetric.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

from .generator import Hypothesis


class MetricInputError(ValueError):
    pass


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_overlap(hyp_counts: Counter, ref_counts: Counter) -> int:
    return sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())


def bleu4_corpus(hyps: list, refs: list) -> float:
    if len(hyps) != len(refs):
        raise MetricInputError(
            f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise MetricInputError("empty corpus")
    clipped = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            hc = _ngrams(hyp, n)
            clipped[n - 1] += _clipped_overlap(hc, _ngrams(ref, n))
            totals[n - 1] += sum(hc.values())
    if hyp_len == 0 or any(c == 0 or t == 0 for c, t in zip(clipped, totals)):
        return 0.0
    log_prec = sum(math.log(c / t) for c, t in zip(clipped, totals)) / 4.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_prec)


def bleu4_sentence(hyp, ref) -> float:
    if len(hyp) == 0:
        return 0.0
    log_prec = 0.0
    for n in range(1, 5):
        hc = _ngrams(hyp, n)
        c = _clipped_overlap(hc, _ngrams(ref, n))
        t = sum(hc.values())
        if n >= 2:
            c, t = c + 1, t + 1
        if c == 0:
            return 0.0
        log_prec += math.log(c / t)
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return bp * math.exp(log_prec / 4.0)


def rouge2_f1(hyp, ref) -> float:
    if len(hyp) < 2 or len(ref) < 2:
        return 0.0
    hc, rc = _ngrams(hyp, 2), _ngrams(ref, 2)
    overlap = _clipped_overlap(hc, rc)
    p = overlap / sum(hc.values())
    r = overlap / sum(rc.values())
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def rouge2_corpus(hyps: list, refs: list) -> float:
    if len(hyps) != len(refs):
        raise MetricInputError(
            f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise MetricInputError("empty corpus")
    return sum(rouge2_f1(h, r) for h, r in zip(hyps, refs)) / len(hyps)


CORPUS_METRICS = {"bleu4": bleu4_corpus, "rouge2": rouge2_corpus}
SENTENCE_METRICS = {"bleu4": bleu4_sentence, "rouge2": rouge2_f1}
METRIC_NAMES = ("bleu4", "rouge2")


@dataclass
class HypothesisSet:
    source_id: str
    hypotheses: list[Hypothesis]   # ranked by .score, descending
    reference: list

    def validate(self) -> None:
        if not self.hypotheses:
            raise MetricInputError(f"set {self.source_id} has no hypotheses")
        scores = [h.score for h in self.hypotheses]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise MetricInputError(
                f"set {self.source_id} is not ranked by descending score")


def make_hypothesis_set(source_id: str, hypotheses: list[Hypothesis],
                        reference: list) -> HypothesisSet:
    """Rank hypotheses by length-normalized log-probability (stable)."""
    ranked = sorted(hypotheses, key=lambda h: -h.score)
    return HypothesisSet(source_id=source_id, hypotheses=ranked,
                         reference=reference)


def _check_sets(sets: list[HypothesisSet], metric: str) -> None:
    if metric not in METRIC_NAMES:
        raise MetricInputError(f"unknown metric {metric!r}")
    if not sets:
        raise MetricInputError("no hypothesis sets")
    for s in sets:
        s.validate()


def top1_metric(sets: list[HypothesisSet], metric: str) -> float:
    _check_sets(sets, metric)
    return CORPUS_METRICS[metric]([s.hypotheses[0].tokens for s in sets],
                                  [s.reference for s in sets])


def oracle_pick(s: HypothesisSet, metric: str) -> Hypothesis:
    """Hypothesis with the best sentence score vs the reference
    (ties -> lower rank index)."""
    sent = SENTENCE_METRICS[metric]
    best, best_score = None, -1.0
    for h in s.hypotheses:
        sc = sent(h.tokens, s.reference)
        if sc > best_score:
            best, best_score = h, sc
    return best


def oracle_metric(sets: list[HypothesisSet], metric: str) -> float:
    _check_sets(sets, metric)
    picks = [oracle_pick(s, metric).tokens for s in sets]
    return CORPUS_METRICS[metric](picks, [s.reference for s in sets])


def pairwise_metric(sets: list[HypothesisSet], metric: str) -> float | None:
    """Mean sentence metric over ordered pairs (i, j), i != j.
    None when every set has a single hypothesis."""
    _check_sets(sets, metric)
    sent = SENTENCE_METRICS[metric]
    total, count = 0.0, 0
    for s in sets:
        hyps = s.hypotheses
        for i, a in enumerate(hyps):
            for j, b in enumerate(hyps):
                if i != j:
                    total += sent(a.tokens, b.tokens)
                    count += 1
    if count == 0:
        return None
    return total / count


@dataclass
class EvalReport:
    metric: str
    K: int
    top1: float
    oracle: float
    pairwise: float | None
    n_examples: int


def evaluate_sets(sets: list[HypothesisSet], metric: str) -> EvalReport:
    _check_sets(sets, metric)
    K = max(len(s.hypotheses) for s in sets)
    return EvalReport(metric=metric, K=K,
                      top1=top1_metric(sets, metric),
                      oracle=oracle_metric(sets, metric),
                      pairwise=pairwise_metric(sets, metric),
                      n_examples=len(sets))


def _fmt(v: float | None) -> str:
    return "" if v is None else f"{v:.6f}"


def write_report_csv(reports: list[EvalReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "K", "top1", "oracle", "pairwise", "n_examples"])
        for r in reports:
            w.writerow([r.metric, r.K, _fmt(r.top1), _fmt(r.oracle),
                        _fmt(r.pairwise), r.n_examples])


def report_markdown(reports: list[EvalReport]) -> str:
    lines = ["| metric | K | top1 | oracle | pairwise | n |",
             "|---|---|---|---|---|---|"]
    for r in reports:
        lines.append(f"| {r.metric} | {r.K} | {_fmt(r.top1)} | "
                     f"{_fmt(r.oracle)} | {_fmt(r.pairwise) or '-'} | "
                     f"{r.n_examples} |")
    return "\n".join(lines) + "\n"
