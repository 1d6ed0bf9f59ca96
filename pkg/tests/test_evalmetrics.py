import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focusmix.evalmetrics import (
    EvalReport,
    HypothesisSet,
    MetricInputError,
    bleu4_corpus,
    bleu4_sentence,
    evaluate_sets,
    make_hypothesis_set,
    oracle_metric,
    oracle_pick,
    pairwise_metric,
    report_markdown,
    rouge2_corpus,
    rouge2_f1,
    top1_metric,
    write_report_csv,
)
from focusmix.generator import Hypothesis


def hyp(tokens, log_prob=0.0):
    return Hypothesis(tokens=list(tokens), log_prob=log_prob,
                      attention=np.zeros((0, 0)))


# ---------------------------------------------------------------------------
# independent brute-force n-gram oracle (list-scan implementation, no shared
# code with the module under test)

def _grams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def _clip(hyp_grams, ref_grams):
    return sum(min(hyp_grams.count(g), ref_grams.count(g))
               for g in set(hyp_grams))


def oracle_bleu4_corpus(hyps, refs):
    prec = []
    for n in range(1, 5):
        c = sum(_clip(_grams(h, n), _grams(r, n)) for h, r in zip(hyps, refs))
        t = sum(len(_grams(h, n)) for h in hyps)
        if c == 0 or t == 0:
            return 0.0
        prec.append(c / t)
    hl = sum(len(h) for h in hyps)
    rl = sum(len(r) for r in refs)
    bp = 1.0 if hl > rl else math.exp(1.0 - rl / hl)
    return bp * (prec[0] * prec[1] * prec[2] * prec[3]) ** 0.25


def oracle_bleu4_sentence(h, r):
    if not h:
        return 0.0
    prec = []
    for n in range(1, 5):
        c = _clip(_grams(h, n), _grams(r, n))
        t = len(_grams(h, n))
        if n >= 2:
            c, t = c + 1, t + 1
        if c == 0:
            return 0.0
        prec.append(c / t)
    bp = 1.0 if len(h) > len(r) else math.exp(1.0 - len(r) / len(h))
    return bp * (prec[0] * prec[1] * prec[2] * prec[3]) ** 0.25


def oracle_rouge2(h, r):
    hg, rg = _grams(h, 2), _grams(r, 2)
    if not hg or not rg:
        return 0.0
    o = _clip(hg, rg)
    p, rec = o / len(hg), o / len(rg)
    return 0.0 if p + rec == 0 else 2 * p * rec / (p + rec)


# ---------------------------------------------------------------------------

class TestBleuCorpus:
    def test_identity(self):
        seqs = [list("abcdef"), list("abab")]
        assert bleu4_corpus(seqs, seqs) == pytest.approx(1.0)

    def test_disjoint(self):
        assert bleu4_corpus([list("aaaa")], [list("bbbb")]) == 0.0

    def test_hand_anchor(self):
        h = "the cat sat on the mat".split()
        r = "the cat sat on a mat".split()
        expected = (5 / 6 * 3 / 5 * 2 / 4 * 1 / 3) ** 0.25
        assert bleu4_corpus([h], [r]) == pytest.approx(expected, abs=1e-12)
        assert bleu4_corpus([h], [r]) == pytest.approx(0.5373, abs=1e-4)

    def test_empty_corpus_rejected(self):
        with pytest.raises(MetricInputError):
            bleu4_corpus([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(MetricInputError):
            bleu4_corpus([list("ab")], [])

    def test_matches_bruteforce_oracle_100_cases(self):
        rng = random.Random(0)
        for _ in range(100):
            n = rng.randint(1, 5)
            hyps = [[rng.randint(0, 3) for _ in range(rng.randint(1, 9))]
                    for _ in range(n)]
            refs = [[rng.randint(0, 3) for _ in range(rng.randint(1, 9))]
                    for _ in range(n)]
            assert bleu4_corpus(hyps, refs) == pytest.approx(
                oracle_bleu4_corpus(hyps, refs), abs=1e-9)


class TestBleuSentence:
    def test_identity_exactly_one(self):
        assert bleu4_sentence(list("abcd"), list("abcd")) == pytest.approx(1.0)

    def test_disjoint_unigrams_zero(self):
        assert bleu4_sentence(list("aa"), list("bb")) == 0.0

    def test_empty_hyp_zero(self):
        assert bleu4_sentence([], list("ab")) == 0.0

    def test_brevity_penalty_anchor(self):
        got = bleu4_sentence(list("abcd"), list("abcde"))
        assert got == pytest.approx(math.exp(1 - 5 / 4), abs=1e-12)
        assert got == pytest.approx(0.7788, abs=1e-4)

    def test_matches_bruteforce_oracle_100_cases(self):
        rng = random.Random(1)
        for _ in range(100):
            h = [rng.randint(0, 3) for _ in range(rng.randint(0, 9))]
            r = [rng.randint(0, 3) for _ in range(rng.randint(1, 9))]
            assert bleu4_sentence(h, r) == pytest.approx(
                oracle_bleu4_sentence(h, r), abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 4), max_size=10),
           st.lists(st.integers(0, 4), min_size=1, max_size=10))
    def test_bounded_and_identity(self, h, r):
        v = bleu4_sentence(h, r)
        assert 0.0 <= v <= 1.0
        assert bleu4_sentence(r, r) == pytest.approx(1.0)


class TestRouge2:
    def test_identity(self):
        assert rouge2_f1(list("abc"), list("abc")) == pytest.approx(1.0)

    def test_hand_anchor(self):
        got = rouge2_f1(list("abcd"), list("abce"))
        assert got == pytest.approx(2 / 3, abs=1e-12)
        assert got == pytest.approx(0.6667, abs=1e-4)

    def test_single_token_zero(self):
        assert rouge2_f1(["a"], list("ab")) == 0.0
        assert rouge2_f1(list("ab"), ["a"]) == 0.0

    def test_corpus_is_mean(self):
        hyps = [list("abcd"), list("abc")]
        refs = [list("abce"), list("abc")]
        expected = (rouge2_f1(hyps[0], refs[0]) + 1.0) / 2
        assert rouge2_corpus(hyps, refs) == pytest.approx(expected)

    def test_matches_bruteforce_oracle_100_cases(self):
        rng = random.Random(2)
        for _ in range(100):
            h = [rng.randint(0, 3) for _ in range(rng.randint(0, 9))]
            r = [rng.randint(0, 3) for _ in range(rng.randint(0, 9))]
            assert rouge2_f1(h, r) == pytest.approx(oracle_rouge2(h, r),
                                                    abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 4), max_size=10),
           st.lists(st.integers(0, 4), max_size=10))
    def test_symmetric_and_bounded(self, h, r):
        assert rouge2_f1(h, r) == pytest.approx(rouge2_f1(r, h), abs=1e-12)
        assert 0.0 <= rouge2_f1(h, r) <= 1.0


class TestAggregates:
    def _random_sets(self, seed, n=10, K=3):
        rng = random.Random(seed)
        sets = []
        for i in range(n):
            ref = [rng.randint(0, 4) for _ in range(rng.randint(2, 6))]
            hyps = [hyp([rng.randint(0, 4) for _ in range(rng.randint(1, 6))],
                        log_prob=-rng.random() * 5) for _ in range(K)]
            sets.append(make_hypothesis_set(f"s{i}", hyps, ref))
        return sets

    def test_top1_k1_equals_corpus_metric(self):
        sets = [make_hypothesis_set("a", [hyp(list("abcd"))], list("abce"))]
        assert top1_metric(sets, "bleu4") == pytest.approx(
            bleu4_corpus([list("abcd")], [list("abce")]))

    def test_top1_reads_only_rank_one(self):
        best = hyp(list("abcd"), log_prob=-0.1)
        others = [hyp(list("zzzz"), log_prob=-9.0),
                  hyp(list("qqqq"), log_prob=-8.0)]
        a = make_hypothesis_set("a", [best] + others, list("abcd"))
        b = make_hypothesis_set("a", [best] + others[::-1], list("abcd"))
        assert top1_metric([a], "bleu4") == top1_metric([b], "bleu4") == \
            pytest.approx(1.0)

    def test_oracle_finds_verbatim_reference(self):
        ref = list("abcd")
        hyps = [hyp(list("zzzz"), -0.1), hyp(ref, -5.0)]
        s = make_hypothesis_set("a", hyps, ref)
        assert oracle_metric([s], "bleu4") == pytest.approx(1.0)
        assert top1_metric([s], "bleu4") == 0.0

    def test_oracle_dominates_top1_sentence_score(self):
        for seed in range(50):
            for s in self._random_sets(seed):
                for metric in ("bleu4", "rouge2"):
                    pick = oracle_pick(s, metric)
                    from focusmix.evalmetrics import SENTENCE_METRICS
                    sent = SENTENCE_METRICS[metric]
                    assert sent(pick.tokens, s.reference) >= \
                        sent(s.hypotheses[0].tokens, s.reference)

    def test_oracle_tie_prefers_lower_rank(self):
        a, b = hyp(list("ab"), -0.1), hyp(list("ab"), -0.2)
        s = make_hypothesis_set("a", [a, b], list("cd"))
        assert oracle_pick(s, "bleu4") is s.hypotheses[0]

    def test_pairwise_identical_is_one(self):
        hyps = [hyp(list("abc"), -i * 0.1) for i in range(3)]
        s = make_hypothesis_set("a", hyps, list("xyz"))
        assert pairwise_metric([s], "bleu4") == pytest.approx(1.0)
        assert pairwise_metric([s], "rouge2") == pytest.approx(1.0)

    def test_pairwise_disjoint_is_zero(self):
        hyps = [hyp(list("aa"), -0.1), hyp(list("bb"), -0.2),
                hyp(list("cc"), -0.3)]
        s = make_hypothesis_set("a", hyps, list("xy"))
        assert pairwise_metric([s], "bleu4") == 0.0

    def test_pairwise_k2_is_mean_of_both_directions(self):
        h1, h2 = hyp(list("abcd"), -0.1), hyp(list("abcde"), -0.2)
        s = make_hypothesis_set("a", [h1, h2], list("xy"))
        a = bleu4_sentence(h1.tokens, h2.tokens)
        b = bleu4_sentence(h2.tokens, h1.tokens)
        assert pairwise_metric([s], "bleu4") == pytest.approx((a + b) / 2)

    def test_pairwise_permutation_invariant(self):
        for seed in range(10):
            sets = self._random_sets(seed, n=4)
            base = pairwise_metric(sets, "bleu4")
            shuffled = []
            for s in sets:
                hyps = list(s.hypotheses)
                random.Random(seed + 99).shuffle(hyps)
                shuffled.append(HypothesisSet(s.source_id,
                                              sorted(hyps, key=lambda h: -h.score),
                                              s.reference))
            assert pairwise_metric(shuffled, "bleu4") == pytest.approx(base)

    def test_pairwise_k1_absent(self):
        s = make_hypothesis_set("a", [hyp(list("ab"))], list("ab"))
        assert pairwise_metric([s], "bleu4") is None

    def test_unranked_set_rejected(self):
        s = HypothesisSet("a", [hyp(list("ab"), -9.0), hyp(list("ab"), -0.1)],
                          list("ab"))
        with pytest.raises(MetricInputError):
            top1_metric([s], "bleu4")

    def test_unknown_metric_rejected(self):
        s = make_hypothesis_set("a", [hyp(list("ab"))], list("ab"))
        with pytest.raises(MetricInputError):
            top1_metric([s], "meteor")


class TestReports:
    def _reports(self):
        sets = [make_hypothesis_set(
            "a", [hyp(list("abcd"), -0.1), hyp(list("abce"), -0.2)],
            list("abcd"))]
        return [evaluate_sets(sets, m) for m in ("bleu4", "rouge2")]

    def test_evaluate_sets_fields(self):
        r = self._reports()[0]
        assert r.metric == "bleu4" and r.K == 2 and r.n_examples == 1
        assert r.top1 == pytest.approx(1.0)
        assert r.oracle == pytest.approx(1.0)
        assert 0.0 <= r.pairwise <= 1.0

    def test_csv_header_and_rerun_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_report_csv(self._reports(), p1)
        write_report_csv(self._reports(), p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().strip().splitlines()
        assert lines[0] == "metric,K,top1,oracle,pairwise,n_examples"
        assert len(lines) == 3

    def test_csv_absent_pairwise_empty_cell(self, tmp_path):
        r = EvalReport("bleu4", 1, 0.5, 0.5, None, 7)
        p = tmp_path / "r.csv"
        write_report_csv([r], p)
        assert p.read_text().strip().splitlines()[1] == \
            "bleu4,1,0.500000,0.500000,,7"

    def test_markdown_table(self):
        md = report_markdown(self._reports())
        assert md.startswith("| metric | K |")
        assert "| bleu4 | 2 |" in md
        assert "| rouge2 | 2 |" in md
