"""Tokenization, vocabulary, focus-guide construction, synthetic data, JSONL I/O."""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .stemmer import porter_stem

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<sos>", "<eos>", "<unk>"]

_PUNCT = set(string.punctuation)


class CorpusError(ValueError):
    pass


class JsonlParseError(CorpusError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.line_no = line_no


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace split, peel leading/trailing ASCII punctuation."""
    out: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        trail: list[str] = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


def load_stopwords() -> frozenset[str]:
    text = resources.files("focusmix.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


@dataclass
class Vocabulary:
    token_to_id: dict[str, int]
    id_to_token: list[str]

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]


def build_vocab(records: list["Record"], max_size: int) -> Vocabulary:
    """Most frequent tokens across sources and targets; frequency ties break
    lexicographically. max_size counts the four reserved entries."""
    if max_size <= 4:
        raise CorpusError(f"max_size must exceed 4, got {max_size}")
    counts: Counter[str] = Counter()
    for rec in records:
        counts.update(rec.source)
        for tgt in rec.targets:
            counts.update(tgt)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    id_to_token = RESERVED + [t for t, _ in ranked[: max_size - 4]]
    return Vocabulary({t: i for i, t in enumerate(id_to_token)}, id_to_token)


@dataclass
class Record:
    source: list[str]
    targets: list[list[str]]
    answer_span: tuple[int, int] | None = None
    focus_guides: list[list[int]] | None = None

    def validate(self) -> None:
        S = len(self.source)
        if S < 1:
            raise CorpusError("record source must be nonempty")
        if not self.targets or any(not t for t in self.targets):
            raise CorpusError("record targets must be nonempty")
        if self.answer_span is not None:
            lo, hi = self.answer_span
            if not (0 <= lo <= hi < S):
                raise CorpusError(f"answer_span {self.answer_span} outside [0, {S})")
        if self.focus_guides is not None:
            if len(self.focus_guides) != len(self.targets):
                raise CorpusError("one focus guide per target required")
            for g in self.focus_guides:
                if len(g) != S:
                    raise CorpusError(
                        f"focus guide length {len(g)} does not match source length {S}")
                if any(b not in (0, 1) for b in g):
                    raise CorpusError("focus guide bits must be 0 or 1")


def make_focus_guide_qg(source: list[str], target: list[str],
                        answer_span: tuple[int, int] | None,
                        stopwords: frozenset[str]) -> list[int]:
    """Stem-overlap guide: 1 where a source token shares a stem with some
    target token, except stop words and tokens inside the answer span."""
    target_stems = {porter_stem(t) for t in target}
    lo, hi = answer_span if answer_span is not None else (-1, -2)
    guide = []
    for i, tok in enumerate(source):
        bit = int(porter_stem(tok) in target_stems
                  and tok not in stopwords
                  and not (lo <= i <= hi))
        guide.append(bit)
    return guide


def _contains_run(target: list[str], run: list[str]) -> bool:
    L = len(run)
    return any(target[j:j + L] == run for j in range(len(target) - L + 1))


def make_focus_guide_copy(source: list[str], target: list[str]) -> list[int]:
    """Greedy left-to-right longest contiguous match against the target;
    scanning resumes after each matched run."""
    S = len(source)
    guide = [0] * S
    i = 0
    while i < S:
        best = 0
        for L in range(min(S - i, len(target)), 0, -1):
            if _contains_run(target, source[i:i + L]):
                best = L
                break
        if best:
            for j in range(i, i + best):
                guide[j] = 1
            i += best
        else:
            i += 1
    return guide


@dataclass
class SyntheticSpec:
    num_facts: int = 3
    num_entities: int = 20
    num_relations: int = 20
    num_values: int = 20
    num_records: int = 2000
    seed: int = 0

    def validate(self) -> None:
        if self.num_facts < 2:
            raise CorpusError(f"num_facts must be >= 2, got {self.num_facts}")
        for name in ("num_entities", "num_relations", "num_values"):
            if getattr(self, name) < self.num_facts:
                raise CorpusError(f"{name} must be >= num_facts")
        if self.num_records < 1:
            raise CorpusError("num_records must be >= 1")


def gen_synthetic(spec: SyntheticSpec) -> list[Record]:
    """Multi-fact records: source is F facts 'ent rel val' joined by ';',
    target k asks about fact k. Uses numpy's PCG64 stream, so identical
    seeds reproduce identical records on any platform."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    records = []
    F = spec.num_facts
    for _ in range(spec.num_records):
        ents = rng.choice(spec.num_entities, size=F, replace=False)
        rels = rng.choice(spec.num_relations, size=F, replace=False)
        vals = rng.choice(spec.num_values, size=F, replace=False)
        source: list[str] = []
        guides = []
        for k in range(F):
            if k:
                source.append(";")
            start = len(source)
            source += [f"ent{ents[k]}", f"rel{rels[k]}", f"val{vals[k]}"]
            guides.append((start, start + 3))
        S = len(source)
        focus_guides = []
        targets = []
        for k in range(F):
            g = [0] * S
            for j in range(*guides[k]):
                g[j] = 1
            focus_guides.append(g)
            targets.append(["which", f"rel{rels[k]}", f"ent{ents[k]}", "?",
                            f"val{vals[k]}"])
        records.append(Record(source=source, targets=targets,
                              focus_guides=focus_guides))
    return records


def _record_to_obj(rec: Record) -> dict:
    obj = {"source": rec.source, "targets": rec.targets}
    if rec.answer_span is not None:
        obj["answer_span"] = list(rec.answer_span)
    if rec.focus_guides is not None:
        obj["focus_guides"] = rec.focus_guides
    return obj


def write_jsonl(records: list[Record], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(_record_to_obj(rec), sort_keys=True))
            f.write("\n")


def read_jsonl(path: str) -> list[Record]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise JsonlParseError(path, line_no, f"invalid JSON: {e}") from e
            try:
                rec = Record(
                    source=list(obj["source"]),
                    targets=[list(t) for t in obj["targets"]],
                    answer_span=(tuple(obj["answer_span"])
                                 if "answer_span" in obj else None),
                    focus_guides=([list(g) for g in obj["focus_guides"]]
                                  if "focus_guides" in obj else None),
                )
                rec.validate()
            except (KeyError, TypeError, CorpusError) as e:
                raise JsonlParseError(path, line_no, str(e)) from e
            records.append(rec)
    return records
