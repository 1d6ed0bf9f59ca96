"""Command-line surface: synth | train | generate | evaluate | gradcheck.

Exit codes: 0 success, 1 verification failure (gradcheck above tolerance),
2 usage/config/input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

# Thread caps must be exported before numpy initializes its BLAS pool, so
# this runs ahead of the remaining imports.
_threads = os.environ.get("FOCUSMIX_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_from_dict,
    config_hash,
    load_config,
    write_resolved,
)
from .corpus import (
    CorpusError,
    Record,
    SyntheticSpec,
    Vocabulary,
    build_vocab,
    gen_synthetic,
    load_stopwords,
    make_focus_guide_copy,
    make_focus_guide_qg,
    read_jsonl,
    write_jsonl,
)
from .decoding import (
    DecodeConfigError,
    MixtureDecoder,
    beam_search,
    diverse_beam_search,
    truncated_sampling,
)
from .evalmetrics import (
    MetricInputError,
    evaluate_sets,
    make_hypothesis_set,
    oracle_metric,
    report_markdown,
    write_report_csv,
)
from .generator import (
    Generator,
    GeneratorConfig,
    Hypothesis,
    dump_attention,
    generate_diverse,
)
from .layers import additive_attention, gru_step, init_gru_arrays
from .optim import GradCheckError, ParamStore, grad_check
from .selector import Selector, SelectorConfig, revive_unused_experts
from .tensor import Tensor, affine, bernoulli_nll, tanh


class CliError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data helpers

def ensure_guides(records: list[Record], rule: str) -> None:
    """Fill in focus guides for records that lack them, in place."""
    stopwords = load_stopwords() if rule == "qg" else frozenset()
    for rec in records:
        if rec.focus_guides is not None:
            continue
        if rule == "qg":
            rec.focus_guides = [
                make_focus_guide_qg(rec.source, t, rec.answer_span, stopwords)
                for t in rec.targets]
        else:
            rec.focus_guides = [make_focus_guide_copy(rec.source, t)
                                for t in rec.targets]
        rec.validate()


def flatten_examples(records: list[Record], vocab: Vocabulary):
    """One (x_ids, guide, y_ids) triple per (record, target) pair."""
    out = []
    for rec in records:
        x = vocab.encode(rec.source)
        for guide, target in zip(rec.focus_guides, rec.targets):
            out.append((x, list(guide), vocab.encode(target)))
    return out


# ---------------------------------------------------------------------------
# model assembly / persistence

def build_models(cfg: RunConfig, vocab_size: int, rng: np.random.Generator):
    """Returns (store, selector, generator, mixture_decoder); absent parts None."""
    store = ParamStore()
    sel = mix = None
    gen_cfg = GeneratorConfig(d_w=cfg.d_w, d_h=cfg.d_h, d_f=cfg.d_f,
                              max_len=cfg.max_len)
    if cfg.model == "selector-gen":
        sel_cfg = SelectorConfig(d_w=cfg.d_w, d_h=cfg.d_h, d_e=cfg.d_e,
                                 num_experts=cfg.K, threshold=cfg.th)
        sel = Selector(store, vocab_size, sel_cfg, rng)
        gen = Generator(store, vocab_size, gen_cfg, rng)
    elif cfg.model == "plain-gen":
        gen = Generator(store, vocab_size, gen_cfg, rng)
    else:  # mixture-decoder
        gen = Generator(store, vocab_size, gen_cfg, rng)
        mix = MixtureDecoder(gen, cfg.K, rng)
    return store, sel, gen, mix


def save_model(path: str, store: ParamStore, cfg: RunConfig,
               vocab: Vocabulary, step: int, epoch: int) -> None:
    meta = {"model": cfg.model, "K": cfg.K, "d_w": cfg.d_w, "d_h": cfg.d_h,
            "d_f": cfg.d_f, "d_e": cfg.d_e, "th": cfg.th,
            "max_len": cfg.max_len, "vocab": vocab.id_to_token,
            "config_hash": config_hash(cfg), "step": step, "epoch": epoch}
    save_checkpoint(path, store.state_arrays(), meta)


def load_model(path: str):
    """Rebuild models from a checkpoint; returns
    (meta, vocab, store, selector, generator, mixture_decoder)."""
    arrays, meta = load_checkpoint(path)
    for key in ("model", "K", "d_w", "d_h", "d_f", "d_e", "th", "max_len",
                "vocab"):
        if key not in meta:
            raise CheckpointError(f"checkpoint metadata missing {key!r}")
    vocab = Vocabulary({t: i for i, t in enumerate(meta["vocab"])},
                       list(meta["vocab"]))
    cfg = RunConfig(model=meta["model"], K=meta["K"], d_w=meta["d_w"],
                    d_h=meta["d_h"], d_f=meta["d_f"], d_e=meta["d_e"],
                    th=meta["th"], max_len=meta["max_len"])
    store, sel, gen, mix = build_models(cfg, len(vocab),
                                        np.random.default_rng(0))
    store.load_arrays(arrays)
    return meta, vocab, store, sel, gen, mix


# ---------------------------------------------------------------------------
# synth

def cmd_synth(cfg: RunConfig, force: bool) -> int:
    os.makedirs(cfg.data_dir, exist_ok=True)
    paths = {split: os.path.join(cfg.data_dir, f"{split}.jsonl")
             for split in ("train", "valid", "test")}
    existing = [p for p in paths.values() if os.path.exists(p)]
    if existing and not force:
        raise CliError(f"refusing to overwrite {existing[0]} (use --force)")
    total = cfg.train_records + cfg.valid_records + cfg.test_records
    spec = SyntheticSpec(num_facts=cfg.num_facts,
                         num_entities=cfg.num_entities,
                         num_relations=cfg.num_relations,
                         num_values=cfg.num_values,
                         num_records=total, seed=cfg.seed)
    records = gen_synthetic(spec)
    a, b = cfg.train_records, cfg.train_records + cfg.valid_records
    write_jsonl(records[:a], paths["train"])
    write_jsonl(records[a:b], paths["valid"])
    write_jsonl(records[b:], paths["test"])
    write_resolved(cfg, cfg.data_dir)
    print(f"wrote {a} train / {cfg.valid_records} valid / "
          f"{cfg.test_records} test records to {cfg.data_dir}")
    return 0


# ---------------------------------------------------------------------------
# train

def _decode_record(kind: str, cfg: RunConfig, sel, gen, mix,
                   x: list[int]) -> list[Hypothesis]:
    """Validation/test hypotheses for one source, per trained model kind."""
    if kind == "selector-gen":
        return generate_diverse(sel, gen, x, cfg.max_len)
    if kind == "mixture-decoder":
        return mix.generate(x, cfg.max_len)
    # plain generator: zero focus, configured search strategy
    zeros = [0] * len(x)
    B = cfg.beam or cfg.K
    if cfg.decode == "trunc":
        return [truncated_sampling(gen, x, zeros, cfg.topk, cfg.seed + i,
                                   cfg.max_len) for i in range(cfg.K)]
    if cfg.decode == "dbs":
        return diverse_beam_search(gen, x, zeros, B, cfg.groups or B,
                                   cfg.lam, cfg.max_len)[: cfg.K]
    if cfg.decode == "greedy":
        return [gen.greedy_decode(x, zeros, cfg.max_len)]
    return beam_search(gen, x, zeros, B, cfg.max_len)[: cfg.K]


def validation_oracle_bleu4(kind: str, cfg: RunConfig, sel, gen, mix,
                            records: list[Record],
                            vocab: Vocabulary) -> float:
    sets = []
    for i, rec in enumerate(records):
        x = vocab.encode(rec.source)
        hyps = _decode_record(kind, cfg, sel, gen, mix, x)
        for t, target in enumerate(rec.targets):
            sets.append(make_hypothesis_set(f"{i}:{t}", hyps,
                                            vocab.encode(target)))
    return oracle_metric(sets, "bleu4")


def _batches(examples: list, batch_size: int, rng: np.random.Generator):
    idx = rng.permutation(len(examples))
    for s in range(0, len(idx), batch_size):
        yield [examples[i] for i in idx[s:s + batch_size]]


def cmd_train(cfg: RunConfig) -> int:
    train = read_jsonl(os.path.join(cfg.data_dir, "train.jsonl"))
    valid = read_jsonl(os.path.join(cfg.data_dir, "valid.jsonl"))
    ensure_guides(train, cfg.guide_rule)
    ensure_guides(valid, cfg.guide_rule)
    vocab = build_vocab(train, cfg.vocab_size)
    examples = flatten_examples(train, vocab)

    rng = np.random.default_rng(cfg.seed)
    store, sel, gen, mix = build_models(cfg, len(vocab), rng)
    batch_rng = np.random.default_rng(cfg.seed + 1)

    os.makedirs(cfg.run_dir, exist_ok=True)
    write_resolved(cfg, cfg.run_dir)
    log_path = os.path.join(cfg.run_dir, "train-log.csv")
    log = open(log_path, "w", encoding="utf-8", newline="")
    logw = csv.writer(log)
    logw.writerow(["stage", "epoch", "loss", "valid_oracle_bleu4"])

    step = 0
    best = (-1.0, store.state_arrays(), 0)  # (oracle, arrays copy, epoch)

    def snapshot():
        return {n: a.copy() for n, a in store.state_arrays().items()}

    try:
        if cfg.model == "selector-gen":
            revive_rng = np.random.default_rng(cfg.seed + 2)
            n_sel_epochs = cfg.effective_selector_epochs
            for epoch in range(1, n_sel_epochs + 1):
                losses, usage = [], {}
                for batch in _batches([(x, g) for x, g, _ in examples],
                                      cfg.batch_size, batch_rng):
                    losses.append(sel.train_step(batch, lr=cfg.lr,
                                                 usage=usage))
                    step += 1
                logw.writerow(["selector", epoch, f"{np.mean(losses):.6f}", ""])
                log.flush()
                if epoch < n_sel_epochs:
                    revived = revive_unused_experts(sel, usage, revive_rng)
                    if revived:
                        print(f"selector epoch {epoch}: revived starved "
                              f"expert(s) {revived}")
        for epoch in range(1, cfg.epochs + 1):
            losses = []
            if cfg.model == "mixture-decoder":
                data = [(x, y) for x, _, y in examples]
                for batch in _batches(data, cfg.batch_size, batch_rng):
                    losses.append(mix.train_step(batch, lr=cfg.lr))
                    step += 1
            else:
                data = (examples if cfg.model == "selector-gen"
                        else [(x, [0] * len(x), y) for x, _, y in examples])
                for batch in _batches(data, cfg.batch_size, batch_rng):
                    losses.append(gen.train_step(batch, lr=cfg.lr))
                    step += 1
            oracle = validation_oracle_bleu4(cfg.model, cfg, sel, gen, mix,
                                             valid, vocab)
            logw.writerow([cfg.model, epoch, f"{np.mean(losses):.6f}",
                           f"{oracle:.6f}"])
            log.flush()
            if oracle > best[0]:
                best = (oracle, snapshot(), epoch)
    finally:
        log.close()

    if cfg.epochs > 0:
        store.load_arrays(best[1])
    save_model(cfg.checkpoint_path, store, cfg, vocab, step, best[2])
    print(f"saved {cfg.model} checkpoint to {cfg.checkpoint_path} "
          f"(best epoch {best[2]}, valid oracle BLEU-4 {max(best[0], 0.0):.4f})")
    return 0


# ---------------------------------------------------------------------------
# generate

_SEARCH_STRATEGIES = ("greedy", "beam", "dbs", "trunc")


def _check_compat(decode: str, kind: str, upper_bound: bool) -> None:
    if upper_bound:
        if kind == "mixture-decoder":
            raise CliError("--upper-bound needs a focus-conditioned generator "
                           f"(checkpoint model is {kind!r})")
        return
    allowed = {"selector-gen": ("mixture-selector",),
               "plain-gen": _SEARCH_STRATEGIES,
               "mixture-decoder": ("mixture-decoder",)}[kind]
    if decode not in allowed:
        raise CliError(f"decode strategy {decode!r} is incompatible with a "
                       f"{kind!r} checkpoint (allowed: {', '.join(allowed)})")


def cmd_generate(cfg: RunConfig, dump_attn: bool = False) -> int:
    meta, vocab, store, sel, gen, mix = load_model(cfg.checkpoint_path)
    kind = meta["model"]
    _check_compat(cfg.decode, kind, cfg.upper_bound)
    records = read_jsonl(os.path.join(cfg.data_dir, "test.jsonl"))
    if cfg.upper_bound:
        ensure_guides(records, cfg.guide_rule)
    if cfg.decode == "greedy" and cfg.K != 1 and not cfg.upper_bound:
        raise CliError("greedy decoding produces one hypothesis; use --K 1")
    B = cfg.beam or cfg.K
    if cfg.decode in ("beam", "dbs") and B < cfg.K:
        raise CliError(f"beam width {B} smaller than K={cfg.K}")

    os.makedirs(cfg.run_dir, exist_ok=True)
    write_resolved(cfg, cfg.run_dir)
    attn_dir = None
    if dump_attn:
        attn_dir = os.path.join(cfg.run_dir, "attention")
        os.makedirs(attn_dir, exist_ok=True)

    out_path = os.path.join(cfg.run_dir, "generations.jsonl")
    n_rows = 0
    with open(out_path, "w", encoding="utf-8") as out:
        for i, rec in enumerate(records):
            x = vocab.encode(rec.source)
            if cfg.upper_bound:
                hyps = [gen.upper_bound_decode(x, g, cfg.max_len)
                        for g in rec.focus_guides]
            else:
                hyps = _decode_record(kind, cfg, sel, gen, mix, x)
            ranked = make_hypothesis_set(str(i), hyps, []).hypotheses
            for rank, h in enumerate(ranked, start=1):
                row = {"source_id": i, "rank": rank,
                       "tokens": vocab.decode(h.tokens),
                       "log_prob": h.log_prob, "truncated": h.truncated,
                       "upper_bound": cfg.upper_bound}
                if h.mask is not None:
                    row["mask"] = h.mask
                if h.expert_id is not None:
                    row["expert_id"] = h.expert_id
                out.write(json.dumps(row, sort_keys=True) + "\n")
                n_rows += 1
                if attn_dir is not None and len(h.tokens):
                    dump_attention(
                        h, rec.source,
                        os.path.join(attn_dir, f"src{i}_rank{rank}.csv"),
                        emitted_labels=vocab.decode(h.tokens))
    print(f"wrote {n_rows} hypotheses for {len(records)} records to {out_path}")
    return 0


# ---------------------------------------------------------------------------
# evaluate

def _read_generations(path: str) -> dict[int, list[Hypothesis]]:
    groups: dict[int, list[tuple[int, Hypothesis]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                h = Hypothesis(tokens=list(row["tokens"]),
                               log_prob=float(row["log_prob"]),
                               attention=np.zeros((0, 0)),
                               mask=row.get("mask"),
                               truncated=bool(row.get("truncated", False)),
                               expert_id=row.get("expert_id"))
                groups.setdefault(int(row["source_id"]), []).append(
                    (int(row["rank"]), h))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise CliError(f"{path}:{line_no}: bad generation row: {e}") from e
    return {sid: [h for _, h in sorted(pairs)] for sid, pairs in groups.items()}


def cmd_evaluate(generations_path: str, references_path: str,
                 out_dir: str) -> int:
    groups = _read_generations(generations_path)
    if not groups:
        raise CliError(f"{generations_path}: no generations found")
    sizes = {len(hyps) for hyps in groups.values()}
    if len(sizes) != 1:
        raise CliError(f"K mismatch across records: found set sizes {sorted(sizes)}")
    records = read_jsonl(references_path)
    missing = sorted(set(range(len(records))) - set(groups))
    if missing or len(groups) != len(records):
        raise CliError(f"{len(records)} reference records vs "
                       f"{len(groups)} generation sets (missing ids: {missing[:5]})")
    sets = []
    for i, rec in enumerate(records):
        for t, target in enumerate(rec.targets):
            sets.append(make_hypothesis_set(f"{i}:{t}", groups[i], target))
    reports = [evaluate_sets(sets, m) for m in ("bleu4", "rouge2")]
    os.makedirs(out_dir, exist_ok=True)
    write_report_csv(reports, os.path.join(out_dir, "eval-report.csv"))
    md = report_markdown(reports)
    with open(os.path.join(out_dir, "eval-report.md"), "w", encoding="utf-8") as f:
        f.write(md)
    print(md, end="")
    return 0


# ---------------------------------------------------------------------------
# gradcheck

def _corrupted(t: Tensor) -> Tensor:
    """Identity with a deliberately wrong backward (negative-control hook)."""
    out = Tensor(t.data, _prev=(t,))

    def bw(g):
        t._accum(1.01 * np.asarray(g))

    out._backward = bw
    return out


def _gradcheck_losses(corrupt: bool):
    """Named (loss_fn, store) pairs covering the differentiable ops and both
    end-to-end losses, at tiny dims in float64."""
    wrap = _corrupted if corrupt else (lambda t: t)
    cases = []

    rng = np.random.default_rng(0)
    s1 = ParamStore(np.float64)
    s1.add("W", rng.standard_normal((3, 4)))
    s1.add("b", rng.standard_normal(3))
    x1 = Tensor(rng.standard_normal(4))
    cases.append(("affine_tanh",
                  lambda st: wrap(tanh(affine(x1, st["W"], st["b"])).sum()), s1))

    s2 = ParamStore(np.float64)
    gru = {k: s2.add(k, 10.0 * v) for k, v in
           init_gru_arrays(np.random.default_rng(1), 4, 3, np.float64).items()}
    x2 = Tensor(rng.standard_normal(4))
    h2 = Tensor(rng.standard_normal(3))
    cases.append(("gru_step",
                  lambda st: wrap(gru_step(gru, x2, h2).sum()), s2))

    s3 = ParamStore(np.float64)
    s3.add("Wa", rng.standard_normal((3, 3)))
    s3.add("Ua", rng.standard_normal((6, 3)))
    s3.add("v", rng.standard_normal(3))
    q = Tensor(rng.standard_normal(3))
    H3 = Tensor(rng.standard_normal((4, 6)))
    cases.append(("attention",
                  lambda st: wrap(additive_attention(
                      q, H3, st["Wa"], st["Ua"], st["v"])[0].sum()), s3))

    sel_store = ParamStore(np.float64)
    sel = Selector(sel_store, 8, SelectorConfig(d_w=4, d_h=3, d_e=4,
                                                num_experts=2),
                   np.random.default_rng(2))
    for name, t in sel_store.items():
        if not name.startswith("selector.expert_emb"):  # already O(1)
            t.data *= 10.0  # keep gradients above the FD noise floor
    guide = [1, 0, 1, 0]

    def sel_loss(_):
        losses = [bernoulli_nll(o, guide) for o in sel.forward_all([4, 5, 6, 7])]
        total = losses[0]
        for l in losses[1:]:
            total = total + l
        return wrap(total)

    cases.append(("selector_guide_nll", sel_loss, sel_store))

    gen_store = ParamStore(np.float64)
    gen = Generator(gen_store, 8, GeneratorConfig(d_w=4, d_h=3, d_f=2,
                                                  max_len=6),
                    np.random.default_rng(3))
    mixd = MixtureDecoder(gen, 2, np.random.default_rng(3))
    for name, t in gen_store.items():
        if name != "generator.focus_emb":  # already O(1); x10 saturates
            t.data *= 10.0
    cases.append(("generator_xent",
                  lambda st: wrap(gen.teacher_forced_loss([4, 5, 6], [1, 0, 1],
                                                          [7, 4])), gen_store))
    cases.append(("mixture_decoder_xent",
                  lambda st: wrap(gen.teacher_forced_loss(
                      [4, 5, 6], [0, 0, 0], [7, 4],
                      sos_emb=mixd.sos_emb[0])), gen_store))
    return cases


def cmd_gradcheck(corrupt: bool = False, tol: float = 1e-4) -> int:
    ok = True
    for name, loss_fn, store in _gradcheck_losses(corrupt):
        err = grad_check(loss_fn, store)
        status = "ok" if err < tol else "FAIL"
        ok &= err < tol
        print(f"{name:24s} max_rel_err={err:.3e} {status}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument parsing

_OVERRIDE_FLAGS = [
    ("--data-dir", "data_dir", str), ("--run-dir", "run_dir", str),
    ("--checkpoint", "checkpoint", str), ("--model", "model", str),
    ("--decode", "decode", str), ("--guide-rule", "guide_rule", str),
    ("--seed", "seed", int), ("--epochs", "epochs", int),
    ("--selector-epochs", "selector_epochs", int),
    ("--batch-size", "batch_size", int), ("--lr", "lr", float),
    ("--K", "K", int), ("--th", "th", float), ("--beam", "beam", int),
    ("--groups", "groups", int), ("--lambda", "lam", float),
    ("--topk", "topk", int), ("--max-len", "max_len", int),
    ("--vocab-size", "vocab_size", int), ("--d-w", "d_w", int),
    ("--d-h", "d_h", int), ("--d-f", "d_f", int), ("--d-e", "d_e", int),
    ("--num-facts", "num_facts", int),
    ("--num-entities", "num_entities", int),
    ("--num-relations", "num_relations", int),
    ("--num-values", "num_values", int),
    ("--train-records", "train_records", int),
    ("--valid-records", "valid_records", int),
    ("--test-records", "test_records", int),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration file")
    for flag, dest, typ in _OVERRIDE_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None)
    p.add_argument("--upper-bound", dest="upper_bound", action="store_true",
                   default=None)


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    overrides = {dest: getattr(args, dest) for _, dest, _ in _OVERRIDE_FLAGS}
    overrides["upper_bound"] = args.upper_bound
    return apply_overrides(cfg, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="focusmix",
        description="Two-stage diverse sequence generation: focus selection "
                    "then focus-conditioned generation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic train/valid/test JSONL")
    _add_config_flags(p)
    p.add_argument("--force", action="store_true",
                   help="overwrite existing output files")

    p = sub.add_parser("train", help="train a model and save the best checkpoint")
    _add_config_flags(p)

    p = sub.add_parser("generate", help="decode K hypotheses per test record")
    _add_config_flags(p)
    p.add_argument("--dump-attention", action="store_true",
                   help="write one attention CSV per hypothesis")

    p = sub.add_parser("evaluate", help="score a generation file")
    p.add_argument("--generations", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--corrupt-gradients", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control test hook
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            return cmd_synth(_resolve_config(args), args.force)
        if args.command == "train":
            return cmd_train(_resolve_config(args))
        if args.command == "generate":
            return cmd_generate(_resolve_config(args), args.dump_attention)
        if args.command == "evaluate":
            return cmd_evaluate(args.generations, args.references,
                                args.out_dir)
        return cmd_gradcheck(corrupt=args.corrupt_gradients)
    except (CliError, ConfigError, CorpusError, CheckpointError,
            DecodeConfigError, MetricInputError, GradCheckError,
            FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
