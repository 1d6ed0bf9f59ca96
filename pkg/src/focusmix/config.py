"""Run configuration: one flat JSON document, unknown keys rejected.

Every command writes its resolved configuration next to its outputs so a
run can be reproduced from the artifact directory alone.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


class ConfigError(ValueError):
    pass


MODEL_KINDS = ("selector-gen", "plain-gen", "mixture-decoder")
DECODE_STRATEGIES = ("greedy", "beam", "dbs", "trunc",
                     "mixture-decoder", "mixture-selector")
GUIDE_RULES = ("qg", "copy")


@dataclass
class RunConfig:
    # data
    data_dir: str = "data"
    vocab_size: int = 2000
    guide_rule: str = "qg"        # rule applied when records lack guides
    # synthetic task
    num_facts: int = 3
    num_entities: int = 20
    num_relations: int = 20
    num_values: int = 20
    train_records: int = 2000
    valid_records: int = 200
    test_records: int = 200
    # model dims
    model: str = "selector-gen"
    d_w: int = 64
    d_h: int = 64
    d_f: int = 16
    d_e: int = 64
    K: int = 3
    th: float = 0.15
    max_len: int = 30
    # training
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 20
    selector_epochs: int = -1     # -1: same as epochs
    seed: int = 0
    # decoding
    decode: str = "greedy"
    beam: int = 0                 # 0: beam width = K
    groups: int = 0               # 0: one group per beam (group size 1)
    lam: float = 0.5
    topk: int = 10
    upper_bound: bool = False
    # artifacts
    run_dir: str = "runs/default"
    checkpoint: str = ""          # default: <run_dir>/model.ckpt

    def validate(self) -> None:
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.decode not in DECODE_STRATEGIES:
            raise ConfigError(
                f"decode must be one of {DECODE_STRATEGIES}, got {self.decode!r}")
        if self.guide_rule not in GUIDE_RULES:
            raise ConfigError(
                f"guide_rule must be one of {GUIDE_RULES}, got {self.guide_rule!r}")
        for name in ("d_w", "d_h", "d_f", "d_e", "K", "max_len", "vocab_size",
                     "batch_size", "topk"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not (0.0 < self.th < 1.0):
            raise ConfigError(f"th must be in (0, 1), got {self.th}")
        if self.epochs < 0 or self.selector_epochs < -1:
            raise ConfigError("epoch counts must be non-negative")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.beam < 0 or self.groups < 0:
            raise ConfigError("beam and groups must be non-negative")

    @property
    def effective_selector_epochs(self) -> int:
        return self.epochs if self.selector_epochs < 0 else self.selector_epochs

    @property
    def checkpoint_path(self) -> str:
        return self.checkpoint or f"{self.run_dir}/model.ckpt"


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_dict(d: dict) -> RunConfig:
    unknown = sorted(set(d) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**d)
    cfg.validate()
    return cfg


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(d)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    d = dataclasses.asdict(cfg)
    d.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(d)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def write_resolved(cfg: RunConfig, dir_path) -> None:
    with open(f"{dir_path}/resolved-config.json", "w", encoding="utf-8") as f:
        json.dump(dataclasses.asdict(cfg), f, sort_keys=True, indent=2)
        f.write("\n")
