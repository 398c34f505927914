"""Experiment configuration: a flat, human-editable key=value file.

Unknown keys are hard errors so sweep typos cannot silently fall back to
defaults. Reference defaults: learning rate 2e-5, batch size 16, at most
24 epochs with patience 5, regularization weight 0.01, token limit 512.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .corpus import SETTINGS
from .paths import SELECTION_POLICIES


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    corpus_path: str = ""
    workdir: str = ""
    setting: str = "ORIGINAL"
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    stratify: bool = False
    token_limit: int = 512

    max_paths: int = 3
    unroll_bound: int = 1
    max_path_nodes: int = 128
    selection_policy: str = "coverage_greedy"

    encoder: str = "toy"
    embed_dim: int = 16
    hash_buckets: int = 1024
    encoder_model_path: str = ""

    out_channels: int = 8
    kernel_sizes: tuple[int, ...] = (3,)

    gamma: float = 1.0
    reg_weight: float = 0.01
    learning_rate: float = 2e-5
    batch_size: int = 16
    max_epochs: int = 24
    patience: int = 5
    game_off: bool = False
    prototype_off: bool = False
    freeze_trunk_in_calibrator: bool = False
    pair_aligned_batches: bool = True

    def validate(self) -> None:
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.selection_policy not in SELECTION_POLICIES:
            raise ConfigError(f"selection_policy must be one of {SELECTION_POLICIES}")
        if self.encoder not in ("toy", "reference"):
            raise ConfigError("encoder must be 'toy' or 'reference'")
        if len(self.ratios) != 3 or abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError("ratios must be three fractions summing to 1")
        positives = {"token_limit": self.token_limit, "max_paths": self.max_paths,
                     "max_path_nodes": self.max_path_nodes, "embed_dim": self.embed_dim,
                     "hash_buckets": self.hash_buckets, "out_channels": self.out_channels,
                     "batch_size": self.batch_size, "max_epochs": self.max_epochs,
                     "patience": self.patience, "learning_rate": self.learning_rate,
                     "gamma": self.gamma}
        bad = sorted(k for k, v in positives.items() if v <= 0)
        if bad:
            raise ConfigError(f"these keys must be positive: {', '.join(bad)}")
        if self.unroll_bound < 0 or self.reg_weight < 0:
            raise ConfigError("unroll_bound and reg_weight must be nonnegative")
        if not self.kernel_sizes or any(k < 1 for k in self.kernel_sizes):
            raise ConfigError("kernel_sizes must be positive integers")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    ftype = _FIELD_TYPES[key]
    try:
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError("not a boolean")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype.startswith("tuple[float"):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if ftype.startswith("tuple[int"):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} ({exc})") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    problems: list[str] = []
    values: dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"line {lineno}: expected key = value")
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _parse_value(key, raw)
        except ConfigError as exc:
            problems.append(f"line {lineno}: {exc}")
    if problems:
        raise ConfigError("config errors:\n" + "\n".join(problems))
    config = ExperimentConfig(**values)
    config.validate()
    return config


def write_config(config: ExperimentConfig, path: str | Path) -> None:
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def stage_seed(root_seed: int, stage: str) -> int:
    """Deterministic per-stage seed derived from the root seed."""
    digest = hashlib.blake2b(f"{root_seed}:{stage}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2**31)
