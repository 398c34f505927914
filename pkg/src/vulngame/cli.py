"""Command-line orchestration.

Verbs: ingest, anonymize, extract-paths, split, train, evaluate, sweep,
report. Every verb reads one experiment config, writes its artifact
atomically under the config's workdir together with a manifest of config and
input hashes, and is a no-op when an up-to-date artifact already exists
(unless --force). Exit codes: 0 success, 2 config error, 3 missing input,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import contextmanager
from hashlib import sha256
from pathlib import Path

from . import corpus as corpus_mod
from .anonymize import UNTRANSFORMED, build_identifier_setting
from .config import ConfigError, ExperimentConfig, load_config, stage_seed
from .corpus import filter_by_token_limit, ingest_corpus, read_split, write_corpus, write_split
from .encoders import EmbeddingCache, make_encoder
from .evaluate import EvalReport, loss_curve_rows, render_report_table
from .game import (GameError, PrototypeGameClassifier, TrainingLog, load_checkpoint,
                   save_checkpoint)
from .losses import LossError
from .paths import ExecutionPath, PathConfig, extract_paths
from .pipeline import encode_corpus, evaluate_model, train_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4

VERBS = ("ingest", "anonymize", "extract-paths", "split", "train",
         "evaluate", "sweep", "report")

SWEEP_BATCH_SIZES = (4, 8, 16, 32)
SWEEP_REG_WEIGHTS = (0.0, 0.001, 0.01, 0.1)


class MissingInputError(FileNotFoundError):
    pass


class WorkdirLockedError(RuntimeError):
    pass


def _hash_file(path: Path) -> str:
    return sha256(path.read_bytes()).hexdigest()


def _write_atomic(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data, encoding="utf-8")
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


@contextmanager
def _workdir_lock(workdir: Path):
    workdir.mkdir(parents=True, exist_ok=True)
    lock = workdir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise WorkdirLockedError(
            f"workdir {workdir} is locked by another run (remove {lock} if stale)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing {what}: {path} (run the producing verb first)")
    return path


def _manifest(verb: str, config: ExperimentConfig, inputs: dict[str, Path]) -> dict:
    return {"verb": verb,
            "config_hash": config.config_hash(),
            "inputs": {name: _hash_file(p) for name, p in sorted(inputs.items())},
            "seed": config.seed}


def _up_to_date(out_dir: Path, manifest: dict) -> bool:
    mf = out_dir / "manifest.json"
    if not mf.exists():
        return False
    try:
        return json.loads(mf.read_text(encoding="utf-8")) == manifest
    except json.JSONDecodeError:
        return False


def _finish(out_dir: Path, manifest: dict) -> None:
    _write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _cache_dir(config: ExperimentConfig) -> Path:
    env = os.environ.get("VULNGAME_CACHE_DIR")
    return Path(env) if env else Path(config.workdir) / "cache"


def _encoder(config: ExperimentConfig):
    return make_encoder(config.encoder, dim=config.embed_dim,
                        buckets=config.hash_buckets,
                        seed=stage_seed(config.seed, "encoder"),
                        max_tokens=config.token_limit,
                        model_path=config.encoder_model_path or None)


def _path_config(config: ExperimentConfig) -> PathConfig:
    return PathConfig(max_paths=config.max_paths, unroll_bound=config.unroll_bound,
                      max_path_nodes=config.max_path_nodes,
                      selection_policy=config.selection_policy)


def _classifier(config: ExperimentConfig, batch_size=None, reg_weight=None):
    return PrototypeGameClassifier(
        n_paths=config.max_paths,
        out_channels=config.out_channels, kernel_sizes=tuple(config.kernel_sizes),
        gamma=config.gamma,
        reg_weight=config.reg_weight if reg_weight is None else reg_weight,
        learning_rate=config.learning_rate,
        batch_size=config.batch_size if batch_size is None else batch_size,
        max_epochs=config.max_epochs, patience=config.patience,
        game_off=config.game_off, prototype_off=config.prototype_off,
        freeze_trunk_in_calibrator=config.freeze_trunk_in_calibrator,
        pair_aligned_batches=config.pair_aligned_batches,
        seed=stage_seed(config.seed, "train"))


def _corpus_variant_path(config: ExperimentConfig, workdir: Path) -> Path:
    if config.setting == "IDENT_SUBST":
        return workdir / "anonymized" / "corpus.jsonl"
    return workdir / "corpus" / "corpus.jsonl"


def _load_paths_file(path: Path) -> dict[str, list[ExecutionPath]]:
    out: dict[str, list[ExecutionPath]] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        out.setdefault(row["sample_id"], []).append(
            ExecutionPath(tuple(row["node_sequence"]), row["rendered_text"],
                          is_pad=row.get("is_pad", False)))
    return out


# --------------------------------------------------------------------------
# verbs


def _verb_ingest(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    src = _require(Path(config.corpus_path), "source corpus")
    out_dir = workdir / "corpus"
    manifest = _manifest("ingest", config, {"corpus": src})
    if not force and _up_to_date(out_dir, manifest):
        return "ingest: up to date (use --force to redo)"
    loaded = ingest_corpus(src)
    filtered = filter_by_token_limit(loaded, config.token_limit)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / "corpus.jsonl.tmp"
    write_corpus(filtered, tmp)
    os.replace(tmp, out_dir / "corpus.jsonl")
    _finish(out_dir, manifest)
    return (f"ingest: {len(loaded)} samples read, {len(filtered)} kept "
            f"under the {config.token_limit}-token limit")


def _verb_anonymize(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    src = _require(workdir / "corpus" / "corpus.jsonl", "ingested corpus")
    out_dir = workdir / "anonymized"
    manifest = _manifest("anonymize", config, {"corpus": src})
    if not force and _up_to_date(out_dir, manifest):
        return "anonymize: up to date"
    loaded = ingest_corpus(src)
    transformed, mappings = build_identifier_setting(loaded)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / "corpus.jsonl.tmp"
    write_corpus(transformed, tmp)
    os.replace(tmp, out_dir / "corpus.jsonl")
    rows = []
    n_untransformed = 0
    for s in transformed.samples:
        untrans = UNTRANSFORMED in s.flags
        n_untransformed += untrans
        rows.append(json.dumps({"id": s.id, "untransformed": untrans,
                                **mappings[s.id].to_dict()}, sort_keys=True))
    _write_atomic(out_dir / "mappings.jsonl", "\n".join(rows) + "\n")
    _finish(out_dir, manifest)
    return f"anonymize: {len(transformed)} samples, {n_untransformed} left untransformed"


def _verb_extract_paths(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    src = _require(_corpus_variant_path(config, workdir),
                   "corpus variant for this setting")
    out_dir = workdir / "paths"
    manifest = _manifest("extract-paths", config, {"corpus": src})
    if not force and _up_to_date(out_dir, manifest):
        return "extract-paths: up to date"
    loaded = ingest_corpus(src)
    path_config = _path_config(config)
    rows = []
    for s in loaded.samples:
        for idx, p in enumerate(extract_paths(s.source, path_config)):
            rows.append(json.dumps(
                {"sample_id": s.id, "path_index": idx,
                 "node_sequence": list(p.node_sequence),
                 "rendered_text": p.rendered_text, "is_pad": p.is_pad},
                sort_keys=True))
    _write_atomic(out_dir / "paths.jsonl", "\n".join(rows) + "\n")
    _finish(out_dir, manifest)
    return f"extract-paths: {len(rows)} paths over {len(loaded)} samples"


def _verb_split(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    src = _require(workdir / "corpus" / "corpus.jsonl", "ingested corpus")
    out_dir = workdir / "split"
    manifest = _manifest("split", config, {"corpus": src})
    if not force and _up_to_date(out_dir, manifest):
        return "split: up to date"
    loaded = ingest_corpus(src)
    split = corpus_mod.make_split(loaded, config.setting, ratios=tuple(config.ratios),
                                  seed=stage_seed(config.seed, "split"),
                                  stratify=config.stratify)
    corpus_mod.check_split(loaded, split)
    write_split(split, out_dir)
    _finish(out_dir, manifest)
    return (f"split: {config.setting} -> {len(split.train)}/{len(split.valid)}"
            f"/{len(split.test)} train/valid/test")


def _train_inputs(config: ExperimentConfig, workdir: Path) -> dict[str, Path]:
    return {"corpus": _require(_corpus_variant_path(config, workdir), "corpus variant"),
            "paths": _require(workdir / "paths" / "paths.jsonl", "extracted paths"),
            "split": _require(workdir / "split" / "split.json", "split manifest")}


def _load_train_stage(config: ExperimentConfig, workdir: Path):
    inputs = _train_inputs(config, workdir)
    loaded = ingest_corpus(inputs["corpus"])
    sample_paths = _load_paths_file(inputs["paths"])
    split = read_split(workdir / "split")
    if split.setting != config.setting:
        raise ConfigError(f"split artifact is for setting {split.setting!r}, "
                          f"config says {config.setting!r}")
    encoder = _encoder(config)
    cache = EmbeddingCache(_cache_dir(config))
    vectors = encode_corpus(loaded, sample_paths, encoder, cache)
    return inputs, loaded, split, vectors


def _verb_train(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    inputs = _train_inputs(config, workdir)
    out_dir = workdir / "model"
    manifest = _manifest("train", config, inputs)
    if not force and _up_to_date(out_dir, manifest):
        return "train: up to date (same config hash; use --force to retrain)"
    _, loaded, split, vectors = _load_train_stage(config, workdir)
    model, log = train_model(loaded, split, vectors, _classifier(config))
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = out_dir / "checkpoint.npz.tmp"
    save_checkpoint(model, tmp)
    os.replace(tmp, out_dir / "checkpoint.npz")
    _write_atomic(out_dir / "training_log.jsonl", log.to_jsonl())
    _finish(out_dir, manifest)
    best = log.records[log.best_epoch - 1] if log.records else None
    f1 = f", best valid F1 {best.valid_f1:.4f}" if best and best.valid_f1 is not None else ""
    return f"train: {len(log.records)} rounds, stop_reason={log.stop_reason}{f1}"


def _verb_evaluate(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    inputs = _train_inputs(config, workdir)
    inputs["model"] = _require(workdir / "model" / "checkpoint.npz", "trained model")
    out_dir = workdir / "eval"
    manifest = _manifest("evaluate", config, inputs)
    if not force and _up_to_date(out_dir, manifest):
        return "evaluate: up to date"
    _, loaded, split, vectors = _load_train_stage(config, workdir)
    model = load_checkpoint(inputs["model"])
    report = evaluate_model(model, loaded, split, vectors)
    _write_atomic(out_dir / "predictions.jsonl", report.predictions_jsonl())
    _write_atomic(out_dir / "summary.json",
                  json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _finish(out_dir, manifest)
    s = report.summary
    return (f"evaluate: {config.setting} acc={s.accuracy:.4f} p={s.precision:.4f} "
            f"r={s.recall:.4f} f1={s.f1:.4f}")


def _verb_sweep(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    inputs = _train_inputs(config, workdir)
    out_dir = workdir / "sweeps"
    manifest = _manifest("sweep", config, inputs)
    if not force and _up_to_date(out_dir, manifest):
        return "sweep: up to date"
    _, loaded, split, vectors = _load_train_stage(config, workdir)
    n = 0
    failures = 0
    for bs in SWEEP_BATCH_SIZES:
        for reg in SWEEP_REG_WEIGHTS:
            cell = out_dir / f"bs{bs}_reg{reg}"
            payload = {"batch_size": bs, "reg_weight": reg}
            try:
                model, log = train_model(loaded, split, vectors,
                                         _classifier(config, batch_size=bs, reg_weight=reg))
                report = evaluate_model(model, loaded, split, vectors)
                payload.update(report.to_dict())
                _write_atomic(cell / "training_log.jsonl", log.to_jsonl())
            except (GameError, LossError) as exc:
                # a cell may diverge at aggressive settings; report it and
                # keep the rest of the grid
                payload["error"] = str(exc)
                failures += 1
            _write_atomic(cell / "summary.json",
                          json.dumps(payload, indent=2, sort_keys=True) + "\n")
            n += 1
    _finish(out_dir, manifest)
    note = f", {failures} diverged" if failures else ""
    return (f"sweep: {n} cells over batch sizes {SWEEP_BATCH_SIZES} x reg "
            f"{SWEEP_REG_WEIGHTS}{note}")


def _verb_report(config: ExperimentConfig, workdir: Path, force: bool) -> str:
    summary_path = _require(workdir / "eval" / "summary.json", "evaluation summary")
    log_path = _require(workdir / "model" / "training_log.jsonl", "training log")
    out_dir = workdir / "report"
    manifest = _manifest("report", config, {"summary": summary_path, "log": log_path})
    if not force and _up_to_date(out_dir, manifest):
        return (out_dir / "report.txt").read_text(encoding="utf-8")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    report = _report_from_summary(summary)
    table = render_report_table([report])
    log = TrainingLog.from_jsonl(log_path.read_text(encoding="utf-8"))
    curve = "\n".join(json.dumps(r, sort_keys=True) for r in loss_curve_rows(log))
    _write_atomic(out_dir / "report.txt", table + "\n")
    _write_atomic(out_dir / "loss_curve.jsonl", curve + "\n")
    _finish(out_dir, manifest)
    return table


def _report_from_summary(summary: dict) -> EvalReport:
    from .evaluate import ConfusionCounts, MetricSummary

    counts = ConfusionCounts(**summary["counts"])
    ms = MetricSummary(accuracy=summary["accuracy"], precision=summary["precision"],
                       recall=summary["recall"], f1=summary["f1"],
                       zero_division_flags=tuple(summary.get("zero_division_flags", ())))
    return EvalReport(setting=summary["setting"], counts=counts, summary=ms,
                      predictions=(), pair_same_label=summary.get("pair_same_label_rate"))


_VERB_FUNCS = {
    "ingest": _verb_ingest,
    "anonymize": _verb_anonymize,
    "extract-paths": _verb_extract_paths,
    "split": _verb_split,
    "train": _verb_train,
    "evaluate": _verb_evaluate,
    "sweep": _verb_sweep,
    "report": _verb_report,
}


def run(verb: str, config: ExperimentConfig, force: bool = False) -> str:
    """Run one verb against a validated config; returns its status message."""
    if verb not in _VERB_FUNCS:
        raise ConfigError(f"unknown verb {verb!r}; choose from {VERBS}")
    config.validate()
    if not config.workdir:
        raise ConfigError("config must set workdir")
    workdir = Path(config.workdir)
    with _workdir_lock(workdir):
        return _VERB_FUNCS[verb](config, workdir, force)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vulngame",
        description="Path-based vulnerability detection with a two-player "
                    "training game and shared prototypes.")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--force", action="store_true",
                        help="recompute even when an up-to-date artifact exists")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        message = run(args.verb, config, force=args.force)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(message)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
