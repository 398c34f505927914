"""Code-sample corpus: records, ingestion, token filtering, and split construction.

A corpus holds three kinds of function samples: UNCHANGED code (label 0),
VULNERABLE code (label 1), and the FIXED counterpart of each vulnerable
sample (label 0, linked through ``pair_id``). Corpus files are UTF-8 JSONL,
one flat object per line with keys {id, source, set_kind, pair_id?, date?}.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from datetime import date
from functools import cached_property
from pathlib import Path

from . import lexer

SET_KINDS = ("UNCHANGED", "VULNERABLE", "FIXED")
SETTINGS = ("ORIGINAL", "IDENT_SUBST", "PAIR", "PAIR_COMBINE", "TIME")

_RECORD_KEYS = {"id", "source", "set_kind", "pair_id", "date"}


class CorpusError(ValueError):
    pass


class IngestError(CorpusError):
    """Ingestion failure; ``problems`` lists one message per offending record."""

    def __init__(self, problems: list[str]):
        super().__init__("corpus ingestion failed:\n" + "\n".join(problems))
        self.problems = problems


class SplitError(CorpusError):
    pass


@dataclass(frozen=True)
class CodeSample:
    id: str
    source: str
    set_kind: str
    token_count: int
    pair_id: str | None = None
    timestamp: date | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.set_kind not in SET_KINDS:
            raise CorpusError(f"sample {self.id}: unknown set_kind {self.set_kind!r}")
        if self.set_kind == "UNCHANGED" and self.pair_id is not None:
            raise CorpusError(f"sample {self.id}: UNCHANGED samples carry no pair_id")
        if self.set_kind == "FIXED" and self.pair_id is None:
            raise CorpusError(f"sample {self.id}: FIXED sample without pair_id")

    @property
    def label(self) -> int:
        """1 for vulnerable code, 0 for unchanged and fixed code."""
        return 1 if self.set_kind == "VULNERABLE" else 0

    @classmethod
    def from_fields(cls, id: str, source: str, set_kind: str,
                    pair_id: str | None = None, timestamp: date | None = None,
                    flags: tuple[str, ...] = ()) -> "CodeSample":
        return cls(id=id, source=source, set_kind=set_kind,
                   token_count=lexer.token_count(source),
                   pair_id=pair_id, timestamp=timestamp, flags=flags)


@dataclass(frozen=True)
class Corpus:
    samples: tuple[CodeSample, ...]
    provenance: str = ""
    tokenizer_id: str = lexer.TOKENIZER_ID

    def __post_init__(self):
        problems = []
        seen: set[str] = set()
        for s in self.samples:
            if s.id in seen:
                problems.append(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
        groups: dict[str, list[CodeSample]] = {}
        for s in self.samples:
            if s.pair_id is not None:
                groups.setdefault(s.pair_id, []).append(s)
        for pid, members in sorted(groups.items()):
            kinds = sorted(m.set_kind for m in members)
            if kinds != ["FIXED", "VULNERABLE"]:
                ids = ", ".join(m.id for m in members)
                problems.append(
                    f"pair_id {pid!r} does not link exactly one VULNERABLE and "
                    f"one FIXED sample (members: {ids})")
        if problems:
            raise IngestError(problems)

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def by_id(self) -> dict[str, CodeSample]:
        return {s.id: s for s in self.samples}

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.samples)

    def pairs(self) -> list[tuple[CodeSample, CodeSample]]:
        """(vulnerable, fixed) pairs, ordered by pair_id."""
        groups: dict[str, dict[str, CodeSample]] = {}
        for s in self.samples:
            if s.pair_id is not None:
                groups.setdefault(s.pair_id, {})[s.set_kind] = s
        return [(g["VULNERABLE"], g["FIXED"]) for _, g in sorted(groups.items())]

    def subset(self, ids) -> "Corpus":
        keep = set(ids)
        return Corpus(tuple(s for s in self.samples if s.id in keep),
                      provenance=self.provenance, tokenizer_id=self.tokenizer_id)


def _parse_record(obj: dict, lineno: int) -> CodeSample:
    if not isinstance(obj, dict):
        raise CorpusError("record is not an object")
    unknown = set(obj) - _RECORD_KEYS
    if unknown:
        raise CorpusError(f"unknown keys {sorted(unknown)}")
    for key in ("id", "source", "set_kind"):
        if key not in obj:
            raise CorpusError(f"missing key {key!r}")
        if not isinstance(obj[key], str):
            raise CorpusError(f"key {key!r} must be a string")
    ts = None
    if obj.get("date") is not None:
        try:
            ts = date.fromisoformat(obj["date"])
        except (TypeError, ValueError):
            raise CorpusError(f"bad date {obj['date']!r} (want YYYY-MM-DD)")
    pair_id = obj.get("pair_id")
    if pair_id is not None and not isinstance(pair_id, str):
        raise CorpusError("pair_id must be a string")
    return CodeSample.from_fields(obj["id"], obj["source"], obj["set_kind"],
                                  pair_id=pair_id, timestamp=ts)


def ingest_corpus(path: str | Path, fmt: str = "jsonl") -> Corpus:
    """Load a corpus file, assign labels from set kinds, and populate token counts.

    Malformed records are collected into one IngestError carrying line
    numbers; dangling or ill-formed pair links also fail ingestion.
    """
    if fmt != "jsonl":
        raise CorpusError(f"unsupported corpus format {fmt!r}")
    path = Path(path)
    problems: list[str] = []
    samples: list[CodeSample] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            try:
                samples.append(_parse_record(obj, lineno))
            except (CorpusError, lexer.LexError) as exc:
                problems.append(f"line {lineno}: {exc}")
    if problems:
        raise IngestError(problems)
    return Corpus(tuple(samples), provenance=str(path))


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in corpus.samples:
            rec = {"id": s.id, "source": s.source, "set_kind": s.set_kind}
            if s.pair_id is not None:
                rec["pair_id"] = s.pair_id
            if s.timestamp is not None:
                rec["date"] = s.timestamp.isoformat()
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def filter_by_token_limit(corpus: Corpus, limit: int) -> Corpus:
    """Drop samples longer than ``limit`` tokens, removing the partner of any
    dropped pair member so pair integrity is preserved."""
    if limit <= 0:
        raise CorpusError("token limit must be positive")
    dropped_pairs = {s.pair_id for s in corpus.samples
                     if s.pair_id is not None and s.token_count > limit}
    kept = tuple(s for s in corpus.samples
                 if s.token_count <= limit and s.pair_id not in dropped_pairs)
    return Corpus(kept, provenance=corpus.provenance, tokenizer_id=corpus.tokenizer_id)


@dataclass(frozen=True)
class SplitAssignment:
    setting: str
    train: frozenset[str]
    valid: frozenset[str]
    test: frozenset[str]
    ratios: tuple[float, float, float]
    seed: int

    def partition_of(self, sample_id: str) -> str:
        if sample_id in self.train:
            return "train"
        if sample_id in self.valid:
            return "valid"
        if sample_id in self.test:
            return "test"
        raise SplitError(f"sample {sample_id!r} not covered by split")


def _counts(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    # floor for valid and test, remainder to train
    n_valid = math.floor(n * ratios[1])
    n_test = math.floor(n * ratios[2])
    return n - n_valid - n_test, n_valid, n_test


def _shuffled(ids: list[str], seed: int) -> list[str]:
    rnd = random.Random(seed)
    ids = sorted(ids)
    rnd.shuffle(ids)
    return ids


def _slice_split(ordered: list[str], ratios) -> tuple[list[str], list[str], list[str]]:
    n_train, n_valid, n_test = _counts(len(ordered), ratios)
    return (ordered[:n_train],
            ordered[n_train:n_train + n_valid],
            ordered[n_train + n_valid:])


def _random_split(ids: list[str], ratios, seed: int) -> tuple[list[str], list[str], list[str]]:
    ordered = _shuffled(ids, seed)
    n_train, n_valid, n_test = _counts(len(ordered), ratios)
    valid = ordered[:n_valid]
    test = ordered[n_valid:n_valid + n_test]
    train = ordered[n_valid + n_test:]
    return train, valid, test


def _stratified_split(corpus: Corpus, ids: list[str], ratios, seed: int):
    by_label: dict[int, list[str]] = {0: [], 1: []}
    for sid in ids:
        by_label[corpus.by_id[sid].label].append(sid)
    train, valid, test = [], [], []
    for lbl in (0, 1):
        tr, va, te = _random_split(by_label[lbl], ratios, seed + lbl)
        train += tr
        valid += va
        test += te
    return train, valid, test


def make_split(corpus: Corpus, setting: str, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
               seed: int = 0, stratify: bool = False) -> SplitAssignment:
    """Build a train/valid/test assignment for one evaluation setting.

    Deterministic given (corpus, setting, ratios, seed). Valid and test sizes
    are floored, the remainder goes to train; PAIR settings apply that rule at
    the pair level so a vulnerable sample and its fix always share a partition.
    """
    if setting not in SETTINGS:
        raise SplitError(f"unknown setting {setting!r}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must be three nonnegative fractions summing to 1, got {ratios}")

    all_ids = list(corpus.ids)

    if setting in ("ORIGINAL", "IDENT_SUBST"):
        if stratify:
            train, valid, test = _stratified_split(corpus, all_ids, ratios, seed)
        else:
            train, valid, test = _random_split(all_ids, ratios, seed)

    elif setting == "TIME":
        undated = [s.id for s in corpus.samples if s.timestamp is None]
        if undated:
            raise SplitError(f"TIME split requires timestamps; missing for {undated[:5]}"
                             + ("..." if len(undated) > 5 else ""))
        ordered = [s.id for s in sorted(corpus.samples, key=lambda s: (s.timestamp, s.id))]
        train, valid, test = _slice_split(ordered, ratios)

    elif setting == "PAIR":
        train, valid, test = _pair_split(corpus, ratios, seed)

    else:  # PAIR_COMBINE
        p_train, p_valid, p_test = _pair_split(corpus, ratios, seed)
        unchanged = [s.id for s in corpus.samples if s.set_kind == "UNCHANGED"]
        u_train, u_valid, u_test = _random_split(unchanged, ratios, seed)
        train, valid, test = p_train + u_train, p_valid + u_valid, p_test + u_test

    return SplitAssignment(setting=setting, train=frozenset(train),
                           valid=frozenset(valid), test=frozenset(test),
                           ratios=tuple(ratios), seed=seed)


def _pair_split(corpus: Corpus, ratios, seed: int):
    pairs = corpus.pairs()
    if not pairs:
        raise SplitError("PAIR split requested on a corpus with no pairs")
    pair_ids = _shuffled([v.pair_id for v, _ in pairs], seed)
    n_valid = math.floor(len(pair_ids) * ratios[1])
    n_test = math.floor(len(pair_ids) * ratios[2])
    valid_p = set(pair_ids[:n_valid])
    test_p = set(pair_ids[n_valid:n_valid + n_test])
    by_pair = {v.pair_id: (v, f) for v, f in pairs}
    train, valid, test = [], [], []
    for pid in pair_ids:
        v, f = by_pair[pid]
        bucket = valid if pid in valid_p else test if pid in test_p else train
        bucket += [v.id, f.id]
    return train, valid, test


def eligible_ids(corpus: Corpus, setting: str) -> frozenset[str]:
    """Sample ids a split of the given setting must cover exactly."""
    if setting == "PAIR":
        return frozenset(i for v, f in corpus.pairs() for i in (v.id, f.id))
    if setting == "PAIR_COMBINE":
        paired = {i for v, f in corpus.pairs() for i in (v.id, f.id)}
        unchanged = {s.id for s in corpus.samples if s.set_kind == "UNCHANGED"}
        return frozenset(paired | unchanged)
    return frozenset(corpus.ids)


def check_split(corpus: Corpus, split: SplitAssignment) -> None:
    """Verify every split invariant; raises SplitError on the first violation."""
    parts = (split.train, split.valid, split.test)
    if (split.train & split.valid) or (split.train & split.test) or (split.valid & split.test):
        raise SplitError("partitions overlap")
    covered = split.train | split.valid | split.test
    expected = eligible_ids(corpus, split.setting)
    if covered != expected:
        raise SplitError("partitions do not cover exactly the eligible samples")
    if split.setting in ("PAIR", "PAIR_COMBINE"):
        for v, f in corpus.pairs():
            if v.id in covered or f.id in covered:
                if split.partition_of(v.id) != split.partition_of(f.id):
                    raise SplitError(f"pair {v.pair_id!r} split across partitions")
    if split.setting == "TIME":
        def dates(ids):
            return [corpus.by_id[i].timestamp for i in ids]
        for earlier, later, names in (
            (split.train, split.valid, "train/valid"),
            (split.valid, split.test, "valid/test"),
            (split.train, split.test, "train/test"),
        ):
            if earlier and later and max(dates(earlier)) > min(dates(later)):
                raise SplitError(f"temporal order violated between {names}")


def write_split(split: SplitAssignment, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        ids = sorted(getattr(split, name))
        (directory / f"{name}.txt").write_text("\n".join(ids) + ("\n" if ids else ""),
                                               encoding="utf-8")
    manifest = {"setting": split.setting, "ratios": list(split.ratios), "seed": split.seed}
    (directory / "split.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def read_split(directory: str | Path) -> SplitAssignment:
    directory = Path(directory)
    manifest = json.loads((directory / "split.json").read_text(encoding="utf-8"))
    parts = {}
    for name in ("train", "valid", "test"):
        text = (directory / f"{name}.txt").read_text(encoding="utf-8")
        parts[name] = frozenset(ln for ln in text.splitlines() if ln)
    return SplitAssignment(setting=manifest["setting"], ratios=tuple(manifest["ratios"]),
                           seed=manifest["seed"], **parts)
