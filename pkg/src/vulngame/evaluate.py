"""Metrics, the four-setting evaluation protocol, and the pair-flip diagnostic.

Zero-denominator precision/recall return 0.0 with an explicit flag instead of
NaN, since small corpora hit those cases routinely. Reports carry raw
per-sample predictions so every aggregate can be recomputed externally.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, SplitAssignment


class EvalError(ValueError):
    pass


#: orientation anchor, never asserted: an uncalibrated sequence-encoder
#: baseline labels about 92.82% of real before/after-fix pairs identically
REFERENCE_UNCALIBRATED_PAIR_RATE = 0.9282


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise EvalError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        y_true = np.asarray(y_true, dtype=int)
        y_pred = np.asarray(y_pred, dtype=int)
        if y_true.shape != y_pred.shape:
            raise EvalError("prediction and label vectors differ in length")
        return cls(tp=int(np.sum((y_true == 1) & (y_pred == 1))),
                   fp=int(np.sum((y_true == 0) & (y_pred == 1))),
                   tn=int(np.sum((y_true == 0) & (y_pred == 0))),
                   fn=int(np.sum((y_true == 1) & (y_pred == 0))))


@dataclass(frozen=True)
class MetricSummary:
    accuracy: float
    precision: float
    recall: float
    f1: float
    zero_division_flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1,
                "zero_division_flags": list(self.zero_division_flags)}


def metrics(counts: ConfusionCounts) -> MetricSummary:
    """Accuracy, precision, recall, and F1 from confusion counts."""
    flags = []
    if counts.total == 0:
        return MetricSummary(0.0, 0.0, 0.0, 0.0, ("empty",))
    accuracy = (counts.tp + counts.tn) / counts.total
    if counts.tp + counts.fp == 0:
        precision = 0.0
        flags.append("precision")
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    if counts.tp + counts.fn == 0:
        recall = 0.0
        flags.append("recall")
    else:
        recall = counts.tp / (counts.tp + counts.fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("f1")
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricSummary(accuracy, precision, recall, f1, tuple(flags))


def pair_same_label_rate(model, pairs) -> float:
    """Fraction of (vulnerable, fixed) feature pairs given the same label.

    Lower is better: an ideal detector answers 1 for the vulnerable member and
    0 for its fix.
    """
    pairs = list(pairs)
    if not pairs:
        raise EvalError("pair_same_label_rate requires at least one pair")
    vuln = np.stack([np.asarray(v, dtype=float) for v, _ in pairs])
    fixed = np.stack([np.asarray(f, dtype=float) for _, f in pairs])
    pred_v = np.asarray(model.predict(vuln))
    pred_f = np.asarray(model.predict(fixed))
    return float(np.mean(pred_v == pred_f))


@dataclass(frozen=True)
class EvalReport:
    setting: str
    counts: ConfusionCounts
    summary: MetricSummary
    predictions: tuple[tuple[str, int, int, float], ...]  # (id, true, pred, p_vulnerable)
    pair_same_label: float | None = None

    def to_dict(self) -> dict:
        out = {"setting": self.setting,
               "counts": {"tp": self.counts.tp, "fp": self.counts.fp,
                          "tn": self.counts.tn, "fn": self.counts.fn},
               **self.summary.to_dict()}
        if self.pair_same_label is not None:
            out["pair_same_label_rate"] = self.pair_same_label
        return out

    def predictions_jsonl(self) -> str:
        lines = [json.dumps({"id": i, "label": t, "prediction": p,
                             "p_vulnerable": pv}, sort_keys=True)
                 for i, t, p, pv in self.predictions]
        return "\n".join(lines) + ("\n" if lines else "")


def evaluate_setting(model, features, corpus: Corpus, split: SplitAssignment) -> EvalReport:
    """Evaluate a trained model on the split's test partition.

    ``features`` maps sample id to its input vector; only test ids are read.
    PAIR settings additionally report the pair-same-label rate over test
    pairs; TIME asserts the temporal guard before evaluating.
    """
    if split.setting == "TIME":
        train_dates = [corpus.by_id[i].timestamp for i in split.train]
        test_dates = [corpus.by_id[i].timestamp for i in split.test]
        if train_dates and test_dates and max(train_dates) > min(test_dates):
            raise EvalError("temporal guard failed: training data postdates test data")

    test_ids = sorted(split.test)
    if not test_ids:
        raise EvalError("empty test partition")
    X = np.stack([np.asarray(features[i], dtype=float) for i in test_ids])
    y_true = np.array([corpus.by_id[i].label for i in test_ids], dtype=int)
    y_pred = np.asarray(model.predict(X), dtype=int)
    proba = model.predict_proba(X)[:, 1]

    counts = ConfusionCounts.from_predictions(y_true, y_pred)
    rows = tuple((sid, int(t), int(p), float(pv))
                 for sid, t, p, pv in zip(test_ids, y_true, y_pred, proba))

    pair_rate = None
    if split.setting in ("PAIR", "PAIR_COMBINE"):
        test_pairs = [(features[v.id], features[f.id]) for v, f in corpus.pairs()
                      if v.id in split.test and f.id in split.test]
        if test_pairs:
            pair_rate = pair_same_label_rate(model, test_pairs)

    return EvalReport(setting=split.setting, counts=counts, summary=metrics(counts),
                      predictions=rows, pair_same_label=pair_rate)


def render_report_table(reports) -> str:
    """Plain-text summary table, one row per report, in the column order
    Accuracy, Precision, Recall, F1."""
    header = f"{'Setting':<14} {'Accuracy':>9} {'Precision':>10} {'Recall':>8} {'F1':>8}"
    lines = [header, "-" * len(header)]
    for rep in reports:
        s = rep.summary
        lines.append(f"{rep.setting:<14} {s.accuracy:>9.4f} {s.precision:>10.4f} "
                     f"{s.recall:>8.4f} {s.f1:>8.4f}")
        if rep.pair_same_label is not None:
            lines.append(f"{'':<14} pair-same-label rate: {rep.pair_same_label:.4f}")
    return "\n".join(lines)


def loss_curve_rows(training_log) -> list[dict]:
    """Per-epoch loss rows for plotting both players' training curves."""
    return [{"epoch": r.epoch, "loss_detector": r.loss_detector,
             "loss_calibrator": r.loss_calibrator, "objective": r.objective,
             "balance_gap": r.balance_gap, "valid_f1": r.valid_f1}
            for r in training_log.records]
