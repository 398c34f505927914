"""Two-player alternating training with shared class prototypes.

The detector trains on unchanged + vulnerable code; the calibrator trains on
vulnerable + fixed pairs. Both share one convolution trunk and one prototype
bank. Each round runs a detector epoch with the calibrator head frozen, then
a calibrator epoch with the detector head frozen; the round objective is the
sum of both players' mean losses on their own views, and its first difference
is logged as the balance gap. Training stops at the epoch cap or when
validation F1 of the detector has not improved for ``patience`` rounds, and
the best-validation parameters are restored.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .fusion import ConvConfig, FusionWeights, fuse_backward, fuse_forward, init_fusion
from .losses import LossConfig, MlpHead, PrototypeBank, total_loss, total_loss_grads

DETECTOR_KINDS = frozenset({"UNCHANGED", "VULNERABLE"})
CALIBRATOR_KINDS = frozenset({"VULNERABLE", "FIXED"})


class GameError(ValueError):
    pass


class BalanceGapWarning(UserWarning):
    """Issued when |balance gap| exceeds the configured stability threshold.

    The boundary condition on the gap is satisfiable only at zero, so it is a
    diagnostic here; max-patience stopping does the actual stabilizing."""


@dataclass(frozen=True)
class TrainingRecord:
    epoch: int
    loss_detector: float
    loss_calibrator: float
    objective: float
    balance_gap: float | None
    valid_f1: float | None


@dataclass
class TrainingLog:
    records: list[TrainingRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"stop_reason": self.stop_reason,
                                 "best_epoch": self.best_epoch}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrainingLog":
        rows = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        tail = rows.pop()
        return cls(records=[TrainingRecord(**r) for r in rows],
                   stop_reason=tail["stop_reason"], best_epoch=tail["best_epoch"])


def compute_balance_gap(prev_objective: float, curr_objective: float) -> float:
    """Per-round change of the combined objective."""
    return curr_objective - prev_objective


def binary_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


class PrototypeGameClassifier(BaseEstimator, ClassifierMixin):
    """Vulnerability classifier trained as a two-player game.

    ``X`` rows are the concatenated path embeddings of one sample (length
    n_paths * embed_dim). ``fit`` additionally takes each sample's set kind
    (UNCHANGED / VULNERABLE / FIXED) to form the two data views, the pair id
    linking vulnerable samples to their fixes, and an optional validation
    split that drives early stopping. Prediction uses the detector head only.

    Ablations: ``game_off`` drops the calibrator player entirely;
    ``prototype_off`` reduces the loss to plain cross-entropy.
    """

    def __init__(self, n_paths: int = 3, out_channels: int = 8,
                 kernel_sizes: tuple[int, ...] = (3,),
                 gamma: float = 1.0, reg_weight: float = 0.01,
                 learning_rate: float = 2e-5, batch_size: int = 16,
                 max_epochs: int = 24, patience: int = 5,
                 game_off: bool = False, prototype_off: bool = False,
                 freeze_trunk_in_calibrator: bool = False,
                 pair_aligned_batches: bool = True,
                 decision_threshold: float | None = None,
                 gap_warn_threshold: float | None = None,
                 lr_schedule=None, seed: int = 0):
        self.n_paths = n_paths
        self.out_channels = out_channels
        self.kernel_sizes = kernel_sizes
        self.gamma = gamma
        self.reg_weight = reg_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.game_off = game_off
        self.prototype_off = prototype_off
        self.freeze_trunk_in_calibrator = freeze_trunk_in_calibrator
        self.pair_aligned_batches = pair_aligned_batches
        self.decision_threshold = decision_threshold
        self.gap_warn_threshold = gap_warn_threshold
        self.lr_schedule = lr_schedule
        self.seed = seed

    # -- internals ----------------------------------------------------------
    # The shared trunk has two trainable parts: a per-path linear map applied
    # to each frozen path embedding (the toy-scale stand-in for fine-tuning
    # the sequence encoder) and the convolution fusion layer.

    def _project(self, x: np.ndarray) -> np.ndarray:
        paths = x.reshape(self.n_paths, -1)
        return (paths @ self.projection_.T).reshape(-1)

    def _forward(self, x: np.ndarray) -> np.ndarray:
        feature, _ = fuse_forward(self._project(x), self.trunk_)
        return feature

    def _mean_loss(self, X: np.ndarray, y: np.ndarray, head: MlpHead) -> float:
        cfg = LossConfig(self.gamma, self.reg_weight)
        total = 0.0
        for x, label in zip(X, y):
            total += total_loss(self._forward(x), int(label), head,
                                self.prototype_bank_, cfg, self.prototype_off)
        return total / len(y)

    # -- estimator API ------------------------------------------------------

    def fit(self, X, y, set_kind=None, pair_id=None, X_val=None, y_val=None,
            trace_hook=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = y.astype(int)
        if set(np.unique(y)) - {0, 1}:
            raise GameError("labels must be binary 0/1")
        if X_val is not None:
            if y_val is None:
                raise GameError("X_val given without y_val")
            X_val = check_array(X_val, dtype=np.float64)
            y_val = np.asarray(y_val, dtype=int)

        if set_kind is None:
            if not self.game_off:
                raise GameError("the two-player game needs set_kind to form the "
                                "data views; pass set_kind or set game_off=True")
            set_kind = np.array(["VULNERABLE" if lbl == 1 else "UNCHANGED" for lbl in y])
        else:
            set_kind = np.asarray(set_kind, dtype=object)
            if len(set_kind) != len(y):
                raise GameError("set_kind length does not match X")
            for kind, lbl in zip(set_kind, y):
                if (kind == "VULNERABLE") != (lbl == 1):
                    raise GameError("set_kind and labels disagree")

        det_idx = np.array([i for i, k in enumerate(set_kind) if k in DETECTOR_KINDS],
                           dtype=int)
        cal_idx = np.array([i for i, k in enumerate(set_kind) if k in CALIBRATOR_KINDS],
                           dtype=int)
        if not np.any(y == 1):
            raise GameError("no vulnerable samples: the game is undefined")
        if not self.game_off and len(cal_idx) == 0:
            raise GameError("calibrator view is empty; pass FIXED samples or set game_off")

        pair_groups = None
        if not self.game_off and self.pair_aligned_batches:
            pair_groups = self._pair_groups(cal_idx, pair_id)

        if X.shape[1] % self.n_paths != 0:
            raise GameError(f"input width {X.shape[1]} is not divisible by "
                            f"n_paths={self.n_paths}")
        embed_dim = X.shape[1] // self.n_paths
        conv = ConvConfig(embed_dim=embed_dim, n_paths=self.n_paths,
                          out_channels=self.out_channels,
                          kernel_sizes=tuple(self.kernel_sizes))
        rng = np.random.default_rng(self.seed)
        self.projection_ = np.eye(embed_dim)
        self.trunk_ = init_fusion(conv, rng)
        self.feature_dim_ = conv.feature_dim
        self.detector_head_ = MlpHead.init(self.feature_dim_, rng)
        self.calibrator_head_ = MlpHead.init(self.feature_dim_, rng)
        self.prototype_bank_ = self._init_prototypes(X, y, rng)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]

        order_rng = np.random.default_rng(rng.integers(0, 2**63))
        log = TrainingLog()
        best_f1 = -np.inf
        best_epoch = 0
        best_params = None
        rounds_since_best = 0
        prev_objective = None
        stop_reason = "max_epochs"

        for epoch in range(1, self.max_epochs + 1):
            lr = self.lr_schedule(epoch) if self.lr_schedule is not None else self.learning_rate

            self._notify(trace_hook, "epoch_start", "detector", epoch)
            self._run_epoch(X, y, det_idx, self.detector_head_, True, lr,
                            order_rng, "detector", None, trace_hook)
            self._notify(trace_hook, "epoch_end", "detector", epoch)

            if not self.game_off:
                self._notify(trace_hook, "epoch_start", "calibrator", epoch)
                self._run_epoch(X, y, cal_idx, self.calibrator_head_,
                                not self.freeze_trunk_in_calibrator, lr,
                                order_rng, "calibrator", pair_groups, trace_hook)
                self._notify(trace_hook, "epoch_end", "calibrator", epoch)

            loss_d = self._mean_loss(X[det_idx], y[det_idx], self.detector_head_)
            loss_c = (0.0 if self.game_off
                      else self._mean_loss(X[cal_idx], y[cal_idx], self.calibrator_head_))
            objective = loss_d + loss_c
            gap = None if prev_objective is None else compute_balance_gap(prev_objective,
                                                                          objective)
            prev_objective = objective
            if (gap is not None and self.gap_warn_threshold is not None
                    and abs(gap) > self.gap_warn_threshold):
                warnings.warn(f"balance gap {gap:+.4f} exceeds threshold "
                              f"{self.gap_warn_threshold} at epoch {epoch}",
                              BalanceGapWarning, stacklevel=2)

            valid_f1 = None
            if X_val is not None and len(X_val):
                valid_f1 = binary_f1(y_val, self._predict_arrays(X_val))

            log.records.append(TrainingRecord(epoch, loss_d, loss_c, objective,
                                              gap, valid_f1))

            if valid_f1 is not None:
                if valid_f1 > best_f1:
                    best_f1 = valid_f1
                    best_epoch = epoch
                    best_params = self._snapshot()
                    rounds_since_best = 0
                else:
                    rounds_since_best += 1
                    if rounds_since_best >= self.patience:
                        stop_reason = "patience"
                        break

        if best_params is not None:
            self._restore(best_params)
            log.best_epoch = best_epoch
        else:
            log.best_epoch = len(log.records)
        log.stop_reason = stop_reason
        self.training_log_ = log
        return self

    def _pair_groups(self, cal_idx: np.ndarray, pair_id) -> list[list[int]]:
        if pair_id is None:
            return [[int(i)] for i in cal_idx]
        pair_id = np.asarray(pair_id, dtype=object)
        groups: dict[str, list[int]] = {}
        singles: list[list[int]] = []
        for i in cal_idx:
            pid = pair_id[i]
            if pid is None:
                singles.append([int(i)])
            else:
                groups.setdefault(pid, []).append(int(i))
        out = [groups[k] for k in sorted(groups)] + singles
        return out

    def _init_prototypes(self, X, y, rng: np.random.Generator) -> PrototypeBank:
        feats = np.stack([self._forward(x) for x in X])
        m = np.zeros((2, self.feature_dim_))
        for lbl in (0, 1):
            mask = y == lbl
            if np.any(mask):
                m[lbl] = feats[mask].mean(axis=0)
            else:
                v = rng.standard_normal(self.feature_dim_)
                m[lbl] = v / np.linalg.norm(v)
        if np.array_equal(m[0], m[1]):
            m[1] = m[1] + 1.0 / np.sqrt(self.feature_dim_)
        return PrototypeBank(m)

    def _run_epoch(self, X, y, indices, head, update_trunk, lr, order_rng, role,
                   pair_groups, trace_hook) -> None:
        cfg = LossConfig(self.gamma, self.reg_weight)
        if pair_groups is not None:
            perm = order_rng.permutation(len(pair_groups))
            order = np.array([i for g in (pair_groups[p] for p in perm) for i in g],
                             dtype=int)
        else:
            order = indices[order_rng.permutation(len(indices))]
        for start in range(0, len(order), self.batch_size):
            batch = order[start:start + self.batch_size]
            if trace_hook is not None:
                trace_hook("batch", {"role": role, "indices": batch.tolist()})
            d_head = MlpHead(np.zeros_like(head.w1), np.zeros_like(head.b1),
                             np.zeros_like(head.w2), np.zeros_like(head.b2))
            d_trunk = FusionWeights([np.zeros_like(w) for w in self.trunk_.w],
                                    [np.zeros_like(b) for b in self.trunk_.b])
            d_proj = np.zeros_like(self.projection_)
            d_bank = np.zeros_like(self.prototype_bank_.m)
            for i in batch:
                raw_paths = X[i].reshape(self.n_paths, -1)
                u = (raw_paths @ self.projection_.T).reshape(-1)
                feature, cache = fuse_forward(u, self.trunk_)
                loss, d_f, d_h, d_m = total_loss_grads(
                    feature, int(y[i]), head, self.prototype_bank_, cfg, self.prototype_off)
                if not np.isfinite(loss):
                    raise GameError(f"non-finite loss on sample index {i} in {role} epoch")
                d_head.add_scaled(d_h, 1.0)
                d_bank += d_m
                if update_trunk:
                    d_w, d_u = fuse_backward(cache, d_f)
                    d_trunk.add_scaled(d_w, 1.0)
                    d_proj += d_u.reshape(self.n_paths, -1).T @ raw_paths
            step = -lr / len(batch)
            head.add_scaled(d_head, step)
            if update_trunk:
                self.trunk_.add_scaled(d_trunk, step)
                self.projection_ += step * d_proj
            if not self.prototype_off:
                self.prototype_bank_.m += step * d_bank

    def _snapshot(self):
        return (self.trunk_.copy(), self.projection_.copy(), self.detector_head_.copy(),
                self.calibrator_head_.copy(), self.prototype_bank_.copy())

    def _restore(self, params) -> None:
        trunk, proj, det, cal, bank = params
        self.trunk_ = trunk.copy()
        self.projection_ = proj.copy()
        self.detector_head_ = det.copy()
        self.calibrator_head_ = cal.copy()
        self.prototype_bank_ = bank.copy()

    @staticmethod
    def _notify(trace_hook, event, role, epoch) -> None:
        if trace_hook is not None:
            trace_hook(event, {"role": role, "epoch": epoch})

    def _predict_arrays(self, X: np.ndarray) -> np.ndarray:
        proba = self._proba_arrays(X)
        if self.decision_threshold is None:
            return np.argmax(proba, axis=1)
        return (proba[:, 1] >= self.decision_threshold).astype(int)

    def _proba_arrays(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros((len(X), 2))
        for i, x in enumerate(X):
            logits = self.detector_head_.logits(self._forward(x))
            shifted = logits - np.max(logits)
            e = np.exp(shifted)
            out[i] = e / np.sum(e)
        return out

    def predict(self, X):
        check_is_fitted(self, "trunk_")
        X = check_array(X, dtype=np.float64)
        return self._predict_arrays(X)

    def predict_proba(self, X):
        check_is_fitted(self, "trunk_")
        X = check_array(X, dtype=np.float64)
        return self._proba_arrays(X)


CHECKPOINT_VERSION = 1

_PICKLABLE_PARAMS = ("n_paths", "out_channels", "kernel_sizes", "gamma", "reg_weight",
                     "learning_rate", "batch_size", "max_epochs", "patience",
                     "game_off", "prototype_off", "freeze_trunk_in_calibrator",
                     "pair_aligned_batches", "decision_threshold",
                     "gap_warn_threshold", "seed")


def save_checkpoint(clf: PrototypeGameClassifier, path) -> None:
    """Versioned binary checkpoint: trunk, both heads, prototypes, and config."""
    check_is_fitted(clf, "trunk_")
    params = {k: getattr(clf, k) for k in _PICKLABLE_PARAMS}
    params["kernel_sizes"] = list(params["kernel_sizes"])
    arrays = {"version": np.array(CHECKPOINT_VERSION),
              "config_json": np.frombuffer(json.dumps(params, sort_keys=True).encode(),
                                           dtype=np.uint8),
              "n_features_in": np.array(clf.n_features_in_),
              "prototypes": clf.prototype_bank_.m,
              "projection": clf.projection_,
              "n_kernel_sizes": np.array(len(clf.trunk_.w))}
    for i, (w, b) in enumerate(zip(clf.trunk_.w, clf.trunk_.b)):
        arrays[f"trunk_w{i}"] = w
        arrays[f"trunk_b{i}"] = b
    for name, head in (("detector", clf.detector_head_), ("calibrator", clf.calibrator_head_)):
        for part in ("w1", "b1", "w2", "b2"):
            arrays[f"{name}_{part}"] = getattr(head, part)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> PrototypeGameClassifier:
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise GameError(f"unsupported checkpoint version {version}")
        params = json.loads(bytes(data["config_json"]).decode())
        params["kernel_sizes"] = tuple(params["kernel_sizes"])
        clf = PrototypeGameClassifier(**params)
        n_ks = int(data["n_kernel_sizes"])
        clf.trunk_ = FusionWeights([data[f"trunk_w{i}"] for i in range(n_ks)],
                                   [data[f"trunk_b{i}"] for i in range(n_ks)])
        clf.detector_head_ = MlpHead(*(data[f"detector_{p}"] for p in ("w1", "b1", "w2", "b2")))
        clf.calibrator_head_ = MlpHead(*(data[f"calibrator_{p}"]
                                         for p in ("w1", "b1", "w2", "b2")))
        clf.prototype_bank_ = PrototypeBank(data["prototypes"])
        clf.projection_ = data["projection"]
        clf.n_features_in_ = int(data["n_features_in"])
        clf.feature_dim_ = clf.prototype_bank_.m.shape[1]
        clf.classes_ = np.array([0, 1])
    return clf
