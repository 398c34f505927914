"""Per-sample loss stack shared by both players.

Total loss = cross-entropy of an MLP head on tanh(feature)
           + prototype loss (softmax over negative scaled squared distances
             to the two class prototypes)
           + weighted squared distance to the sample's own class prototype.

Every gradient here is derived by hand and checked against central finite
differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0
    reg_weight: float = 0.01

    def __post_init__(self):
        if self.gamma <= 0:
            raise LossError("gamma must be positive")
        if self.reg_weight < 0:
            raise LossError("reg_weight must be nonnegative")


@dataclass
class MlpHead:
    """One-hidden-layer classifier head: logits = W2 tanh(W1 tanh(s) + b1) + b2."""

    w1: np.ndarray  # (hidden, feature)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (2, hidden)
    b2: np.ndarray  # (2,)

    @classmethod
    def init(cls, feature_dim: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = feature_dim if hidden is None else hidden
        return cls(w1=rng.standard_normal((hidden, feature_dim)) / np.sqrt(feature_dim),
                   b1=np.zeros(hidden),
                   w2=rng.standard_normal((2, hidden)) / np.sqrt(hidden),
                   b2=np.zeros(2))

    def copy(self) -> "MlpHead":
        return MlpHead(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def tobytes(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.w1, self.b1, self.w2, self.b2))

    def add_scaled(self, grads: "MlpHead", scale: float) -> None:
        self.w1 += scale * grads.w1
        self.b1 += scale * grads.b1
        self.w2 += scale * grads.w2
        self.b2 += scale * grads.b2

    def logits(self, feature: np.ndarray) -> np.ndarray:
        hidden = np.tanh(self.w1 @ np.tanh(feature) + self.b1)
        return self.w2 @ hidden + self.b2


@dataclass
class PrototypeBank:
    """Two trainable class prototypes, shared by detector and calibrator."""

    m: np.ndarray  # (2, feature_dim)

    def __post_init__(self):
        if self.m.shape[0] != 2:
            raise LossError("exactly one prototype per binary class is required")
        if not np.all(np.isfinite(self.m)):
            raise LossError("prototypes must be finite")
        if np.array_equal(self.m[0], self.m[1]):
            raise LossError("prototypes must be distinct after initialization")

    def copy(self) -> "PrototypeBank":
        return PrototypeBank(self.m.copy())

    def tobytes(self) -> bytes:
        return self.m.tobytes()


def _check_feature(feature: np.ndarray) -> np.ndarray:
    feature = np.asarray(feature, dtype=float)
    if not np.all(np.isfinite(feature)):
        raise LossError("feature contains non-finite entries")
    return feature


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    return shifted - np.log(np.sum(np.exp(shifted)))


def ce_loss(feature: np.ndarray, label: int, head: MlpHead) -> float:
    """Cross-entropy of the head on tanh(feature)."""
    feature = _check_feature(feature)
    return float(-_log_softmax(head.logits(feature))[label])


def ce_loss_grads(feature: np.ndarray, label: int, head: MlpHead):
    """(loss, d_feature, d_head) for the cross-entropy term."""
    feature = _check_feature(feature)
    z0 = np.tanh(feature)
    a1 = head.w1 @ z0 + head.b1
    h = np.tanh(a1)
    logits = head.w2 @ h + head.b2
    log_p = _log_softmax(logits)
    p = np.exp(log_p)

    d_logits = p.copy()
    d_logits[label] -= 1.0
    d_w2 = np.outer(d_logits, h)
    d_b2 = d_logits.copy()
    d_h = head.w2.T @ d_logits
    d_a1 = d_h * (1.0 - h * h)
    d_w1 = np.outer(d_a1, z0)
    d_b1 = d_a1.copy()
    d_z0 = head.w1.T @ d_a1
    d_feature = d_z0 * (1.0 - z0 * z0)
    return float(-log_p[label]), d_feature, MlpHead(d_w1, d_b1, d_w2, d_b2)


def proto_prob(feature: np.ndarray, bank: PrototypeBank, gamma: float) -> np.ndarray:
    """Class membership probabilities from prototype distances.

    p_l = exp(-gamma * ||s - m_l||^2) / sum_j exp(-gamma * ||s - m_j||^2),
    computed with a shifted softmax so distances up to 1e4 stay stable.
    """
    if gamma <= 0:
        raise LossError("gamma must be positive")
    feature = _check_feature(feature)
    d = np.sum((feature[None, :] - bank.m) ** 2, axis=1)
    q = -gamma * d
    q -= np.max(q)
    e = np.exp(q)
    return e / np.sum(e)


def proto_loss(feature: np.ndarray, label: int, bank: PrototypeBank, gamma: float) -> float:
    """Negative log probability of the sample's own class under proto_prob."""
    if gamma <= 0:
        raise LossError("gamma must be positive")
    feature = _check_feature(feature)
    d = np.sum((feature[None, :] - bank.m) ** 2, axis=1)
    q = -gamma * d
    shifted = q - np.max(q)
    return float(-(shifted[label] - np.log(np.sum(np.exp(shifted)))))


def proto_loss_grads(feature: np.ndarray, label: int, bank: PrototypeBank, gamma: float):
    """(loss, d_feature, d_prototypes) for the prototype term."""
    if gamma <= 0:
        raise LossError("gamma must be positive")
    feature = _check_feature(feature)
    diff = feature[None, :] - bank.m  # (2, F)
    d = np.sum(diff ** 2, axis=1)
    q = -gamma * d
    shifted = q - np.max(q)
    log_z = np.log(np.sum(np.exp(shifted)))
    loss = float(-(shifted[label] - log_z))
    p = np.exp(shifted - log_z)

    # dL/dd_j = gamma * (1[j == label] - p_j); d d_j/ds = 2 (s - m_j)
    coeff = gamma * (np.eye(2)[label] - p)
    d_feature = 2.0 * (coeff[:, None] * diff).sum(axis=0)
    d_m = -2.0 * coeff[:, None] * diff
    return loss, d_feature, d_m


def reg_loss(feature: np.ndarray, label: int, bank: PrototypeBank, reg_weight: float) -> float:
    """Weighted squared distance to the sample's own class prototype."""
    if reg_weight < 0:
        raise LossError("reg_weight must be nonnegative")
    feature = _check_feature(feature)
    return float(reg_weight * np.sum((feature - bank.m[label]) ** 2))


def reg_loss_grads(feature: np.ndarray, label: int, bank: PrototypeBank, reg_weight: float):
    if reg_weight < 0:
        raise LossError("reg_weight must be nonnegative")
    feature = _check_feature(feature)
    diff = feature - bank.m[label]
    loss = float(reg_weight * np.sum(diff ** 2))
    d_feature = 2.0 * reg_weight * diff
    d_m = np.zeros_like(bank.m)
    d_m[label] = -2.0 * reg_weight * diff
    return loss, d_feature, d_m


def total_loss(feature: np.ndarray, label: int, head: MlpHead, bank: PrototypeBank,
               config: LossConfig, prototype_off: bool = False) -> float:
    """Sum of the three terms; with prototype_off only cross-entropy remains."""
    if prototype_off:
        return ce_loss(feature, label, head)
    return (ce_loss(feature, label, head)
            + proto_loss(feature, label, bank, config.gamma)
            + reg_loss(feature, label, bank, config.reg_weight))


def total_loss_grads(feature: np.ndarray, label: int, head: MlpHead, bank: PrototypeBank,
                     config: LossConfig, prototype_off: bool = False):
    """(loss, d_feature, d_head, d_prototypes) for the combined objective."""
    loss_ce, d_f_ce, d_head = ce_loss_grads(feature, label, head)
    if prototype_off:
        return loss_ce, d_f_ce, d_head, np.zeros_like(bank.m)
    loss_pr, d_f_pr, d_m_pr = proto_loss_grads(feature, label, bank, config.gamma)
    loss_rg, d_f_rg, d_m_rg = reg_loss_grads(feature, label, bank, config.reg_weight)
    return (loss_ce + loss_pr + loss_rg,
            d_f_ce + d_f_pr + d_f_rg,
            d_head,
            d_m_pr + d_m_rg)
