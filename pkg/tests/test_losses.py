import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulngame.losses import (LossConfig, LossError, MlpHead, PrototypeBank, ce_loss,
                             ce_loss_grads, proto_loss, proto_loss_grads, proto_prob,
                             reg_loss, reg_loss_grads, total_loss, total_loss_grads)

RNG = np.random.default_rng(123)


def random_head(feature_dim, rng=RNG):
    return MlpHead.init(feature_dim, rng)


def zero_head(feature_dim):
    z = np.zeros
    return MlpHead(z((feature_dim, feature_dim)), z(feature_dim), z((2, feature_dim)), z(2))


def logit_head(feature_dim, logits):
    head = zero_head(feature_dim)
    head.b2 = np.asarray(logits, dtype=float)
    return head


class TestCrossEntropy:
    def test_uniform_logits_give_ln2(self):
        feature = RNG.standard_normal(5)
        assert ce_loss(feature, 0, zero_head(5)) == pytest.approx(math.log(2), abs=1e-12)
        assert ce_loss(feature, 1, zero_head(5)) == pytest.approx(math.log(2), abs=1e-12)

    def test_loss_decreases_as_true_logit_grows(self):
        feature = np.zeros(4)
        losses = [ce_loss(feature, 0, logit_head(4, (t, 0.0))) for t in (0.0, 2.0, 5.0)]
        assert losses[0] > losses[1] > losses[2]
        assert losses[2] < 0.01

    def test_matches_standalone_softmax_ce(self):
        # independent scalar evaluation of -log softmax over the same MLP
        for _ in range(25):
            dim = int(RNG.integers(2, 10))
            feature = RNG.standard_normal(dim)
            head = random_head(dim)
            label = int(RNG.integers(0, 2))
            z0 = np.tanh(feature)
            logits = head.w2 @ np.tanh(head.w1 @ z0 + head.b1) + head.b2
            expected = -(logits[label] - np.log(np.exp(logits).sum()))
            assert ce_loss(feature, label, head) == pytest.approx(expected, abs=1e-8)

    def test_non_finite_feature_rejected(self):
        with pytest.raises(LossError):
            ce_loss(np.array([1.0, np.nan]), 0, zero_head(2))


class TestPrototypeProbability:
    def test_equal_distances_give_half_half(self):
        bank = PrototypeBank(np.stack([np.ones(4), -np.ones(4)]))
        p = proto_prob(np.zeros(4), bank, gamma=1.0)
        assert p[0] == pytest.approx(0.5, abs=1e-12)
        assert p[1] == pytest.approx(0.5, abs=1e-12)

    def test_reference_value_at_unit_distance(self):
        bank = PrototypeBank(np.stack([np.zeros(3), np.array([1.0, 0.0, 0.0])]))
        p = proto_prob(np.zeros(3), bank, gamma=1.0)
        assert p[0] == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-9)

    def test_normalization_under_huge_distances(self):
        far = PrototypeBank(np.stack([np.full(4, 50.0), np.full(4, -50.0)]))
        p = proto_prob(np.zeros(4), far, gamma=1.0)  # distances of order 1e4
        assert p.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(p > 0) and np.all(p < 1)

    def test_sharpens_toward_nearer_prototype_as_gamma_grows(self):
        bank = PrototypeBank(np.stack([np.zeros(2), np.array([1.0, 1.0])]))
        feature = np.array([0.1, 0.0])
        probs = [proto_prob(feature, bank, g)[0] for g in (1.0, 10.0, 100.0)]
        assert probs[0] < probs[1] < probs[2]
        assert probs[2] > 0.999

    def test_gamma_must_be_positive(self):
        bank = PrototypeBank(np.stack([np.zeros(2), np.ones(2)]))
        with pytest.raises(LossError):
            proto_prob(np.zeros(2), bank, gamma=0.0)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_normalization_property(self, seed):
        rng = np.random.default_rng(seed)
        scale = rng.choice([1.0, 10.0, 100.0])
        bank = PrototypeBank(rng.standard_normal((2, 6)) * scale)
        p = proto_prob(rng.standard_normal(6), bank, gamma=float(rng.uniform(0.1, 5)))
        assert p.sum() == pytest.approx(1.0, abs=1e-9)


class TestPrototypeLoss:
    def test_equal_distances_give_ln2(self):
        bank = PrototypeBank(np.stack([np.ones(4), -np.ones(4)]))
        assert proto_loss(np.zeros(4), 1, bank, 1.0) == pytest.approx(math.log(2), abs=1e-12)

    def test_at_own_prototype_with_unit_gap(self):
        bank = PrototypeBank(np.stack([np.zeros(3), np.array([1.0, 0.0, 0.0])]))
        expected = -math.log(1.0 / (1.0 + math.exp(-1.0)))
        assert proto_loss(np.zeros(3), 0, bank, 1.0) == pytest.approx(expected, abs=1e-6)
        assert expected == pytest.approx(0.313262, abs=1e-6)

    def test_gradient_pushes_feature_toward_own_prototype(self):
        bank = PrototypeBank(np.stack([np.zeros(3), np.full(3, 2.0)]))
        feature = np.array([1.0, 1.0, 1.0])
        _, d_feature, _ = proto_loss_grads(feature, 0, bank, 1.0)
        # moving along -gradient must reduce the distance to m_0
        step = feature - 0.01 * d_feature
        assert np.sum(step**2) < np.sum(feature**2)

    def test_loss_increases_with_own_distance_at_fixed_other(self):
        # finite differences in distance space: fix the distance to the other
        # prototype, perturb the distance to the sample's own prototype
        rng = np.random.default_rng(31)
        gap = 2.0  # prototype separation along the second axis

        def loss_at(d_own, d_other, gamma):
            b = (d_own - d_other + gap**2) / (2 * gap)
            a = np.sqrt(d_own - b**2)
            feature = np.array([a, b])
            bank = PrototypeBank(np.stack([np.zeros(2), np.array([0.0, gap])]))
            return proto_loss(feature, 0, bank, gamma)

        checked = 0
        while checked < 20:
            d_own = float(rng.uniform(1.0, 4.0))
            d_other = float(rng.uniform(1.0, 6.0))
            b = (d_own - d_other + gap**2) / (2 * gap)
            if d_own - b**2 < 0.05:
                continue  # distance pair not realizable at this separation
            gamma = float(rng.uniform(0.3, 2.0))
            h = 1e-5
            slope = (loss_at(d_own + h, d_other, gamma)
                     - loss_at(d_own - h, d_other, gamma)) / (2 * h)
            assert slope > 0
            checked += 1


class TestRegularizer:
    def test_zero_at_own_prototype(self):
        bank = PrototypeBank(np.stack([np.ones(3), np.zeros(3)]))
        assert reg_loss(np.ones(3), 0, bank, 0.01) == 0.0

    def test_zero_weight_kills_term(self):
        bank = PrototypeBank(np.stack([np.ones(3), np.zeros(3)]))
        assert reg_loss(RNG.standard_normal(3), 1, bank, 0.0) == 0.0

    def test_direct_arithmetic(self):
        bank = PrototypeBank(np.stack([np.zeros(1), np.array([2.0])]))
        assert reg_loss(np.array([0.0]), 1, bank, 0.01) == pytest.approx(0.04, abs=1e-12)


class TestTotalLoss:
    def test_additivity_of_uniform_components(self):
        bank = PrototypeBank(np.stack([np.ones(4), -np.ones(4)]))
        cfg = LossConfig(gamma=1.0, reg_weight=0.0)
        total = total_loss(np.zeros(4), 0, zero_head(4), bank, cfg)
        assert total == pytest.approx(2 * math.log(2), abs=1e-12)
        assert total == pytest.approx(1.386294, abs=1e-6)

    def test_reg_weight_zero_reduces_to_ce_plus_proto(self):
        feature = RNG.standard_normal(5)
        head = random_head(5)
        bank = PrototypeBank(RNG.standard_normal((2, 5)))
        cfg = LossConfig(gamma=1.3, reg_weight=0.0)
        expected = ce_loss(feature, 1, head) + proto_loss(feature, 1, bank, 1.3)
        assert total_loss(feature, 1, head, bank, cfg) == pytest.approx(expected, abs=1e-12)

    def test_compositional_sum(self):
        for _ in range(20):
            dim = int(RNG.integers(2, 12))
            feature = RNG.standard_normal(dim)
            head = random_head(dim)
            bank = PrototypeBank(RNG.standard_normal((2, dim)))
            label = int(RNG.integers(0, 2))
            cfg = LossConfig(gamma=float(RNG.uniform(0.2, 3)),
                             reg_weight=float(RNG.uniform(0, 0.5)))
            parts = (ce_loss(feature, label, head)
                     + proto_loss(feature, label, bank, cfg.gamma)
                     + reg_loss(feature, label, bank, cfg.reg_weight))
            assert total_loss(feature, label, head, bank, cfg) == pytest.approx(
                parts, abs=1e-12)

    def test_prototype_off_is_ce_only(self):
        feature = RNG.standard_normal(4)
        head = random_head(4)
        bank = PrototypeBank(RNG.standard_normal((2, 4)))
        cfg = LossConfig()
        assert total_loss(feature, 0, head, bank, cfg, prototype_off=True) == \
            pytest.approx(ce_loss(feature, 0, head), abs=1e-15)


# ---------------------------------------------------------------------------
# finite-difference gradient suite


def _fd(f, arr, h=1e-6):
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def _rel(a, b):
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


def _random_case(rng):
    dim = int(rng.integers(2, 17))
    return (rng.standard_normal(dim), int(rng.integers(0, 2)),
            MlpHead.init(dim, rng), PrototypeBank(rng.standard_normal((2, dim))),
            LossConfig(gamma=float(rng.uniform(0.3, 2.5)),
                       reg_weight=float(rng.uniform(0.0, 0.3))))


def test_gradient_suite_all_terms():
    """Analytic gradients of every loss term against central differences,
    feature dims up to 16, over 30 random configurations per term."""
    rng = np.random.default_rng(2024)
    for _ in range(30):
        feature, label, head, bank, cfg = _random_case(rng)

        loss, d_f, d_head = ce_loss_grads(feature, label, head)
        assert loss == pytest.approx(ce_loss(feature, label, head), abs=1e-12)
        assert _rel(d_f, _fd(lambda: ce_loss(feature, label, head), feature)) < 1e-4
        for part in ("w1", "b1", "w2", "b2"):
            num = _fd(lambda: ce_loss(feature, label, head), getattr(head, part))
            assert _rel(getattr(d_head, part), num) < 1e-4

        _, d_f, d_m = proto_loss_grads(feature, label, bank, cfg.gamma)
        assert _rel(d_f, _fd(lambda: proto_loss(feature, label, bank, cfg.gamma),
                             feature)) < 1e-4
        assert _rel(d_m, _fd(lambda: proto_loss(feature, label, bank, cfg.gamma),
                             bank.m)) < 1e-4

        _, d_f, d_m = reg_loss_grads(feature, label, bank, cfg.reg_weight)
        assert _rel(d_f, _fd(lambda: reg_loss(feature, label, bank, cfg.reg_weight),
                             feature)) < 1e-4
        assert _rel(d_m, _fd(lambda: reg_loss(feature, label, bank, cfg.reg_weight),
                             bank.m)) < 1e-4

        loss, d_f, d_head, d_m = total_loss_grads(feature, label, head, bank, cfg)
        assert loss == pytest.approx(total_loss(feature, label, head, bank, cfg), abs=1e-12)
        assert _rel(d_f, _fd(lambda: total_loss(feature, label, head, bank, cfg),
                             feature)) < 1e-4
        assert _rel(d_m, _fd(lambda: total_loss(feature, label, head, bank, cfg),
                             bank.m)) < 1e-4


def test_prototype_bank_validation():
    with pytest.raises(LossError):
        PrototypeBank(np.zeros((2, 3)))  # identical prototypes
    with pytest.raises(LossError):
        PrototypeBank(np.zeros((3, 2)) + np.arange(3)[:, None])  # three classes
