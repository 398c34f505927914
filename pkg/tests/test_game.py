import numpy as np
import pytest

from vulngame.game import (GameError, PrototypeGameClassifier, TrainingLog,
                           binary_f1, compute_balance_gap, load_checkpoint,
                           save_checkpoint)

RNG = np.random.default_rng(77)


def toy_views(n_pairs=12, n_unchanged=24, width=12, seed=0):
    """Linearly separable toy design: axis 0 sits in (-1.5, -0.5) for
    non-vulnerable rows and (0.5, 1.5) for vulnerable rows, so any threshold
    near zero classifies perfectly; a fixed row is its vulnerable partner
    shifted back across the margin."""
    rng = np.random.default_rng(seed)
    rows, labels, kinds, pairs = [], [], [], []

    def fresh(label):
        row = rng.standard_normal(width) * 0.5
        row[0] = rng.uniform(0.5, 1.5) if label else rng.uniform(-1.5, -0.5)
        return row

    for i in range(n_unchanged):
        rows.append(fresh(0))
        labels.append(0)
        kinds.append("UNCHANGED")
        pairs.append(None)
    for k in range(n_pairs):
        vuln = fresh(1)
        fixed = vuln.copy()
        fixed[0] -= 2.0
        rows.append(vuln)
        labels.append(1)
        kinds.append("VULNERABLE")
        pairs.append(f"p{k}")
        rows.append(fixed)
        labels.append(0)
        kinds.append("FIXED")
        pairs.append(f"p{k}")
    return (np.array(rows), np.array(labels), np.array(kinds, dtype=object),
            np.array(pairs, dtype=object))


def fit_kwargs(seed=0, **overrides):
    base = dict(n_paths=3, out_channels=4, kernel_sizes=(2,), learning_rate=0.1,
                batch_size=8, max_epochs=6, patience=5, seed=seed)
    base.update(overrides)
    return base


class TestBalanceGap:
    def test_equal_objectives_zero(self):
        assert compute_balance_gap(0.7, 0.7) == 0.0

    def test_arithmetic(self):
        assert compute_balance_gap(0.8, 0.5) == pytest.approx(-0.3)

    def test_logged_series_reconstructs_from_objectives(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs())
        clf.fit(X, y, set_kind=kinds, pair_id=pairs)
        records = clf.training_log_.records
        assert records[0].balance_gap is None
        for prev, curr in zip(records, records[1:]):
            assert curr.balance_gap == curr.objective - prev.objective
            assert curr.objective == pytest.approx(
                curr.loss_detector + curr.loss_calibrator, abs=1e-12)


class TestFreezeAndSharing:
    def test_calibrator_head_bitwise_frozen_in_detector_epochs(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=3))
        snapshots = {}
        violations = []

        def hook(event, payload):
            if event == "epoch_start" and payload["role"] == "detector":
                snapshots["cal"] = clf.calibrator_head_.tobytes()
                snapshots["det"] = clf.detector_head_.tobytes()
            if event == "epoch_end" and payload["role"] == "detector":
                if clf.calibrator_head_.tobytes() != snapshots["cal"]:
                    violations.append(("calibrator-moved", payload["epoch"]))
                if clf.detector_head_.tobytes() == snapshots["det"]:
                    violations.append(("detector-static", payload["epoch"]))
            if event == "epoch_start" and payload["role"] == "calibrator":
                snapshots["det2"] = clf.detector_head_.tobytes()
            if event == "epoch_end" and payload["role"] == "calibrator":
                if clf.detector_head_.tobytes() != snapshots["det2"]:
                    violations.append(("detector-moved", payload["epoch"]))

        clf.fit(X, y, set_kind=kinds, pair_id=pairs, trace_hook=hook)
        assert violations == []

    def test_prototypes_move_in_calibrator_epoch_when_reg_positive(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=1, reg_weight=0.05))
        before_after = {}

        def hook(event, payload):
            if payload["role"] == "calibrator":
                before_after[event] = clf.prototype_bank_.tobytes()

        clf.fit(X, y, set_kind=kinds, pair_id=pairs, trace_hook=hook)
        assert before_after["epoch_start"] != before_after["epoch_end"]

    def test_single_shared_bank_object(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=2))
        bank_ids = set()
        clf.fit(X, y, set_kind=kinds, pair_id=pairs,
                trace_hook=lambda e, p: bank_ids.add(id(clf.prototype_bank_)))
        assert len(bank_ids) == 1

    def test_freeze_trunk_in_calibrator_flag(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=2,
                                                   freeze_trunk_in_calibrator=True))
        state = {}
        frozen_ok = []

        def hook(event, payload):
            if payload["role"] == "calibrator":
                key = clf.trunk_.tobytes() + clf.projection_.tobytes()
                if event == "epoch_start":
                    state["trunk"] = key
                else:
                    frozen_ok.append(state["trunk"] == key)

        clf.fit(X, y, set_kind=kinds, pair_id=pairs, trace_hook=hook)
        assert frozen_ok and all(frozen_ok)


class TestDataViews:
    def test_no_fixed_in_detector_batches_no_unchanged_in_calibrator(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=3))
        seen = {"detector": set(), "calibrator": set()}

        def hook(event, payload):
            if event == "batch":
                seen[payload["role"]].update(payload["indices"])

        clf.fit(X, y, set_kind=kinds, pair_id=pairs, trace_hook=hook)
        det_kinds = {kinds[i] for i in seen["detector"]}
        cal_kinds = {kinds[i] for i in seen["calibrator"]}
        assert det_kinds == {"UNCHANGED", "VULNERABLE"}
        assert cal_kinds == {"VULNERABLE", "FIXED"}

    def test_pair_aligned_batches_keep_partners_adjacent(self):
        X, y, kinds, pairs = toy_views(n_pairs=8, n_unchanged=4)
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=1, batch_size=4))
        orders = []

        def hook(event, payload):
            if event == "batch" and payload["role"] == "calibrator":
                orders.extend(payload["indices"])

        clf.fit(X, y, set_kind=kinds, pair_id=pairs, trace_hook=hook)
        by_pair = {}
        for pos, idx in enumerate(orders):
            if pairs[idx] is not None:
                by_pair.setdefault(pairs[idx], []).append(pos)
        assert all(abs(a - b) == 1 for a, b in by_pair.values())

    def test_set_kind_label_mismatch_rejected(self):
        X, y, kinds, pairs = toy_views()
        kinds = kinds.copy()
        kinds[0] = "VULNERABLE"  # but label says 0
        clf = PrototypeGameClassifier(**fit_kwargs())
        with pytest.raises(GameError):
            clf.fit(X, y, set_kind=kinds, pair_id=pairs)

    def test_empty_vulnerable_set_rejected(self):
        X = RNG.standard_normal((10, 6))
        clf = PrototypeGameClassifier(**fit_kwargs(game_off=True))
        with pytest.raises(GameError, match="game is undefined"):
            clf.fit(X, np.zeros(10, dtype=int))

    def test_game_on_without_set_kind_rejected(self):
        X, y, _, _ = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs())
        with pytest.raises(GameError, match="set_kind"):
            clf.fit(X, y)


class TestTrainingLoop:
    def test_zero_learning_rate_changes_nothing(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(learning_rate=0.0, max_epochs=2))
        captured = {}

        def hook(event, payload):
            if event == "epoch_start" and payload["epoch"] == 1 and payload["role"] == "detector":
                captured["before"] = (clf.trunk_.tobytes(), clf.projection_.tobytes(),
                                      clf.detector_head_.tobytes(),
                                      clf.calibrator_head_.tobytes(),
                                      clf.prototype_bank_.tobytes())

        clf.fit(X, y, set_kind=kinds, pair_id=pairs, trace_hook=hook)
        after = (clf.trunk_.tobytes(), clf.projection_.tobytes(),
                 clf.detector_head_.tobytes(), clf.calibrator_head_.tobytes(),
                 clf.prototype_bank_.tobytes())
        assert after == captured["before"]

    def test_single_round_logs_one_record(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=1))
        hooks = []
        clf.fit(X, y, set_kind=kinds, pair_id=pairs,
                trace_hook=lambda e, p: hooks.append((e, p.get("role"))))
        assert len(clf.training_log_.records) == 1
        assert ("epoch_start", "detector") in hooks
        assert ("epoch_start", "calibrator") in hooks

    def test_sgd_step_matches_finite_difference_gradient(self):
        # one sample, one step: delta = -lr * d(loss)/d(theta)
        X, y, kinds, pairs = toy_views(n_pairs=1, n_unchanged=1)
        X, y = X[:2], np.array([0, 1])
        kinds = np.array(["UNCHANGED", "VULNERABLE"], dtype=object)
        lr = 1e-3
        clf = PrototypeGameClassifier(**fit_kwargs(learning_rate=lr, max_epochs=1,
                                                   batch_size=2, game_off=True))
        ref = PrototypeGameClassifier(**fit_kwargs(learning_rate=0.0, max_epochs=1,
                                                   batch_size=2, game_off=True))
        ref.fit(X, y, set_kind=kinds)

        from vulngame.losses import LossConfig, total_loss

        cfg = LossConfig(ref.gamma, ref.reg_weight)

        def loss_at(b2):
            head = ref.detector_head_.copy()
            head.b2 = b2
            total = 0.0
            for xi, yi in zip(X, y):
                total += total_loss(ref._forward(xi), int(yi), head,
                                    ref.prototype_bank_, cfg)
            return total / len(y)

        h = 1e-6
        fd = np.zeros(2)
        base = ref.detector_head_.b2.copy()
        for j in range(2):
            up, down = base.copy(), base.copy()
            up[j] += h
            down[j] -= h
            fd[j] = (loss_at(up) - loss_at(down)) / (2 * h)

        clf.fit(X, y, set_kind=kinds)
        # both samples fit in one batch, so one SGD step on the mean loss
        delta = clf.detector_head_.b2 - base
        assert np.allclose(delta, -lr * fd, rtol=1e-4, atol=1e-8)

    def test_patience_stops_after_plateau(self):
        X, y, kinds, pairs = toy_views()
        X_val, y_val = X[:8], y[:8]
        clf = PrototypeGameClassifier(**fit_kwargs(learning_rate=0.0, max_epochs=24,
                                                   patience=5))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs, X_val=X_val, y_val=y_val)
        log = clf.training_log_
        assert log.stop_reason == "patience"
        assert log.best_epoch == 1
        assert len(log.records) == log.best_epoch + 5

    def test_never_exceeds_max_epochs(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=4, patience=50))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs, X_val=X[:8], y_val=y[:8])
        assert len(clf.training_log_.records) == 4
        assert clf.training_log_.stop_reason == "max_epochs"

    def test_scripted_plateau_via_lr_schedule(self):
        # learning for 3 rounds, then frozen: stop exactly patience rounds later
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(
            max_epochs=24, patience=5,
            lr_schedule=lambda epoch: 0.1 if epoch <= 3 else 0.0))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs, X_val=X, y_val=y)
        log = clf.training_log_
        assert log.stop_reason == "patience"
        assert len(log.records) == log.best_epoch + 5
        assert log.best_epoch <= 3

    def test_toy_corpus_reaches_high_f1(self):
        X, y, kinds, pairs = toy_views(n_pairs=20, n_unchanged=40, seed=5)
        X_val, y_val, kv, pv = toy_views(n_pairs=6, n_unchanged=12, seed=6)[:4]
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=24, learning_rate=0.2))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs, X_val=X_val, y_val=y_val)
        best = max(r.valid_f1 for r in clf.training_log_.records)
        assert best >= 0.95


class TestDeterminismAndPersistence:
    def test_bitwise_identical_logs_across_runs(self):
        X, y, kinds, pairs = toy_views()
        logs = []
        for _ in range(2):
            clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=5))
            clf.fit(X, y, set_kind=kinds, pair_id=pairs, X_val=X[:10], y_val=y[:10])
            logs.append(clf.training_log_.to_jsonl())
        assert logs[0] == logs[1]

    def test_training_log_jsonl_round_trip(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=3))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs)
        log = clf.training_log_
        assert TrainingLog.from_jsonl(log.to_jsonl()) == log

    def test_checkpoint_round_trip_preserves_predictions(self, tmp_path):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=3))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs)
        path = tmp_path / "model.npz"
        save_checkpoint(clf, path)
        loaded = load_checkpoint(path)
        assert np.array_equal(loaded.predict(X), clf.predict(X))
        assert np.array_equal(loaded.predict_proba(X), clf.predict_proba(X))
        assert loaded.get_params()["seed"] == clf.get_params()["seed"]


class TestAblationsAndPredict:
    def test_game_off_runs_detector_only(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(game_off=True, max_epochs=2))
        roles = set()
        clf.fit(X, y, set_kind=kinds, pair_id=pairs,
                trace_hook=lambda e, p: roles.add(p.get("role")))
        assert roles == {"detector"}
        assert all(r.loss_calibrator == 0.0 for r in clf.training_log_.records)

    def test_prototype_off_keeps_bank_frozen(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(prototype_off=True, max_epochs=3))
        banks = set()
        clf.fit(X, y, set_kind=kinds, pair_id=pairs,
                trace_hook=lambda e, p: banks.add(clf.prototype_bank_.tobytes()))
        assert len(banks) == 1

    def test_argmax_invariant_to_logit_shift(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=2))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs)
        before = clf.predict(X)
        clf.detector_head_.b2 = clf.detector_head_.b2 + 3.7  # same shift, both logits
        assert np.array_equal(clf.predict(X), before)

    def test_predict_deterministic_and_proba_normalized(self):
        X, y, kinds, pairs = toy_views()
        clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=2))
        clf.fit(X, y, set_kind=kinds, pair_id=pairs)
        assert np.array_equal(clf.predict(X), clf.predict(X))
        proba = clf.predict_proba(X)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)

    def test_decision_threshold_flag(self):
        X, y, kinds, pairs = toy_views()
        strict = PrototypeGameClassifier(**fit_kwargs(max_epochs=2, decision_threshold=0.99))
        strict.fit(X, y, set_kind=kinds, pair_id=pairs)
        lax = PrototypeGameClassifier(**fit_kwargs(max_epochs=2, decision_threshold=0.01))
        lax.fit(X, y, set_kind=kinds, pair_id=pairs)
        assert strict.predict(X).sum() <= lax.predict(X).sum()


def test_estimator_clones_and_refits():
    from sklearn.base import clone

    X, y, kinds, pairs = toy_views()
    original = PrototypeGameClassifier(**fit_kwargs(max_epochs=2))
    cloned = clone(original)
    assert cloned.get_params() == original.get_params()
    original.fit(X, y, set_kind=kinds, pair_id=pairs)
    cloned.fit(X, y, set_kind=kinds, pair_id=pairs)
    assert np.array_equal(cloned.predict(X), original.predict(X))


def test_balance_gap_warning_fires_above_threshold():
    from vulngame.game import BalanceGapWarning

    X, y, kinds, pairs = toy_views()
    clf = PrototypeGameClassifier(**fit_kwargs(max_epochs=4, learning_rate=0.3,
                                               gap_warn_threshold=1e-9))
    with pytest.warns(BalanceGapWarning):
        clf.fit(X, y, set_kind=kinds, pair_id=pairs)


def test_binary_f1_matches_sklearn():
    from sklearn.metrics import f1_score

    rng = np.random.default_rng(4)
    for _ in range(20):
        y_true = rng.integers(0, 2, size=30)
        y_pred = rng.integers(0, 2, size=30)
        assert binary_f1(y_true, y_pred) == pytest.approx(
            f1_score(y_true, y_pred, zero_division=0), abs=1e-12)
