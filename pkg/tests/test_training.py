import numpy as np
import pytest

from shiftclass.errors import DimensionError, DivergenceError, TrainingError
from shiftclass.model import model_to_dict
from shiftclass.training import (
    TrainConfig,
    features,
    hinge,
    objective,
    subgradients,
    train,
    train_multiclass,
)

from _oracles import central_fd_gradients, lp_separable
from conftest import make_blobs

BLOB_CFG = TrainConfig(atoms=4, epochs=200, lr=0.01, batch_size=60, v=1e-3, seed=0)


class TestHinge:
    @pytest.mark.parametrize("x,expected", [(0, 1), (1, 0), (-2, 3), (5, 0)])
    def test_values(self, x, expected):
        assert hinge(x) == expected


class TestFeatures:
    def test_thresholding(self):
        d = np.eye(3)
        np.testing.assert_array_equal(
            features(d, np.array([2.0, 0.5, -3.0]), 1.0), [1.0, 0.0, 0.0]
        )

    def test_boundary_maps_to_zero(self):
        d = np.eye(2)
        np.testing.assert_array_equal(features(d, np.array([1.0, 1.0]), 1.0), [0, 0])

    def test_alpha_zero_keeps_positives(self):
        d = np.eye(2)
        np.testing.assert_array_equal(features(d, np.array([-1.0, 1.0]), 0.0), [0, 1])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            features(np.ones((3, 2)), np.ones(4), 1.0)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            d = rng.standard_normal((6, 5))
            x = rng.standard_normal(6)
            assert np.all(features(d, x, rng.uniform(0, 2)) >= 0)


class TestObjective:
    def test_zero_model_counts_samples(self):
        x = np.random.default_rng(0).standard_normal((7, 3))
        y = np.array([1, -1, 1, 1, -1, -1, 1.0])
        assert objective(np.zeros((3, 2)), np.zeros(2), x, y, 0.0, 0.0) == 7.0

    def test_kappa_term_is_exact(self):
        rng = np.random.default_rng(1)
        d = rng.standard_normal((4, 3))
        w = rng.standard_normal(3)
        x = rng.standard_normal((10, 4))
        y = np.where(rng.random(10) > 0.5, 1.0, -1.0)
        kappa = 0.37
        diff = objective(d, w, x, y, 0.1, kappa) - objective(d, w, x, y, 0.1, 0.0)
        assert diff == pytest.approx(0.5 * kappa * np.sum(d * d), abs=0, rel=1e-15)

    def test_large_margin_sample_costs_nothing(self):
        d = np.array([[2.0]])
        w = np.array([5.0])
        x = np.array([[2.0]])  # z = 4, f = 3, score 15, margin 15
        assert objective(d, w, x, np.array([1.0]), 0.0, 0.0) == 0.0

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            objective(np.ones((2, 2)), np.ones(2), np.ones((1, 2)), np.array([2.0]),
                      0.0, 0.0)


class TestSubgradients:
    def test_inactive_batch(self):
        # every margin >= 1: only the regularizers remain
        d = np.array([[2.0]])
        w = np.array([5.0])
        x = np.array([[2.0]])
        y = np.array([1.0])
        grad_d, grad_w = subgradients(d, w, x, y, v=0.2, kappa=0.0)
        np.testing.assert_array_equal(grad_d, [[0.0]])
        np.testing.assert_allclose(grad_w, 0.2 * w)

    def test_kappa_difference_is_exactly_kappa_d(self):
        rng = np.random.default_rng(2)
        d = rng.standard_normal((5, 4))
        w = rng.standard_normal(4)
        x = rng.standard_normal((8, 5))
        y = np.where(rng.random(8) > 0.5, 1.0, -1.0)
        g1, _ = subgradients(d, w, x, y, 0.1, 0.25)
        g0, _ = subgradients(d, w, x, y, 0.1, 0.0)
        # machine precision: one rounding in the data-term + kappa*D sum
        np.testing.assert_allclose(g1 - g0, 0.25 * d, rtol=0, atol=1e-13)

    def _random_instance(self, rng, guard=1e-3, alpha=0.7):
        # resample until no margin or response sits within `guard` of a kink
        while True:
            d = rng.standard_normal((4, 3))
            w = rng.standard_normal(3)
            x = rng.standard_normal((5, 4))
            y = np.where(rng.random(5) > 0.5, 1.0, -1.0)
            z = x @ d
            f = np.maximum(z - alpha, 0.0)
            margins = y * (f @ w)
            if np.all(np.abs(margins - 1) > guard) and np.all(
                np.abs(z - alpha) > guard
            ):
                return d, w, x, y

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        alpha, v, kappa = 0.7, 0.05, 0.01
        worst = 0.0
        for _ in range(20):
            d, w, x, y = self._random_instance(rng, alpha=alpha)
            grad_d, grad_w = subgradients(d, w, x, y, v, kappa, alpha)
            fd_d, fd_w = central_fd_gradients(
                lambda dd, ww: objective(dd, ww, x, y, v, kappa, alpha), d, w
            )
            num = np.linalg.norm(fd_d - grad_d) + np.linalg.norm(fd_w - grad_w)
            den = max(np.linalg.norm(grad_d) + np.linalg.norm(grad_w), 1e-10)
            worst = max(worst, num / den)
        assert worst < 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            subgradients(np.ones((3, 2)), np.ones(4), np.ones((2, 3)),
                         np.array([1.0, -1.0]), 0.0, 0.0)


class TestTrainBinary:
    def setup_method(self):
        self.x, labels = make_blobs(3, [(3, 3), (-3, -3)])
        self.y = np.where(labels == 1, 1.0, -1.0)

    def test_blobs_are_lp_separable(self):
        assert lp_separable(self.x, self.y)

    def test_separable_blobs_reach_full_accuracy(self):
        model, trace = train(self.x, self.y, BLOB_CFG)
        assert 1.0 in trace.train_accuracy[:200]
        assert trace.train_accuracy[-1] == 1.0

    def test_deterministic(self):
        a, _ = train(self.x, self.y, BLOB_CFG)
        b, _ = train(self.x, self.y, BLOB_CFG)
        assert a == b
        assert model_to_dict(a) == model_to_dict(b)

    def test_kappa_shrinks_dictionary(self):
        norms = []
        for kappa in (0.0, 0.004, 0.02):
            cfg = TrainConfig(
                atoms=4, epochs=150, lr=0.01, batch_size=60, v=1e-3, seed=0,
                kappa=kappa,
            )
            _, trace = train(self.x, self.y, cfg)
            norms.append(trace.norm_d[-1])
        assert norms[0] >= norms[1] >= norms[2]
        assert norms[0] > norms[2]

    def test_single_class_rejected(self):
        with pytest.raises(TrainingError):
            train(self.x, np.ones(len(self.x)), BLOB_CFG)

    def test_divergence_reports_epoch(self):
        cfg = TrainConfig(atoms=4, epochs=50, lr=1e12, batch_size=60, seed=0)
        with pytest.raises(DivergenceError) as info:
            train(self.x, self.y, cfg)
        assert 0 <= info.value.epoch < 50

    def test_trace_lengths_match_epochs(self):
        _, trace = train(self.x, self.y, BLOB_CFG)
        for column in (trace.objective, trace.norm_d, trace.norm_w,
                       trace.train_accuracy):
            assert len(column) == BLOB_CFG.epochs

    def test_trace_csv_header(self):
        _, trace = train(self.x, self.y, BLOB_CFG)
        lines = trace.to_csv().splitlines()
        assert lines[0] == "epoch,objective,norm_D,norm_w,train_acc"
        assert len(lines) == BLOB_CFG.epochs + 1


class TestTrainMulticlass:
    def test_two_class_matches_binary_decision_rule(self):
        x, labels = make_blobs(7, [(3, 3), (-3, -3)])
        y = np.where(labels == 1, 1.0, -1.0)
        cfg = BLOB_CFG
        binary, _ = train(x, y, cfg)
        multi, _ = train_multiclass(x, labels, cfg)
        # one-vs-all with two classes trains w and -w columns
        w = multi.hyperplane.weights
        np.testing.assert_array_equal(w[:, 0], -w[:, 1])
        f_bin = features(binary.dictionary.entries, x, 1.0)
        bin_pred = np.where((f_bin @ binary.hyperplane.weights)[:, 0] > 0, 1, 0)
        f_multi = features(multi.dictionary.entries, x, 1.0)
        multi_pred = np.argmax(f_multi @ w, axis=1)
        np.testing.assert_array_equal(
            np.array(multi.labels)[multi_pred], np.array([0, 1])[bin_pred]
        )

    def test_three_class_blobs(self):
        x, labels = make_blobs(5, [(4, 0), (-2, 3.5), (-2, -3.5)], per_class=40)
        rng = np.random.default_rng(9)
        idx = rng.permutation(len(x))
        train_idx, holdout_idx = idx[:90], idx[90:]
        cfg = TrainConfig(atoms=6, epochs=300, lr=0.01, batch_size=30, v=1e-3, seed=1)
        model, _ = train_multiclass(x[train_idx], labels[train_idx], cfg)
        f = features(model.dictionary.entries, x[holdout_idx], 1.0)
        pred = np.array(model.labels)[np.argmax(f @ model.hyperplane.weights, axis=1)]
        assert np.mean(pred == labels[holdout_idx]) > 0.9

    def test_single_class_rejected(self):
        x, _ = make_blobs(0, [(1, 1)])
        with pytest.raises(TrainingError):
            train_multiclass(x, np.zeros(len(x)), BLOB_CFG)
