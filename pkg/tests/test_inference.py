import math

import mpmath
import numpy as np
import pytest

from shiftclass.compression import powerize_matrix
from shiftclass.data import NormalizedSample, RawSample
from shiftclass.errors import (
    AccumulatorOverflowError,
    DegenerateSampleError,
    ModelModeError,
    ScaleError,
)
from shiftclass.inference import (
    FixedPointVector,
    alpha_raw,
    audit_integer_kernel,
    classify_float,
    classify_shift,
    classify_shift_batch,
    default_fraction_bits,
    features_shift,
    float_scores_raw,
    powerized_real_view,
)
from shiftclass.model import (
    CompressionMeta,
    Dictionary,
    Hyperplane,
    ModelBundle,
    Pow2Matrix,
    SparsityParam,
    pow2_to_real,
)

from _oracles import exact_shift_features, mp_scores


def pow2_model(rng, n=6, atoms=4, cols=1, exp_lo=-8, exp_hi=3):
    d = Pow2Matrix.build(
        rng.integers(-1, 2, size=(n, atoms)),
        rng.integers(exp_lo, exp_hi + 1, size=(n, atoms)),
    )
    w = Pow2Matrix.build(
        rng.integers(-1, 2, size=(atoms, cols)),
        rng.integers(exp_lo, exp_hi + 1, size=(atoms, cols)),
    )
    labels = (-1, 1) if cols == 1 else tuple(range(cols))
    return ModelBundle(
        dictionary=d,
        hyperplane=w,
        sparsity=SparsityParam(mode="raw-norm"),
        meta=CompressionMeta(powerized=True),
        labels=labels,
    )


def unit_model(weights=(1.0,)):
    """One-atom model D = [1, 1]^T, alpha = 1."""
    return ModelBundle(
        dictionary=Dictionary(np.array([[1.0], [1.0]])),
        hyperplane=Hyperplane(np.array(weights)),
        sparsity=SparsityParam(value=1.0),
        labels=(-1, 1),
    )


class TestClassifyFloat:
    def test_zero_weights_give_negative_class(self):
        model = unit_model(weights=(0.0,))
        out = classify_float(model, NormalizedSample(np.array([0.6, 0.8]), 0))
        assert out.label == -1 and out.scores[0] == 0.0

    def test_worked_example(self):
        model = unit_model()
        out = classify_float(model, NormalizedSample(np.array([0.6, 0.8]), 1))
        assert out.scores[0] == pytest.approx(0.4)
        assert out.label == 1

    def test_all_features_thresholded_away(self):
        model = ModelBundle(
            dictionary=Dictionary(np.array([[0.1], [0.1]])),
            hyperplane=Hyperplane(np.array([3.0])),
        )
        out = classify_float(model, NormalizedSample(np.array([0.6, 0.8]), 0))
        assert out.label == -1 and out.scores[0] == 0.0

    def test_multiclass_tie_goes_to_lowest_index(self):
        model = ModelBundle(
            dictionary=Dictionary(np.array([[0.1], [0.1]])),
            hyperplane=Hyperplane(np.zeros((1, 3))),
            labels=(10, 20, 30),
        )
        out = classify_float(model, NormalizedSample(np.array([0.6, 0.8]), 0))
        assert out.label == 10

    def test_rejects_pow2_model(self):
        model = pow2_model(np.random.default_rng(0))
        with pytest.raises(ModelModeError):
            classify_float(model, NormalizedSample(np.array([1.0] + [0.0] * 5), 0))


class TestAlphaRaw:
    def test_exact_norm(self):
        assert alpha_raw(np.array([3, 4]), 0).scalar == 5

    def test_rounded_scaled_norm(self):
        # round(sqrt(2) * 8) = 11, checked against high-precision arithmetic
        out = alpha_raw(np.array([1, 1]), 3)
        with mpmath.workdps(40):
            expected = int(mpmath.nint(mpmath.sqrt(2) * 8))
        assert out.scalar == expected == 11
        assert out.fraction_bits == 3

    def test_zero_sample_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            alpha_raw(np.array([0, 0]), 0)

    def test_rounding_error_below_half_ulp(self):
        rng = np.random.default_rng(5)
        with mpmath.workdps(50):
            for _ in range(300):
                x = rng.integers(0, 256, size=rng.integers(2, 10))
                if not x.any():
                    continue
                f_bits = int(rng.integers(0, 12))
                got = alpha_raw(x, f_bits).scalar
                true = mpmath.sqrt(sum(int(v) ** 2 for v in x)) * 2**f_bits
                assert abs(got - true) <= 0.5


class TestFeaturesShift:
    def test_worked_example(self):
        d = Pow2Matrix.build([[1], [1]], [[0], [0]])
        alpha = alpha_raw(np.array([3, 4]), 0)
        out = features_shift(d, np.array([3, 4]), alpha, 0)
        assert out.integers == (2,)  # max(0, 3 + 4 - 5)

    def test_zero_column_gives_zero_feature(self):
        d = Pow2Matrix.build([[1, 0], [1, 0]], [[0, 0], [0, 0]])
        alpha = alpha_raw(np.array([3, 4]), 0)
        out = features_shift(d, np.array([3, 4]), alpha, 0)
        assert out.integers == (2, 0)

    def test_matches_exact_rational_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(2, 10))
            atoms = int(rng.integers(1, 6))
            d = Pow2Matrix.build(
                rng.integers(-1, 2, size=(n, atoms)),
                rng.integers(-8, 5, size=(n, atoms)),
            )
            x = rng.integers(0, 256, size=n)
            if not x.any():
                continue
            f_bits = default_fraction_bits(d)
            alpha = alpha_raw(x, f_bits)
            got = features_shift(d, x, alpha, f_bits)
            expected = exact_shift_features(
                d.signs, d.exponents, x, alpha.scalar, f_bits
            )
            assert list(got.integers) == expected

    def test_scale_error_when_f_too_small(self):
        d = Pow2Matrix.build([[1]], [[-5]])
        with pytest.raises(ScaleError):
            features_shift(d, np.array([1]), FixedPointVector((1,), 3), 3)

    def test_alpha_scale_mismatch(self):
        d = Pow2Matrix.build([[1]], [[0]])
        with pytest.raises(ScaleError):
            features_shift(d, np.array([1]), FixedPointVector((1,), 2), 3)

    def test_overflow_is_checked_not_silent(self):
        d = Pow2Matrix.build([[1], [1]], [[10], [10]])
        alpha = alpha_raw(np.array([255, 255]), 0)
        with pytest.raises(AccumulatorOverflowError):
            features_shift(d, np.array([255, 255]), alpha, 0, acc_width_bits=8)


class TestClassifyShift:
    def test_worked_example_agrees_with_float(self):
        real = unit_model()
        pow2 = ModelBundle(
            dictionary=Pow2Matrix.build([[1], [1]], [[0], [0]]),
            hyperplane=Pow2Matrix.build([[1]], [[0]]),
            sparsity=SparsityParam(mode="raw-norm"),
            meta=CompressionMeta(powerized=True),
            labels=(-1, 1),
        )
        shift = classify_shift(pow2, np.array([3, 4]), fraction_bits=0)
        assert shift.scores.integers == (2,)
        assert shift.label == 1
        flt = classify_float(real, NormalizedSample(np.array([0.6, 0.8]), 1))
        assert flt.label == shift.label
        assert flt.scores[0] == pytest.approx(0.4)

    def test_scaling_input_preserves_decision(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            model = pow2_model(rng)
            x = rng.integers(0, 64, size=6)
            if not x.any():
                continue
            base = classify_shift(model, x)
            for k in (2, 3, 10):
                assert classify_shift(model, k * x).label == base.label

    def test_requires_powerized_model(self):
        with pytest.raises(ModelModeError):
            classify_shift(unit_model(), np.array([3, 4]))

    def test_decisions_match_high_precision_oracle_outside_slack(self):
        rng = np.random.default_rng(21)
        checked = 0
        for _ in range(300):
            model = pow2_model(rng, exp_lo=-6, exp_hi=3)
            x = rng.integers(0, 256, size=6)
            if not x.any():
                continue
            f_bits = default_fraction_bits(model.dictionary)
            out = classify_shift(model, x, fraction_bits=f_bits)
            d_real, w_real = powerized_real_view(model)
            score = mp_scores(d_real, w_real, x, "norm")[0]
            slack = float(np.abs(w_real).sum()) * 2.0 ** (-f_bits)
            if abs(score) > slack:
                checked += 1
                assert out.label == (1 if score > 0 else -1)
        assert checked > 100

    def test_audit_counts_integer_checks(self):
        model = pow2_model(np.random.default_rng(3))
        x = np.array([3, 0, 7, 255, 1, 4])
        plain = classify_shift(model, x)
        with audit_integer_kernel() as audit:
            audited = classify_shift(model, x)
        assert audited == plain
        assert audit["checked"] > 0


class TestBatchPath:
    def _random_samples(self, rng, n, count):
        out = []
        for i in range(count):
            pix = rng.integers(0, 256, size=n)
            if not pix.any():
                pix[0] = 1
            out.append(RawSample(pix, label=int(rng.integers(0, 2)) * 2 - 1,
                                 source_id=str(i)))
        return out

    def test_batch_matches_per_sample_kernel(self):
        rng = np.random.default_rng(31)
        model = pow2_model(rng)
        samples = self._random_samples(rng, 6, 40)
        batch = classify_shift_batch(model, samples)
        for i, s in enumerate(samples):
            single = classify_shift(model, s)
            assert single.label == batch.labels[i]
            assert tuple(int(v) for v in np.atleast_1d(batch.scores[i])) == (
                single.scores.integers
            )

    def test_fallback_path_matches_reference(self):
        # huge exponents force the exact big-integer path
        rng = np.random.default_rng(33)
        d = Pow2Matrix.build(
            rng.integers(-1, 2, size=(4, 3)), rng.integers(30, 40, size=(4, 3))
        )
        w = Pow2Matrix.build(
            rng.integers(-1, 2, size=(3, 1)), rng.integers(30, 40, size=(3, 1))
        )
        model = ModelBundle(
            dictionary=d, hyperplane=w,
            sparsity=SparsityParam(mode="raw-norm"),
            meta=CompressionMeta(powerized=True), labels=(-1, 1),
        )
        samples = self._random_samples(rng, 4, 10)
        batch = classify_shift_batch(model, samples)
        assert batch.scores.dtype == object
        for i, s in enumerate(samples):
            single = classify_shift(model, s, check_widths=False)
            assert tuple(int(v) for v in np.atleast_1d(batch.scores[i])) == (
                single.scores.integers
            )

    def test_degenerate_policy(self):
        rng = np.random.default_rng(35)
        model = pow2_model(rng)
        zero = RawSample(np.zeros(6, dtype=np.int64), label=-1)
        with pytest.raises(DegenerateSampleError):
            classify_shift_batch(model, [zero])
        batch = classify_shift_batch(model, [zero], on_degenerate="zero-score")
        assert batch.degenerate == 1
        assert batch.labels[0] == -1  # zero scores decide the negative class

    def test_multiclass_argmax_lowest_tie(self):
        d = Pow2Matrix.build([[0, 0, 0]], [[0, 0, 0]])
        w = Pow2Matrix.build(np.zeros((3, 3), int), np.zeros((3, 3), int))
        model = ModelBundle(
            dictionary=d, hyperplane=w,
            sparsity=SparsityParam(mode="raw-norm"),
            meta=CompressionMeta(powerized=True), labels=(5, 6, 7),
        )
        out = classify_shift(model, np.array([9]))
        assert out.label == 5


class TestTheorem2Equivalence:
    """Normalized alpha=1 and raw-integer alpha=||x|| give the same decision,
    and the two scores differ exactly by the norm factor."""

    def test_equivalence_and_score_ratio(self):
        rng = np.random.default_rng(41)
        agree = checked = 0
        with mpmath.workdps(40):
            for _ in range(400):
                n = int(rng.integers(2, 8))
                atoms = int(rng.integers(1, 6))
                d = rng.standard_normal((n, atoms))
                w = rng.standard_normal((atoms, 1))
                x = rng.integers(0, 256, size=n)
                if not x.any():
                    continue
                norm = mpmath.sqrt(sum(int(v) ** 2 for v in x))
                x_unit = [mpmath.mpf(int(v)) / norm for v in x]
                feats_n = [
                    max(mpmath.mpf(0),
                        mpmath.fsum([mpmath.mpf(d[i, j]) * x_unit[i]
                                     for i in range(n)]) - 1)
                    for j in range(atoms)
                ]
                score_norm = mpmath.fsum(
                    [mpmath.mpf(w[j, 0]) * feats_n[j] for j in range(atoms)]
                )
                score_raw = mp_scores(d, w, x, "norm")[0]
                if min(abs(score_norm), abs(score_raw)) <= 1e-9:
                    continue
                checked += 1
                if (score_norm > 0) == (score_raw > 0):
                    agree += 1
                ratio = score_raw / score_norm
                assert abs(ratio - norm) / norm < 1e-9
        assert checked > 100
        assert agree == checked


class TestRealViewHelpers:
    def test_real_view_is_exact(self):
        model = pow2_model(np.random.default_rng(50))
        d_real, w_real = powerized_real_view(model)
        np.testing.assert_array_equal(d_real, pow2_to_real(model.dictionary))
        np.testing.assert_array_equal(w_real, pow2_to_real(model.hyperplane))

    def test_float_scores_raw_uses_norm_threshold(self):
        d = np.array([[1.0], [1.0]])
        w = np.array([[1.0]])
        scores = float_scores_raw(d, w, np.array([3, 4]))
        assert scores[0] == pytest.approx(2.0)  # max(0, 7 - 5) * 1
