"""Classification paths.

Float path: f = max(0, D^T x - alpha) on unit-norm samples, class from the
strict sign of w^T f (binary) or the argmax of per-class scores.

Integer path: for a powerized model, the same decision is computed from the
raw integer pixels using only integer shifts, adds and comparisons.  The
threshold becomes the sample norm (alpha = ||x_int||_2, carried as a rounded
fixed-point integer at scale F), and each dictionary product is a left shift
x << (e + F).  Apart from the single rounding in alpha, the kernel is exact
dyadic-rational arithmetic: its integers are the true values scaled by 2^F
(features) and 2^(F + F_w) (scores).

The per-sample kernel is pure Python integer arithmetic and is the auditable
reference.  The batch path reproduces it bit-for-bit with int64 matrix
products after proving statically that no intermediate can exceed int64 (an
integer multiply by 2^k is the same value a shift produces); it falls back to
the reference kernel otherwise.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .data import NormalizedSample, RawSample, pixel_matrix
from .errors import (
    AccumulatorOverflowError,
    DegenerateSampleError,
    DimensionError,
    ModelModeError,
    ScaleError,
)
from .model import (
    MODE_FIXED,
    MODE_RAW_NORM,
    Dictionary,
    Hyperplane,
    ModelBundle,
    Pow2Matrix,
    pow2_to_real,
)
from .training import features

_INT64_SAFE_BITS = 62

# Audit hook: when enabled, every value crossing a kernel stage boundary is
# type-checked as a Python int and counted.  Any float operation on the value
# path would propagate a float to a boundary and fail the check.
_AUDIT = {"active": False, "checked": 0}


@contextmanager
def audit_integer_kernel():
    """Route classifications through the reference kernel with int-type checks
    at every stage boundary; yields the audit counter dict."""
    _AUDIT["active"] = True
    _AUDIT["checked"] = 0
    try:
        yield _AUDIT
    finally:
        _AUDIT["active"] = False


def _audit_check(values) -> None:
    if _AUDIT["active"]:
        for v in values:
            if type(v) is not int:
                raise TypeError(
                    f"non-integer value {v!r} of type {type(v).__name__} in kernel"
                )
        _AUDIT["checked"] += len(values)


@dataclass(frozen=True)
class FixedPointVector:
    """Signed integers sharing one scale: value_i = integers[i] * 2^-F."""

    integers: tuple[int, ...]
    fraction_bits: int

    def __post_init__(self):
        object.__setattr__(self, "integers", tuple(int(v) for v in self.integers))
        if self.fraction_bits < 0:
            raise ScaleError("fraction_bits must be nonnegative")

    def __len__(self):
        return len(self.integers)

    @property
    def scalar(self) -> int:
        if len(self.integers) != 1:
            raise ValueError("not a scalar fixed-point value")
        return self.integers[0]

    def to_floats(self) -> np.ndarray:
        """Float view for reporting only; never used inside the kernel."""
        return np.array(
            [math.ldexp(v, -self.fraction_bits) for v in self.integers]
        )


@dataclass(frozen=True)
class FloatDecision:
    label: int
    scores: np.ndarray


@dataclass(frozen=True)
class ShiftDecision:
    label: int
    scores: FixedPointVector
    features: FixedPointVector


def _require_real(model: ModelBundle) -> tuple[np.ndarray, np.ndarray]:
    if model.is_powerized or not isinstance(model.dictionary, Dictionary):
        raise ModelModeError("float classification requires a real-valued model")
    return model.dictionary.entries, model.hyperplane.weights


def _decide(labels: tuple, scores: np.ndarray) -> int:
    if scores.shape[-1] == 1:
        return labels[1] if scores[0] > 0 else labels[0]
    return labels[int(np.argmax(scores))]  # ties go to the lowest class index


def classify_float(model: ModelBundle, sample: NormalizedSample) -> FloatDecision:
    """Reference float decision for a real-valued, fixed-threshold model."""
    d, w = _require_real(model)
    if model.sparsity.mode != MODE_FIXED:
        raise ModelModeError("classify_float requires fixed-normalized threshold mode")
    f = features(d, sample.values, model.sparsity.value)
    scores = f @ w
    return FloatDecision(_decide(model.labels, scores), scores)


def classify_float_batch(model: ModelBundle, samples) -> tuple[np.ndarray, np.ndarray]:
    """(predicted labels, scores) for a list of normalized samples."""
    d, w = _require_real(model)
    if model.sparsity.mode != MODE_FIXED:
        raise ModelModeError("classify_float requires fixed-normalized threshold mode")
    x = np.stack([s.values for s in samples])
    scores = features(d, x, model.sparsity.value) @ w
    return _labels_from_scores(model.labels, scores), scores


def _labels_from_scores(labels: tuple, scores: np.ndarray) -> np.ndarray:
    label_arr = np.array(labels)
    if scores.shape[1] == 1:
        return np.where(scores[:, 0] > 0, label_arr[1], label_arr[0])
    return label_arr[np.argmax(scores, axis=1)]


def powerized_real_view(model: ModelBundle) -> tuple[np.ndarray, np.ndarray]:
    """Exact real matrices of a powerized model (for float-domain oracles)."""
    if not model.is_powerized:
        raise ModelModeError("model is not powerized")
    return pow2_to_real(model.dictionary), pow2_to_real(model.hyperplane)


def float_scores_raw(d: np.ndarray, w: np.ndarray, x_int: np.ndarray) -> np.ndarray:
    """Float evaluation of max(0, D^T x_int - ||x_int||) followed by w; the
    high-precision-side oracle the integer kernel is compared against."""
    x = np.asarray(x_int, dtype=np.float64)
    alpha = np.linalg.norm(x, axis=-1, keepdims=x.ndim > 1)
    return np.maximum(x @ d - alpha, 0.0) @ w


# ---------------------------------------------------------------------------
# Integer kernel
# ---------------------------------------------------------------------------


def _pixels_of(x) -> np.ndarray:
    if isinstance(x, RawSample):
        return x.pixels
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueError("raw sample pixels must be integers")
    return x


def alpha_raw(x_int, fraction_bits: int) -> FixedPointVector:
    """round(||x_int||_2 * 2^F) computed in pure integer arithmetic.

    isqrt of sum(p^2) << 2F gives the floor; the remainder decides the
    round-to-nearest correction (an exact half is impossible for integers).
    """
    pixels = _pixels_of(x_int)
    if fraction_bits < 0:
        raise ScaleError("fraction_bits must be nonnegative")
    total = 0
    for p in pixels.tolist():
        total += p * p
    if total == 0:
        raise DegenerateSampleError("all-zero sample has no usable norm")
    scaled = total << (2 * fraction_bits)
    root = math.isqrt(scaled)
    if scaled - root * root > root:
        root += 1
    _audit_check((root,))
    return FixedPointVector((root,), fraction_bits)


class _ShiftKernel:
    """Per-model compiled form of the reference kernel.

    For each atom, a list of (pixel index, negative?, shift amount); summation
    order is fixed (ascending pixel index), which pins down the partial-sum
    maxima that the empirical bit analysis instruments.
    """

    def __init__(self, d: Pow2Matrix, fraction_bits: int):
        if d.emin is not None and fraction_bits < -d.emin:
            raise ScaleError(
                f"F={fraction_bits} too small: dictionary needs at least {-d.emin}"
            )
        self.fraction_bits = fraction_bits
        self.n, self.atoms = d.shape
        signs = d.signs
        exps = d.exponents
        self.columns = []
        for j in range(self.atoms):
            col = []
            for i in range(self.n):
                s = int(signs[i, j])
                if s != 0:
                    col.append((i, s < 0, int(exps[i, j]) + fraction_bits))
            self.columns.append(col)

    def accumulate(self, x: list[int], limit: int | None, watch=None) -> list[int]:
        """Raw accumulators sum_i sign * (x_i << (e + F)) per atom."""
        out = []
        for col in self.columns:
            acc = 0
            for i, neg, shift in col:
                term = x[i] << shift
                acc = acc - term if neg else acc + term
                if limit is not None and (acc > limit or -acc > limit):
                    raise AccumulatorOverflowError(
                        f"accumulator {acc} exceeds declared width"
                    )
                if watch is not None:
                    watch.append(acc if acc >= 0 else -acc)
            out.append(acc)
        _audit_check(out)
        return out


def features_shift(
    d: Pow2Matrix,
    x_q,
    alpha_fp: FixedPointVector,
    fraction_bits: int,
    acc_width_bits: int | None = None,
) -> FixedPointVector:
    """Integer feature vector max(0, sum_i sign*(x_i << (e+F)) - alpha_int),
    exact at scale F (no rounding happens inside the kernel).

    When `acc_width_bits` is given, every accumulator partial sum is checked
    against that signed width and overflow raises instead of wrapping.
    """
    pixels = _pixels_of(x_q)
    if alpha_fp.fraction_bits != fraction_bits:
        raise ScaleError(
            f"alpha is at scale {alpha_fp.fraction_bits}, kernel at {fraction_bits}"
        )
    if pixels.size != d.shape[0]:
        raise DimensionError(
            f"sample dimension {pixels.size} != dictionary rows {d.shape[0]}"
        )
    kernel = _ShiftKernel(d, fraction_bits)
    limit = None if acc_width_bits is None else (1 << (acc_width_bits - 1)) - 1
    alpha_int = alpha_fp.scalar
    x_list = [int(p) for p in pixels.tolist()]
    accs = kernel.accumulate(x_list, limit)
    feats = [acc - alpha_int if acc > alpha_int else 0 for acc in accs]
    _audit_check(feats)
    return FixedPointVector(tuple(feats), fraction_bits)


def _score_pass(
    w: Pow2Matrix, feats: list[int], w_fraction_bits: int, limit: int | None
) -> list[int]:
    atoms, cols = w.shape
    signs = w.signs
    exps = w.exponents
    scores = []
    for c in range(cols):
        acc = 0
        for j in range(atoms):
            s = int(signs[j, c])
            if s != 0:
                term = feats[j] << (int(exps[j, c]) + w_fraction_bits)
                acc = acc - term if s < 0 else acc + term
                if limit is not None and (acc > limit or -acc > limit):
                    raise AccumulatorOverflowError(
                        f"score accumulator {acc} exceeds declared width"
                    )
        scores.append(acc)
    _audit_check(scores)
    return scores


def _require_pow2(model: ModelBundle) -> tuple[Pow2Matrix, Pow2Matrix]:
    if not model.is_powerized:
        raise ModelModeError("shift classification requires a powerized model")
    if model.sparsity.mode != MODE_RAW_NORM:
        raise ModelModeError("shift classification requires raw-norm threshold mode")
    d, w = model.dictionary, model.hyperplane
    if not isinstance(w, Pow2Matrix):
        raise ModelModeError("powerized model must carry a powerized hyperplane")
    return d, w


def default_fraction_bits(d: Pow2Matrix, minimum: int = 8) -> int:
    """F = max(minimum, -emin): every dictionary shift is nonnegative and the
    rounded threshold keeps at least `minimum` fraction bits."""
    need = -d.emin if d.emin is not None and d.emin < 0 else 0
    return max(minimum, need)


def _w_fraction_bits(w: Pow2Matrix) -> int:
    return -w.emin if w.emin is not None and w.emin < 0 else 0


def classify_shift(
    model: ModelBundle,
    x_int,
    fraction_bits: int | None = None,
    check_widths: bool = True,
) -> ShiftDecision:
    """Integer-only decision for a powerized model on a raw integer sample.

    Composes the rounded norm threshold, the shift-add feature pass, and a
    second shift-add pass through the powerized hyperplane (score scale
    F + F_w).  No floating-point operation occurs anywhere on this path.
    """
    d, w = _require_pow2(model)
    pixels = _pixels_of(x_int)
    f_bits = default_fraction_bits(d) if fraction_bits is None else fraction_bits
    input_max = x_int.pixel_max if isinstance(x_int, RawSample) else None

    acc_width = alpha_width = score_width = None
    if check_widths:
        if input_max is None:
            input_max = max(1, int(pixels.max(initial=0)))
        acc_width, alpha_width, score_width = _stage_widths(d, w, input_max, f_bits)

    alpha = alpha_raw(pixels, f_bits)
    if alpha_width is not None and alpha.scalar > (1 << (alpha_width - 1)) - 1:
        raise AccumulatorOverflowError("alpha exceeds declared width")
    feats = features_shift(d, pixels, alpha, f_bits, acc_width_bits=acc_width)
    w_bits = _w_fraction_bits(w)
    limit = None if score_width is None else (1 << (score_width - 1)) - 1
    scores = _score_pass(w, list(feats.integers), w_bits, limit)
    label = _decide_int(model.labels, scores)
    return ShiftDecision(
        label, FixedPointVector(tuple(scores), f_bits + w_bits), feats
    )


def _decide_int(labels: tuple, scores: list[int]) -> int:
    if len(scores) == 1:
        return labels[1] if scores[0] > 0 else labels[0]
    best = 0
    for c in range(1, len(scores)):
        if scores[c] > scores[best]:
            best = c
    return labels[best]


def _bits_for(maxabs: int) -> int:
    return 1 + maxabs.bit_length()


def _stage_widths(
    d: Pow2Matrix, w: Pow2Matrix, input_max: int, f_bits: int
) -> tuple[int, int, int]:
    """Signed widths sufficient for the three kernel stages under any input
    in [0, input_max]^n (worst case, partial sums included)."""
    n = d.shape[0]
    acc_max = (
        0 if d.emax is None else n * input_max * (1 << max(0, d.emax + f_bits))
    )
    alpha_max = math.isqrt(n * input_max * input_max) + 1
    alpha_max <<= f_bits
    feat_max = acc_max
    w_bits = _w_fraction_bits(w)
    score_max = (
        0
        if w.emax is None
        else w.shape[0] * feat_max * (1 << max(0, w.emax + w_bits))
    )
    return _bits_for(acc_max), _bits_for(alpha_max), _bits_for(score_max)


def max_abs_partial_sums(d: Pow2Matrix, samples, fraction_bits: int) -> int:
    """Largest |partial sum| the feature accumulator reaches over the given
    samples, in the kernel's fixed summation order (for empirical bit counts)."""
    kernel = _ShiftKernel(d, fraction_bits)
    worst = 0
    watch: list[int] = []
    for s in samples:
        pixels = _pixels_of(s)
        watch.clear()
        kernel.accumulate([int(p) for p in pixels.tolist()], None, watch=watch)
        if watch:
            worst = max(worst, max(watch))
    return worst


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftBatchResult:
    """Ordered per-sample outputs of a batch shift evaluation."""

    labels: np.ndarray           # predicted class labels
    scores: np.ndarray           # (m, C) integers at scale F + F_w
    feature_zero_fraction: float # mean fraction of zero feature entries
    fraction_bits: int
    degenerate: int              # all-zero samples decided by the zero-score rule


def _alpha_ints(x: np.ndarray, f_bits: int, on_degenerate: str) -> tuple[list[int], int]:
    alphas = []
    degenerate = 0
    for row in x:
        total = int(row @ row)
        if total == 0:
            if on_degenerate == "error":
                raise DegenerateSampleError("all-zero sample has no usable norm")
            degenerate += 1
            alphas.append(0)
            continue
        scaled = total << (2 * f_bits)
        root = math.isqrt(scaled)
        if scaled - root * root > root:
            root += 1
        alphas.append(root)
    return alphas, degenerate


def classify_shift_batch(
    model: ModelBundle,
    samples,
    fraction_bits: int | None = None,
    on_degenerate: str = "error",
) -> ShiftBatchResult:
    """Batch shift classification, bit-identical to classify_shift per sample.

    `on_degenerate="zero-score"` extends the kernel to all-zero samples with
    threshold 0, yielding zero scores and the deterministic tie decision
    (evaluation harnesses use this; the per-sample contract is an error).
    """
    d, w = _require_pow2(model)
    f_bits = default_fraction_bits(d) if fraction_bits is None else fraction_bits
    if d.emin is not None and f_bits < -d.emin:
        raise ScaleError(f"F={f_bits} too small for dictionary emin={d.emin}")
    x = pixel_matrix(samples)
    if x.shape[1] != d.shape[0]:
        raise DimensionError("sample dimension != dictionary rows")
    input_max = max(1, max(int(s.pixel_max) for s in samples))
    w_bits = _w_fraction_bits(w)
    acc_width, alpha_width, score_width = _stage_widths(d, w, input_max, f_bits)

    alphas, degenerate = _alpha_ints(x, f_bits, on_degenerate)
    use_fast = (
        not _AUDIT["active"]
        and max(acc_width, alpha_width, score_width) <= _INT64_SAFE_BITS
    )
    if use_fast:
        d_int = d.signs.astype(np.int64) << (d.exponents + f_bits)
        acc = x @ d_int
        feats = np.maximum(acc - np.asarray(alphas, dtype=np.int64)[:, None], 0)
        w_int = w.signs.astype(np.int64) << (w.exponents + w_bits)
        scores = feats @ w_int
    else:
        kernel = _ShiftKernel(d, f_bits)
        feats_rows, score_rows = [], []
        for row, alpha_int in zip(x, alphas):
            accs = kernel.accumulate([int(p) for p in row.tolist()], None)
            f_row = [a - alpha_int if a > alpha_int else 0 for a in accs]
            _audit_check(f_row)
            feats_rows.append(f_row)
            score_rows.append(_score_pass(w, f_row, w_bits, None))
        feats = np.array(feats_rows, dtype=object)
        scores = np.array(score_rows, dtype=object)

    zero_fraction = float(np.mean(np.asarray(feats == 0, dtype=np.float64)))
    if scores.dtype == object:
        pred = np.array(
            [_decide_int(model.labels, [int(v) for v in row]) for row in scores]
        )
    else:
        label_arr = np.array(model.labels)
        if scores.shape[1] == 1:
            pred = np.where(scores[:, 0] > 0, label_arr[1], label_arr[0])
        else:
            pred = label_arr[np.argmax(scores, axis=1)]
    return ShiftBatchResult(pred, scores, zero_fraction, f_bits + w_bits, degenerate)


def evaluate_shift(
    model: ModelBundle, samples, fraction_bits: int | None = None
) -> tuple[float, ShiftBatchResult]:
    """(accuracy, batch result) on raw samples; all-zero samples fall back to
    the zero-score decision rather than erroring."""
    result = classify_shift_batch(
        model, samples, fraction_bits, on_degenerate="zero-score"
    )
    truth = np.array([s.label for s in samples])
    return float(np.mean(result.labels == truth)), result


def evaluate_float(model: ModelBundle, samples) -> float:
    labels, _ = classify_float_batch(model, samples)
    truth = np.array([s.label for s in samples])
    return float(np.mean(labels == truth))
