"""Post-training compression: power-of-two discretization, hard-threshold
sparsification of the dictionary, and input quantization.

The discretization ("powerize") maps each coefficient to the nearest power of
two in absolute distance, which bounds the relative error by 1/3: within
[2^n, 2^{n+1}] the worst point is the midpoint 3·2^{n-1}, whose distance to
either neighbour is 2^{n-1}, exactly a third of its magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import RawSample
from .errors import EmptyCandidatesError, ModelModeError
from .model import (
    MODE_RAW_NORM,
    CompressionMeta,
    Dictionary,
    Hyperplane,
    ModelBundle,
    Pow2Entry,
    Pow2Matrix,
    SparsityParam,
)


@dataclass(frozen=True)
class QuantizationSpec:
    """Requantization of raw integer pixels to `quanta` steps.

    A pixel p in [0, pixel_max] maps to round(p · quanta / pixel_max), so the
    output range is the q+1 integers [0, quanta].
    """

    quanta: int
    pixel_max: int = 255

    def __post_init__(self):
        if not 1 <= self.quanta <= self.pixel_max:
            raise ValueError(
                f"quanta must be in [1, pixel_max={self.pixel_max}], got {self.quanta}"
            )


@dataclass(frozen=True)
class ThresholdCandidates:
    """Strictly increasing positive reals, each an exact power of two."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("candidates must be strictly increasing")
        for v in vals:
            m, _ = math.frexp(v)
            if v <= 0 or m != 0.5:
                raise ValueError(f"candidate {v} is not a positive power of two")
        object.__setattr__(self, "values", vals)

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


def powerize_scalar(x: float) -> Pow2Entry:
    """Nearest power of two to |x| (absolute distance), keeping x's sign.

    Zero maps to the zero entry; ties at the midpoint go to the larger power.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot powerize non-finite value {x}")
    if x == 0.0:
        return Pow2Entry(0, 0)
    mant, exp = math.frexp(abs(x))  # abs(x) = mant * 2^exp, mant in [0.5, 1)
    exponent = exp - 1 + (mant >= 0.75)
    return Pow2Entry(1 if x > 0 else -1, exponent)


def _powerize_arrays(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("cannot powerize a matrix with non-finite entries")
    mant, exp = np.frexp(m)
    signs = np.sign(m).astype(np.int8)
    exponents = np.where(
        signs != 0, exp.astype(np.int64) - 1 + (np.abs(mant) >= 0.75), 0
    )
    return signs, exponents


def powerize_matrix(m: np.ndarray) -> Pow2Matrix:
    """Elementwise powerize with fresh exponent caches."""
    signs, exponents = _powerize_arrays(np.atleast_2d(m))
    return Pow2Matrix.build(signs, exponents)


def powerize_values(m: np.ndarray) -> np.ndarray:
    """Powerized values of an arbitrary-shape array, as floats (test helper
    for the error-bound properties; the model path goes through Pow2Matrix)."""
    signs, exponents = _powerize_arrays(np.asarray(m, dtype=np.float64))
    return np.where(signs != 0, signs * np.ldexp(1.0, exponents.astype(np.int32)), 0.0)


def hard_threshold(d: Pow2Matrix, t: float) -> Pow2Matrix:
    """Zero out entries with |value| strictly below t; recompute caches."""
    if not t > 0:
        raise ValueError("threshold must be positive")
    magnitudes = np.ldexp(1.0, d.exponents.astype(np.int32))
    keep = (d.signs != 0) & (magnitudes >= t)
    return Pow2Matrix.build(
        np.where(keep, d.signs, 0), np.where(keep, d.exponents, 0)
    )


def threshold_candidates(d: Pow2Matrix) -> ThresholdCandidates:
    """The distinct absolute values 2^e present in a powerized matrix."""
    if d.nnz == 0:
        raise EmptyCandidatesError("all-zero matrix has no threshold candidates")
    exps = np.unique(d.exponents[d.signs != 0])
    return ThresholdCandidates(tuple(float(np.ldexp(1.0, int(e))) for e in exps))


def quantize_sample(s: RawSample, spec: QuantizationSpec) -> RawSample:
    """Requantize pixels to [0, quanta]; label and source id are preserved.

    Rounding is half away from zero, done in exact integer arithmetic.
    """
    p = s.pixels.astype(np.int64)
    q = (2 * p * spec.quanta + spec.pixel_max) // (2 * spec.pixel_max)
    return RawSample(
        pixels=q, label=s.label, source_id=s.source_id, pixel_max=spec.quanta
    )


def quantize_matrix(pixels: np.ndarray, spec: QuantizationSpec) -> np.ndarray:
    """Batch form of quantize_sample on a stacked integer pixel matrix."""
    p = np.asarray(pixels, dtype=np.int64)
    return (2 * p * spec.quanta + spec.pixel_max) // (2 * spec.pixel_max)


def compress_model(
    model: ModelBundle, t: float, spec: QuantizationSpec | None = None
) -> ModelBundle:
    """Powerize dictionary and hyperplane, hard-threshold the dictionary at t,
    and switch the threshold mode to raw-norm for integer inference.

    The input must be real-valued: compressing twice is a precondition
    violation, not an idempotent no-op.
    """
    if model.is_powerized:
        raise ModelModeError("compress_model requires a real-valued model")
    if not isinstance(model.dictionary, Dictionary) or not isinstance(
        model.hyperplane, Hyperplane
    ):
        raise ModelModeError("compress_model requires Dictionary/Hyperplane inputs")
    d_pow = hard_threshold(powerize_matrix(model.dictionary.entries), t)
    w_pow = powerize_matrix(model.hyperplane.weights)
    meta = replace(
        model.meta,
        z_threshold=float(t),
        quanta=None if spec is None else spec.quanta,
        powerized=True,
    )
    return ModelBundle(
        dictionary=d_pow,
        hyperplane=w_pow,
        sparsity=SparsityParam(mode=MODE_RAW_NORM),
        meta=meta,
        labels=model.labels,
    )
