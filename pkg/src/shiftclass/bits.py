"""Storage and compute bit-width analysis for powerized models.

"Number of bits" means the signed fixed-point accumulator width at the
kernel's scale F: 1 sign bit plus enough magnitude bits for the worst value
the stage can hold.  The static count bounds any input in [0, input_max]^n
(partial sums included, since a hardware accumulator holds intermediate
states); the empirical count measures the maximum actually reached on a
dataset in the kernel's fixed summation order, and can never exceed it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ScaleError
from .inference import (
    _w_fraction_bits,
    default_fraction_bits,
    max_abs_partial_sums,
)
from .model import ModelBundle, Pow2Matrix


def _check_scale(d: Pow2Matrix, fraction_bits: int) -> None:
    if fraction_bits < 0:
        raise ScaleError("fraction_bits must be nonnegative")
    if d.emin is not None and fraction_bits < -d.emin:
        raise ScaleError(
            f"F={fraction_bits} too small: matrix needs at least {-d.emin}"
        )


def _width(maxabs: int) -> int:
    """Signed width 1 + ceil(log2(maxabs + 1)), exactly in integer arithmetic."""
    return 1 + maxabs.bit_length()


def storage_bits(d: Pow2Matrix, fraction_bits: int) -> int:
    """Signed fixed-point width at scale F that can hold every entry of d."""
    _check_scale(d, fraction_bits)
    if d.emax is None:
        return 1
    return _width(1 << (d.emax + fraction_bits))


def static_compute_bits(d: Pow2Matrix, input_max: int, fraction_bits: int) -> int:
    """Accumulator width sufficient for D^T x under any x in [0, input_max]^n."""
    if input_max < 1:
        raise ValueError("input_max must be >= 1")
    _check_scale(d, fraction_bits)
    if d.emax is None:
        return 1
    bound = d.shape[0] * input_max * (1 << (d.emax + fraction_bits))
    return _width(bound)


def empirical_compute_bits(d: Pow2Matrix, samples, fraction_bits: int) -> int:
    """Width for the largest accumulator value actually reached on `samples`,
    measured by instrumented kernel runs (deterministic: fixed order)."""
    _check_scale(d, fraction_bits)
    return _width(max_abs_partial_sums(d, samples, fraction_bits))


def alpha_stage_bits(n: int, input_max: int, fraction_bits: int) -> int:
    """Width of the rounded norm threshold: ceil(sqrt(n)·input_max) << F."""
    bound = (math.isqrt(n * input_max * input_max) + 1) << fraction_bits
    return _width(bound)


def score_stage_bits(
    w: Pow2Matrix, feature_max: int, w_fraction_bits: int
) -> int:
    if w.emax is None:
        return 1
    bound = w.shape[0] * feature_max * (1 << max(0, w.emax + w_fraction_bits))
    return _width(bound)


@dataclass(frozen=True)
class BitReport:
    """Bit-width summary for one (model, dataset) pair."""

    storage_bits_d: int
    static_compute_bits: int
    empirical_compute_bits: int | None
    fraction_bits: int
    input_max: int
    stages: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "storage_bits_D": self.storage_bits_d,
                "static_compute_bits": self.static_compute_bits,
                "empirical_compute_bits": self.empirical_compute_bits,
                "F": self.fraction_bits,
                "input_max": self.input_max,
                "stages": self.stages,
            }
        )

    def csv_row(self, model_id: str, dataset_id: str) -> str:
        emp = "" if self.empirical_compute_bits is None else self.empirical_compute_bits
        return (
            f"{model_id},{dataset_id},{self.storage_bits_d},"
            f"{self.static_compute_bits},{emp},{self.fraction_bits},{self.input_max}"
        )


def analyze(
    model: ModelBundle,
    input_max: int = 255,
    fraction_bits: int | None = None,
    samples=None,
) -> BitReport:
    """Full per-stage report for a powerized model."""
    d = model.dictionary
    w = model.hyperplane
    if not isinstance(d, Pow2Matrix) or not isinstance(w, Pow2Matrix):
        raise ScaleError("bit analysis requires a powerized model")
    f_bits = default_fraction_bits(d) if fraction_bits is None else fraction_bits
    storage = storage_bits(d, f_bits)
    static = static_compute_bits(d, input_max, f_bits)
    empirical = (
        None if samples is None else empirical_compute_bits(d, samples, f_bits)
    )
    n = d.shape[0]
    feature_max = 0 if d.emax is None else n * input_max * (1 << (d.emax + f_bits))
    stages = {
        "accumulate": static,
        "alpha": alpha_stage_bits(n, input_max, f_bits),
        "feature": static,
        "score": score_stage_bits(w, feature_max, _w_fraction_bits(w)),
    }
    return BitReport(storage, static, empirical, f_bits, input_max, stages)
