"""Robustness and trade-off studies.

Every sweep follows the same repeated-training protocol: several classifier
pairs trained on freshly drawn training sets, evaluated on one held-out test
set, reported as mean and sample standard deviation per grid point.  All
randomness is derived from one master seed, so sweeps are reproducible and
grid points can be computed in parallel without changing the result.

Reference points are exact: the perturbation sweep at d = 0, the threshold
sweep at t = 0, and the quantization sweep at q = pixel_max all reproduce the
unmodified model's accuracy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .bits import storage_bits
from .compression import (
    QuantizationSpec,
    hard_threshold,
    powerize_matrix,
    quantize_sample,
)
from .data import (
    disjoint_texture_split,
    extract_patches,
    normalize_batch,
    normalize_vector,
)
from .errors import DegenerateSampleError
from .inference import evaluate_float, evaluate_shift
from .model import Dictionary, Hyperplane, ModelBundle, pow2_to_real
from .seeding import derive_rng, derive_seed
from .selection import GridSpec, run_selection, train_for_samples
from .training import TrainConfig, features

DEFAULT_D_VALUES = tuple(round(0.02 * k, 2) for k in range(1, 51))
DEFAULT_THRESHOLDS = tuple(np.linspace(0.0, 4.0, 14))
DEFAULT_QUANTA_SWEEP = tuple(range(1, 16))
FLOAT_BASELINE_BITS = 64


@dataclass(frozen=True)
class SweepResult:
    """One curve: grid values, mean/std accuracy, optional bit counts."""

    x: tuple[float, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    repeats: int
    bits: tuple[float, ...] | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["x", "mean", "std", "bits"])
        for i, x in enumerate(self.x):
            writer.writerow(
                [x, self.mean[i], self.std[i],
                 "" if self.bits is None else self.bits[i]]
            )
        return buf.getvalue()


def _mean_std(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def perturb_model(
    d: np.ndarray, w: np.ndarray, displacement: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Multiply every entry of D and w by an independent draw from the open
    interval (1 - d, 1 + d); signs are always preserved since d <= 1."""
    if not 0 < displacement <= 1:
        raise ValueError("displacement must be in (0, 1]")

    def scale(m: np.ndarray) -> np.ndarray:
        u = rng.uniform(1.0 - displacement, 1.0 + displacement, size=m.shape)
        while np.any(u == 1.0 - displacement):  # open interval
            redo = u == 1.0 - displacement
            u[redo] = rng.uniform(1.0 - displacement, 1.0 + displacement, redo.sum())
        return m * u

    return scale(np.asarray(d, dtype=np.float64)), scale(np.asarray(w, dtype=np.float64))


def _float_accuracy(d: np.ndarray, w: np.ndarray, model: ModelBundle, test_norm) -> float:
    bundle = ModelBundle(
        Dictionary(d), Hyperplane(w), model.sparsity, labels=model.labels
    )
    return evaluate_float(bundle, test_norm)


def perturbation_sweep(
    models, d_values, test_norm, master_seed: int = 0
) -> SweepResult:
    """Mean/std accuracy per displacement, one fresh perturbation per
    (model, grid point).  d = 0 is evaluated as the unperturbed limit."""
    means, stds = [], []
    for i, d_val in enumerate(d_values):
        accs = []
        for k, model in enumerate(models):
            if d_val == 0:
                accs.append(evaluate_float(model, test_norm))
                continue
            rng = derive_rng(master_seed, f"perturb:{i}:{k}")
            d_p, w_p = perturb_model(
                model.dictionary.entries, model.hyperplane.weights, d_val, rng
            )
            accs.append(_float_accuracy(d_p, w_p, model, test_norm))
        m, s = _mean_std(accs)
        means.append(m)
        stds.append(s)
    return SweepResult(
        tuple(float(v) for v in d_values), tuple(means), tuple(stds), len(models)
    )


def threshold_sweep(models, test_norm, thresholds=DEFAULT_THRESHOLDS) -> SweepResult:
    """Accuracy and dictionary storage bits per hard-threshold value.

    t = 0 is the uncompressed reference (real model accuracy, powerize-only
    storage bits); t > 0 evaluates the powerized model with its dictionary
    hard-thresholded at t, at the minimal fraction-bit count the surviving
    exponents require."""
    means, stds, bit_means = [], [], []
    powerized = [
        (powerize_matrix(m.dictionary.entries), powerize_matrix(m.hyperplane.weights))
        for m in models
    ]
    for t in thresholds:
        accs, bits = [], []
        for model, (d_pow, w_pow) in zip(models, powerized):
            d_t = d_pow if t == 0 else hard_threshold(d_pow, float(t))
            f_min = -d_t.emin if d_t.emin is not None and d_t.emin < 0 else 0
            bits.append(storage_bits(d_t, f_min))
            if t == 0:
                accs.append(evaluate_float(model, test_norm))
            else:
                accs.append(
                    _float_accuracy(
                        pow2_to_real(d_t), pow2_to_real(w_pow), model, test_norm
                    )
                )
        m, s = _mean_std(accs)
        means.append(m)
        stds.append(s)
        bit_means.append(float(np.mean(bits)))
    return SweepResult(
        tuple(float(t) for t in thresholds),
        tuple(means),
        tuple(stds),
        len(models),
        bits=tuple(bit_means),
    )


def _predict_quantized_float(model: ModelBundle, quantized_rows, labels_true):
    """Float accuracy on quantized raw pixels, renormalized per sample; an
    all-zero quantized sample falls back to the zero-score decision."""
    d = model.dictionary.entries
    w = model.hyperplane.weights
    label_arr = np.array(model.labels)
    correct = 0
    for row, truth in zip(quantized_rows, labels_true):
        try:
            v = normalize_vector(row)
        except DegenerateSampleError:
            pred = model.labels[0]
        else:
            scores = features(d, v, model.sparsity.value) @ w
            if scores.shape[-1] == 1:
                pred = label_arr[1] if scores[0] > 0 else label_arr[0]
            else:
                pred = label_arr[int(np.argmax(scores))]
        correct += pred == truth
    return correct / len(labels_true)


def quantization_sweep(
    models, test_raw, quanta_values=DEFAULT_QUANTA_SWEEP
) -> SweepResult:
    """Accuracy per quantization level, plus a final reference row at
    q = pixel_max (the identity quantizer)."""
    pixel_max = max(int(s.pixel_max) for s in test_raw)
    labels_true = [s.label for s in test_raw]
    grid = [int(q) for q in quanta_values] + [pixel_max]
    means, stds = [], []
    for q in grid:
        spec = QuantizationSpec(q, pixel_max)
        rows = [quantize_sample(s, spec).pixels for s in test_raw]
        accs = [_predict_quantized_float(m, rows, labels_true) for m in models]
        m, s = _mean_std(accs)
        means.append(m)
        stds.append(s)
    return SweepResult(
        tuple(float(q) for q in grid), tuple(means), tuple(stds), len(models)
    )


def dict_size_sweep(
    atom_counts,
    train_raw,
    test_raw,
    base_cfg: TrainConfig,
    grid: GridSpec,
    master_seed: int = 0,
    jobs: int = 1,
) -> tuple[SweepResult, SweepResult]:
    """(original, proposed) accuracy and bit curves over dictionary sizes.

    Original: plain training (kappa = 0) on the full training set, float
    evaluation, 64-bit float baseline.  Proposed: the full selection pipeline,
    shift-mode evaluation of the chosen compressed model, its static bits."""
    test_norm = normalize_batch(test_raw)
    orig_mean, orig_bits, prop_mean, prop_bits = [], [], [], []
    for atoms in atom_counts:
        cfg = replace(
            base_cfg,
            atoms=int(atoms),
            kappa=0.0,
            seed=derive_seed(master_seed, f"dictsize-train:{atoms}"),
        )
        model, _ = train_for_samples(normalize_batch(train_raw), cfg)
        orig_mean.append(evaluate_float(model, test_norm))
        orig_bits.append(float(FLOAT_BASELINE_BITS))

        outcome, _, _ = run_selection(
            train_raw,
            grid,
            replace(base_cfg, atoms=int(atoms)),
            derive_seed(master_seed, f"dictsize-select:{atoms}"),
            jobs=jobs,
        )
        chosen = outcome.chosen
        spec = QuantizationSpec(chosen.quanta, max(s.pixel_max for s in test_raw))
        test_q = [quantize_sample(s, spec) for s in test_raw]
        acc, _ = evaluate_shift(chosen.model, test_q)
        prop_mean.append(acc)
        prop_bits.append(float(chosen.bits))
    x = tuple(float(a) for a in atom_counts)
    zeros = tuple(0.0 for _ in atom_counts)
    return (
        SweepResult(x, tuple(orig_mean), zeros, 1, bits=tuple(orig_bits)),
        SweepResult(x, tuple(prop_mean), zeros, 1, bits=tuple(prop_bits)),
    )


def texture_task(
    images,
    patch_size: int = 12,
    train_per_class: int = 500,
    test_per_class: int = 500,
    master_seed: int = 0,
):
    """Patch datasets for a texture discrimination task: training patches from
    the top half of each image, test patches from the bottom half."""
    test_raw = []
    train_regions = []
    for label, image in enumerate(images):
        train_region, test_region = disjoint_texture_split(image, patch_size)
        train_regions.append(train_region)
        test_raw.extend(
            extract_patches(
                test_region,
                patch_size,
                test_per_class,
                derive_seed(master_seed, f"test-patches:{label}"),
                label=label,
                source_prefix=f"tex{label}-test",
            )
        )
    return train_regions, test_raw


def train_texture_pairs(
    train_regions,
    cfg: TrainConfig,
    n_pairs: int = 10,
    patch_size: int = 12,
    train_per_class: int = 500,
    master_seed: int = 0,
) -> list[ModelBundle]:
    """The repeated-training protocol: each pair is trained on freshly drawn
    patches from the training regions (seeded per pair)."""
    models = []
    for k in range(n_pairs):
        samples = []
        for label, region in enumerate(train_regions):
            samples.extend(
                extract_patches(
                    region,
                    patch_size,
                    train_per_class,
                    derive_seed(master_seed, f"train-patches:{k}:{label}"),
                    label=label,
                    source_prefix=f"tex{label}-train{k}",
                )
            )
        pair_cfg = replace(cfg, seed=derive_seed(master_seed, f"train:{k}"))
        model, _ = train_for_samples(normalize_batch(samples), pair_cfg)
        models.append(model)
    return models
