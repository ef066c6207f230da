"""Model selection: grid training over the energy penalty, compression sweeps
over (z_threshold, quanta), then a three-stage filter cascade.

Stages: keep candidates whose holdout accuracy is at least (1 - gamma) times
the best grid accuracy; among those keep the candidates with the minimum
static compute bits; among those choose the one with the sparsest holdout
feature representation.  Ties are broken toward the cheaper model (larger
threshold, then smaller quanta, then smaller kappa), deterministically.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bits import static_compute_bits
from .compression import (
    QuantizationSpec,
    compress_model,
    powerize_matrix,
    quantize_sample,
    threshold_candidates,
)
from .data import DatasetSplit, normalize_batch, split_80_20
from .errors import SelectionError, ShiftclassError
from .inference import classify_shift_batch, default_fraction_bits
from .model import ModelBundle
from .seeding import derive_seed
from .training import TrainConfig, TrainTrace, train, train_multiclass

DEFAULT_KAPPAS = (0.004, 0.008, 0.010, 0.012, 0.014, 0.016, 0.018, 0.020)
DEFAULT_QUANTA = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 31, 127)


@dataclass(frozen=True)
class GridSpec:
    kappas: tuple[float, ...] = DEFAULT_KAPPAS
    quanta: tuple[int, ...] = DEFAULT_QUANTA
    gamma: float = 0.001
    # Thresholds come from the distinct absolute values of each trained
    # model's powerized dictionary; cap them (evenly spaced over the sorted
    # candidates) to bound the grid size.
    max_thresholds: int | None = None

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must be in (0, 1)")
        if any(k < 0 for k in self.kappas):
            raise ValueError("kappa values must be nonnegative")
        if any(q < 1 for q in self.quanta):
            raise ValueError("quanta values must be >= 1")
        object.__setattr__(self, "kappas", tuple(float(k) for k in self.kappas))
        object.__setattr__(self, "quanta", tuple(int(q) for q in self.quanta))


@dataclass(frozen=True)
class CandidateResult:
    kappa: float
    z_threshold: float
    quanta: int
    accuracy: float | None
    bits: int | None
    sparsity: float | None
    model: ModelBundle | None
    status: str = "ok"
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.status != "ok"


@dataclass(frozen=True)
class SelectionResult:
    chosen: CandidateResult
    best_acc: float
    audit: dict


def train_for_samples(norm_samples, cfg: TrainConfig) -> tuple[ModelBundle, TrainTrace]:
    """Train on normalized samples, mapping dataset labels onto the model.

    Two distinct labels use the binary path (lower label is the negative
    class); more use one-vs-all.
    """
    x = np.stack([s.values for s in norm_samples])
    labels = np.array([s.label for s in norm_samples])
    classes = sorted(set(int(v) for v in labels))
    if len(classes) == 2:
        y = np.where(labels == classes[1], 1.0, -1.0)
        model, trace = train(x, y, cfg)
        return replace(model, labels=tuple(classes)), trace
    model, trace = train_multiclass(x, labels, cfg)
    return model, trace


def _pick_thresholds(model: ModelBundle, grid: GridSpec) -> list[float]:
    d_pow = powerize_matrix(model.dictionary.entries)
    cands = list(threshold_candidates(d_pow))
    if grid.max_thresholds is not None and len(cands) > grid.max_thresholds:
        idx = np.linspace(0, len(cands) - 1, grid.max_thresholds).round().astype(int)
        cands = [cands[i] for i in sorted(set(idx.tolist()))]
    return cands


def _evaluate_candidate(
    model: ModelBundle,
    kappa: float,
    t: float,
    q: int,
    holdout,
    quantized_cache: dict,
    pixel_max: int,
) -> CandidateResult:
    try:
        compressed = compress_model(model, t, QuantizationSpec(q, pixel_max))
        if q not in quantized_cache:
            spec = QuantizationSpec(q, pixel_max)
            quantized_cache[q] = [quantize_sample(s, spec) for s in holdout]
        samples_q = quantized_cache[q]
        result = classify_shift_batch(
            compressed, samples_q, on_degenerate="zero-score"
        )
        truth = np.array([s.label for s in samples_q])
        accuracy = float(np.mean(result.labels == truth))
        d_thr = compressed.dictionary
        f_bits = default_fraction_bits(d_thr)
        bits = static_compute_bits(d_thr, q, f_bits) if d_thr.emax is not None else 1
        return CandidateResult(
            kappa, t, q, accuracy, bits, result.feature_zero_fraction, compressed
        )
    except (ShiftclassError, ValueError) as exc:
        return CandidateResult(
            kappa, t, q, None, None, None, None,
            status="failed", error=f"{type(exc).__name__}: {exc}",
        )


def build_grid(
    train80,
    holdout20,
    grid: GridSpec,
    base_cfg: TrainConfig,
    master_seed: int = 0,
    jobs: int = 1,
) -> list[CandidateResult]:
    """One training run per kappa, one compressed evaluation per
    (kappa, z_threshold, quanta) tuple, in deterministic grid order.

    Failures are recorded on the affected candidates instead of aborting."""
    norm_train = normalize_batch(train80, zero_mean=False)
    pixel_max = max(int(s.pixel_max) for s in holdout20)
    train_seed = derive_seed(master_seed, "grid-train")

    results: list[CandidateResult] = []
    quantized_cache: dict[int, list] = {}
    for kappa in grid.kappas:
        cfg = replace(base_cfg, kappa=kappa, seed=train_seed)
        try:
            model, _ = train_for_samples(norm_train, cfg)
            thresholds = _pick_thresholds(model, grid)
        except (ShiftclassError, ValueError) as exc:
            for q in grid.quanta:
                results.append(
                    CandidateResult(
                        kappa, float("nan"), q, None, None, None, None,
                        status="failed", error=f"{type(exc).__name__}: {exc}",
                    )
                )
            continue
        tasks = [(t, q) for t in thresholds for q in grid.quanta]
        if jobs > 1:
            # candidates are pure and independent; collect in grid order
            for q in grid.quanta:
                if q <= pixel_max and q not in quantized_cache:
                    spec = QuantizationSpec(q, pixel_max)
                    quantized_cache[q] = [quantize_sample(s, spec) for s in holdout20]
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results.extend(
                    pool.map(
                        lambda tq: _evaluate_candidate(
                            model, kappa, tq[0], tq[1], holdout20,
                            quantized_cache, pixel_max,
                        ),
                        tasks,
                    )
                )
        else:
            for t, q in tasks:
                results.append(
                    _evaluate_candidate(
                        model, kappa, t, q, holdout20, quantized_cache, pixel_max
                    )
                )
    return results


def gamma_filter(results, gamma: float) -> list[CandidateResult]:
    """Candidates within relative slack gamma of the best holdout accuracy."""
    ok = [r for r in results if not r.failed]
    if not ok:
        raise SelectionError("no viable candidate in the grid")
    best_acc = max(r.accuracy for r in ok)
    return [r for r in ok if r.accuracy >= (1.0 - gamma) * best_acc]


def bits_filter(results) -> list[CandidateResult]:
    """Candidates achieving the minimum static compute bits."""
    lowest = min(r.bits for r in results)
    return [r for r in results if r.bits == lowest]


def sparsest_select(results) -> CandidateResult:
    """Maximum mean feature sparsity; ties prefer larger threshold, then
    smaller quanta, then smaller kappa."""
    return max(results, key=lambda r: (r.sparsity, r.z_threshold, -r.quanta, -r.kappa))


def select(results, gamma: float) -> SelectionResult:
    """Run the filter cascade over grid results and assemble the audit trail."""
    ok = [r for r in results if not r.failed]
    if not ok:
        raise SelectionError("no viable candidate in the grid")
    best_acc = max(r.accuracy for r in ok)
    gamma_set = gamma_filter(results, gamma)
    bits_set = bits_filter(gamma_set)
    chosen = sparsest_select(bits_set)
    audit = {
        "candidates": len(results),
        "ok": len(ok),
        "gamma": len(gamma_set),
        "bits": len(bits_set),
        "chosen": 1,
    }
    return SelectionResult(chosen, best_acc, audit)


def run_selection(
    samples,
    grid: GridSpec,
    base_cfg: TrainConfig,
    master_seed: int,
    jobs: int = 1,
) -> tuple[SelectionResult, list[CandidateResult], DatasetSplit]:
    """The full pipeline: 80/20 split, grid build, filter cascade."""
    split = split_80_20(samples, derive_seed(master_seed, "select-split"))
    results = build_grid(
        split.train, split.holdout, grid, base_cfg, master_seed, jobs=jobs
    )
    return select(results, grid.gamma), results, split


def grid_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["kappa", "z_threshold", "quanta", "accuracy", "bits", "sparsity", "status"]
    )
    for r in results:
        writer.writerow(
            [r.kappa, r.z_threshold, r.quanta,
             "" if r.accuracy is None else r.accuracy,
             "" if r.bits is None else r.bits,
             "" if r.sparsity is None else r.sparsity,
             r.status]
        )
    return buf.getvalue()
