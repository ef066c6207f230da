"""Mini-batch subgradient training of the transform/soft-threshold classifier.

The objective for samples X (rows), binary labels y in {-1, +1}:

    sum_i hinge(y_i w^T f_i) + (v/2) ||w||_2^2 + (kappa/2) ||D||_2^2

with f_i = max(0, D^T x_i - alpha), hinge(x) = max(0, 1 - x), and ||.||_2^2
the sum of squared entries.  kappa = 0 recovers the plain objective; kappa > 0
penalizes higher-energy dictionaries and only alters the D gradient (by +kappa D).

Subgradient choice at the kinks is 0 (both at margin = 1 and at response =
alpha), so with active sets A = {i : y_i w^T f_i < 1} and a_ij = [ (D^T x_i)_j
> alpha ]:

    grad_w = sum_{i in A} (-y_i f_i) + v w
    grad_D = sum_{i in A} (-y_i) x_i (w ⊙ a_i)^T + kappa D

Multiclass training is one-vs-all with a shared dictionary: per-class hinge
terms are summed into one objective and the prediction is the argmax of the
per-class scores.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DivergenceError, TrainingError
from .model import (
    CompressionMeta,
    Dictionary,
    Hyperplane,
    ModelBundle,
    SparsityParam,
)

INIT_SCHEMES = ("data", "gaussian")


@dataclass(frozen=True)
class TrainConfig:
    atoms: int = 50
    alpha: float = 1.0
    v: float = 1e-3
    kappa: float = 0.0
    lr: float = 0.1
    epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    init: str = "data"
    # Atom norm at initialization.  With unit-norm inputs and alpha = 1,
    # unit-norm atoms leave every feature at exactly 0 and the subgradient
    # vanishes identically, so the starting atoms must overshoot the threshold.
    init_scale: float = 2.0

    def __post_init__(self):
        if self.atoms < 1:
            raise ValueError("atoms must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}")


@dataclass(frozen=True)
class TrainTrace:
    """Per-epoch diagnostics; all columns have length == epochs."""

    objective: tuple[float, ...]
    norm_d: tuple[float, ...]
    norm_w: tuple[float, ...]
    train_accuracy: tuple[float, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epoch", "objective", "norm_D", "norm_w", "train_acc"])
        for i in range(len(self.objective)):
            writer.writerow(
                [i, self.objective[i], self.norm_d[i], self.norm_w[i],
                 self.train_accuracy[i]]
            )
        return buf.getvalue()


def hinge(x: float) -> float:
    """max(0, 1 - x)."""
    return max(0.0, 1.0 - float(x))


def features(d: np.ndarray | Dictionary, x: np.ndarray, alpha: float) -> np.ndarray:
    """Soft-threshold feature map max(0, D^T x - alpha); always >= 0."""
    d = d.entries if isinstance(d, Dictionary) else np.asarray(d, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != d.shape[0]:
        raise DimensionError(
            f"sample dimension {x.shape[-1]} != dictionary rows {d.shape[0]}"
        )
    return np.maximum(x @ d - alpha, 0.0)


def _as_label_matrix(y: np.ndarray, columns: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != columns:
        raise DimensionError(f"labels have {y.shape[1]} columns, expected {columns}")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    return y


def objective(
    d: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    v: float,
    kappa: float,
    alpha: float = 1.0,
) -> float:
    """Hinge sum plus the two quadratic penalties (sum-of-squares norms)."""
    d = np.asarray(d, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 1:
        w = w[:, None]
    if d.shape[1] != w.shape[0]:
        raise DimensionError(
            f"dictionary has {d.shape[1]} atoms, hyperplane has {w.shape[0]} rows"
        )
    y = _as_label_matrix(y, w.shape[1])
    f = features(d, x, alpha)
    margins = y * (f @ w)
    loss = float(np.maximum(0.0, 1.0 - margins).sum())
    return loss + 0.5 * v * float((w * w).sum()) + 0.5 * kappa * float((d * d).sum())


def subgradients(
    d: np.ndarray,
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    v: float,
    kappa: float,
    alpha: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """(grad_D, grad_w) of `objective` on the given batch."""
    d = np.asarray(d, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    squeeze = w.ndim == 1
    if squeeze:
        w = w[:, None]
    if d.shape[1] != w.shape[0]:
        raise DimensionError(
            f"dictionary has {d.shape[1]} atoms, hyperplane has {w.shape[0]} rows"
        )
    x = np.asarray(x, dtype=np.float64)
    y = _as_label_matrix(y, w.shape[1])
    z = x @ d
    f = np.maximum(z - alpha, 0.0)
    active_atoms = z > alpha
    margins = y * (f @ w)
    g = np.where(margins < 1.0, -y, 0.0)  # hinge slope per (sample, class)
    grad_w = f.T @ g + v * w
    grad_d = x.T @ (active_atoms * (g @ w.T)) + kappa * d
    if squeeze:
        grad_w = grad_w[:, 0]
    return grad_d, grad_w


def _init_dictionary(x: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[1]
    if cfg.init == "gaussian":
        d = rng.standard_normal((n, cfg.atoms))
        d /= np.linalg.norm(d, axis=0, keepdims=True)
        return cfg.init_scale * d
    m = x.shape[0]
    idx = rng.choice(m, size=cfg.atoms, replace=m < cfg.atoms)
    cols = x[idx].T.copy()
    norms = np.linalg.norm(cols, axis=0)
    if np.any(norms == 0):
        raise TrainingError("cannot initialize atoms from all-zero samples")
    return cfg.init_scale * cols / norms


def _fit(
    x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[np.ndarray, np.ndarray, TrainTrace]:
    m = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    d = _init_dictionary(x, cfg, rng)
    w = np.zeros((cfg.atoms, y.shape[1]))

    obj_hist, nd_hist, nw_hist, acc_hist = [], [], [], []
    for epoch in range(cfg.epochs):
        perm = rng.permutation(m)
        # overflow here surfaces as a non-finite objective at the epoch check
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, m, cfg.batch_size):
                batch = perm[start : start + cfg.batch_size]
                grad_d, grad_w = subgradients(
                    d, w, x[batch], y[batch], cfg.v, cfg.kappa, cfg.alpha
                )
                d = d - cfg.lr * grad_d
                w = w - cfg.lr * grad_w
            obj = objective(d, w, x, y, cfg.v, cfg.kappa, cfg.alpha)
        if not np.isfinite(obj):
            raise DivergenceError(epoch)
        scores = features(d, x, cfg.alpha) @ w
        if y.shape[1] == 1:
            correct = (np.where(scores[:, 0] > 0, 1.0, -1.0) == y[:, 0]).mean()
        else:
            correct = (np.argmax(scores, axis=1) == np.argmax(y, axis=1)).mean()
        obj_hist.append(float(obj))
        nd_hist.append(float(np.linalg.norm(d)))
        nw_hist.append(float(np.linalg.norm(w)))
        acc_hist.append(float(correct))

    trace = TrainTrace(
        tuple(obj_hist), tuple(nd_hist), tuple(nw_hist), tuple(acc_hist)
    )
    return d, w, trace


def train(
    x: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[ModelBundle, TrainTrace]:
    """Binary training; y holds labels in {-1, +1}.

    Deterministic for a fixed (data, config) pair: initialization and batch
    shuffling both draw from the seeded generator.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape[0] != y.shape[0]:
        raise DimensionError("sample/label count mismatch")
    present = np.unique(y)
    if not np.all(np.isin(present, (-1.0, 1.0))):
        raise ValueError("binary labels must be -1 or +1")
    if present.size < 2:
        raise TrainingError("training requires both classes present")
    d, w, trace = _fit(x, y[:, None], cfg)
    model = ModelBundle(
        dictionary=Dictionary(d),
        hyperplane=Hyperplane(w, v=cfg.v),
        sparsity=SparsityParam(value=cfg.alpha),
        meta=CompressionMeta(kappa=cfg.kappa if cfg.kappa > 0 else None),
        labels=(-1, 1),
    )
    return model, trace


def train_multiclass(
    x: np.ndarray, labels: np.ndarray, cfg: TrainConfig
) -> tuple[ModelBundle, TrainTrace]:
    """One-vs-all training over a shared dictionary.

    Class labels may be arbitrary integers; they are sorted to fix the score
    column order.  With two classes this reduces to the binary rule: the two
    columns converge toward w and -w and argmax(s, -s) == sign(s).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if x.shape[0] != labels.shape[0]:
        raise DimensionError("sample/label count mismatch")
    classes = sorted(set(int(v) for v in labels))
    if len(classes) < 2:
        raise TrainingError("training requires at least two classes present")
    y = np.where(labels[:, None] == np.array(classes)[None, :], 1.0, -1.0)
    d, w, trace = _fit(x, y, cfg)
    model = ModelBundle(
        dictionary=Dictionary(d),
        hyperplane=Hyperplane(w, v=cfg.v),
        sparsity=SparsityParam(value=cfg.alpha),
        meta=CompressionMeta(kappa=cfg.kappa if cfg.kappa > 0 else None),
        labels=tuple(classes),
    )
    return model, trace
