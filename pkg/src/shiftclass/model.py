"""Model and arithmetic types shared by every stage of the pipeline.

Two dictionary/classifier representations coexist:

* real-valued matrices (`Dictionary`, `Hyperplane`) — what training produces;
* power-of-two matrices (`Pow2Matrix`) whose entries are 0 or ±2^e — what the
  shift-add inference kernel consumes.

All types are immutable after construction and safe to share across threads.
Equality is structural (exact entry equality), which is what the determinism
tests rely on.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelModeError, Pow2RangeError, ScaleError

# Exponent bounds for power-of-two entries.  The range covers every finite
# float64 (subnormals included) so converting back to a real matrix can never
# produce inf; anything outside is a construction error.
EXPONENT_MIN = -1074
EXPONENT_MAX = 1023

FORMAT_VERSION = 1

MODE_FIXED = "fixed-normalized"
MODE_RAW_NORM = "raw-norm"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Real-valued transform matrix, one atom per column (n rows × N columns)."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ValueError("dictionary entries must be a 2-D matrix")
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def atoms(self) -> int:
        return self.entries.shape[1]

    def __eq__(self, other):
        return isinstance(other, Dictionary) and np.array_equal(
            self.entries, other.entries
        )


@dataclass(frozen=True, eq=False)
class Hyperplane:
    """Classifier weights, N rows × C columns (binary tasks collapse to C=1),
    plus the ridge regularizer applied to them during training."""

    weights: np.ndarray
    v: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2:
            raise ValueError("hyperplane weights must be a vector or 2-D matrix")
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "v", float(self.v))

    @property
    def atoms(self) -> int:
        return self.weights.shape[0]

    @property
    def columns(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other):
        return (
            isinstance(other, Hyperplane)
            and self.v == other.v
            and np.array_equal(self.weights, other.weights)
        )


@dataclass(frozen=True)
class SparsityParam:
    """Soft-threshold level used by the feature map.

    `fixed-normalized` stores one value (1 by default, matching unit-norm
    inputs); `raw-norm` recomputes the threshold per sample as the l2 norm of
    the raw integer vector.
    """

    mode: str = MODE_FIXED
    value: float = 1.0

    def __post_init__(self):
        if self.mode not in (MODE_FIXED, MODE_RAW_NORM):
            raise ValueError(f"unknown sparsity mode {self.mode!r}")
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Pow2Entry:
    """One discretized coefficient: sign ∈ {−1, 0, +1} times 2^exponent."""

    sign: int
    exponent: int

    def __post_init__(self):
        if self.sign not in (-1, 0, 1):
            raise Pow2RangeError(f"sign must be -1, 0 or +1, got {self.sign}")
        if not (EXPONENT_MIN <= self.exponent <= EXPONENT_MAX):
            raise Pow2RangeError(
                f"exponent {self.exponent} outside [{EXPONENT_MIN}, {EXPONENT_MAX}]"
            )

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * float(np.ldexp(1.0, self.exponent))


@dataclass(frozen=True, eq=False)
class Pow2Matrix:
    """Matrix of power-of-two entries with cached exponent extremes.

    `signs` and `exponents` are integer matrices of equal shape; exponents at
    zero entries are canonically 0.  `emin`/`emax` cache the extremes over the
    nonzero entries (None for an all-zero matrix) and are cross-checked by
    validate_model.
    """

    signs: np.ndarray
    exponents: np.ndarray
    emin: int | None
    emax: int | None

    def __post_init__(self):
        s = np.asarray(self.signs, dtype=np.int8)
        e = np.asarray(self.exponents, dtype=np.int64)
        if s.shape != e.shape or s.ndim != 2:
            raise ValueError("signs and exponents must be 2-D with equal shape")
        object.__setattr__(self, "signs", _freeze(s))
        object.__setattr__(self, "exponents", _freeze(e))

    @classmethod
    def build(cls, signs: np.ndarray, exponents: np.ndarray) -> "Pow2Matrix":
        """Construct with canonical zero exponents and freshly computed caches."""
        s = np.asarray(signs, dtype=np.int8)
        e = np.asarray(exponents, dtype=np.int64).copy()
        if np.any((s != 0) & ((e < EXPONENT_MIN) | (e > EXPONENT_MAX))):
            raise Pow2RangeError(
                f"exponent outside [{EXPONENT_MIN}, {EXPONENT_MAX}]"
            )
        e[s == 0] = 0
        nz = e[s != 0]
        emin = int(nz.min()) if nz.size else None
        emax = int(nz.max()) if nz.size else None
        return cls(signs=s, exponents=e, emin=emin, emax=emax)

    @property
    def shape(self) -> tuple[int, int]:
        return self.signs.shape

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.signs))

    def entry(self, i: int, j: int) -> Pow2Entry:
        return Pow2Entry(int(self.signs[i, j]), int(self.exponents[i, j]))

    def __eq__(self, other):
        return (
            isinstance(other, Pow2Matrix)
            and self.emin == other.emin
            and self.emax == other.emax
            and np.array_equal(self.signs, other.signs)
            and np.array_equal(self.exponents, other.exponents)
        )


@dataclass(frozen=True)
class FixedPointSpec:
    """Global fraction-bit count F: integers carry value × 2^F.

    F must be at least −emin of every power-of-two matrix it serves, so every
    shift amount e + F is nonnegative and products stay lossless left shifts.
    """

    fraction_bits: int

    def __post_init__(self):
        if self.fraction_bits < 0:
            raise ScaleError("fraction_bits must be nonnegative")

    def check_serves(self, m: Pow2Matrix) -> None:
        if m.emin is not None and self.fraction_bits < -m.emin:
            raise ScaleError(
                f"F={self.fraction_bits} < {-m.emin} required by emin={m.emin}"
            )

    @classmethod
    def for_matrix(cls, m: Pow2Matrix, minimum: int = 8) -> "FixedPointSpec":
        need = -m.emin if m.emin is not None and m.emin < 0 else 0
        return cls(max(minimum, need))


@dataclass(frozen=True)
class CompressionMeta:
    """Which compression techniques were applied, and with what parameters.

    A field is None iff the corresponding technique was not applied."""

    kappa: float | None = None
    z_threshold: float | None = None
    quanta: int | None = None
    powerized: bool = False


@dataclass(frozen=True, eq=False)
class ModelBundle:
    """A complete classifier: dictionary + hyperplane + threshold mode +
    compression metadata + class labels.

    `labels` maps score columns to class labels: length 2 for binary models
    (negative label first, one score column), length C for multiclass.
    Construction is permissive; use validate_model to get the violation list.
    """

    dictionary: Dictionary | Pow2Matrix
    hyperplane: Hyperplane | Pow2Matrix
    sparsity: SparsityParam = field(default_factory=SparsityParam)
    meta: CompressionMeta = field(default_factory=CompressionMeta)
    labels: tuple = (-1, 1)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def is_powerized(self) -> bool:
        return isinstance(self.dictionary, Pow2Matrix)

    @property
    def n(self) -> int:
        d = self.dictionary
        return d.shape[0] if isinstance(d, Pow2Matrix) else d.n

    @property
    def atoms(self) -> int:
        d = self.dictionary
        return d.shape[1] if isinstance(d, Pow2Matrix) else d.atoms

    @property
    def columns(self) -> int:
        h = self.hyperplane
        return h.shape[1] if isinstance(h, Pow2Matrix) else h.columns

    @property
    def is_binary(self) -> bool:
        return self.columns == 1

    def __eq__(self, other):
        return (
            isinstance(other, ModelBundle)
            and self.dictionary == other.dictionary
            and self.hyperplane == other.hyperplane
            and self.sparsity == other.sparsity
            and self.meta == other.meta
            and self.labels == other.labels
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def pow2_to_real(m: Pow2Matrix) -> np.ndarray:
    """Exact real matrix view: entry (i, j) = sign · 2^exponent, zeros stay 0."""
    return np.where(
        m.signs != 0,
        m.signs.astype(np.float64) * np.ldexp(1.0, m.exponents.astype(np.int32)),
        0.0,
    )


def _validate_pow2(m: Pow2Matrix, name: str, out: list[str]) -> None:
    s, e = m.signs, m.exponents
    if np.any((s != 0) & ((e < EXPONENT_MIN) | (e > EXPONENT_MAX))):
        out.append(f"{name}: exponent outside supported range")
    nz = e[s != 0]
    emin = int(nz.min()) if nz.size else None
    emax = int(nz.max()) if nz.size else None
    if emin != m.emin or emax != m.emax:
        out.append(
            f"{name}: stale exponent cache (cached [{m.emin}, {m.emax}], "
            f"actual [{emin}, {emax}])"
        )


def validate_model(model: ModelBundle) -> ValidationReport:
    """Check every bundle invariant; violations are data, not exceptions."""
    out: list[str] = []

    d = model.dictionary
    if isinstance(d, Pow2Matrix):
        n, atoms = d.shape
        _validate_pow2(d, "dictionary", out)
    else:
        n, atoms = d.entries.shape
        if not np.all(np.isfinite(d.entries)):
            out.append("dictionary: non-finite entries")
    if n < 1 or atoms < 1:
        out.append("dictionary: empty dimension")

    h = model.hyperplane
    if isinstance(h, Pow2Matrix):
        rows = h.shape[0]
        _validate_pow2(h, "hyperplane", out)
    else:
        rows = h.weights.shape[0]
        if not np.all(np.isfinite(h.weights)):
            out.append("hyperplane: non-finite weights")
        if h.v < 0:
            out.append("hyperplane: negative regularizer v")
    if rows != atoms:
        out.append(
            f"atom-count mismatch: dictionary has {atoms} atoms, "
            f"hyperplane has {rows} rows"
        )

    if model.sparsity.mode == MODE_FIXED and not model.sparsity.value > 0:
        out.append("sparsity: fixed-normalized threshold must be positive")

    cols = model.columns
    expected_labels = 2 if cols == 1 else cols
    if len(model.labels) != expected_labels:
        out.append(
            f"labels: expected {expected_labels} labels for {cols} score "
            f"column(s), got {len(model.labels)}"
        )
    if len(set(model.labels)) != len(model.labels):
        out.append("labels: duplicate class labels")

    dict_pow = isinstance(d, Pow2Matrix)
    hyp_pow = isinstance(h, Pow2Matrix)
    if dict_pow != hyp_pow:
        out.append("representation mismatch: dictionary and hyperplane must both be pow2 or both real")
    if model.meta.powerized != dict_pow:
        out.append("metadata: powerized flag disagrees with representation")
    if model.meta.z_threshold is not None and not dict_pow:
        out.append("metadata: z_threshold recorded on a non-powerized model")
    if model.meta.quanta is not None and model.meta.quanta < 1:
        out.append("metadata: quanta must be >= 1")
    if model.meta.kappa is not None and model.meta.kappa < 0:
        out.append("metadata: kappa must be nonnegative")

    return ValidationReport(tuple(out))


# ---------------------------------------------------------------------------
# Persistence.  One JSON document; pow2 entries are stored as [sign, exponent]
# integer pairs (never as decimals) so they round-trip bit-exactly.
# ---------------------------------------------------------------------------


def _matrix_payload(m) -> tuple[list, list[int]]:
    if isinstance(m, Pow2Matrix):
        pairs = np.stack([m.signs.astype(int), m.exponents.astype(int)], axis=-1)
        return pairs.reshape(-1, 2).tolist(), list(m.shape)
    entries = m.entries if isinstance(m, Dictionary) else m.weights
    return entries.reshape(-1).tolist(), list(entries.shape)


def _matrix_from_payload(flat, shape, mode: str) -> Dictionary | Pow2Matrix | np.ndarray:
    rows, cols = shape
    if mode == "pow2":
        arr = np.asarray(flat, dtype=np.int64).reshape(rows, cols, 2)
        return Pow2Matrix.build(arr[..., 0], arr[..., 1])
    return np.asarray(flat, dtype=np.float64).reshape(rows, cols)


def model_to_dict(model: ModelBundle) -> dict:
    mode = "pow2" if model.is_powerized else "real"
    dict_payload, dict_shape = _matrix_payload(model.dictionary)
    hyp_payload, hyp_shape = _matrix_payload(model.hyperplane)
    if dict_shape[1] != hyp_shape[0]:
        raise ValueError("cannot persist a model with mismatched dimensions")
    return {
        "format_version": FORMAT_VERSION,
        "n": dict_shape[0],
        "N": dict_shape[1],
        "C": hyp_shape[1],
        "mode": mode,
        "dictionary": dict_payload,
        "hyperplane": hyp_payload,
        "alpha_mode": model.sparsity.mode,
        "alpha_value": model.sparsity.value
        if model.sparsity.mode == MODE_FIXED
        else None,
        "metadata": {
            "kappa": model.meta.kappa,
            "z_threshold": model.meta.z_threshold,
            "quanta": model.meta.quanta,
        },
        "labels": list(model.labels),
        "v": model.hyperplane.v if isinstance(model.hyperplane, Hyperplane) else None,
    }


def model_from_dict(doc: dict) -> ModelBundle:
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelModeError(
            f"unsupported model format_version {doc.get('format_version')!r}"
        )
    mode = doc["mode"]
    if mode not in ("real", "pow2"):
        raise ModelModeError(f"unknown model mode {mode!r}")
    n, atoms, cols = int(doc["n"]), int(doc["N"]), int(doc["C"])
    d_raw = _matrix_from_payload(doc["dictionary"], (n, atoms), mode)
    h_raw = _matrix_from_payload(doc["hyperplane"], (atoms, cols), mode)
    if mode == "pow2":
        dictionary, hyperplane = d_raw, h_raw
    else:
        dictionary = Dictionary(d_raw)
        hyperplane = Hyperplane(h_raw, v=float(doc.get("v") or 0.0))
    meta_doc = doc.get("metadata", {})
    meta = CompressionMeta(
        kappa=meta_doc.get("kappa"),
        z_threshold=meta_doc.get("z_threshold"),
        quanta=meta_doc.get("quanta"),
        powerized=(mode == "pow2"),
    )
    alpha_value = doc.get("alpha_value")
    sparsity = SparsityParam(
        mode=doc["alpha_mode"],
        value=1.0 if alpha_value is None else float(alpha_value),
    )
    labels = tuple(doc.get("labels", (-1, 1)))
    return ModelBundle(dictionary, hyperplane, sparsity, meta, labels)


def save_model(model: ModelBundle, path: str | os.PathLike) -> None:
    """Write the model JSON atomically (temp file + rename)."""
    payload = json.dumps(model_to_dict(model), indent=None, separators=(",", ":"))
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def load_model(path: str | os.PathLike) -> ModelBundle:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
