"""shiftclass: transform/soft-threshold classifiers compressed to
multiplier-free, low-bit-width integer inference.

Train a dictionary + hyperplane pair on the hinge objective, discretize both
to powers of two, sparsify the dictionary, quantize the inputs, and classify
raw integer samples using only integer shifts, adds and comparisons — with
bit-width analysis and a model-selection pipeline for the accuracy/bits
trade-off.
"""

from .bits import (
    BitReport,
    analyze,
    empirical_compute_bits,
    static_compute_bits,
    storage_bits,
)
from .compression import (
    QuantizationSpec,
    ThresholdCandidates,
    compress_model,
    hard_threshold,
    powerize_matrix,
    powerize_scalar,
    quantize_sample,
    threshold_candidates,
)
from .data import (
    DatasetSplit,
    NormalizedSample,
    RawSample,
    disjoint_texture_split,
    extract_patches,
    load_cifar10,
    load_idx,
    load_pgm,
    normalize,
    split_80_20,
    synth_textures,
)
from .experiments import (
    SweepResult,
    dict_size_sweep,
    perturb_model,
    perturbation_sweep,
    quantization_sweep,
    threshold_sweep,
)
from .inference import (
    FixedPointVector,
    alpha_raw,
    audit_integer_kernel,
    classify_float,
    classify_shift,
    classify_shift_batch,
    evaluate_float,
    evaluate_shift,
    features_shift,
)
from .model import (
    CompressionMeta,
    Dictionary,
    FixedPointSpec,
    Hyperplane,
    ModelBundle,
    Pow2Entry,
    Pow2Matrix,
    SparsityParam,
    load_model,
    pow2_to_real,
    save_model,
    validate_model,
)
from .seeding import derive_rng, derive_seed
from .selection import (
    CandidateResult,
    GridSpec,
    SelectionResult,
    bits_filter,
    build_grid,
    gamma_filter,
    run_selection,
    select,
    sparsest_select,
    train_for_samples,
)
from .training import (
    TrainConfig,
    TrainTrace,
    features,
    hinge,
    objective,
    subgradients,
    train,
    train_multiclass,
)

__version__ = "0.1.0"
