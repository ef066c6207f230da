"""Command-line entry point.

Subcommands: train, compress, select, eval, sweep, report.  Configuration is
a flat key=value file with section prefixes (e.g. ``train.lr=0.1``); command
flags and repeatable ``--set key=value`` overrides win over the file.  Every
command writes a manifest (config hash, seeds, dataset hashes) next to its
outputs, and all randomness derives from one master seed, so reruns are
byte-identical.

Exit codes: 0 success, 2 usage/config, 3 selection failure, 4 model-mode
mismatch, 5 data format error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

from . import bits as bits_mod
from .compression import QuantizationSpec, compress_model, quantize_sample
from .data import (
    load_cifar10,
    load_idx,
    load_pgm,
    normalize_batch,
    synth_textures,
)
from .errors import (
    ConfigError,
    DataFormatError,
    ModelModeError,
    SelectionError,
    ShiftclassError,
)
from .experiments import (
    DEFAULT_D_VALUES,
    DEFAULT_QUANTA_SWEEP,
    DEFAULT_THRESHOLDS,
    dict_size_sweep,
    perturbation_sweep,
    quantization_sweep,
    texture_task,
    threshold_sweep,
    train_texture_pairs,
)
from .inference import (
    classify_float_batch,
    classify_shift_batch,
    evaluate_float,
    float_scores_raw,
    powerized_real_view,
)
from .model import ModelBundle, load_model, save_model, validate_model
from .seeding import derive_seed
from .selection import (
    DEFAULT_KAPPAS,
    DEFAULT_QUANTA,
    GridSpec,
    grid_csv,
    run_selection,
    train_for_samples,
)
from .training import TrainConfig

EXIT_CODES = {
    ConfigError: 2,
    SelectionError: 3,
    ModelModeError: 4,
    DataFormatError: 5,
}

ERROR_NAMES = {
    SelectionError: "no-viable-candidate",
    ModelModeError: "model-not-powerized",
    DataFormatError: "data-format",
}


@dataclass
class RunConfig:
    """Resolved invocation: command, raw key/value config, output directory,
    master seed and job bound."""

    command: str
    values: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int | None = None
    jobs: int = 1

    def get(self, key: str, default=None) -> str | None:
        return self.values.get(key, default)

    def get_float(self, key: str, default: float) -> float:
        raw = self.values.get(key)
        return default if raw is None else float(raw)

    def get_int(self, key: str, default: int) -> int:
        raw = self.values.get(key)
        return default if raw is None else int(raw)

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        return raw.strip().lower() in ("1", "true", "yes", "on")

    def get_list(self, key: str, default: str = "") -> list[str]:
        raw = self.values.get(key, default)
        return [tok.strip() for tok in raw.split(",") if tok.strip()]


def parse_config_file(path: str) -> dict:
    values = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(
                        "bad-config", f"{path}:{lineno}: expected key=value"
                    )
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError("config-not-found", f"cannot read config: {exc}") from exc
    return values


def _write_atomic(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _require_path(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError("dataset-not-found", f"missing {what} path")
    if not os.path.exists(path):
        raise ConfigError("dataset-not-found", f"{what} path does not exist: {path}")
    return path


def _dataset_hash(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.pixels.tobytes())
        h.update(str(s.label).encode())
    return h.hexdigest()


def _train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        atoms=cfg.get_int("train.atoms", 50),
        alpha=cfg.get_float("train.alpha", 1.0),
        v=cfg.get_float("train.v", 1e-3),
        kappa=cfg.get_float("train.kappa", 0.0),
        lr=cfg.get_float("train.lr", 0.1),
        epochs=cfg.get_int("train.epochs", 300),
        batch_size=cfg.get_int("train.batch", 64),
        seed=seed,
        init=cfg.get("train.init", "data"),
        init_scale=cfg.get_float("train.init_scale", 2.0),
    )


def _grid_spec(cfg: RunConfig) -> GridSpec:
    kappas = cfg.get_list("grid.kappas")
    quanta = cfg.get_list("grid.quanta")
    max_thr = cfg.get("grid.max_thresholds")
    return GridSpec(
        kappas=tuple(float(k) for k in kappas) if kappas else DEFAULT_KAPPAS,
        quanta=tuple(int(q) for q in quanta) if quanta else DEFAULT_QUANTA,
        gamma=cfg.get_float("grid.gamma", 0.001),
        max_thresholds=None if max_thr is None else int(max_thr),
    )


def _texture_images(cfg: RunConfig, seed: int) -> list[np.ndarray]:
    kind = cfg.get("dataset.type", "synthetic")
    if kind == "synthetic":
        return synth_textures(
            derive_seed(seed, "synthetic-textures"),
            class_count=cfg.get_int("dataset.classes", 2),
            size=cfg.get_int("dataset.size", 256),
        )
    if kind == "pgm":
        images = []
        for c in range(16):
            path = cfg.get(f"dataset.class{c}")
            if path is None:
                break
            images.append(load_pgm(_require_path(path, f"dataset.class{c}")))
        if len(images) < 2:
            raise ConfigError("dataset-not-found", "pgm dataset needs class0 and class1")
        return images
    raise ConfigError("bad-dataset", f"dataset type {kind!r} is not a texture dataset")


def _load_dataset(cfg: RunConfig, seed: int) -> tuple[list, list]:
    """(train_raw, test_raw) according to the dataset.* config section."""
    kind = cfg.get("dataset.type", "synthetic")
    if kind in ("synthetic", "pgm"):
        images = _texture_images(cfg, seed)
        patch = cfg.get_int("dataset.patch_size", 12)
        train_regions, test_raw = texture_task(
            images,
            patch_size=patch,
            train_per_class=cfg.get_int("dataset.train_patches", 500),
            test_per_class=cfg.get_int("dataset.test_patches", 500),
            master_seed=derive_seed(seed, "texture-task"),
        )
        from .data import extract_patches  # patches for the training split

        train_raw = []
        for label, region in enumerate(train_regions):
            train_raw.extend(
                extract_patches(
                    region,
                    patch,
                    cfg.get_int("dataset.train_patches", 500),
                    derive_seed(seed, f"train-patches:{label}"),
                    label=label,
                    source_prefix=f"tex{label}-train",
                )
            )
        return train_raw, test_raw
    if kind == "idx":
        train = load_idx(
            _require_path(cfg.get("dataset.images"), "dataset.images"),
            _require_path(cfg.get("dataset.labels"), "dataset.labels"),
        )
        test = []
        if cfg.get("dataset.test_images"):
            test = load_idx(
                _require_path(cfg.get("dataset.test_images"), "dataset.test_images"),
                _require_path(cfg.get("dataset.test_labels"), "dataset.test_labels"),
            )
        limit = cfg.get_int("dataset.limit", 0)
        test_limit = cfg.get_int("dataset.test_limit", 0)
        return (train[:limit] if limit else train), (test[:test_limit] if test_limit else test)
    if kind == "cifar10":
        classes = cfg.get_list("dataset.classes")
        keep = [int(c) for c in classes] if classes else None
        train = load_cifar10(
            [_require_path(p, "dataset.batches") for p in cfg.get_list("dataset.batches")],
            classes=keep,
        )
        test = []
        if cfg.get("dataset.test_batches"):
            test = load_cifar10(
                [_require_path(p, "dataset.test_batches")
                 for p in cfg.get_list("dataset.test_batches")],
                classes=keep,
            )
        limit = cfg.get_int("dataset.limit", 0)
        test_limit = cfg.get_int("dataset.test_limit", 0)
        return (train[:limit] if limit else train), (test[:test_limit] if test_limit else test)
    raise ConfigError("bad-dataset", f"unknown dataset type {kind!r}")


def _write_manifest(cfg: RunConfig, extra: dict) -> None:
    canonical = json.dumps(cfg.values, sort_keys=True)
    manifest = {
        "command": cfg.command,
        "config": cfg.values,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": cfg.seed,
        "jobs": cfg.jobs,
    }
    manifest.update(extra)
    _write_atomic(
        os.path.join(cfg.out_dir, "manifest.json"), json.dumps(manifest, indent=2)
    )


def _require_seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        raise ConfigError("seed-required", f"{cfg.command} requires --seed")
    return cfg.seed


def cmd_train(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    train_raw, _ = _load_dataset(cfg, seed)
    zero_mean = cfg.get_bool("dataset.zero_mean", False)
    norm = normalize_batch(train_raw, zero_mean=zero_mean)
    model, trace = train_for_samples(
        norm, _train_config(cfg, derive_seed(seed, "train"))
    )
    save_model(model, os.path.join(cfg.out_dir, "model.json"))
    _write_atomic(os.path.join(cfg.out_dir, "trace.csv"), trace.to_csv())
    _write_manifest(
        cfg,
        {
            "dataset_hash": _dataset_hash(train_raw),
            "outputs": ["model.json", "trace.csv"],
            "validation": list(validate_model(model).violations),
        },
    )
    return 0


def cmd_compress(cfg: RunConfig) -> int:
    model = load_model(_require_path(cfg.get("model"), "model"))
    threshold = cfg.get("compress.threshold")
    if threshold is None:
        raise ConfigError("bad-config", "compress.threshold is required")
    quanta = cfg.get("compress.quanta")
    spec = None
    if quanta is not None:
        spec = QuantizationSpec(int(quanta), cfg.get_int("compress.pixel_max", 255))
    compressed = compress_model(model, float(threshold), spec)
    save_model(compressed, os.path.join(cfg.out_dir, "model.json"))
    _write_manifest(cfg, {"outputs": ["model.json"]})
    return 0


def cmd_select(cfg: RunConfig) -> int:
    seed = _require_seed(cfg)
    train_raw, _ = _load_dataset(cfg, seed)
    outcome, results, _ = run_selection(
        train_raw,
        _grid_spec(cfg),
        _train_config(cfg, 0),  # per-kappa seeds are derived inside
        seed,
        jobs=cfg.jobs,
    )
    save_model(outcome.chosen.model, os.path.join(cfg.out_dir, "model.json"))
    _write_atomic(os.path.join(cfg.out_dir, "grid.csv"), grid_csv(results))
    audit = {
        "best_acc": outcome.best_acc,
        "audit": outcome.audit,
        "chosen": {
            "kappa": outcome.chosen.kappa,
            "z_threshold": outcome.chosen.z_threshold,
            "quanta": outcome.chosen.quanta,
            "accuracy": outcome.chosen.accuracy,
            "bits": outcome.chosen.bits,
            "sparsity": outcome.chosen.sparsity,
        },
    }
    _write_atomic(os.path.join(cfg.out_dir, "audit.json"), json.dumps(audit, indent=2))
    _write_manifest(
        cfg,
        {
            "dataset_hash": _dataset_hash(train_raw),
            "outputs": ["model.json", "grid.csv", "audit.json"],
        },
    )
    return 0


def _confusion(truth, pred) -> dict:
    table: dict[str, dict[str, int]] = {}
    for t, p in zip(truth, pred):
        row = table.setdefault(str(t), {})
        row[str(p)] = row.get(str(p), 0) + 1
    return table


def cmd_eval(cfg: RunConfig) -> int:
    model = load_model(_require_path(cfg.get("model"), "model"))
    mode = cfg.get("eval.mode", cfg.get("mode", "float"))
    seed = cfg.seed if cfg.seed is not None else 0
    train_raw, test_raw = _load_dataset(cfg, seed)
    samples = test_raw or train_raw

    metrics: dict = {"mode": mode, "samples": len(samples)}
    if mode == "shift":
        if not model.is_powerized:
            raise ModelModeError("eval --mode shift requires a powerized model")
        if model.meta.quanta is not None:
            pixel_max = max(s.pixel_max for s in samples)
            if pixel_max != model.meta.quanta:
                spec = QuantizationSpec(model.meta.quanta, pixel_max)
                samples = [quantize_sample(s, spec) for s in samples]
        result = classify_shift_batch(model, samples, on_degenerate="zero-score")
        truth = [s.label for s in samples]
        pred = result.labels.tolist()
        metrics["accuracy"] = float(np.mean(np.array(pred) == np.array(truth)))
        metrics["degenerate_samples"] = result.degenerate
        metrics["feature_zero_fraction"] = result.feature_zero_fraction
        input_max = max(int(s.pixel_max) for s in samples)
        report = bits_mod.analyze(model, input_max=input_max, samples=samples)
        metrics["bits"] = json.loads(report.to_json())
        d_real, w_real = powerized_real_view(model)
        float_scores = np.stack(
            [float_scores_raw(d_real, w_real, s.pixels) for s in samples]
        )
        shift_pred = np.array(pred)
        float_pred = _float_pred_labels(model, float_scores)
        metrics["agreement_float_shift"] = float(np.mean(shift_pred == float_pred))
        scores = [list(map(int, row)) for row in np.asarray(result.scores)]
    elif mode == "float":
        truth = [s.label for s in samples]
        if model.is_powerized:
            d_real, w_real = powerized_real_view(model)
            raw_scores = np.stack(
                [float_scores_raw(d_real, w_real, s.pixels) for s in samples]
            )
            pred = _float_pred_labels(model, raw_scores).tolist()
            scores = raw_scores.tolist()
        else:
            norm = normalize_batch(samples, zero_mean=cfg.get_bool("dataset.zero_mean"))
            labels, raw_scores = classify_float_batch(model, norm)
            pred = labels.tolist()
            scores = raw_scores.tolist()
        metrics["accuracy"] = float(np.mean(np.array(pred) == np.array(truth)))
    else:
        raise ConfigError("bad-config", f"unknown eval mode {mode!r}")

    metrics["confusion"] = _confusion(truth, pred)
    _write_atomic(
        os.path.join(cfg.out_dir, "metrics.json"), json.dumps(metrics, indent=2)
    )
    buf = io.StringIO()
    writer = csv.writer(buf)
    n_scores = len(scores[0]) if scores else 1
    writer.writerow(
        ["sample_id"] + [f"score_{c}" for c in range(n_scores)] + ["predicted", "true"]
    )
    for i, s in enumerate(samples):
        writer.writerow([s.source_id or str(i)] + list(scores[i]) + [pred[i], truth[i]])
    _write_atomic(os.path.join(cfg.out_dir, "per_sample.csv"), buf.getvalue())
    _write_manifest(
        cfg,
        {"dataset_hash": _dataset_hash(samples),
         "outputs": ["metrics.json", "per_sample.csv"]},
    )
    return 0


def _float_pred_labels(model: ModelBundle, scores: np.ndarray) -> np.ndarray:
    label_arr = np.array(model.labels)
    if scores.shape[1] == 1:
        return np.where(scores[:, 0] > 0, label_arr[1], label_arr[0])
    return label_arr[np.argmax(scores, axis=1)]


def cmd_sweep(cfg: RunConfig, kind: str) -> int:
    seed = _require_seed(cfg)
    if kind == "dictsize":
        train_raw, test_raw = _load_dataset(cfg, seed)
        atoms = [int(a) for a in cfg.get_list("sweep.atoms", "10,25,50")]
        original, proposed = dict_size_sweep(
            atoms,
            train_raw,
            test_raw,
            _train_config(cfg, 0),
            _grid_spec(cfg),
            master_seed=seed,
            jobs=cfg.jobs,
        )
        _write_atomic(os.path.join(cfg.out_dir, "sweep_original.csv"), original.to_csv())
        _write_atomic(os.path.join(cfg.out_dir, "sweep_proposed.csv"), proposed.to_csv())
        _write_manifest(
            cfg,
            {"dataset_hash": _dataset_hash(train_raw),
             "outputs": ["sweep_original.csv", "sweep_proposed.csv"]},
        )
        return 0

    images = _texture_images(cfg, seed)
    patch = cfg.get_int("dataset.patch_size", 12)
    pairs = cfg.get_int("sweep.pairs", 10)
    per_class = cfg.get_int("dataset.train_patches", 500)
    test_per_class = cfg.get_int("dataset.test_patches", 500)
    train_regions, test_raw = texture_task(
        images, patch, per_class, test_per_class,
        master_seed=derive_seed(seed, "texture-task"),
    )
    models = train_texture_pairs(
        train_regions,
        _train_config(cfg, 0),
        n_pairs=pairs,
        patch_size=patch,
        train_per_class=per_class,
        master_seed=seed,
    )
    test_norm = normalize_batch(test_raw)
    if kind == "perturb":
        d_values = [float(v) for v in cfg.get_list("sweep.d_values")] or list(DEFAULT_D_VALUES)
        result = perturbation_sweep(models, d_values, test_norm, master_seed=seed)
    elif kind == "threshold":
        thresholds = [float(v) for v in cfg.get_list("sweep.thresholds")] or list(
            DEFAULT_THRESHOLDS
        )
        result = threshold_sweep(models, test_norm, thresholds)
    elif kind == "quantize":
        quanta = [int(v) for v in cfg.get_list("sweep.quanta")] or list(
            DEFAULT_QUANTA_SWEEP
        )
        result = quantization_sweep(models, test_raw, quanta)
    else:  # argparse choices make this unreachable from the command line
        raise ConfigError("bad-config", f"unknown sweep kind {kind!r}")
    _write_atomic(os.path.join(cfg.out_dir, "sweep.csv"), result.to_csv())
    _write_manifest(
        cfg,
        {"dataset_hash": _dataset_hash(test_raw), "kind": kind,
         "repeats": result.repeats, "outputs": ["sweep.csv"]},
    )
    return 0


def cmd_report(cfg: RunConfig) -> int:
    target = cfg.get("dir", cfg.out_dir)
    summary: dict = {"dir": target, "artifacts": {}}
    for name in sorted(os.listdir(target)):
        path = os.path.join(target, name)
        if name.endswith(".json") and name != "report.json":
            with open(path) as fh:
                summary["artifacts"][name] = json.load(fh)
        elif name.endswith(".csv"):
            with open(path) as fh:
                rows = fh.read().strip().splitlines()
            summary["artifacts"][name] = {"rows": max(0, len(rows) - 1)}
    _write_atomic(
        os.path.join(target, "report.json"), json.dumps(summary, indent=2)
    )
    for name, info in summary["artifacts"].items():
        if "rows" in info:
            print(f"{name}: {info['rows']} rows")
        elif "accuracy" in info:
            print(f"{name}: accuracy {info['accuracy']:.4f}")
        else:
            print(f"{name}: ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftclass",
        description="Train, compress and evaluate shift-add classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument(
            "--jobs",
            type=int,
            default=int(os.environ.get("SHIFTCLASS_JOBS", "1")),
            help="parallel jobs for grids/sweeps (env SHIFTCLASS_JOBS)",
        )
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value (repeatable)",
        )

    common(sub.add_parser("train", help="train a real-valued model"))
    p = sub.add_parser("compress", help="powerize + threshold a trained model")
    common(p)
    p.add_argument("--model", help="input model JSON")
    p = sub.add_parser("select", help="run the model-selection pipeline")
    common(p)
    p = sub.add_parser("eval", help="evaluate a model on a dataset")
    common(p)
    p.add_argument("--model", help="model JSON to evaluate")
    p.add_argument("--mode", choices=["float", "shift"], help="evaluation path")
    p = sub.add_parser("sweep", help="run a study sweep")
    common(p)
    p.add_argument(
        "--kind",
        required=True,
        choices=["perturb", "threshold", "quantize", "dictsize"],
    )
    p = sub.add_parser("report", help="summarize an output directory")
    common(p)
    p.add_argument("--dir", help="directory to summarize (default: --out)")
    return parser


def _run(args) -> int:
    values: dict = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for item in args.set:
        if "=" not in item:
            raise ConfigError("bad-config", f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    for attr in ("model", "mode", "dir"):
        if getattr(args, attr, None) is not None:
            values[attr] = getattr(args, attr)
    seed = args.seed if args.seed is not None else (
        int(values["seed"]) if "seed" in values else None
    )
    cfg = RunConfig(
        command=args.command,
        values=values,
        out_dir=args.out,
        seed=seed,
        jobs=max(1, args.jobs),
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "compress":
        return cmd_compress(cfg)
    if args.command == "select":
        return cmd_select(cfg)
    if args.command == "eval":
        return cmd_eval(cfg)
    if args.command == "sweep":
        return cmd_sweep(cfg, args.kind)
    if args.command == "report":
        return cmd_report(cfg)
    raise ConfigError("bad-config", f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except ShiftclassError as exc:
        code = 1
        name = "error"
        for klass, exit_code in EXIT_CODES.items():
            if isinstance(exc, klass):
                code = exit_code
                name = ERROR_NAMES.get(klass, getattr(exc, "code", "config"))
                break
        print(json.dumps({"error": name, "message": str(exc)}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
