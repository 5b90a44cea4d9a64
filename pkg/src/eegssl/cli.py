"""Command-line surface: preprocess, synth, bandpower, pretrain, finetune,
sweep and report.

Every run writes a manifest into its output directory before any compute,
then logs, CSVs and plots. Config files are JSON validated against the
schema below; command-line flags override config fields. Exit codes:
0 success, 1 usage/config error, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bandpower import BAND_NAMES, band_power
from .corpus import (
    CHUNK_FS,
    CHUNK_SAMPLES,
    PRETRAIN_CHANNELS,
    chunk,
    load_recording,
    load_task_dataset,
    make_split,
    save_task_dataset,
    synth_recording,
    synthetic_classification_task,
    write_recording,
)
from .errors import ConfigError, DataError, DivergenceError, EEGSSLError, ParameterError
from .network import Checkpoint, ModelConfig
from .preprocess import PreprocessConfig, preprocess_pipeline
from .training import (
    RESULTS_HEADER,
    TrainConfig,
    finetune,
    pretrain,
    sweep,
    write_results_csv,
)

OUT_ROOT_ENV = "EEGSSL_OUT_ROOT"

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_channels": {"type": "integer", "minimum": 1},
                "n_timesteps": {"type": "integer", "minimum": 1},
                "encoder": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {"type": "integer", "minimum": 1},
                        "minItems": 3,
                        "maxItems": 3,
                    },
                    "minItems": 1,
                },
                "d_model": {"type": "integer", "minimum": 1},
                "n_s4_layers": {"type": "integer", "minimum": 1},
                "d_state": {"type": "integer", "minimum": 2},
                "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "pool_group": {"type": "integer", "minimum": 1},
                "n_bands": {"type": "integer", "minimum": 1},
                "head_hidden": {"type": "integer", "minimum": 1},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["pretrain", "finetune", "scratch"]},
                "objective": {"enum": ["vanilla", "knowledge"]},
                "iterations": {"type": "integer", "minimum": 1},
                "batch_size": {"type": ["integer", "null"], "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "freeze_policy": {
                    "enum": ["linear_probe", "last_s4", "all_s4", "fully_trainable"]
                },
                "pretrain_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "finetune_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "lr_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "epochs": {"type": "integer", "minimum": 1},
                "patience": {"type": "integer", "minimum": 1},
                "n_fc": {"enum": [1, 2]},
                "checkpoint_interval": {"type": "integer", "minimum": 0},
            },
        },
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "notch_hz": {"type": "number", "exclusiveMinimum": 0},
                "band": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "target_fs": {"type": "number", "exclusiveMinimum": 0},
                "notch_q": {"type": "number", "exclusiveMinimum": 0},
                "bandpass_order": {"type": "integer", "minimum": 1},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_recordings": {"type": "integer", "minimum": 1},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "fs": {"type": "number", "exclusiveMinimum": 0},
                "noise_std": {"type": "number", "minimum": 0},
                "n_subjects": {"type": "integer", "minimum": 1},
                "trials_per_class": {"type": "integer", "minimum": 1},
                "class_freqs": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                },
            },
        },
    },
}


def load_config(path: str | None) -> dict:
    """Read and schema-validate a JSON config; missing path means defaults."""
    if path is None:
        return {}
    import jsonschema

    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: e.json_path)
    if errors:
        first = errors[0]
        raise ConfigError(f"config invalid at {first.json_path}: {first.message}")
    return raw


def _model_config(config: dict) -> ModelConfig:
    section = dict(config.get("model", {}))
    if "encoder" in section:
        section["encoder"] = tuple(tuple(m) for m in section["encoder"])
    return ModelConfig(**section)


def _train_config(config: dict, overrides: dict) -> TrainConfig:
    section = dict(config.get("train", {}))
    section.update({k: v for k, v in overrides.items() if v is not None})
    if "lr_grid" in section:
        section["lr_grid"] = tuple(section["lr_grid"])
    return TrainConfig(**section)


def _preprocess_config(config: dict) -> PreprocessConfig:
    section = dict(config.get("preprocess", {}))
    if "band" in section:
        section["band"] = tuple(section["band"])
    return PreprocessConfig(**section)


def _code_version() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except OSError:
        pass
    return __version__


def resolve_out_dir(out: str | None, experiment_id: str) -> Path:
    if out is not None:
        return Path(out)
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / experiment_id


def write_manifest(out_dir: Path, args: argparse.Namespace, experiment_id: str) -> Path:
    """Record what is about to run; written before any compute starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    config_hash = None
    if getattr(args, "config", None):
        config_hash = hashlib.sha256(Path(args.config).read_bytes()).hexdigest()
    manifest = {
        "experiment_id": experiment_id,
        "command": args.command,
        "argv": sys.argv[1:],
        "config_path": getattr(args, "config", None),
        "config_sha256": config_hash,
        "code_version": _code_version(),
        "seed": getattr(args, "seed", None),
        "out_dir": str(out_dir),
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def cmd_preprocess(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    cfg = _preprocess_config(config)
    in_dir = Path(args.in_dir)
    files = sorted(in_dir.glob("*.erf"))
    if not files:
        print(f"no input: no .erf files in {in_dir}", file=sys.stderr)
        return 2
    out_dir = resolve_out_dir(args.out, args.experiment_id)
    write_manifest(out_dir, args, args.experiment_id)
    failures = []
    for path in files:
        try:
            rec = load_recording(path)
            processed = preprocess_pipeline(rec, cfg)
            write_recording(out_dir / path.name, processed)
            print(
                f"{path.name}: {processed.n_channels} channels, "
                f"{processed.duration_s:.1f} s at {processed.fs:g} Hz"
            )
        except EEGSSLError as exc:
            failures.append((path.name, str(exc)))
    if failures:
        for name, message in failures:
            print(f"failed {name}: {message}", file=sys.stderr)
        return 2
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    section = config.get("synth", {})
    out_dir = resolve_out_dir(args.out, args.experiment_id)
    write_manifest(out_dir, args, args.experiment_id)
    if args.kind == "corpus":
        n_recordings = section.get("n_recordings", 10)
        duration_s = section.get("duration_s", CHUNK_SAMPLES / CHUNK_FS)
        fs = section.get("fs", CHUNK_FS)
        noise_std = section.get("noise_std", 0.3)
        tones = (2.0, 6.0, 10.0, 22.0, 40.0)
        for i in range(n_recordings):
            tone = tones[i % len(tones)]
            spec = [(name, [(tone, 1.0)]) for name in PRETRAIN_CHANNELS]
            rec = synth_recording(
                spec, noise_std=noise_std, duration_s=duration_s, fs=fs,
                seed=args.seed + i, subject_id=f"synth{i:03d}",
            )
            write_recording(out_dir / f"recording_{i:03d}.erf", rec)
        print(f"wrote {n_recordings} recordings to {out_dir}")
        return 0
    dataset = synthetic_classification_task(
        n_subjects=section.get("n_subjects", 9),
        trials_per_class=section.get("trials_per_class", 10),
        class_freqs=tuple(section.get("class_freqs", (10.0, 22.0))),
        noise_std=section.get("noise_std", 0.5),
        seed=args.seed,
    )
    save_task_dataset(dataset, out_dir / "trials")
    print(f"wrote {len(dataset.x)} trials ({dataset.n_classes} classes) to {out_dir / 'trials'}")
    return 0


def cmd_bandpower(args: argparse.Namespace) -> int:
    in_path = Path(args.in_dir)
    files = sorted(in_path.glob("*.erf")) if in_path.is_dir() else [in_path]
    if not files or not files[0].exists():
        print(f"no input: {in_path}", file=sys.stderr)
        return 2
    out_dir = resolve_out_dir(args.out, args.experiment_id)
    write_manifest(out_dir, args, args.experiment_id)
    for path in files:
        rec = load_recording(path)
        pieces = chunk(rec, length=args.chunk_samples)
        if not pieces:
            print(f"{path.name}: shorter than one chunk, skipped", file=sys.stderr)
            continue
        csv_path = out_dir / f"{path.stem}_bandpower.csv"
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chunk", "channel", "band", "window", "log_power"])
            for ci, piece in enumerate(pieces):
                values = band_power(piece, fs=rec.fs)
                for ch_i, ch_name in enumerate(rec.channels):
                    for b_i, b_name in enumerate(BAND_NAMES):
                        for w_i in range(values.shape[-1]):
                            writer.writerow([ci, ch_name, b_name, w_i, values[ch_i, b_i, w_i]])
        print(f"{path.name}: {len(pieces)} chunks -> {csv_path.name}")
    return 0


def _load_chunk_corpus(corpus_dir: Path, model_cfg: ModelConfig) -> np.ndarray:
    files = sorted(corpus_dir.glob("*.erf"))
    if not files:
        raise DataError(f"no .erf files in {corpus_dir}")
    pieces = []
    for path in files:
        rec = load_recording(path)
        if rec.n_channels != model_cfg.n_channels:
            raise DataError(
                f"{path.name}: {rec.n_channels} channels, model expects {model_cfg.n_channels}"
            )
        pieces.extend(chunk(rec, length=model_cfg.n_timesteps))
    if not pieces:
        raise DataError(f"recordings in {corpus_dir} are all shorter than one chunk")
    return np.stack(pieces)


def cmd_pretrain(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model_cfg = _model_config(config)
    cfg = _train_config(
        config,
        {
            "mode": "pretrain",
            "objective": args.objective,
            "iterations": args.iterations,
            "batch_size": args.batch_size,
            "seed": args.seed,
        },
    )
    run_label = f"{cfg.objective}-s4"
    out_dir = resolve_out_dir(args.out, args.experiment_id or run_label)
    write_manifest(out_dir, args, args.experiment_id or run_label)
    chunks = _load_chunk_corpus(Path(args.corpus), model_cfg)
    print(f"run label: {run_label}; {len(chunks)} chunks; {cfg.iterations} iterations")
    result = pretrain(chunks, cfg, model_cfg, log_path=out_dir / "training_log.csv")
    ckpt_path = result.checkpoint.save(out_dir / "checkpoint.pt")
    last = result.history[-1]
    print(
        f"done: combined {last.combined:.4f} (cos {last.cos_sim_loss:.4f}, "
        f"knowledge {last.knowledge_loss:.4f}) -> {ckpt_path}"
    )
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    cfg = _train_config(
        config,
        {
            "mode": "finetune",
            "freeze_policy": args.policy,
            "finetune_fraction": args.fraction,
            "seed": args.seed,
            "n_fc": args.n_fc,
        },
    )
    model_cfg = _model_config(config)
    checkpoint = None
    if args.checkpoint is not None:
        if not Path(args.checkpoint).exists():
            print(f"checkpoint not found: {args.checkpoint}", file=sys.stderr)
            return 1
        checkpoint = Checkpoint.load(args.checkpoint)
    experiment_id = args.experiment_id or cfg.freeze_policy
    out_dir = resolve_out_dir(args.out, experiment_id)
    write_manifest(out_dir, args, experiment_id)
    dataset = load_task_dataset(args.task)
    subjects = sorted(set(dataset.subjects))
    split = make_split(subjects, args.scheme, k=args.k, seed=cfg.seed)
    results = finetune(checkpoint, dataset, split, cfg, model_cfg)
    rows = [
        {
            "experiment_id": experiment_id, "axis": "finetune_fraction",
            "fraction": cfg.finetune_fraction, "fold": r.fold,
            "accuracy": r.accuracy, "lr": r.lr, "seed": cfg.seed,
        }
        for r in results
    ]
    write_results_csv(out_dir / "results.csv", rows)
    accs = np.array([r.accuracy for r in results])
    for r in results:
        print(f"fold {r.fold}: accuracy {r.accuracy:.4f} (lr {r.lr:g}, n_eval {r.n_eval})")
    print(f"mean accuracy {accs.mean():.4f} +/- {accs.std():.4f} over {len(results)} folds")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    model_cfg = _model_config(config)
    finetune_cfg = _train_config(
        config, {"mode": "finetune", "freeze_policy": args.policy, "seed": args.seed, "n_fc": args.n_fc}
    )
    values = tuple(float(v) for v in args.values.split(","))
    experiment_id = args.experiment_id or f"sweep-{args.axis}"
    out_dir = resolve_out_dir(args.out, experiment_id)
    write_manifest(out_dir, args, experiment_id)
    dataset = load_task_dataset(args.task)
    subjects = sorted(set(dataset.subjects))
    split = make_split(subjects, args.scheme, k=args.k, seed=finetune_cfg.seed)

    checkpoint = chunks = pretrain_cfg = None
    if args.axis == "finetune_fraction":
        if args.checkpoint is None and args.policy != "fully_trainable":
            print("finetune_fraction sweeps need --checkpoint (or fully_trainable)", file=sys.stderr)
            return 1
        if args.checkpoint is not None:
            checkpoint = Checkpoint.load(args.checkpoint)
    else:
        if args.corpus is None:
            print("pretrain_fraction sweeps need --corpus", file=sys.stderr)
            return 1
        chunks = _load_chunk_corpus(Path(args.corpus), model_cfg)
        pretrain_cfg = _train_config(
            config,
            {"mode": "pretrain", "objective": args.objective, "iterations": args.iterations,
             "seed": args.seed},
        )
    points = sweep(
        args.axis, values, dataset=dataset, split=split, finetune_cfg=finetune_cfg,
        checkpoint=checkpoint, chunks=chunks, pretrain_cfg=pretrain_cfg,
        model_cfg=model_cfg, out_dir=out_dir, experiment_id=experiment_id,
    )
    for p in points:
        print(
            f"{args.axis} {p.fraction:g}: accuracy {p.mean_accuracy:.4f} "
            f"+/- {p.std_accuracy:.4f} ({len(p.fold_accuracies)} folds)"
        )
    return 0


def _rows_from_results(results_dir: Path) -> list[dict]:
    rows = []
    for csv_path in sorted(results_dir.rglob("results.csv")):
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or set(RESULTS_HEADER) - set(reader.fieldnames):
                continue
            rows.extend(reader)
    return rows


def cmd_report(args: argparse.Namespace) -> int:
    results_dir = Path(args.results)
    rows = _rows_from_results(results_dir)
    if not rows:
        print(f"no results.csv files with data under {results_dir}", file=sys.stderr)
        return 2
    out_dir = resolve_out_dir(args.out, args.experiment_id)
    write_manifest(out_dir, args, args.experiment_id)

    groups: dict[tuple[str, str, float], list[float]] = {}
    for row in rows:
        key = (row["experiment_id"], row["axis"], float(row["fraction"]))
        groups.setdefault(key, []).append(float(row["accuracy"]))

    lines = ["experiment            axis                fraction  accuracy (mean +/- std, n)"]
    for (exp, axis, fraction), accs in sorted(groups.items()):
        arr = np.array(accs)
        lines.append(
            f"{exp:<20}  {axis:<18}  {fraction:>7.3g}  "
            f"{arr.mean() * 100:6.2f} +/- {arr.std() * 100:5.2f}  (n={len(arr)})"
        )
    report_text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(report_text)
    print(report_text, end="")

    # accuracy-vs-fraction plot for experiments swept along an axis
    by_exp: dict[tuple[str, str], dict[float, np.ndarray]] = {}
    for (exp, axis, fraction), accs in groups.items():
        by_exp.setdefault((exp, axis), {})[fraction] = np.array(accs)
    sweeps = {k: v for k, v in by_exp.items() if len(v) > 1}
    if sweeps:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for (exp, axis), series in sorted(sweeps.items()):
            fractions = sorted(series)
            ax.errorbar(
                [f * 100 for f in fractions],
                [series[f].mean() * 100 for f in fractions],
                yerr=[series[f].std() * 100 for f in fractions],
                marker="o", capsize=3, label=f"{exp} ({axis})",
            )
        ax.set_xlabel("fraction (%)")
        ax.set_ylabel("accuracy (%)")
        ax.grid(True, linestyle="--", alpha=0.4)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / "accuracy_vs_fraction.png", dpi=120)
        plt.close(fig)
        print(f"plot: {out_dir / 'accuracy_vs_fraction.png'}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help=f"output directory (default ${OUT_ROOT_ENV}/<id>)")
    parser.add_argument("--workers", type=int, default=1, help="reserved for parallel sweeps")
    parser.add_argument("--experiment-id", dest="experiment_id", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegssl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="condition ERF recordings")
    p.add_argument("--in", dest="in_dir", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_preprocess, experiment_id_default="preprocess")

    p = sub.add_parser("synth", help="generate synthetic ERF data")
    p.add_argument("--kind", choices=["corpus", "task"], default="corpus")
    _add_common(p)
    p.set_defaults(func=cmd_synth, experiment_id_default="synth")

    p = sub.add_parser("bandpower", help="emit band-power CSVs for recordings")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--chunk-samples", dest="chunk_samples", type=int, default=CHUNK_SAMPLES)
    _add_common(p)
    p.set_defaults(func=cmd_bandpower, experiment_id_default="bandpower")

    p = sub.add_parser("pretrain", help="self-supervised pre-training")
    p.add_argument("--corpus", required=True, help="directory of ERF recordings")
    p.add_argument("--objective", choices=["vanilla", "knowledge"], default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_pretrain, experiment_id_default=None)

    p = sub.add_parser("finetune", help="cross-validated fine-tuning")
    p.add_argument("--task", required=True, help="directory of single-trial ERF files")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--policy", choices=["linear_probe", "last_s4", "all_s4", "fully_trainable"], default=None)
    p.add_argument("--scheme", choices=["kfold", "loso"], default="kfold")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--n-fc", dest="n_fc", type=int, choices=[1, 2], default=None)
    _add_common(p)
    p.set_defaults(func=cmd_finetune, experiment_id_default=None)

    p = sub.add_parser("sweep", help="data-efficiency sweep")
    p.add_argument("--axis", choices=["finetune_fraction", "pretrain_fraction"], required=True)
    p.add_argument("--values", required=True, help="comma-separated fractions, e.g. 1.0,0.5,0.3,0.1")
    p.add_argument("--task", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--corpus", default=None)
    p.add_argument("--objective", choices=["vanilla", "knowledge"], default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--policy", choices=["linear_probe", "last_s4", "all_s4", "fully_trainable"], default=None)
    p.add_argument("--scheme", choices=["kfold", "loso"], default="kfold")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--n-fc", dest="n_fc", type=int, choices=[1, 2], default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sweep, experiment_id_default=None)

    p = sub.add_parser("report", help="summarize results CSVs into tables and plots")
    p.add_argument("--results", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_report, experiment_id_default="report")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.experiment_id is None:
        # pretrain/finetune/sweep derive their own label when unset
        args.experiment_id = getattr(args, "experiment_id_default", None)
    try:
        return args.func(args)
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
