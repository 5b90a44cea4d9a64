"""Pre-training loop, fine-tuning regimes, cross-validation and sweeps.

Fine-tuning always freezes the encoder except in the fully-trainable
baseline, and frozen submodules run in eval mode, so their activations can
be computed once per fold and reused across epochs and the learning-rate
grid. The decoder and band-power projector from a pre-training checkpoint
are discarded when fine-tuning.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import bandpower
from .corpus import SplitPlan, TaskDataset, subset_fraction
from .errors import DataError, DivergenceError, ParameterError, ShapeError, SplitError
from .network import (
    Checkpoint,
    EEGModel,
    ModelConfig,
    build_model,
    checkpoint_from_model,
    model_from_checkpoint,
)
from .objectives import combined_loss

MODES = ("pretrain", "finetune", "scratch")
OBJECTIVES = {"vanilla": 0.0, "knowledge": 5.0}
FREEZE_POLICIES = ("linear_probe", "last_s4", "all_s4", "fully_trainable")

RESULTS_HEADER = ("experiment_id", "axis", "fraction", "fold", "accuracy", "lr", "seed")
TRAINING_LOG_HEADER = ("iteration", "cos_sim_loss", "knowledge_loss", "combined", "wall_time_s")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "pretrain"
    objective: str = "knowledge"
    iterations: int = 500
    batch_size: int | None = None  # defaults to 32 for pre-training, 64 otherwise
    lr: float = 1e-3
    seed: int = 0
    freeze_policy: str = "linear_probe"
    pretrain_fraction: float = 1.0
    finetune_fraction: float = 1.0
    lr_grid: tuple[float, ...] = (1e-3, 1e-4)
    epochs: int = 50
    patience: int = 10
    n_fc: int = 1
    checkpoint_interval: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"unknown objective {self.objective!r}")
        if self.freeze_policy not in FREEZE_POLICIES:
            raise ParameterError(f"unknown freeze policy {self.freeze_policy!r}")
        for name in ("pretrain_fraction", "finetune_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ParameterError(f"{name} must be in (0, 1], got {value}")
        if self.iterations < 1 or self.epochs < 1:
            raise ParameterError("iterations and epochs must be >= 1")
        if self.batch_size is None:
            object.__setattr__(self, "batch_size", 32 if self.mode == "pretrain" else 64)
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.n_fc not in (1, 2):
            raise ParameterError(f"n_fc must be 1 or 2, got {self.n_fc}")

    @property
    def lam(self) -> float:
        return OBJECTIVES[self.objective]


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    cos_sim_loss: float
    knowledge_loss: float
    combined: float
    wall_time_s: float


@dataclass
class FoldResult:
    fold: int
    accuracy: float
    n_eval: int
    lr: float
    curve: list[tuple[int, float]] = field(default_factory=list)  # (epoch, inner val accuracy)
    confusion: np.ndarray | None = None


@dataclass
class PretrainResult:
    model: EEGModel
    checkpoint: Checkpoint
    history: list[LossRecord]


def write_training_log(path: str | Path, history: Sequence[LossRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_HEADER)
        for rec in history:
            writer.writerow(
                [rec.iteration, rec.cos_sim_loss, rec.knowledge_loss, rec.combined, rec.wall_time_s]
            )


class BandPowerCache:
    """Disk cache of ground-truth band powers, keyed by chunk content hash."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _key(self, chunk: np.ndarray, fs: float) -> str:
        digest = hashlib.sha1()
        digest.update(np.ascontiguousarray(chunk, dtype=np.float32).tobytes())
        digest.update(repr((bandpower.DEFAULT_BANDS, fs, bandpower.DEFAULT_EPS)).encode())
        return digest.hexdigest()

    def get(self, chunk: np.ndarray, fs: float = 250.0) -> np.ndarray:
        path = self.directory / f"{self._key(chunk, fs)}.npy"
        if path.exists():
            return np.load(path)
        value = bandpower.band_power(chunk, fs=fs)
        np.save(path, value)
        return value


def _ground_truth_band_power(chunks: np.ndarray, cache: BandPowerCache | None) -> np.ndarray:
    if cache is None:
        return bandpower.band_power(chunks).astype(np.float32)
    return np.stack([cache.get(c) for c in chunks]).astype(np.float32)


def pretrain(
    chunks: np.ndarray,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    *,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    cache: BandPowerCache | None = None,
) -> PretrainResult:
    """Self-supervised training for cfg.iterations steps over a chunk array.

    `chunks` is [n_chunks, n_channels, n_timesteps]; cfg.pretrain_fraction
    subsets it deterministically. Equal (seed, data, config) give a bitwise
    identical loss trajectory and final parameters.
    """
    chunks = np.asarray(chunks, dtype=np.float32)
    if chunks.ndim != 3 or chunks.shape[0] == 0:
        raise DataError("pre-training corpus is empty or not [n, channels, timesteps]")
    if chunks.shape[1:] != (model_cfg.n_channels, model_cfg.n_timesteps):
        raise ShapeError(
            f"chunks are {chunks.shape[1:]}, model expects "
            f"{(model_cfg.n_channels, model_cfg.n_timesteps)}"
        )
    keep = subset_fraction(range(len(chunks)), cfg.pretrain_fraction, cfg.seed)
    chunks = chunks[np.asarray(keep)]
    gt = _ground_truth_band_power(chunks, cache)

    model = build_model(model_cfg, seed=cfg.seed, with_decoder=True, with_projector=True)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    order_rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)

    history: list[LossRecord] = []
    start = time.perf_counter()
    iteration = 0
    model.train()
    while iteration < cfg.iterations:
        perm = order_rng.permutation(len(chunks))
        for lo in range(0, len(perm), cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            x = torch.from_numpy(chunks[idx])
            p_gt = torch.from_numpy(gt[idx])
            outputs = model(x)
            total, report = combined_loss(x, outputs.recon, p_gt, outputs.bandpower_est, cfg.lam)
            iteration += 1
            if not np.isfinite(report.combined):
                raise DivergenceError(iteration)
            optimizer.zero_grad(set_to_none=True)
            total.backward()
            optimizer.step()
            history.append(
                LossRecord(
                    iteration,
                    report.cos_sim_loss,
                    report.knowledge_loss,
                    report.combined,
                    time.perf_counter() - start,
                )
            )
            if (
                checkpoint_dir is not None
                and cfg.checkpoint_interval
                and iteration % cfg.checkpoint_interval == 0
            ):
                checkpoint_from_model(model, optimizer, iteration, cfg.seed, asdict(cfg)).save(
                    Path(checkpoint_dir) / f"checkpoint_{iteration:07d}.pt"
                )
            if iteration >= cfg.iterations:
                break

    ckpt = checkpoint_from_model(model, optimizer, iteration, cfg.seed, asdict(cfg))
    if checkpoint_dir is not None:
        ckpt.save(Path(checkpoint_dir) / "checkpoint.pt")
    if log_path is not None:
        write_training_log(log_path, history)
    return PretrainResult(model=model, checkpoint=ckpt, history=history)


def apply_freeze_policy(model: EEGModel, policy: str) -> list[str]:
    """Mark the policy's parameter set trainable and everything else frozen.

    Returns the sorted trainable parameter names. The decoder and projector
    are always frozen (fine-tuning discards them); the encoder trains only
    under fully_trainable.
    """
    if policy not in FREEZE_POLICIES:
        raise ParameterError(f"unknown freeze policy {policy!r}")
    if model.head is None:
        raise ParameterError("freeze policies apply to models with a classification head")
    for p in model.parameters():
        p.requires_grad_(False)
    trainable: list[torch.nn.Module] = [model.head]
    if policy == "last_s4":
        trainable.append(model.temporal.s4.layers[-1])
    elif policy == "all_s4":
        trainable.append(model.temporal)
    elif policy == "fully_trainable":
        trainable.extend([model.encoder, model.temporal])
    for module in trainable:
        for p in module.parameters():
            p.requires_grad_(True)
    return sorted(name for name, p in model.named_parameters() if p.requires_grad)


def _set_policy_train_mode(model: EEGModel, policy: str, training: bool) -> None:
    """Frozen submodules stay in eval mode so their features are deterministic."""
    model.eval()
    if not training:
        return
    model.head.train()
    if policy == "last_s4":
        model.temporal.s4.layers[-1].train()
    elif policy == "all_s4":
        model.temporal.train()
    elif policy == "fully_trainable":
        model.encoder.train()
        model.temporal.train()


def _feature_paths(
    model: EEGModel, policy: str
) -> tuple[Callable[[torch.Tensor], torch.Tensor], Callable[[torch.Tensor], torch.Tensor]]:
    """(frozen prefix, trainable suffix) of the forward pass for a policy.

    The prefix output is what can be precomputed once per fold; the suffix
    is the part optimization must differentiate through.
    """
    if policy == "fully_trainable":
        return (lambda x: x), (lambda z: model.classify(model.embed(model.encode(z))))
    if policy == "all_s4":
        return model.encode, (lambda z: model.classify(model.embed(z)))
    if policy == "last_s4":

        def prefix(x: torch.Tensor) -> torch.Tensor:
            h = model.temporal.input_linear(model.encode(x))
            for layer in model.temporal.s4.layers[:-1]:
                h = layer(h)
            return h

        return prefix, (lambda z: model.classify(model.temporal.s4.layers[-1](z)))
    # linear_probe: everything up to the pooled embedding is frozen
    return (lambda x: model.embed(model.encode(x)).mean(dim=-1)), (lambda z: model.head.fc(z))


@torch.no_grad()
def _precompute(fn: Callable, x: np.ndarray, batch_size: int) -> torch.Tensor:
    outs = [fn(torch.from_numpy(x[lo : lo + batch_size])) for lo in range(0, len(x), batch_size)]
    return torch.cat(outs, dim=0)


def make_finetune_model(
    checkpoint: Checkpoint | None,
    n_classes: int,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
    seed: int | None = None,
) -> EEGModel:
    """Classification model for fine-tuning; backbone from checkpoint if given."""
    seed = cfg.seed if seed is None else seed
    if checkpoint is None:
        if cfg.freeze_policy != "fully_trainable":
            raise ParameterError(
                f"freeze policy {cfg.freeze_policy!r} requires a pre-trained checkpoint"
            )
        if model_cfg is None:
            raise ParameterError("model_cfg is required when training from scratch")
        return build_model(
            model_cfg, seed=seed, with_decoder=False, with_projector=False,
            n_classes=n_classes, n_fc=cfg.n_fc,
        )
    return model_from_checkpoint(
        checkpoint, seed=seed, with_decoder=False, with_projector=False,
        n_classes=n_classes, n_fc=cfg.n_fc,
    )


def _accuracy(logits: torch.Tensor, y: torch.Tensor) -> float:
    return float((logits.argmax(dim=-1) == y).float().mean())


def _train_suffix(
    model: EEGModel,
    policy: str,
    suffix: Callable[[torch.Tensor], torch.Tensor],
    z_train: torch.Tensor,
    y_train: torch.Tensor,
    z_val: torch.Tensor,
    y_val: torch.Tensor,
    lr: float,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[float, list[tuple[int, float]]]:
    """Adam with early stopping on inner-validation accuracy.

    Restores the best-scoring parameters before returning (best_val_acc, curve).
    """
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=lr)
    best_acc, best_state, since_best = -1.0, None, 0
    curve: list[tuple[int, float]] = []
    for epoch in range(cfg.epochs):
        _set_policy_train_mode(model, policy, training=True)
        perm = rng.permutation(len(z_train))
        for lo in range(0, len(perm), cfg.batch_size):
            idx = torch.from_numpy(perm[lo : lo + cfg.batch_size])
            loss = F.cross_entropy(suffix(z_train[idx]), y_train[idx])
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
        _set_policy_train_mode(model, policy, training=False)
        with torch.no_grad():
            val_acc = _accuracy(suffix(z_val), y_val)
        curve.append((epoch, val_acc))
        if val_acc > best_acc:
            best_acc, since_best = val_acc, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    return best_acc, curve


def _inner_split(
    train_subjects: Sequence[str],
    dataset: TaskDataset,
    train_idx: np.ndarray,
    ys: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """80/20 validation split, subject-wise when possible, else trial-wise."""
    subjects = sorted(set(train_subjects))
    if len(subjects) >= 2:
        order = list(subjects)
        rng.shuffle(order)
        n_val = max(1, round(0.2 * len(order)))
        val_subjects = set(order[:n_val])
        inner_train = np.array([i for i in train_idx if dataset.subjects[i] not in val_subjects])
        inner_val = np.array([i for i in train_idx if dataset.subjects[i] in val_subjects])
        if (
            len(inner_val)
            and len(inner_train)
            and set(ys[np.isin(train_idx, inner_train)]) == set(range(n_classes))
        ):
            return inner_train, inner_val
    perm = rng.permutation(len(train_idx))
    n_val = max(1, round(0.2 * len(train_idx)))
    return train_idx[perm[n_val:]], train_idx[perm[:n_val]]


def finetune(
    checkpoint: Checkpoint | None,
    dataset: TaskDataset,
    split: SplitPlan,
    cfg: TrainConfig,
    model_cfg: ModelConfig | None = None,
) -> list[FoldResult]:
    """Cross-validated fine-tuning; one FoldResult per fold.

    Per fold: subset training trials to the configured fraction, tune the
    learning rate over cfg.lr_grid on an inner validation split, then score
    the best model on the held-out subjects. cfg.finetune_fraction wins over
    split.fraction when both are set.
    """
    if len(dataset.x) == 0:
        raise DataError("task dataset is empty")
    n_classes = dataset.n_classes
    fraction = cfg.finetune_fraction if cfg.finetune_fraction != 1.0 else split.fraction
    results: list[FoldResult] = []

    for fold in split.folds():
        overlap = set(fold.train_subjects) & set(fold.eval_subjects)
        assert not overlap, f"subject leakage in fold {fold.fold}: {overlap}"
        fold_seed = cfg.seed + fold.fold
        train_idx = dataset.indices_for_subjects(fold.train_subjects)
        eval_idx = dataset.indices_for_subjects(fold.eval_subjects)
        if len(eval_idx) == 0 or len(train_idx) == 0:
            raise SplitError(f"fold {fold.fold} has an empty train or eval side")
        train_idx = np.array(subset_fraction(list(train_idx), fraction, fold_seed))
        ys = dataset.y[train_idx]
        if set(ys.tolist()) != set(range(n_classes)):
            raise SplitError(
                f"fold {fold.fold}: training data lost a class after {fraction:g} subsetting"
            )
        rng = np.random.default_rng(fold_seed)
        torch.manual_seed(fold_seed)
        inner_train, inner_val = _inner_split(
            fold.train_subjects, dataset, train_idx, ys, n_classes, rng
        )

        # the frozen prefix is identical across the lr grid (same seed, same
        # checkpoint), so its activations are computed once per fold
        ref_model = make_finetune_model(checkpoint, n_classes, cfg, model_cfg, seed=fold_seed)
        apply_freeze_policy(ref_model, cfg.freeze_policy)
        prefix, _ = _feature_paths(ref_model, cfg.freeze_policy)
        _set_policy_train_mode(ref_model, cfg.freeze_policy, training=False)
        z_train = _precompute(prefix, dataset.x[inner_train], cfg.batch_size)
        z_val = _precompute(prefix, dataset.x[inner_val], cfg.batch_size)
        y_train = torch.from_numpy(dataset.y[inner_train])
        y_val = torch.from_numpy(dataset.y[inner_val])

        best = None  # (val_acc, -grid_pos, lr, model, curve)
        for grid_pos, lr in enumerate(cfg.lr_grid):
            model = make_finetune_model(checkpoint, n_classes, cfg, model_cfg, seed=fold_seed)
            apply_freeze_policy(model, cfg.freeze_policy)
            _, suffix = _feature_paths(model, cfg.freeze_policy)
            val_acc, curve = _train_suffix(
                model, cfg.freeze_policy, suffix,
                z_train, y_train, z_val, y_val, lr, cfg, rng,
            )
            if best is None or (val_acc, -grid_pos) > (best[0], best[1]):
                best = (val_acc, -grid_pos, lr, model, curve)

        _, _, lr, model, curve = best
        accuracy, confusion = evaluate(
            model, dataset.x[eval_idx], dataset.y[eval_idx], batch_size=cfg.batch_size
        )
        results.append(
            FoldResult(
                fold=fold.fold, accuracy=accuracy, n_eval=len(eval_idx),
                lr=lr, curve=curve, confusion=confusion,
            )
        )
    return results


def evaluate(
    model: EEGModel, x: np.ndarray, y: np.ndarray, batch_size: int = 64
) -> tuple[float, np.ndarray]:
    """Argmax accuracy and confusion matrix (rows: true class, cols: predicted)."""
    if len(x) == 0:
        raise DataError("evaluation set is empty")
    n_classes = model.head.n_classes
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    model.eval()
    with torch.no_grad():
        for lo in range(0, len(x), batch_size):
            xb = torch.from_numpy(np.asarray(x[lo : lo + batch_size], dtype=np.float32))
            preds = model.classify(model.embed(model.encode(xb))).argmax(dim=-1).numpy()
            for t, p in zip(y[lo : lo + batch_size], preds):
                confusion[int(t), int(p)] += 1
    return float(np.trace(confusion) / confusion.sum()), confusion


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    mean_accuracy: float
    std_accuracy: float
    fold_accuracies: tuple[float, ...]


def write_results_csv(path: str | Path, rows: Sequence[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def plot_sweep(points: Sequence[SweepPoint], path: str | Path, xlabel: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    points = sorted(points, key=lambda p: p.fraction)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(
        [p.fraction * 100 for p in points],
        [p.mean_accuracy * 100 for p in points],
        yerr=[p.std_accuracy * 100 for p in points],
        marker="o",
        capsize=3,
    )
    ax.set_xlabel(f"{xlabel} (%)")
    ax.set_ylabel("accuracy (%)")
    ax.grid(True, linestyle="--", alpha=0.4)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sweep(
    axis: str,
    values: Sequence[float],
    *,
    dataset: TaskDataset,
    split: SplitPlan,
    finetune_cfg: TrainConfig,
    checkpoint: Checkpoint | None = None,
    chunks: np.ndarray | None = None,
    pretrain_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    out_dir: str | Path | None = None,
    experiment_id: str = "sweep",
) -> list[SweepPoint]:
    """Data-efficiency sweep along one fraction axis.

    finetune_fraction varies the per-fold training subset against a fixed
    checkpoint; pretrain_fraction re-pretrains on a corpus subset per value,
    then fine-tunes. Writes per-fold results, a summary CSV and a plot when
    out_dir is given.
    """
    if axis not in ("finetune_fraction", "pretrain_fraction"):
        raise ParameterError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ParameterError("sweep needs at least one value")
    for v in values:
        if not 0.0 < v <= 1.0:
            raise ParameterError(f"sweep fraction {v} outside (0, 1]")
    if axis == "pretrain_fraction" and (chunks is None or pretrain_cfg is None or model_cfg is None):
        raise ParameterError("pretrain_fraction sweeps need chunks, pretrain_cfg and model_cfg")

    points: list[SweepPoint] = []
    rows: list[dict] = []
    for value in values:
        if axis == "finetune_fraction":
            cfg = replace(finetune_cfg, finetune_fraction=value)
            ckpt = checkpoint
        else:
            cfg = finetune_cfg
            ckpt = pretrain(chunks, replace(pretrain_cfg, pretrain_fraction=value), model_cfg).checkpoint
        folds = finetune(ckpt, dataset, split, cfg, model_cfg)
        accs = np.array([f.accuracy for f in folds])
        points.append(SweepPoint(value, float(accs.mean()), float(accs.std()), tuple(accs)))
        rows.extend(
            {
                "experiment_id": experiment_id, "axis": axis, "fraction": value,
                "fold": f.fold, "accuracy": f.accuracy, "lr": f.lr, "seed": cfg.seed,
            }
            for f in folds
        )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_results_csv(out_dir / "results.csv", rows)
        with open(out_dir / "summary.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "fraction", "mean_accuracy", "std_accuracy", "n_folds"])
            for p in points:
                writer.writerow([axis, p.fraction, p.mean_accuracy, p.std_accuracy, len(p.fold_accuracies)])
        plot_sweep(points, out_dir / f"{axis}_sweep.png", xlabel=axis.replace("_", " "))
    return points
