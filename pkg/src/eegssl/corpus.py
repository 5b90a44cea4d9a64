"""Recordings, channel selection/mapping, chunking, splits and synthetic data.

Everything here is plain numpy; tensors only appear once data reaches the
model. Recordings hold float32 microvolt samples so that the on-disk format
round-trips bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .erf import read_recording as load_recording  # noqa: F401  (canonical loader name)
from .erf import write_recording  # noqa: F401
from .errors import MissingChannelError, ParameterError
from .montage import MontageTable, standard_montage  # noqa: F401

# channel universe used for pre-training, in canonical order
PRETRAIN_CHANNELS = [
    "Fp1", "F7", "F3", "Fz", "F4", "F8", "Fp2", "T3", "C3", "Cz",
    "C4", "T4", "T5", "P3", "Pz", "P4", "T6", "O1", "O2",
]

CHUNK_SAMPLES = 15360
CHUNK_FS = 250.0


@dataclass
class Recording:
    """Multichannel EEG time series with labels, sampling rate and metadata."""

    channels: list[str]
    fs: float
    data: np.ndarray  # [n_channels, n_samples], float32 microvolts
    subject_id: str = ""
    annotations: list[tuple[float, float, str]] = field(default_factory=list)

    def __post_init__(self):
        self.channels = list(self.channels)
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] != len(self.channels):
            raise ValueError(
                f"{len(self.channels)} channel labels but {self.data.shape[0]} data rows"
            )
        if self.data.shape[1] < 1:
            raise ValueError("recording must contain at least one sample")
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("channel labels must be unique")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    def with_data(self, data: np.ndarray, fs: float | None = None) -> "Recording":
        """Copy of this recording with replaced samples (and optionally rate)."""
        return replace(self, data=data, fs=self.fs if fs is None else fs)


def select_channels(rec: Recording, wanted: Sequence[str]) -> Recording:
    """Keep exactly `wanted`, reordered to match; missing labels are an error."""
    index = {label: i for i, label in enumerate(rec.channels)}
    missing = [label for label in wanted if label not in index]
    if missing:
        raise MissingChannelError(missing)
    rows = [index[label] for label in wanted]
    return replace(rec, channels=list(wanted), data=rec.data[rows].copy())


def map_channels_by_proximity(
    rec: Recording, target: Sequence[str], montage: MontageTable | None = None
) -> tuple[Recording, dict[str, str]]:
    """Reassign `rec` rows to `target` labels by nearest electrode position.

    Each target label receives the row of the source channel whose montage
    coordinate is closest in Euclidean distance; exact ties go to the
    lexicographically smallest source label. Returns the remapped recording
    and the target -> source table.
    """
    montage = montage if montage is not None else standard_montage()
    src_coords = np.stack([montage[label] for label in rec.channels])
    mapping: dict[str, str] = {}
    rows = []
    for label in target:
        dists = np.linalg.norm(src_coords - montage[label], axis=1)
        best = dists.min()
        chosen = min(rec.channels[i] for i in np.flatnonzero(dists == best))
        mapping[label] = chosen
        rows.append(rec.channels.index(chosen))
    remapped = replace(rec, channels=list(target), data=rec.data[rows].copy())
    return remapped, mapping


def chunk(rec: Recording, length: int = CHUNK_SAMPLES, drop_last: bool = True) -> list[np.ndarray]:
    """Split into consecutive non-overlapping [n_channels, length] windows.

    A recording shorter than one window yields an empty list. With
    drop_last=False the final partial window is kept (shorter than length).
    """
    if length < 1:
        raise ParameterError(f"chunk length must be >= 1, got {length}")
    n_full = rec.n_samples // length
    out = [rec.data[:, i * length : (i + 1) * length].copy() for i in range(n_full)]
    tail = rec.n_samples - n_full * length
    if tail and not drop_last:
        out.append(rec.data[:, n_full * length :].copy())
    return out


def synth_recording(
    spec: Sequence[tuple[str, Sequence[tuple[float, float]]]],
    noise_std: float = 0.0,
    duration_s: float = 61.44,
    fs: float = 250.0,
    seed: int = 0,
    subject_id: str = "synth",
) -> Recording:
    """Generate a recording of sinusoids plus white noise, per channel.

    `spec` lists (channel_label, [(freq_hz, amplitude), ...]). Phases are
    drawn from `seed`, so equal arguments give bitwise-equal output.
    """
    for label, components in spec:
        for freq, _ in components:
            if freq >= fs / 2:
                raise ParameterError(f"{label}: {freq} Hz is at or above Nyquist ({fs / 2} Hz)")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    rows = []
    for _, components in spec:
        x = np.zeros(n)
        for freq, amp in components:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x += amp * np.sin(2.0 * np.pi * freq * t + phase)
        if noise_std > 0:
            x += rng.normal(0.0, noise_std, n)
        rows.append(x)
    data = np.array(rows, dtype=np.float32).reshape(len(spec), n)
    return Recording(
        channels=[label for label, _ in spec], fs=fs, data=data, subject_id=subject_id
    )


@dataclass(frozen=True)
class Fold:
    fold: int
    train_subjects: list[str]
    eval_subjects: list[str]


@dataclass(frozen=True)
class SplitPlan:
    """Subject-level fold assignment plus the training-fraction knob."""

    scheme: str  # "kfold" or "loso"
    k: int
    assignments: dict[str, int]  # subject -> eval fold index
    fraction: float = 1.0
    seed: int = 0

    def folds(self) -> list[Fold]:
        subjects = list(self.assignments)
        return [
            Fold(
                fold=i,
                train_subjects=[s for s in subjects if self.assignments[s] != i],
                eval_subjects=[s for s in subjects if self.assignments[s] == i],
            )
            for i in range(self.k)
        ]


def make_split(
    subjects: Sequence[str], scheme: str = "kfold", *, k: int = 5, seed: int = 0,
    fraction: float = 1.0,
) -> SplitPlan:
    """Assign each subject to exactly one eval fold, deterministically."""
    subjects = list(subjects)
    if len(set(subjects)) != len(subjects):
        raise ParameterError("subject ids must be unique")
    if not subjects:
        raise ParameterError("no subjects to split")
    if scheme == "loso":
        ordered = sorted(subjects)
        return SplitPlan(
            scheme="loso", k=len(ordered),
            assignments={s: i for i, s in enumerate(ordered)}, fraction=fraction, seed=seed,
        )
    if scheme != "kfold":
        raise ParameterError(f"unknown split scheme {scheme!r}")
    if k < 2:
        raise ParameterError(f"kfold needs k >= 2, got {k}")
    if k > len(subjects):
        raise ParameterError(f"k={k} exceeds the {len(subjects)} available subjects")
    order = list(subjects)
    np.random.default_rng(seed).shuffle(order)
    return SplitPlan(
        scheme="kfold", k=k,
        assignments={s: i % k for i, s in enumerate(order)}, fraction=fraction, seed=seed,
    )


def subset_fraction(items: Sequence, fraction: float, seed: int = 0) -> list:
    """Keep ceil(fraction * n) items, uniformly without replacement.

    Original order is preserved; fraction 1.0 is the identity.
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {fraction}")
    items = list(items)
    if fraction == 1.0:
        return items
    n_keep = math.ceil(fraction * len(items))
    rng = np.random.default_rng(seed)
    keep = sorted(rng.choice(len(items), size=n_keep, replace=False))
    return [items[i] for i in keep]


def _standardize_rows(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    return ((x - mean) / std).astype(np.float32)


@dataclass
class TaskDataset:
    """Labeled classification trials, one canonical chunk per trial."""

    x: np.ndarray  # [n_trials, n_channels, n_timesteps], float32
    y: np.ndarray  # [n_trials], int64 class indices
    subjects: list[str]
    class_names: list[str]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        if not (len(self.x) == len(self.y) == len(self.subjects)):
            raise ValueError("x, y and subjects must have equal length")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def indices_for_subjects(self, subjects: Iterable[str]) -> np.ndarray:
        wanted = set(subjects)
        return np.flatnonzero(np.array([s in wanted for s in self.subjects]))

    def subset(self, indices: np.ndarray) -> "TaskDataset":
        return TaskDataset(
            x=self.x[indices], y=self.y[indices],
            subjects=[self.subjects[i] for i in indices], class_names=self.class_names,
        )


def save_task_dataset(dataset: TaskDataset, directory) -> list:
    """Write one annotated ERF file per trial (the on-disk task format)."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(len(dataset.x)):
        label = dataset.class_names[dataset.y[i]]
        rec = Recording(
            channels=[f"ch{j}" for j in range(dataset.x.shape[1])]
            if dataset.x.shape[1] != len(PRETRAIN_CHANNELS)
            else list(PRETRAIN_CHANNELS),
            fs=CHUNK_FS,
            data=dataset.x[i],
            subject_id=dataset.subjects[i],
            annotations=[(0.0, dataset.x.shape[2] / CHUNK_FS, label)],
        )
        path = directory / f"trial_{i:05d}.erf"
        write_recording(path, rec)
        paths.append(path)
    return paths


def load_task_dataset(directory) -> TaskDataset:
    """Read a directory of single-trial ERF files into a TaskDataset.

    Each file carries exactly one annotation whose label names the class;
    the subject comes from the header. Class indices follow sorted label
    order.
    """
    from pathlib import Path

    from .errors import DataError

    files = sorted(Path(directory).glob("*.erf"))
    if not files:
        raise DataError(f"no .erf trials found in {directory}")
    xs, labels, subjects = [], [], []
    for path in files:
        rec = load_recording(path)
        if len(rec.annotations) != 1:
            raise DataError(f"{path}: expected exactly one trial annotation")
        xs.append(rec.data)
        labels.append(rec.annotations[0][2])
        subjects.append(rec.subject_id)
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise DataError(f"trials disagree on shape: {sorted(shapes)}")
    class_names = sorted(set(labels))
    index = {name: i for i, name in enumerate(class_names)}
    return TaskDataset(
        x=np.stack(xs),
        y=np.array([index[l] for l in labels], dtype=np.int64),
        subjects=subjects,
        class_names=class_names,
    )


# characteristic frequency used for each synthetic band-dominant subject
_BAND_TONES = (2.0, 6.0, 10.0, 22.0, 40.0)


def synthetic_band_corpus(
    n_chunks: int,
    n_channels: int = 19,
    n_timesteps: int = CHUNK_SAMPLES,
    fs: float = CHUNK_FS,
    noise_std: float = 0.3,
    seed: int = 0,
) -> np.ndarray:
    """Pre-training corpus of standardized chunks from band-dominant subjects.

    Chunk i carries a dominant tone cycling through the five canonical bands,
    with per-channel random phase, so spectral content varies across the
    corpus the way subjects would.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_timesteps) / fs
    chunks = np.empty((n_chunks, n_channels, n_timesteps), dtype=np.float32)
    for i in range(n_chunks):
        tone = _BAND_TONES[i % len(_BAND_TONES)]
        amp = rng.uniform(0.8, 1.2)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_channels, 1))
        x = amp * np.sin(2.0 * np.pi * tone * t[None, :] + phases)
        x = x + rng.normal(0.0, noise_std, size=x.shape)
        chunks[i] = _standardize_rows(x)
    return chunks


def synthetic_classification_task(
    n_subjects: int = 9,
    trials_per_class: int = 10,
    class_freqs: Sequence[float] = (10.0, 22.0),
    n_channels: int = 19,
    n_timesteps: int = CHUNK_SAMPLES,
    fs: float = CHUNK_FS,
    noise_std: float = 0.5,
    seed: int = 0,
) -> TaskDataset:
    """Separable-by-construction task: class c is dominated by class_freqs[c].

    Subjects differ by amplitude jitter and phases; trials are standardized
    per channel like the real pipeline output.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_timesteps) / fs
    xs, ys, subjects = [], [], []
    for s in range(n_subjects):
        gains = rng.uniform(0.8, 1.2, size=len(class_freqs))
        for c, freq in enumerate(class_freqs):
            for _ in range(trials_per_class):
                phases = rng.uniform(0.0, 2.0 * np.pi, size=(n_channels, 1))
                x = gains[c] * np.sin(2.0 * np.pi * freq * t[None, :] + phases)
                x = x + rng.normal(0.0, noise_std, size=x.shape)
                xs.append(_standardize_rows(x))
                ys.append(c)
                subjects.append(f"subj{s}")
    return TaskDataset(
        x=np.stack(xs), y=np.array(ys, dtype=np.int64), subjects=subjects,
        class_names=[f"{f:g}hz" for f in class_freqs],
    )
