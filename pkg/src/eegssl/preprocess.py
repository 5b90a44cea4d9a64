"""Signal conditioning pipeline: notch, bandpass, detrend, normalize, resample.

All filters are IIR run forward-backward (zero phase), so filtered features
stay time-aligned with spectral ground truth computed on the same windows.
Stage order is fixed; `preprocess_pipeline` is the only supported composition.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .corpus import Recording
from .errors import DegenerateChannelError, ParameterError

#: pipeline stage names, applied left to right
PIPELINE_STAGES = ("notch", "bandpass", "detrend", "normalize", "resample")


@dataclass(frozen=True)
class PreprocessConfig:
    notch_hz: float = 60.0
    band: tuple[float, float] = (0.5, 50.0)
    target_fs: float = 250.0
    notch_q: float = 30.0
    bandpass_order: int = 9  # per-skirt Butterworth order; 9 keeps [1,45] Hz within 1 dB two-pass

    def __post_init__(self):
        low, high = self.band
        if not 0 < low < high < self.target_fs / 2:
            raise ParameterError(f"band {self.band} invalid for target rate {self.target_fs}")
        if self.notch_q <= 0 or self.notch_hz <= 0:
            raise ParameterError("notch frequency and quality factor must be positive")


def _padlen(n_samples: int, fs: float, slowest_hz: float) -> int:
    """Forward-backward filtering needs padding past the slowest transient."""
    return min(n_samples - 1, int(3 * fs / slowest_hz))


def notch(rec: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Zero-phase notch at cfg.notch_hz (power-line removal)."""
    if rec.fs <= 2 * cfg.notch_hz:
        raise ParameterError(
            f"sampling rate {rec.fs} Hz too low for a {cfg.notch_hz} Hz notch"
        )
    if rec.n_channels == 0:
        return rec.with_data(rec.data)
    b, a = signal.iirnotch(cfg.notch_hz, cfg.notch_q, fs=rec.fs)
    pad = _padlen(rec.n_samples, rec.fs, cfg.notch_hz / cfg.notch_q)
    return rec.with_data(
        signal.filtfilt(b, a, rec.data.astype(np.float64), axis=-1, padlen=pad)
    )


def bandpass(rec: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Zero-phase Butterworth bandpass over cfg.band."""
    low, high = cfg.band
    if not 0 < low < high < rec.fs / 2:
        raise ParameterError(f"band {cfg.band} invalid for sampling rate {rec.fs}")
    if rec.n_channels == 0:
        return rec.with_data(rec.data)
    sos = signal.butter(cfg.bandpass_order, [low, high], btype="band", fs=rec.fs, output="sos")
    return rec.with_data(
        signal.sosfiltfilt(
            sos, rec.data.astype(np.float64), axis=-1,
            padlen=_padlen(rec.n_samples, rec.fs, low),
        )
    )


def detrend_linear(rec: Recording) -> Recording:
    """Remove the per-channel least-squares line."""
    if rec.n_samples < 2:
        raise ParameterError("linear detrend needs at least 2 samples per channel")
    if rec.n_channels == 0:
        return rec.with_data(rec.data)
    return rec.with_data(signal.detrend(rec.data.astype(np.float64), axis=-1, type="linear"))


def normalize_channels(rec: Recording) -> Recording:
    """Standardize each channel to mean 0, std 1 over the whole recording.

    A channel whose spread is zero up to filtering round-off (e.g. a constant
    input that earlier stages reduced to numerical dust) is degenerate.
    """
    data = rec.data.astype(np.float64)
    mean = data.mean(axis=-1, keepdims=True)
    std = data.std(axis=-1, keepdims=True)
    for i, s in enumerate(std[:, 0]):
        floor = 1e-10 * max(1.0, float(np.abs(data[i]).max(initial=0.0)))
        if not np.isfinite(s) or s <= floor:
            raise DegenerateChannelError(rec.channels[i])
    return rec.with_data((data - mean) / std)


def resample(rec: Recording, target_fs: float = 250.0) -> Recording:
    """Polyphase rational resampling to target_fs.

    Output length is round(n * target_fs / fs); equal rates are the identity.
    """
    if target_fs <= 0:
        raise ParameterError(f"target rate must be positive, got {target_fs}")
    if rec.fs == target_fs:
        return rec.with_data(rec.data)
    ratio = Fraction(target_fs).limit_denominator(10**6) / Fraction(rec.fs).limit_denominator(10**6)
    expected = int(round(rec.n_samples * target_fs / rec.fs))
    if rec.n_channels == 0:
        return rec.with_data(np.zeros((0, expected), dtype=np.float32), fs=target_fs)
    out = signal.resample_poly(
        rec.data.astype(np.float64), ratio.numerator, ratio.denominator, axis=-1
    )
    if out.shape[-1] < expected:
        raise ParameterError("resampler produced fewer samples than expected")
    return rec.with_data(out[:, :expected], fs=target_fs)


def run_stages(
    rec: Recording, cfg: PreprocessConfig = PreprocessConfig(),
    stages: tuple[str, ...] = PIPELINE_STAGES,
) -> Recording:
    """Apply a subset of pipeline stages in canonical order."""
    known = {
        "notch": lambda r: notch(r, cfg),
        "bandpass": lambda r: bandpass(r, cfg),
        "detrend": detrend_linear,
        "normalize": normalize_channels,
        "resample": lambda r: resample(r, cfg.target_fs),
    }
    for name in stages:
        if name not in known:
            raise ParameterError(f"unknown stage {name!r}")
        rec = known[name](rec)
    return rec


def preprocess_pipeline(rec: Recording, cfg: PreprocessConfig = PreprocessConfig()) -> Recording:
    """Full conditioning pipeline; output is standardized and at cfg.target_fs."""
    return run_stages(rec, cfg, PIPELINE_STAGES)
