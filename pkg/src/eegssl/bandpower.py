"""Spectral ground truth: log band power over non-overlapping windows.

Power is estimated with a Hann periodogram on 1024-sample windows (4.096 s
at 250 Hz) so that 16 encoder embeddings of 64 samples line up exactly with
one power window. Band values are integrated one-sided PSD, floored by eps
and log-transformed, which keeps the regression target in a stable range.
"""

from __future__ import annotations

import numpy as np
from scipy.signal.windows import hann

from .errors import ParameterError, ShapeError

#: (name, low_hz, high_hz); a bin belongs to a band when low <= center < high
DEFAULT_BANDS: tuple[tuple[str, float, float], ...] = (
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 14.0, 30.0),
    ("gamma", 30.0, 50.0),
)

BAND_NAMES = tuple(name for name, _, _ in DEFAULT_BANDS)

WINDOW_SAMPLES = 1024
DEFAULT_EPS = 1e-8


def validate_bands(bands: tuple[tuple[str, float, float], ...]) -> None:
    """Bands must be well-formed and mutually non-overlapping."""
    for name, low, high in bands:
        if not 0 <= low < high:
            raise ParameterError(f"band {name}: invalid edges ({low}, {high})")
    ordered = sorted(bands, key=lambda b: b[1])
    for (_, _, prev_high), (name, low, _) in zip(ordered, ordered[1:]):
        if low < prev_high:
            raise ParameterError(f"band {name} overlaps its lower neighbour")


def _psd(windows: np.ndarray, fs: float) -> np.ndarray:
    """One-sided Hann periodogram density over the last axis (length 1024)."""
    win = hann(WINDOW_SAMPLES, sym=False)
    spec = np.fft.rfft(windows.astype(np.float64) * win, axis=-1)
    psd = (spec.real**2 + spec.imag**2) / (fs * np.sum(win**2))
    psd[..., 1:-1] *= 2.0  # fold negative frequencies; DC and Nyquist stay single
    return psd


def periodogram(window: np.ndarray, fs: float = 250.0) -> tuple[np.ndarray, np.ndarray]:
    """PSD of one 1024-sample window; returns (freqs, density).

    sum(psd) * fs/1024 equals the Hann-weighted mean power of the window.
    """
    window = np.asarray(window)
    if window.shape[-1] != WINDOW_SAMPLES:
        raise ShapeError(f"expected {WINDOW_SAMPLES}-sample windows, got {window.shape[-1]}")
    freqs = np.fft.rfftfreq(WINDOW_SAMPLES, 1.0 / fs)
    return freqs, _psd(window, fs)


def band_power(
    chunk: np.ndarray,
    bands: tuple[tuple[str, float, float], ...] = DEFAULT_BANDS,
    fs: float = 250.0,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Log integrated band power per channel, band and window.

    Accepts [..., n_timesteps] with n_timesteps a multiple of 1024 and
    returns [..., n_bands, n_windows]; a canonical [19, 15360] chunk maps to
    [19, 5, 15]. Values are ln(eps + band integral), finite for any input.
    """
    validate_bands(bands)
    chunk = np.asarray(chunk)
    n = chunk.shape[-1]
    if n % WINDOW_SAMPLES != 0:
        raise ShapeError(f"time axis ({n}) must be a multiple of {WINDOW_SAMPLES}")
    n_windows = n // WINDOW_SAMPLES
    windows = chunk.reshape(chunk.shape[:-1] + (n_windows, WINDOW_SAMPLES))
    psd = _psd(windows, fs)  # [..., n_windows, n_bins]

    freqs = np.fft.rfftfreq(WINDOW_SAMPLES, 1.0 / fs)
    df = fs / WINDOW_SAMPLES
    out = np.empty(chunk.shape[:-1] + (len(bands), n_windows), dtype=np.float64)
    for b, (_, low, high) in enumerate(bands):
        mask = (freqs >= low) & (freqs < high)
        out[..., b, :] = np.log(eps + psd[..., mask].sum(axis=-1) * df)
    return out
