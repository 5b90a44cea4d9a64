"""Reader/writer for the canonical recording container ("ERF").

Layout, in order:

  bytes 0..3    magic ``ERF1``
  bytes 4..7    header length ``H`` as little-endian uint32
  bytes 8..8+H  UTF-8 JSON header::

      {"channels": ["Cz", ...], "fs": 250.0, "subject_id": "s01",
       "n_samples": 15360, "annotations": [[onset_s, duration_s, "label"], ...]}

  remainder     n_channels * n_samples little-endian float32 samples,
                channel-major (all of channel 0, then channel 1, ...)

``annotations`` may be omitted. Anything may write this format; the loader
only trusts the payload after verifying its byte count against the header.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError

MAGIC = b"ERF1"

_HEADER_KEYS = ("channels", "fs", "subject_id", "n_samples")


def write_recording(path: str | Path, rec) -> None:
    """Serialize a Recording; data is stored as little-endian float32."""
    header = {
        "channels": list(rec.channels),
        "fs": float(rec.fs),
        "subject_id": rec.subject_id,
        "n_samples": int(rec.data.shape[1]),
        "annotations": [[float(o), float(d), str(l)] for o, d, l in rec.annotations],
    }
    blob = json.dumps(header).encode("utf-8")
    payload = np.ascontiguousarray(rec.data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        fh.write(payload.tobytes())


def read_recording(path: str | Path):
    """Load a Recording, validating magic, header schema and payload size."""
    from .corpus import Recording

    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not an ERF file (bad magic)")
    header_len = int.from_bytes(raw[4:8], "little")
    if len(raw) < 8 + header_len:
        raise FormatError(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed JSON header: {exc}") from exc
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise FormatError(f"{path}: header missing keys {missing}")
    channels = header["channels"]
    n_samples = header["n_samples"]
    if not isinstance(channels, list) or not all(isinstance(c, str) for c in channels):
        raise FormatError(f"{path}: 'channels' must be a list of strings")
    if not isinstance(n_samples, int) or n_samples < 1:
        raise FormatError(f"{path}: 'n_samples' must be a positive integer")

    payload = raw[8 + header_len :]
    expected = len(channels) * n_samples * 4
    if len(payload) != expected:
        raise IntegrityError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(len(channels), n_samples)
    annotations = [tuple([float(a[0]), float(a[1]), str(a[2])]) for a in header.get("annotations", [])]
    try:
        return Recording(
            channels=channels,
            fs=float(header["fs"]),
            data=data.copy(),
            subject_id=str(header["subject_id"]),
            annotations=annotations,
        )
    except ValueError as exc:
        raise IntegrityError(f"{path}: {exc}") from exc
