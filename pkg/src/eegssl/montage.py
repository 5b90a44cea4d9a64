"""Idealized 10-20 / 10-10 electrode positions on a unit sphere.

Positions are derived geometrically rather than copied from a vendor file:
electrodes sit on arcs at 10% steps of the nasion-inion and ear-to-ear
great circles, and intermediate rows lie on the circle through their left
anchor, midline anchor and right anchor. Coordinates use x toward the
right ear, y toward the nasion, z up.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Iterator, Mapping

import numpy as np

from .errors import MontageError

# chain slot occupied by each electrode digit on a 9-slot coronal row,
# counted from the left anchor (slot 0) to the right anchor (slot 8)
_DIGIT_SLOT = {"7": 0, "5": 1, "3": 2, "1": 3, "z": 4, "2": 5, "4": 6, "6": 7, "8": 8}

# old 10-20 names that share a position with their 10-10 equivalents
ALIASES = {"T3": "T7", "T4": "T8", "T5": "P7", "T6": "P8"}


class MontageTable(Mapping[str, np.ndarray]):
    """Immutable mapping of electrode label to a 3-D unit-sphere coordinate."""

    def __init__(self, coords: dict[str, np.ndarray]):
        self._coords = {label: np.asarray(xyz, dtype=np.float64) for label, xyz in coords.items()}

    def __getitem__(self, label: str) -> np.ndarray:
        try:
            return self._coords[label]
        except KeyError:
            raise MontageError(f"no electrode position known for label {label!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._coords)

    def __len__(self) -> int:
        return len(self._coords)

    @property
    def labels(self) -> list[str]:
        return list(self._coords)


def _ring_point(polar_deg: float, azimuth_deg: float, side: int) -> np.ndarray:
    """Point at `polar_deg` from the vertex, rotated `azimuth_deg` from the
    nasion toward the left (side=-1) or right (side=+1) ear."""
    polar = math.radians(polar_deg)
    azim = math.radians(azimuth_deg)
    return np.array(
        [side * math.sin(polar) * math.sin(azim), math.sin(polar) * math.cos(azim), math.cos(polar)]
    )


def _midline_point(polar_deg: float) -> np.ndarray:
    """Point on the nasion-inion arc; positive angles toward the nasion."""
    polar = math.radians(polar_deg)
    return np.array([0.0, math.sin(polar), math.cos(polar)])


def _circle_chain(left: np.ndarray, mid: np.ndarray, right: np.ndarray) -> dict[int, np.ndarray]:
    """All 9 equally spaced slots on the circle through three anchor points.

    Slots 0..4 subdivide the left-to-midline arc, 4..8 the midline-to-right
    arc, so the anchors themselves are reproduced exactly.
    """
    u, v = mid - left, right - left
    e1 = u / np.linalg.norm(u)
    e2 = v - (v @ e1) * e1
    e2 /= np.linalg.norm(e2)
    bx = np.linalg.norm(u)
    cx, cy = v @ e1, v @ e2
    # circumcenter of (0,0), (bx,0), (cx,cy) in the plane of the three points
    px = bx / 2.0
    py = (cx * cx + cy * cy - 2.0 * px * cx) / (2.0 * cy)
    center = left + px * e1 + py * e2
    radius = np.linalg.norm(left - center)
    f1 = (left - center) / radius
    f2 = np.cross(np.cross(f1, (mid - center) / radius), f1)
    f2 /= np.linalg.norm(f2)

    def angle_of(p: np.ndarray) -> float:
        rel = p - center
        return math.atan2(rel @ f2, rel @ f1) % (2.0 * math.pi)

    a_mid, a_right = angle_of(mid), angle_of(right)
    points: dict[int, np.ndarray] = {}
    for slot in range(9):
        if slot <= 4:
            psi = a_mid * slot / 4.0
        else:
            psi = a_mid + (a_right - a_mid) * (slot - 4) / 4.0
        points[slot] = center + radius * (math.cos(psi) * f1 + math.sin(psi) * f2)
    return points


@lru_cache(maxsize=1)
def standard_montage() -> MontageTable:
    """Build the default 10-20/10-10 montage table.

    Covers the 19 pre-training labels (with old-nomenclature aliases), the
    64-channel motor-movement layout and the 22-electrode motor-imagery
    layout.
    """
    coords: dict[str, np.ndarray] = {}

    midline = {
        "Nz": 90, "Fpz": 72, "AFz": 54, "Fz": 36, "FCz": 18, "Cz": 0,
        "CPz": -18, "Pz": -36, "POz": -54, "Oz": -72, "Iz": -90,
    }
    for label, polar in midline.items():
        coords[label] = _midline_point(polar)

    # outer ring at 72 degrees polar, front-to-back in 18-degree steps
    ring = ["Fp", "AF", "F", "FT", "T", "TP", "P", "PO", "O"]
    left_names = ["Fp1", "AF7", "F7", "FT7", "T7", "TP7", "P7", "PO7", "O1"]
    right_names = ["Fp2", "AF8", "F8", "FT8", "T8", "TP8", "P8", "PO8", "O2"]
    for i, _ in enumerate(ring):
        azim = 18.0 * (i + 1)
        coords[left_names[i]] = _ring_point(72.0, azim, side=-1)
        coords[right_names[i]] = _ring_point(72.0, azim, side=+1)

    coords["T9"] = np.array([-1.0, 0.0, 0.0])
    coords["T10"] = np.array([1.0, 0.0, 0.0])

    rows = [
        ("AF", "AF7", "AFz", "AF8", ["3", "4"]),
        ("F", "F7", "Fz", "F8", ["5", "3", "1", "2", "4", "6"]),
        ("FC", "FT7", "FCz", "FT8", ["5", "3", "1", "2", "4", "6"]),
        ("C", "T7", "Cz", "T8", ["5", "3", "1", "2", "4", "6"]),
        ("CP", "TP7", "CPz", "TP8", ["5", "3", "1", "2", "4", "6"]),
        ("P", "P7", "Pz", "P8", ["5", "3", "1", "2", "4", "6"]),
        ("PO", "PO7", "POz", "PO8", ["3", "4"]),
    ]
    for prefix, left, mid, right, digits in rows:
        chain = _circle_chain(coords[left], coords[mid], coords[right])
        for digit in digits:
            coords[prefix + digit] = chain[_DIGIT_SLOT[digit]]

    for alias, target in ALIASES.items():
        coords[alias] = coords[target]

    return MontageTable(coords)
