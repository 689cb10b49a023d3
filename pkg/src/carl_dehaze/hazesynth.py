"""Haze synthesis via the atmospheric scattering model I = J*t + A*(1-t).

Used to build multi-density hazy variants of clean images (for negative
examples and student/teacher input pairs) and, inverted, as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .imagecore import Image

T_FLOOR = 0.1

DEFAULT_BETAS = (0.4, 0.8, 1.2)
DEFAULT_LABELS = ("mild", "medium", "heavy")
DEFAULT_AIRLIGHT = (0.8, 0.8, 0.8)


@dataclass(frozen=True)
class HazeParams:
    """Scattering-model parameters: airlight A, extinction beta, depth map d.

    depth=None means uniform depth 1; transmission is exp(-beta * depth).
    """

    airlight: tuple
    beta: float
    depth: Optional[np.ndarray] = None

    def __post_init__(self):
        a = tuple(float(c) for c in self.airlight)
        if len(a) != 3 or any(c <= 0.0 or c > 1.0 for c in a):
            raise ValueError(f"airlight channels must be in (0, 1]: {a}")
        if self.beta < 0.0:
            raise ValueError(f"negative beta: {self.beta}")
        if self.depth is not None:
            d = np.asarray(self.depth, dtype=np.float64)
            if (d < 0.0).any():
                raise ValueError("negative depth values")
            object.__setattr__(self, "depth", d)
        object.__setattr__(self, "airlight", a)


@dataclass(frozen=True)
class DensityLadder:
    """Ascending extinction coefficients with human-readable labels."""

    betas: Sequence[float] = DEFAULT_BETAS
    labels: Sequence[str] = DEFAULT_LABELS

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) == 0:
            raise ValueError("empty ladder")
        if any(b < 0 for b in betas):
            raise ValueError("negative beta in ladder")
        if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
            raise ValueError(f"betas not strictly ascending: {betas}")
        labels = tuple(self.labels)
        if len(labels) != len(betas):
            raise ValueError("labels/betas length mismatch")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "labels", labels)


def transmission(params: HazeParams, shape=None) -> np.ndarray:
    """t(x) = exp(-beta * depth(x)); uniform depth gives a constant map.

    shape (H, W) is required when depth is uniform and a full map is wanted.
    """
    if params.depth is not None:
        return np.exp(-params.beta * params.depth)
    if shape is None:
        raise ValueError("shape required for uniform depth")
    return np.full(shape, np.exp(-params.beta), dtype=np.float64)


def apply_scattering(clean: Image, params: HazeParams) -> Image:
    """Blend scene radiance with airlight: I = J*t + A*(1-t) per channel."""
    t = transmission(params, shape=(clean.height, clean.width))
    if t.shape != (clean.height, clean.width):
        raise ValueError(f"depth map shape {t.shape} does not match image")
    j = clean.data.astype(np.float64)
    a = np.asarray(params.airlight, dtype=np.float64)
    t3 = t[:, :, None]
    hazy = j * t3 + a * (1.0 - t3)
    # convex combination of [0,1] values: in range by construction, no clamp
    return Image(hazy.astype(np.float32))


def invert_with_transmission(
    hazy: Image, airlight, t_map: np.ndarray, t_floor: float = T_FLOOR
) -> Image:
    """Algebraic inverse J = (I - A*(1-t)) / t with t clamped below at t_floor.

    Output is clamped to [0, 1]; the clamp is part of the contract.
    """
    i = hazy.data.astype(np.float64)
    a = np.asarray(airlight, dtype=np.float64)
    t = np.maximum(np.asarray(t_map, dtype=np.float64), t_floor)[:, :, None]
    j = (i - a * (1.0 - t)) / t
    return Image(np.clip(j, 0.0, 1.0))


def invert_scattering(hazy: Image, params: HazeParams, t_floor: float = T_FLOOR) -> Image:
    """Inverse of apply_scattering for known parameters (test oracle)."""
    t = transmission(params, shape=(hazy.height, hazy.width))
    return invert_with_transmission(hazy, params.airlight, t, t_floor=t_floor)


def synth_ladder(
    clean: Image,
    ladder: DensityLadder,
    airlight=DEFAULT_AIRLIGHT,
    depth: Optional[np.ndarray] = None,
    seed: int = 0,
    jitter_airlight: bool = False,
) -> list:
    """One hazy image per ladder level: [(label, Image), ...].

    With jitter_airlight, each level draws its own airlight ~ U(0.7, 1.0)
    under seed control; off by default.
    """
    rng = np.random.default_rng(seed)
    out = []
    for label, beta in zip(ladder.labels, ladder.betas):
        a = airlight
        if jitter_airlight:
            v = float(rng.uniform(0.7, 1.0))
            a = (v, v, v)
        params = HazeParams(airlight=a, beta=beta, depth=depth)
        out.append((label, apply_scattering(clean, params)))
    return out
