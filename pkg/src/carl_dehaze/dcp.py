"""Classical dark-channel-prior dehazer with guided-filter refinement.

Serves both as a non-learned baseline and as the source of low-quality
dehazed negatives for the contrastive loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter, uniform_filter

from .imagecore import Image
from .hazesynth import invert_with_transmission


@dataclass(frozen=True)
class DcpConfig:
    patch: int = 15
    omega: float = 0.95
    t_floor: float = 0.1
    airlight_quantile: float = 0.001
    guided_radius: int = 40
    guided_eps: float = 1e-3

    def __post_init__(self):
        if self.patch < 1 or self.patch % 2 == 0:
            raise ValueError(f"patch must be odd and >= 1: {self.patch}")
        if not (0.0 < self.omega <= 1.0):
            raise ValueError(f"omega must be in (0, 1]: {self.omega}")
        if not (0.0 < self.t_floor < 1.0):
            raise ValueError(f"t_floor must be in (0, 1): {self.t_floor}")
        if not (0.0 < self.airlight_quantile <= 0.05):
            raise ValueError(
                f"airlight_quantile must be in (0, 0.05]: {self.airlight_quantile}"
            )


def negative_config() -> DcpConfig:
    """Deliberately crude setting for generating contrastive negatives.

    Over-dehazes (omega=1, low transmission floor, small patch/radius) so
    the outputs are recognizably poor: dark, over-contrasty restorations on
    the opposite side of the clean target from the hazy inputs.
    """
    return DcpConfig(patch=7, omega=1.0, t_floor=0.05, guided_radius=8)


def _min_filter(arr: np.ndarray, patch: int) -> np.ndarray:
    # windowed minimum with edge replication
    return minimum_filter(arr, size=patch, mode="nearest")


def dark_channel(img: Image, patch: int = 15) -> np.ndarray:
    """Windowed minimum over channels and a patch x patch neighborhood."""
    if patch % 2 == 0:
        raise ValueError(f"patch must be odd: {patch}")
    per_pixel_min = img.data.astype(np.float64).min(axis=2)
    return _min_filter(per_pixel_min, patch)


def estimate_airlight(img: Image, dark: np.ndarray, quantile: float = 0.001):
    """Mean color over the brightest dark-channel pixels.

    Selection takes the quantile fraction of pixels with the highest dark
    channel (at least one pixel); ties resolve in row-major order.
    """
    flat_dark = dark.ravel()
    n = max(1, int(flat_dark.size * quantile))
    # stable sort on negated values keeps row-major order among ties
    idx = np.argsort(-flat_dark, kind="stable")[:n]
    pixels = img.data.reshape(-1, 3).astype(np.float64)[idx]
    a = pixels.mean(axis=0)
    return (float(a[0]), float(a[1]), float(a[2]))


def estimate_transmission(img: Image, airlight, cfg: DcpConfig) -> np.ndarray:
    """t~ = 1 - omega * dark_channel(I / A), floored at t_floor."""
    a = np.asarray(airlight, dtype=np.float64)
    if (a <= 0.0).any():
        raise ValueError(f"airlight channels must be positive: {airlight}")
    normalized = img.data.astype(np.float64) / a
    dark_norm = _min_filter(normalized.min(axis=2), cfg.patch)
    t = 1.0 - cfg.omega * dark_norm
    return np.maximum(t, cfg.t_floor)


def _box(arr: np.ndarray, radius: int) -> np.ndarray:
    return uniform_filter(arr, size=2 * radius + 1, mode="nearest")


def guided_filter(guide: np.ndarray, src: np.ndarray, radius: int, eps: float) -> np.ndarray:
    """Edge-preserving smoothing of src steered by a grayscale guide."""
    mean_i = _box(guide, radius)
    mean_p = _box(src, radius)
    corr_ip = _box(guide * src, radius)
    corr_ii = _box(guide * guide, radius)
    cov_ip = corr_ip - mean_i * mean_p
    var_i = corr_ii - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    return _box(a, radius) * guide + _box(b, radius)


def refine_transmission(t_raw: np.ndarray, guide: Image, cfg: DcpConfig) -> np.ndarray:
    """Guided-filter refinement of the raw transmission, clamped to [t_floor, 1]."""
    if t_raw.shape != (guide.height, guide.width):
        raise ValueError(
            f"transmission shape {t_raw.shape} != guide {guide.height}x{guide.width}"
        )
    gray = guide.data.astype(np.float64).mean(axis=2)
    refined = guided_filter(gray, np.asarray(t_raw, dtype=np.float64),
                            cfg.guided_radius, cfg.guided_eps)
    return np.clip(refined, cfg.t_floor, 1.0)


def dehaze_dcp(img: Image, cfg: DcpConfig = DcpConfig()):
    """Full DCP pipeline; returns (dehazed Image, info dict).

    info holds the estimated airlight and mean transmission for sidecar
    reporting.  Deterministic: identical inputs give identical outputs.
    """
    dark = dark_channel(img, cfg.patch)
    airlight = estimate_airlight(img, dark, cfg.airlight_quantile)
    t_raw = estimate_transmission(img, airlight, cfg)
    t = refine_transmission(t_raw, img, cfg)
    out = invert_with_transmission(img, airlight, t, t_floor=cfg.t_floor)
    info = {
        "airlight": list(airlight),
        "mean_transmission": float(t.mean()),
    }
    return out, info
