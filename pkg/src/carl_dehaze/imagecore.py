"""Image container, PNG I/O, aligned random cropping, and PSNR/SSIM metrics.

Images are H x W x 3 float32 arrays with values in [0, 1].  Metric
arithmetic is done in float64 so results can be compared against naive
scalar-loop references.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.signal import fftconvolve

PSNR_CAP = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class Image:
    """An RGB image: H x W x 3 float32 data in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("zero-area image")
        if not np.isfinite(arr).all():
            raise ValueError("non-finite pixel values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"pixel values outside [0, 1]: min={arr.min()}, max={arr.max()}"
            )
        object.__setattr__(self, "data", arr.astype(np.float32, copy=False))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def clamp_to_image(arr: np.ndarray) -> Image:
    """Explicitly clamp an arbitrary float array into a valid Image."""
    return Image(np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0))


def load_image(path) -> Image:
    """Load an 8- or 16-bit raster as a [0, 1] RGB Image.

    Grayscale inputs are replicated to 3 channels.  Values are scaled by
    the dtype maximum, so 8-bit 255 maps to exactly 1.0.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with PILImage.open(path) as im:
        im.load()
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        elif im.mode in ("RGB", "RGBA", "L", "LA", "P"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        else:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    if arr.size == 0:
        raise ValueError(f"zero-area image: {path}")
    return Image(arr)


def save_image(img: Image, path) -> None:
    """Write an Image as 8-bit RGB PNG.  Round-trips 8-bit data exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(img.data.astype(np.float64) * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path)


def random_crop(img: Image, hazy_partners: list, size: int, seed: int) -> list:
    """Crop one random size x size window from img and every partner.

    All partners must share img's dimensions; the same window is applied
    to each so spatial alignment is preserved.  Deterministic given seed.
    Returns [img_crop, partner_crops...].
    """
    h, w = img.height, img.width
    for p in hazy_partners:
        if (p.height, p.width) != (h, w):
            raise ValueError(
                f"partner dimensions {p.height}x{p.width} != image {h}x{w}"
            )
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image {h}x{w}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    out = []
    for im in [img] + list(hazy_partners):
        out.append(Image(im.data[top : top + size, left : left + size, :].copy()))
    return out


def psnr(pred: Image, gt: Image) -> float:
    """PSNR in dB with MAX=1; capped at PSNR_CAP for (near-)identical inputs."""
    if pred.data.shape != gt.data.shape:
        raise ValueError("shape mismatch")
    diff = pred.data.astype(np.float64) - gt.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse < 10.0 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(pred: Image, gt: Image) -> float:
    """Mean SSIM over 11x11 Gaussian windows (sigma=1.5), per channel, averaged.

    C1=(K1)^2, C2=(K2)^2 on [0, 1] data; windows are 'valid' (no padding).
    """
    if pred.data.shape != gt.data.shape:
        raise ValueError("shape mismatch")
    if pred.height < SSIM_WINDOW or pred.width < SSIM_WINDOW:
        raise ValueError(f"image smaller than {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    vals = []
    for c in range(3):
        x = pred.data[:, :, c].astype(np.float64)
        y = gt.data[:, :, c].astype(np.float64)
        mu_x = fftconvolve(x, win, mode="valid")
        mu_y = fftconvolve(y, win, mode="valid")
        mu_xx = fftconvolve(x * x, win, mode="valid")
        mu_yy = fftconvolve(y * y, win, mode="valid")
        mu_xy = fftconvolve(x * y, win, mode="valid")
        var_x = mu_xx - mu_x * mu_x
        var_y = mu_yy - mu_y * mu_y
        cov = mu_xy - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def metric_report(pred: Image, gt: Image) -> dict:
    """Both metrics as a JSON-ready dict."""
    return {"psnr_db": psnr(pred, gt), "ssim": ssim(pred, gt)}


def write_metric_report(pred: Image, gt: Image, path) -> dict:
    rep = metric_report(pred, gt)
    Path(path).write_text(json.dumps(rep, indent=2))
    return rep
