"""PNG export, a fixed preview colormap, and raster resize/flip helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .hypercube import MASK_GRAY, PixelMask, RgbImage

# Compact blue->cyan->green->yellow->red ramp for StO2 previews.
_CMAP_ANCHORS = np.array(
    [
        [0.05, 0.03, 0.25],
        [0.10, 0.30, 0.75],
        [0.05, 0.65, 0.70],
        [0.20, 0.80, 0.25],
        [0.85, 0.85, 0.10],
        [0.90, 0.45, 0.05],
        [0.75, 0.05, 0.05],
    ]
)


def sto2_colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to (h, w, 3) uint8 colors; NaN renders black."""
    v = np.clip(np.nan_to_num(values, nan=0.0), 0.0, 1.0)
    pos = v * (len(_CMAP_ANCHORS) - 1)
    lo = np.clip(pos.astype(int), 0, len(_CMAP_ANCHORS) - 2)
    t = (pos - lo)[..., None]
    rgb = _CMAP_ANCHORS[lo] * (1 - t) + _CMAP_ANCHORS[lo + 1] * t
    rgb[np.isnan(values)] = 0.0
    return (rgb * 255 + 0.5).astype(np.uint8)


def save_rgb_png(image: RgbImage, path: str | Path) -> None:
    """8-bit PNG preview; NaN pixels render black."""
    arr = np.nan_to_num(image.data, nan=0.0)
    arr = np.clip(arr, 0.0, 1.0).transpose(1, 2, 0)
    Image.fromarray((arr * 255 + 0.5).astype(np.uint8), mode="RGB").save(path)


def save_gray_png(values: np.ndarray, path: str | Path) -> None:
    Image.fromarray(np.asarray(values, dtype=np.uint8), mode="L").save(path)


def save_mask_png(mask: PixelMask, path: str | Path) -> None:
    """Mask PNG with one gray level per reason code."""
    gray = np.zeros_like(mask.codes)
    for code, level in MASK_GRAY.items():
        gray[mask.codes == code] = level
    save_gray_png(gray, path)


def save_sto2_png(values: np.ndarray, mask: PixelMask | None, path: str | Path) -> None:
    rgb = sto2_colormap(values)
    if mask is not None:
        rgb[~mask.effective] = 0
    Image.fromarray(rgb, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# Resampling. Bilinear resize uses pixel-centre (align_corners=False) mapping
# in nested-lerp form so constants survive exactly and outputs never leave the
# input's value hull.
# ---------------------------------------------------------------------------


def _lerp(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    return a + t * (b - a)


def resize_bilinear(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the trailing two axes of a (..., h, w) raster."""
    raster = np.asarray(raster)
    h, w = raster.shape[-2:]
    if (h, w) == (out_h, out_w):
        return raster.copy()
    sy = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    sx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = np.clip(sy - y0, 0.0, 1.0)
    tx = np.clip(sx - x0, 0.0, 1.0)
    top = _lerp(raster[..., y0[:, None], x0[None, :]],
                raster[..., y0[:, None], x1[None, :]], tx[None, :])
    bot = _lerp(raster[..., y1[:, None], x0[None, :]],
                raster[..., y1[:, None], x1[None, :]], tx[None, :])
    return _lerp(top, bot, ty[:, None]).astype(raster.dtype)


def resize_nearest(raster: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of the trailing two axes (for label rasters)."""
    raster = np.asarray(raster)
    h, w = raster.shape[-2:]
    if (h, w) == (out_h, out_w):
        return raster.copy()
    sy = np.clip(((np.arange(out_h) + 0.5) * (h / out_h) - 0.5 + 0.5).astype(int), 0, h - 1)
    sx = np.clip(((np.arange(out_w) + 0.5) * (w / out_w) - 0.5 + 0.5).astype(int), 0, w - 1)
    return raster[..., sy[:, None], sx[None, :]].copy()


def flip_h(raster: np.ndarray) -> np.ndarray:
    """Mirror the last (width) axis."""
    return np.ascontiguousarray(raster[..., ::-1])


def flip_v(raster: np.ndarray) -> np.ndarray:
    """Mirror the height axis."""
    return np.ascontiguousarray(raster[..., ::-1, :])
