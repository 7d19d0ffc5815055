"""Hexagonal fibre-bundle geometry and sparse-cube synthesis.

A bundle is a hexagonally packed set of circular sensing cores inside a
circular bundle aperture of radius R = image_height / 2. Spectra are
averaged over each core footprint and painted back across it, producing a
sparse cube that is zero outside all footprints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hypercube import Hypercube

REFERENCE_HEIGHT = 192  # raster height at which the preset (r, d) values are defined

# Preset geometries: n_spot -> (core radius r, centre spacing d) in pixels.
TABLE_PRESETS = {
    300: (2.6, 10.0),
    171: (3.5, 14.0),
    121: (4.0, 16.0),
    0: (0.0, 0.0),
}


@dataclass(frozen=True)
class BundleSpec:
    """Fibre bundle geometry: target spot count, core radius, centre spacing."""

    n_spot_target: int
    r: float
    d: float
    bundle_radius: float | None = None  # defaults to image height / 2

    def __post_init__(self):
        if self.n_spot_target < 0:
            raise ValueError("n_spot_target must be >= 0")
        if self.n_spot_target > 0:
            if not 0 < self.r < self.d / 2:
                raise ValueError("core radius must satisfy 0 < r < d/2")

    @property
    def gamma(self) -> float:
        """Fill factor r / d."""
        return self.r / self.d if self.d > 0 else 0.0

    def scaled(self, image_height: int) -> "BundleSpec":
        """Preset geometry scaled from the 256x192 reference to another raster height."""
        if self.n_spot_target == 0:
            return self
        s = image_height / REFERENCE_HEIGHT
        return BundleSpec(
            n_spot_target=self.n_spot_target,
            r=self.r * s,
            d=self.d * s,
            bundle_radius=None if self.bundle_radius is None else self.bundle_radius * s,
        )


def preset(n_spot: int) -> BundleSpec:
    if n_spot not in TABLE_PRESETS:
        raise ValueError(f"no preset for n_spot={n_spot}; known: {sorted(TABLE_PRESETS)}")
    r, d = TABLE_PRESETS[n_spot]
    return BundleSpec(n_spot_target=n_spot, r=r, d=d)


def generate_hex_grid(width: int, height: int, d: float) -> np.ndarray:
    """Hexagonal lattice of centres covering [0, W] x [0, H].

    Horizontal pitch d, row pitch d*sqrt(3)/2, alternate rows offset d/2. The
    lattice is anchored so the image centre sits at the centre of a lattice
    cell (offset (d/2, sqrt(3)*d/4) from a lattice point), which keeps the
    in-aperture counts at or above the preset targets. Returns (n, 2) centres.
    """
    if d <= 0:
        raise ValueError("d must be > 0")
    if width <= 0 or height <= 0:
        return np.zeros((0, 2))
    row_pitch = d * np.sqrt(3) / 2
    ax = width / 2 + d / 2
    ay = height / 2 + row_pitch / 2
    pts = []
    j_lo = int(np.floor((0 - ay) / row_pitch)) - 1
    j_hi = int(np.ceil((height - ay) / row_pitch)) + 1
    for j in range(j_lo, j_hi + 1):
        y = ay + j * row_pitch
        if not 0 <= y <= height:
            continue
        off = d / 2 if j % 2 else 0.0
        i_lo = int(np.floor((0 - ax - off) / d)) - 1
        i_hi = int(np.ceil((width - ax - off) / d)) + 1
        for i in range(i_lo, i_hi + 1):
            x = ax + off + i * d
            if 0 <= x <= width:
                pts.append((x, y))
    return np.array(pts) if pts else np.zeros((0, 2))


@dataclass
class FibreMask:
    """Rasterized fibre cores: centres, radius, and per-fibre pixel index sets."""

    width: int
    height: int
    centres: np.ndarray  # (n, 2) float
    r: float
    pixel_sets: list = field(repr=False)  # list of (flat pixel index arrays)

    @property
    def n_spot(self) -> int:
        return len(self.centres)

    def footprint(self) -> np.ndarray:
        """Boolean (height, width) raster, True inside any core."""
        out = np.zeros(self.height * self.width, dtype=bool)
        for idx in self.pixel_sets:
            out[idx] = True
        return out.reshape(self.height, self.width)


def _rasterize(centres: np.ndarray, r: float, width: int, height: int) -> list:
    """Flat pixel index set per centre; a pixel belongs iff its centre is within r."""
    sets = []
    for cx, cy in centres:
        x_lo = max(int(np.floor(cx - r - 0.5)), 0)
        x_hi = min(int(np.ceil(cx + r + 0.5)), width - 1)
        y_lo = max(int(np.floor(cy - r - 0.5)), 0)
        y_hi = min(int(np.ceil(cy + r + 0.5)), height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            sets.append(np.zeros(0, dtype=np.int64))
            continue
        xs = np.arange(x_lo, x_hi + 1) + 0.5
        ys = np.arange(y_lo, y_hi + 1) + 0.5
        inside = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 < r * r
        yy, xx = np.nonzero(inside)
        sets.append(((yy + y_lo) * width + (xx + x_lo)).astype(np.int64))
    return sets


def generate_mask(spec: BundleSpec, width: int, height: int) -> FibreMask:
    """Keep in-aperture lattice centres, trim to the target count.

    Trimming keeps the centres closest to the image centre, ties broken by
    angle then x. A shortfall beyond 5% of the target raises.
    """
    if spec.n_spot_target == 0:
        return FibreMask(width=width, height=height, centres=np.zeros((0, 2)),
                         r=0.0, pixel_sets=[])
    assert spec.r < spec.d / 2, "cores must not overlap"
    radius = spec.bundle_radius if spec.bundle_radius is not None else height / 2
    centres = generate_hex_grid(width, height, spec.d)
    cx, cy = width / 2, height / 2
    if len(centres):
        dist = np.hypot(centres[:, 0] - cx, centres[:, 1] - cy)
        centres = centres[dist <= radius]
    kept = len(centres)
    if kept < spec.n_spot_target:
        if kept < 0.95 * spec.n_spot_target:
            raise ValueError(
                f"only {kept} centres inside the bundle, target {spec.n_spot_target}"
            )
        raise ValueError(
            f"bundle holds {kept} centres, short of target {spec.n_spot_target}"
        )
    if kept > spec.n_spot_target:
        dist = np.hypot(centres[:, 0] - cx, centres[:, 1] - cy)
        ang = np.arctan2(centres[:, 1] - cy, centres[:, 0] - cx)
        order = np.lexsort((centres[:, 0], ang, dist))
        centres = centres[order[: spec.n_spot_target]]
    return FibreMask(
        width=width,
        height=height,
        centres=centres,
        r=spec.r,
        pixel_sets=_rasterize(centres, spec.r, width, height),
    )


@dataclass
class SparseHypercube:
    """Cube with footprint-averaged spectra painted over each core, zero elsewhere."""

    cube: Hypercube
    mask: FibreMask


def apply_mask(cube: Hypercube, mask: FibreMask) -> SparseHypercube:
    """Average each core's spectra (NaN-ignoring) and paint across the footprint.

    A core whose footprint is entirely NaN in some band emits NaN there.
    """
    if (mask.width, mask.height) != (cube.width, cube.height):
        raise ValueError("mask dimensions do not match the cube")
    flat = cube.spectra()  # (bands, npix)
    out = np.zeros_like(flat)
    for idx in mask.pixel_sets:
        if idx.size == 0:
            continue
        spot = flat[:, idx]
        valid = ~np.isnan(spot)
        count = valid.sum(axis=1)
        total = np.where(valid, spot, 0.0).sum(axis=1)
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        out[:, idx] = mean[:, None].astype(flat.dtype)
    sparse = Hypercube(grid=cube.grid, data=out.reshape(cube.data.shape))
    return SparseHypercube(cube=sparse, mask=mask)


def save_mask_csv(mask: FibreMask, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fibre_id", "cx", "cy", "r"])
        for i, (cx, cy) in enumerate(mask.centres):
            writer.writerow([i, repr(float(cx)), repr(float(cy)), repr(float(mask.r))])
