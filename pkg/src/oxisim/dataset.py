"""Phantom acquisitions, the crop/flip/resize augmentation pipeline, and manifests.

Phantoms stand in for in-vivo captures: smooth random StO2 / total-haemoglobin
fields with vessel strokes and specular (NaN) discs, run through the forward
attenuation model to produce a reflectance cube plus exact ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import fibre, imaging, oximetry
from .hypercube import (
    EFFECTIVE,
    SATURATED,
    Hypercube,
    PixelMask,
    RgbImage,
    SpectralResponse,
    WavelengthGrid,
    load_cube,
    save_cube,
    save_raster,
    load_raster,
    synthesize_rgb,
)
from .oximetry import ChromophoreTable, StO2Map, default_table, estimate_sto2_map

WINDOW = 96
STRIDE = 16
TARGET_SIZE = 256
VARIANTS = ("identity", "hflip", "vflip")


@dataclass(frozen=True)
class FieldSpec:
    """Smooth random field: correlation length (px) and value range."""

    corr_len: float = 48.0
    lo: float = 0.2
    hi: float = 0.95


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    width: int = 256
    height: int = 192
    sto2_field: FieldSpec = FieldSpec(48.0, 0.2, 0.95)
    thb_field: FieldSpec = FieldSpec(64.0, 0.01, 0.03)
    offset_field: FieldSpec = FieldSpec(64.0, 0.05, 0.35)
    # Wavelength-linear absorbance nuisance; zero range keeps the cube exactly
    # on the 3-parameter model so the regression recovers truth to 1e-6.
    slope_field: FieldSpec = FieldSpec(64.0, 0.0, 0.0)
    vessel_count: int = 3
    specular_count: int = 2
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not (0 <= self.sto2_field.lo <= self.sto2_field.hi <= 1):
            raise ValueError("sto2 field range must lie within [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def _smooth_field(rng: np.random.Generator, h: int, w: int, spec: FieldSpec) -> np.ndarray:
    """Seeded value-noise: random lattice bilinearly interpolated to (h, w)."""
    if spec.hi == spec.lo:
        return np.full((h, w), spec.lo)
    ny = max(int(np.ceil(h / spec.corr_len)) + 1, 2)
    nx = max(int(np.ceil(w / spec.corr_len)) + 1, 2)
    nodes = rng.uniform(spec.lo, spec.hi, size=(ny, nx))
    return imaging.resize_bilinear(nodes, h, w)


def _stroke(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Boolean raster of one random thick line segment."""
    x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
    ang = rng.uniform(0, 2 * np.pi)
    length = rng.uniform(0.4, 0.9) * min(h, w)
    x1, y1 = x0 + length * np.cos(ang), y0 + length * np.sin(ang)
    thick = rng.uniform(1.5, 3.5)
    ys, xs = np.mgrid[0:h, 0:w]
    px, py = xs + 0.5, ys + 0.5
    dx, dy = x1 - x0, y1 - y0
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
    dist = np.hypot(px - (x0 + t * dx), py - (y0 + t * dy))
    return dist < thick


def phantom(spec: PhantomSpec, table: ChromophoreTable | None = None) -> tuple[Hypercube, StO2Map]:
    """Deterministic phantom cube plus its exact StO2 ground truth."""
    table = table or default_table()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width

    sto2 = _smooth_field(rng, h, w, spec.sto2_field)
    thb = _smooth_field(rng, h, w, spec.thb_field)
    offset = _smooth_field(rng, h, w, spec.offset_field)
    slope = _smooth_field(rng, h, w, spec.slope_field)

    for _ in range(spec.vessel_count):
        stroke = _stroke(rng, h, w)
        sto2[stroke] = rng.uniform(0.15, 0.35)
        thb[stroke] = thb[stroke] * 2.5

    # A(lambda) per pixel: thb*(sto2*eps_o + (1-sto2)*eps_d) + offset + slope term
    lam = table.grid.wavelengths()
    lam_norm = (lam - lam.mean()) / (lam[-1] - lam[0])  # [-0.5, 0.5]
    eps_mix = (
        sto2[None] * table.eps_hbo2[:, None, None]
        + (1.0 - sto2)[None] * table.eps_hb[:, None, None]
    )
    attn = thb[None] * eps_mix + offset[None] + slope[None] * lam_norm[:, None, None]
    if spec.noise_sigma > 0:
        attn = attn + rng.normal(0.0, spec.noise_sigma, size=attn.shape)
    data = (10.0 ** (-attn)).astype(np.float32)

    codes = np.full((h, w), EFFECTIVE, dtype=np.uint8)
    for _ in range(spec.specular_count):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        radius = rng.uniform(2.0, 5.0)
        ys, xs = np.mgrid[0:h, 0:w]
        disc = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 < radius**2
        data[:, disc] = np.nan
        codes[disc] = SATURATED

    cube = Hypercube(grid=table.grid, data=data)
    truth = StO2Map(values=sto2.astype(np.float32), mask=PixelMask(codes))
    return cube, truth


# ---------------------------------------------------------------------------
# Acquisition rasters and samples
# ---------------------------------------------------------------------------


@dataclass
class AcquisitionRasters:
    """Co-registered network-facing rasters for one acquisition.

    Value rasters are NaN-free: rgb/shsi NaNs are zero-filled, target NaNs are
    filled from the nearest valid pixel; the mask keeps the exclusion reasons.
    """

    rgb: np.ndarray  # (3, h, w) float32
    shsi: np.ndarray  # (bands, h, w) float32
    target: np.ndarray  # (h, w) float32
    mask: np.ndarray  # (h, w) uint8 reason codes

    @property
    def height(self) -> int:
        return self.target.shape[0]

    @property
    def width(self) -> int:
        return self.target.shape[1]


@dataclass
class Sample:
    """One training/test sample; all rasters share (size, size)."""

    rgb: np.ndarray
    shsi: np.ndarray
    target: np.ndarray
    mask: np.ndarray


def _fill_nearest(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid pixels by the nearest valid pixel's value."""
    if valid.all():
        return values
    if not valid.any():
        return np.zeros_like(values)
    _, (iy, ix) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return values[iy, ix]


def assemble_acquisition(
    cube: Hypercube,
    bundle_mask: fibre.FibreMask,
    response: SpectralResponse | None = None,
    table: ChromophoreTable | None = None,
    white_ref: np.ndarray | float = 1.0,
    cod_threshold: float = oximetry.COD_THRESHOLD,
) -> AcquisitionRasters:
    """RGB + sparse cube + regression target for one acquisition."""
    rgb = synthesize_rgb(cube, response)
    sparse = fibre.apply_mask(cube, bundle_mask)
    target = estimate_sto2_map(cube, white_ref=white_ref, table=table,
                               cod_threshold=cod_threshold)
    rgb_data = np.nan_to_num(rgb.data, nan=0.0)
    shsi_data = np.nan_to_num(sparse.cube.data, nan=0.0)
    filled = _fill_nearest(target.values, target.mask.codes == EFFECTIVE)
    return AcquisitionRasters(
        rgb=rgb_data.astype(np.float32),
        shsi=shsi_data.astype(np.float32),
        target=filled.astype(np.float32),
        mask=target.mask.codes.copy(),
    )


def window_origins(size: int, window: int, stride: int) -> list[int]:
    if size < window:
        raise ValueError(f"raster size {size} smaller than window {window}")
    return list(range(0, size - window + 1, stride))


def augmentation_count(width: int, height: int, window: int = WINDOW,
                       stride: int = STRIDE, n_variants: int = len(VARIANTS)) -> int:
    """Crops per acquisition: variants * windows along each axis."""
    return n_variants * len(window_origins(width, window, stride)) * len(
        window_origins(height, window, stride)
    )


def _transform(acq: AcquisitionRasters, variant: str, x: int, y: int,
               window: int, target_size: int) -> Sample:
    def cut(raster):
        return raster[..., y: y + window, x: x + window]

    rgb, shsi, target, mask = cut(acq.rgb), cut(acq.shsi), cut(acq.target), cut(acq.mask)
    if variant == "hflip":
        rgb, shsi, target, mask = (imaging.flip_h(r) for r in (rgb, shsi, target, mask))
    elif variant == "vflip":
        rgb, shsi, target, mask = (imaging.flip_v(r) for r in (rgb, shsi, target, mask))
    elif variant not in ("identity", "center"):
        raise ValueError(f"unknown variant {variant!r}")
    return Sample(
        rgb=imaging.resize_bilinear(rgb, target_size, target_size),
        shsi=imaging.resize_bilinear(shsi, target_size, target_size),
        target=imaging.resize_bilinear(target, target_size, target_size),
        mask=imaging.resize_nearest(mask, target_size, target_size),
    )


def augment(acq: AcquisitionRasters, window: int = WINDOW, stride: int = STRIDE,
            target_size: int = TARGET_SIZE) -> list[Sample]:
    """All crop/flip variants of one acquisition, in (variant, row, column) order."""
    samples = []
    for variant in VARIANTS:
        for y in window_origins(acq.height, window, stride):
            for x in window_origins(acq.width, window, stride):
                samples.append(_transform(acq, variant, x, y, window, target_size))
    return samples


def make_test(acq: AcquisitionRasters, window: int = WINDOW,
              target_size: int = TARGET_SIZE) -> Sample:
    """Central crop resized to the network size."""
    x = (acq.width - window) // 2
    y = (acq.height - window) // 2
    return _transform(acq, "center", x, y, window, target_size)


# ---------------------------------------------------------------------------
# Manifest: JSON index of acquisitions and the deterministic sample transforms.
# Rasters live in the container formats; samples materialize on load.
# ---------------------------------------------------------------------------


def save_acquisition(acq: AcquisitionRasters, directory: Path, name: str,
                     grid: WavelengthGrid) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "rgb": f"{name}_rgb.oxc",
        "shsi": f"{name}_shsi.oxc",
        "target": f"{name}_target.f32",
        "mask": f"{name}_mask.png",
    }
    rgb_grid = WavelengthGrid(start_nm=1.0, step_nm=1.0, bands=3)
    save_cube(Hypercube(grid=rgb_grid, data=acq.rgb), directory / paths["rgb"])
    save_cube(Hypercube(grid=grid, data=acq.shsi), directory / paths["shsi"])
    save_raster(acq.target, directory / paths["target"])
    imaging.save_mask_png(PixelMask(acq.mask), directory / paths["mask"])
    return paths


def load_acquisition(directory: Path, paths: dict) -> AcquisitionRasters:
    from PIL import Image

    rgb = load_cube(directory / paths["rgb"]).data
    shsi = load_cube(directory / paths["shsi"]).data
    target = load_raster(directory / paths["target"])
    gray = np.asarray(Image.open(directory / paths["mask"]))
    codes = np.zeros_like(gray, dtype=np.uint8)
    from .hypercube import MASK_GRAY

    for code, level in MASK_GRAY.items():
        codes[gray == level] = code
    return AcquisitionRasters(rgb=rgb, shsi=shsi, target=target, mask=codes)


def build_manifest(acquisitions: list[dict], window: int, stride: int,
                   target_size: int) -> dict:
    """Assemble the sample index over saved acquisitions.

    Training acquisitions expand to every (variant, window) crop; test
    acquisitions contribute one central crop each.
    """
    samples = []
    for acq in acquisitions:
        if acq["split"] == "train":
            for variant in VARIANTS:
                for y in window_origins(acq["height"], window, stride):
                    for x in window_origins(acq["width"], window, stride):
                        samples.append({
                            "acquisition_id": acq["id"],
                            "split": "train",
                            "variant": variant,
                            "window_xy": [x, y],
                        })
        else:
            samples.append({
                "acquisition_id": acq["id"],
                "split": acq["split"],
                "variant": "center",
                "window_xy": [
                    (acq["width"] - window) // 2,
                    (acq["height"] - window) // 2,
                ],
            })
    for i, s in enumerate(samples):
        s["id"] = i
    return {
        "version": 1,
        "window": window,
        "stride": stride,
        "target_size": target_size,
        "acquisitions": acquisitions,
        "samples": samples,
    }


def save_manifest(manifest: dict, path: Path) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_manifest(path: Path) -> dict:
    return json.loads(Path(path).read_text())


class SampleStore:
    """Materializes manifest samples on demand, caching acquisition rasters."""

    def __init__(self, manifest: dict, directory: Path):
        self.manifest = manifest
        self.directory = Path(directory)
        self._acq_cache: dict = {}
        self._by_id = {a["id"]: a for a in manifest["acquisitions"]}

    def sample_ids(self, split: str) -> list[int]:
        return [s["id"] for s in self.manifest["samples"] if s["split"] == split]

    def _rasters(self, acq_id) -> AcquisitionRasters:
        if acq_id not in self._acq_cache:
            acq = self._by_id[acq_id]
            self._acq_cache[acq_id] = load_acquisition(self.directory, acq["paths"])
        return self._acq_cache[acq_id]

    def load(self, sample_id: int) -> Sample:
        rec = self.manifest["samples"][sample_id]
        assert rec["id"] == sample_id
        acq = self._rasters(rec["acquisition_id"])
        x, y = rec["window_xy"]
        return _transform(acq, rec["variant"], x, y,
                          self.manifest["window"], self.manifest["target_size"])
