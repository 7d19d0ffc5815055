"""Hypercube container, file I/O, and RGB synthesis from a camera response."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = "OXC1"

# Pixel mask reason codes (exactly one per pixel).
EFFECTIVE = np.uint8(0)
SATURATED = np.uint8(1)
LOW_COD = np.uint8(2)
NON_TISSUE = np.uint8(3)

# Gray levels used when a mask is exported as an 8-bit PNG.
MASK_GRAY = {EFFECTIVE: 255, SATURATED: 0, LOW_COD: 64, NON_TISSUE: 128}


@dataclass(frozen=True)
class WavelengthGrid:
    """Uniform wavelength grid in nm."""

    start_nm: float = 460.0
    step_nm: float = 10.0
    bands: int = 24

    def __post_init__(self):
        if self.step_nm <= 0:
            raise ValueError("step_nm must be > 0")
        if self.bands < 1:
            raise ValueError("bands must be >= 1")

    def wavelengths(self) -> np.ndarray:
        return self.start_nm + self.step_nm * np.arange(self.bands)

    def index_of(self, wavelength_nm: float) -> int:
        """Band index of an on-grid wavelength; raises if off-grid."""
        pos = (wavelength_nm - self.start_nm) / self.step_nm
        idx = int(round(pos))
        if abs(pos - idx) > 1e-6 or not (0 <= idx < self.bands):
            raise ValueError(f"wavelength {wavelength_nm} nm is not on the grid")
        return idx


@dataclass
class Hypercube:
    """Reflectance raster, data layout (bands, height, width), float32.

    Saturated pixels are encoded as NaN. Non-NaN values are finite and >= 0.
    """

    grid: WavelengthGrid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("cube data must be (bands, height, width)")
        if self.data.shape[0] != self.grid.bands:
            raise ValueError(
                f"data has {self.data.shape[0]} bands, grid declares {self.grid.bands}"
            )
        finite = self.data[~np.isnan(self.data)]
        if finite.size and (not np.all(np.isfinite(finite)) or finite.min() < 0):
            raise ValueError("non-NaN cube values must be finite and >= 0")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def spectra(self) -> np.ndarray:
        """(bands, height*width) view of the per-pixel spectra."""
        return self.data.reshape(self.grid.bands, -1)


@dataclass
class SpectralResponse:
    """3 x bands camera sensitivity matrix (rows R, G, B), rows scaled to sum 1."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != 3:
            raise ValueError("response matrix must be 3 x bands")
        if np.any(self.matrix < 0):
            raise ValueError("response weights must be >= 0")
        row_sums = self.matrix.sum(axis=1)
        if np.any(row_sums <= 0):
            raise ValueError("each channel needs at least one positive weight")
        self.matrix = self.matrix / row_sums[:, None]

    @property
    def bands(self) -> int:
        return self.matrix.shape[1]


def default_response(grid: WavelengthGrid | None = None) -> SpectralResponse:
    """Gaussian R/G/B sensitivities centred at 620/540/460 nm, sigma 30 nm."""
    grid = grid or WavelengthGrid()
    lam = grid.wavelengths()
    centers = np.array([620.0, 540.0, 460.0])
    rows = np.exp(-0.5 * ((lam[None, :] - centers[:, None]) / 30.0) ** 2)
    return SpectralResponse(rows)


def load_response_csv(path: str | Path) -> SpectralResponse:
    """Read a response CSV with rows wavelength_nm,r,g,b (one row per band)."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[None, :]
    if raw.shape[1] != 4:
        raise ValueError("response CSV must have columns wavelength_nm,r,g,b")
    return SpectralResponse(raw[:, 1:4].T)


@dataclass
class RgbImage:
    """3-channel float raster, layout (3, height, width), values in [0, 1] or NaN."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError("rgb data must be (3, height, width)")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class PixelMask:
    """Per-pixel reason code raster (height, width), uint8, one code per pixel."""

    codes: np.ndarray

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.uint8)
        if self.codes.ndim != 2:
            raise ValueError("mask codes must be (height, width)")
        if self.codes.max(initial=0) > NON_TISSUE:
            raise ValueError("unknown mask reason code")

    @property
    def effective(self) -> np.ndarray:
        return self.codes == EFFECTIVE

    @property
    def n_effective(self) -> int:
        return int(self.effective.sum())

    def counts(self) -> dict:
        return {
            "effective": int((self.codes == EFFECTIVE).sum()),
            "saturated": int((self.codes == SATURATED).sum()),
            "low_cod": int((self.codes == LOW_COD).sum()),
            "non_tissue": int((self.codes == NON_TISSUE).sum()),
        }


# ---------------------------------------------------------------------------
# Container I/O
#
# Text header of key=value lines terminated by a blank line, then the payload
# as little-endian float32 in band-sequential order (band, row, column).
# ---------------------------------------------------------------------------


def _write_container(path: Path, header: dict, payload: np.ndarray) -> None:
    buf = io.BytesIO()
    for key, value in header.items():
        buf.write(f"{key}={value}\n".encode("ascii"))
    buf.write(b"\n")
    buf.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())
    path.write_bytes(buf.getvalue())


def _read_container(path: Path) -> tuple[dict, np.ndarray]:
    blob = path.read_bytes()
    end = blob.find(b"\n\n")
    if end < 0:
        raise ValueError(f"{path}: malformed header (no terminating blank line)")
    header = {}
    for line in blob[:end].decode("ascii", errors="replace").splitlines():
        if "=" not in line:
            raise ValueError(f"{path}: malformed header line {line!r}")
        key, _, value = line.partition("=")
        header[key] = value
    if header.get("magic") != MAGIC:
        raise ValueError(f"{path}: bad magic {header.get('magic')!r}")
    payload = np.frombuffer(blob[end + 2:], dtype="<f4")
    return header, payload


def save_cube(cube: Hypercube, path: str | Path) -> None:
    """Write a cube; identical input yields byte-identical output."""
    header = {
        "magic": MAGIC,
        "width": cube.width,
        "height": cube.height,
        "bands": cube.grid.bands,
        "start_nm": repr(float(cube.grid.start_nm)),
        "step_nm": repr(float(cube.grid.step_nm)),
    }
    _write_container(Path(path), header, cube.data)


def load_cube(path: str | Path) -> Hypercube:
    header, payload = _read_container(Path(path))
    try:
        width = int(header["width"])
        height = int(header["height"])
        bands = int(header["bands"])
        start_nm = float(header["start_nm"])
        step_nm = float(header["step_nm"])
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed header ({exc})") from exc
    expected = bands * height * width
    if payload.size != expected:
        raise ValueError(
            f"{path}: payload has {payload.size} floats, header declares {expected}"
        )
    grid = WavelengthGrid(start_nm=start_nm, step_nm=step_nm, bands=bands)
    return Hypercube(grid=grid, data=payload.reshape(bands, height, width).copy())


def save_raster(data: np.ndarray, path: str | Path) -> None:
    """Write a single-band float raster using the cube header convention."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError("raster must be 2-D")
    header = {
        "magic": MAGIC,
        "width": data.shape[1],
        "height": data.shape[0],
        "bands": 1,
        "start_nm": repr(0.0),
        "step_nm": repr(1.0),
    }
    _write_container(Path(path), header, data)


def load_raster(path: str | Path) -> np.ndarray:
    header, payload = _read_container(Path(path))
    width, height, bands = int(header["width"]), int(header["height"]), int(header["bands"])
    if bands != 1:
        raise ValueError(f"{path}: expected a 1-band raster, got {bands} bands")
    if payload.size != width * height:
        raise ValueError(f"{path}: payload size mismatch")
    return payload.reshape(height, width).copy()


# ---------------------------------------------------------------------------
# RGB synthesis
# ---------------------------------------------------------------------------


def synthesize_rgb(cube: Hypercube, response: SpectralResponse | None = None) -> RgbImage:
    """Project the cube through the camera response; NaN pixels stay NaN in all channels.

    Each channel is the response-weighted mean of the pixel spectrum (rows sum
    to 1), clamped to [0, 1].
    """
    response = response or default_response(cube.grid)
    if response.bands != cube.grid.bands:
        raise ValueError(
            f"response has {response.bands} bands, cube has {cube.grid.bands}"
        )
    spectra = cube.spectra().astype(np.float64)  # (bands, npix)
    rgb = response.matrix @ spectra  # (3, npix)
    nan_pix = np.isnan(spectra).any(axis=0)
    rgb[:, nan_pix] = np.nan
    rgb = np.clip(rgb, 0.0, 1.0)  # NaN passes through untouched
    return RgbImage(rgb.reshape(3, cube.height, cube.width))


def extract_bands(
    cube: Hypercube, wavelengths_nm: tuple[float, float, float] = (460.0, 520.0, 590.0)
) -> RgbImage:
    """3-channel preview from the bands at the requested wavelengths."""
    if len(wavelengths_nm) != 3:
        raise ValueError("exactly three wavelengths required")
    idx = [cube.grid.index_of(w) for w in wavelengths_nm]
    return RgbImage(cube.data[idx].copy())
