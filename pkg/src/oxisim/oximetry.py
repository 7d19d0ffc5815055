"""Modified Beer-Lambert forward model and per-pixel regression for StO2 maps.

The inverse is an ordinary least-squares fit of absorbance
A(lambda) = -log10(I / I0) against [eps_HbO2(lambda), eps_Hb(lambda), 1];
the constant column absorbs scattering and illumination offsets. StO2 is
the oxygenated fraction c_HbO2 / (c_HbO2 + c_Hb), and the coefficient of
determination (R^2) of each fit gates pixel reliability.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hypercube import (
    EFFECTIVE,
    LOW_COD,
    NON_TISSUE,
    SATURATED,
    Hypercube,
    PixelMask,
    WavelengthGrid,
)

COD_THRESHOLD = 0.85


@dataclass
class ChromophoreTable:
    """Extinction coefficients per band for HbO2 and Hb (L mmol^-1 cm^-1)."""

    grid: WavelengthGrid
    eps_hbo2: np.ndarray
    eps_hb: np.ndarray

    def __post_init__(self):
        self.eps_hbo2 = np.asarray(self.eps_hbo2, dtype=np.float64)
        self.eps_hb = np.asarray(self.eps_hb, dtype=np.float64)
        if self.eps_hbo2.shape != (self.grid.bands,) or self.eps_hb.shape != (self.grid.bands,):
            raise ValueError("extinction arrays must have one value per band")
        if np.any(self.eps_hbo2 <= 0) or np.any(self.eps_hb <= 0):
            raise ValueError("extinction coefficients must be > 0")

    def design_matrix(self) -> np.ndarray:
        """(bands, 3) regression design: [eps_HbO2, eps_Hb, 1]."""
        return np.column_stack([self.eps_hbo2, self.eps_hb, np.ones(self.grid.bands)])


def _read_csv_columns(path: str | Path, n_cols: int) -> np.ndarray:
    """Parse a numeric CSV, skipping comment lines and a header row if present."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            rows.append([float(p) for p in parts[:n_cols]])
        except ValueError:
            continue  # header row
    if not rows:
        raise ValueError(f"{path}: no numeric rows")
    return np.array(rows, dtype=np.float64)


def load_chromophore_csv(path: str | Path, grid: WavelengthGrid | None = None) -> ChromophoreTable:
    """Read a table CSV (wavelength_nm, eps_hbo2, eps_hb) covering the grid."""
    raw = _read_csv_columns(path, 3)
    lam, hbo2, hb = raw[:, 0], raw[:, 1], raw[:, 2]
    if grid is None:
        step = float(lam[1] - lam[0]) if len(lam) > 1 else 10.0
        grid = WavelengthGrid(start_nm=float(lam[0]), step_nm=step, bands=len(lam))
    idx = [int(round((w - lam[0]) / (lam[1] - lam[0]))) for w in grid.wavelengths()]
    if any(i < 0 or i >= len(lam) for i in idx):
        raise ValueError("chromophore table does not cover the working grid")
    got = lam[idx]
    if not np.allclose(got, grid.wavelengths(), atol=1e-6):
        raise ValueError("chromophore table wavelengths do not match the grid")
    return ChromophoreTable(grid=grid, eps_hbo2=hbo2[idx], eps_hb=hb[idx])


def default_table(grid: WavelengthGrid | None = None) -> ChromophoreTable:
    """The embedded extinction table on the default 460-690/10 nm grid."""
    ref = importlib.resources.files("oxisim").joinpath("assets/hb_extinction_v1.csv")
    with importlib.resources.as_file(ref) as path:
        return load_chromophore_csv(path, grid or WavelengthGrid())


@dataclass
class OximetryFit:
    """Per-pixel regression result."""

    c_hbo2: float
    c_hb: float
    offset: float
    cod: float

    @property
    def total(self) -> float:
        return self.c_hbo2 + self.c_hb

    @property
    def sto2(self) -> float:
        """Oxygenated fraction; undefined (NaN) when total concentration is 0."""
        if self.total <= 0:
            return float("nan")
        return self.c_hbo2 / self.total


@dataclass
class StO2Map:
    """Per-pixel StO2 fractions with a reason-code mask.

    Values are clamped to [0, 1]; pixels without a defined fit carry 0 and are
    excluded via the mask.
    """

    values: np.ndarray
    mask: PixelMask

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != self.mask.codes.shape:
            raise ValueError("values and mask shapes differ")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def forward_spectrum(
    sto2: float,
    total_hb: float,
    offset: float,
    table: ChromophoreTable,
    i0: np.ndarray | float = 1.0,
) -> np.ndarray:
    """Reflectance I(lambda) = I0 * 10^-A with A from the linear chromophore model."""
    if not 0.0 <= sto2 <= 1.0:
        raise ValueError("sto2 must lie in [0, 1]")
    if total_hb <= 0:
        raise ValueError("total_hb must be > 0")
    attn = total_hb * (sto2 * table.eps_hbo2 + (1.0 - sto2) * table.eps_hb) + offset
    return np.asarray(i0, dtype=np.float64) * 10.0 ** (-attn)


def absorbance(intensity: np.ndarray, white_ref: np.ndarray | float) -> np.ndarray:
    """A(lambda) = -log10(I / I0); inputs must be finite and > 0."""
    intensity = np.asarray(intensity, dtype=np.float64)
    ref = np.broadcast_to(np.asarray(white_ref, dtype=np.float64), intensity.shape)
    if np.any(~np.isfinite(intensity)) or np.any(intensity <= 0):
        raise ValueError("intensities must be finite and > 0")
    if np.any(~np.isfinite(ref)) or np.any(ref <= 0):
        raise ValueError("white reference must be finite and > 0")
    return -np.log10(intensity / ref)


def _solve(design: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """OLS coefficients and CoD for absorbance columns a (bands, n)."""
    gram = design.T @ design
    if abs(np.linalg.det(gram)) < 1e-12:
        raise AssertionError("singular design matrix: extinction curves must be distinct")
    coef = np.linalg.solve(gram, design.T @ a)  # (3, n)
    resid = a - design @ coef
    ss_res = np.sum(resid**2, axis=0)
    ss_tot = np.sum((a - a.mean(axis=0, keepdims=True)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cod = 1.0 - ss_res / ss_tot
    # Flat absorbance: perfect fit via the offset column counts as CoD 1.
    flat = ss_tot <= 1e-30
    cod = np.where(flat, np.where(ss_res <= 1e-30, 1.0, 0.0), cod)
    return coef, np.clip(cod, 0.0, 1.0)


def fit_pixel(
    intensity: np.ndarray, white_ref: np.ndarray | float, table: ChromophoreTable
) -> OximetryFit:
    """Fit one spectrum; negative concentrations clamp to 0 after the fit, CoD kept unclamped."""
    a = absorbance(intensity, white_ref)
    if a.shape != (table.grid.bands,):
        raise ValueError("spectrum length must match the table grid")
    coef, cod = _solve(table.design_matrix(), a[:, None])
    c_hbo2, c_hb, offset = coef[:, 0]
    return OximetryFit(
        c_hbo2=max(float(c_hbo2), 0.0),
        c_hb=max(float(c_hb), 0.0),
        offset=float(offset),
        cod=float(cod[0]),
    )


def estimate_sto2_map(
    cube: Hypercube,
    white_ref: np.ndarray | float = 1.0,
    table: ChromophoreTable | None = None,
    cod_threshold: float = COD_THRESHOLD,
) -> StO2Map:
    """Per-pixel regression over a cube.

    NaN input pixels are flagged saturated; CoD <= threshold flags low_cod;
    zero total concentration flags non_tissue; the rest are effective.
    """
    table = table or default_table(cube.grid)
    if table.grid.bands != cube.grid.bands:
        raise ValueError("cube bands do not match the chromophore table grid")
    spectra = cube.spectra().astype(np.float64)  # (bands, npix)
    npix = spectra.shape[1]
    ref = np.asarray(white_ref, dtype=np.float64)
    if ref.ndim == 1:
        if ref.shape[0] != cube.grid.bands:
            raise ValueError("white reference length must match the grid")
        ref = ref[:, None]
    if np.any(ref <= 0) or np.any(~np.isfinite(ref)):
        raise ValueError("white reference must be finite and > 0")

    saturated = np.isnan(spectra).any(axis=0)
    valid = ~saturated
    values = np.zeros(npix, dtype=np.float32)
    codes = np.full(npix, SATURATED, dtype=np.uint8)

    if valid.any():
        sub = spectra[:, valid]
        if np.any(sub <= 0):
            raise ValueError("non-NaN intensities must be > 0 for regression")
        a = -np.log10(sub / ref)
        coef, cod = _solve(table.design_matrix(), a)
        c_hbo2 = np.maximum(coef[0], 0.0)
        c_hb = np.maximum(coef[1], 0.0)
        total = c_hbo2 + c_hb
        sub_codes = np.full(sub.shape[1], EFFECTIVE, dtype=np.uint8)
        sub_codes[cod <= cod_threshold] = LOW_COD
        sub_codes[total <= 0] = NON_TISSUE
        with np.errstate(divide="ignore", invalid="ignore"):
            sto2 = np.where(total > 0, c_hbo2 / np.where(total > 0, total, 1.0), 0.0)
        values[valid] = np.clip(sto2, 0.0, 1.0)
        codes[valid] = sub_codes

    shape = (cube.height, cube.width)
    return StO2Map(values=values.reshape(shape), mask=PixelMask(codes.reshape(shape)))
