"""Calibration and chemometrics preprocessing of NIR hyperspectral data.

The processing chain turns raw camera intensities into network-ready
first-derivative spectra:

    raw --calibrate--> reflectance --SNV--> snv --tile mean--> smoothed
        --Savitzky-Golay--> derivative

Every function accepts plain numpy arrays (a single spectrum or a 2-D stack
with one spectrum per row) as well as the small container types defined
here. All arithmetic is carried out in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from math import factorial
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import (
    EmptyOutput,
    InvalidWindow,
    NonFinite,
    ShapeMismatch,
    StageError,
    TooShort,
    ZeroDenominator,
    ZeroVariance,
)

SNV_MIN_SD = 1e-12
CALIBRATION_MIN_DENOM = 1e-12


class Stage(IntEnum):
    """Position of a signal along the preprocessing chain."""

    RAW = 0
    REFLECTANCE = 1
    SNV = 2
    SMOOTHED = 3
    DERIVATIVE = 4


@dataclass(frozen=True)
class WavelengthGrid:
    """Linearly spaced band centres, endpoints inclusive."""

    start_nm: float = 990.0
    end_nm: float = 1700.0
    n_bands: int = 400

    def __post_init__(self):
        if self.n_bands < 3:
            raise ShapeMismatch(f"need at least 3 bands, got {self.n_bands}")
        if not self.start_nm < self.end_nm:
            raise ShapeMismatch("start_nm must be smaller than end_nm")

    @property
    def centers(self) -> np.ndarray:
        return np.linspace(self.start_nm, self.end_nm, self.n_bands)

    @property
    def spacing(self) -> float:
        return (self.end_nm - self.start_nm) / (self.n_bands - 1)

    @classmethod
    def from_centers(cls, centers, rtol: float = 1e-9) -> "WavelengthGrid":
        centers = np.asarray(centers, dtype=float)
        if centers.ndim != 1 or centers.size < 3:
            raise ShapeMismatch("wavelength list must hold at least 3 values")
        steps = np.diff(centers)
        mean_step = (centers[-1] - centers[0]) / (centers.size - 1)
        if np.max(np.abs(steps - mean_step)) > rtol * abs(mean_step) * centers.size:
            raise ShapeMismatch("wavelengths are not evenly spaced")
        return cls(float(centers[0]), float(centers[-1]), int(centers.size))


DEFAULT_GRID = WavelengthGrid()


@dataclass
class Spectrum:
    """One spectrum plus the preprocessing stage it has reached.

    ``excluded`` is filled in by :func:`dark_sample_filter`; ``None`` means
    the spectrum was never screened.
    """

    values: np.ndarray
    stage: Stage = Stage.RAW
    grid: WavelengthGrid | None = None
    excluded: bool | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.stage = Stage(self.stage)
        if self.values.ndim != 1:
            raise ShapeMismatch("a Spectrum holds a 1-D value vector")
        if self.grid is not None and self.values.size != self.grid.n_bands:
            raise ShapeMismatch(
                f"{self.values.size} values for a {self.grid.n_bands}-band grid"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonFinite("spectrum contains NaN or Inf")

    def __len__(self):
        return self.values.size

    def advance(self, values, stage: Stage) -> "Spectrum":
        """Return a new spectrum at a later stage; moving backwards is an error."""
        stage = Stage(stage)
        if stage <= self.stage:
            raise StageError(f"cannot go from {self.stage.name} to {stage.name}")
        return Spectrum(values, stage, self.grid)


@dataclass
class HyperCube:
    """Reflectance or intensity volume of shape ``(lines, samples, bands)``."""

    data: np.ndarray
    grid: WavelengthGrid = DEFAULT_GRID
    stage: Stage = Stage.RAW

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.stage = Stage(self.stage)
        if self.data.ndim != 3:
            raise ShapeMismatch(f"cube must be 3-D, got shape {self.data.shape}")
        if self.data.shape[2] != self.grid.n_bands:
            raise ShapeMismatch(
                f"cube has {self.data.shape[2]} bands, grid has {self.grid.n_bands}"
            )
        if not np.all(np.isfinite(self.data)):
            raise NonFinite("cube contains NaN or Inf")

    @property
    def lines(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixel(self, line: int, sample: int) -> Spectrum:
        return Spectrum(self.data[line, sample], self.stage, self.grid)


@dataclass
class PipelineConfig:
    apply_snv: bool = True
    smooth_block: int = 5
    sg_window: int = 9
    sg_polyorder: int = 2
    sg_deriv: int = 1
    dark_threshold: float = 0.05

    def __post_init__(self):
        _check_savgol_args(self.sg_window, self.sg_polyorder, self.sg_deriv)
        if self.smooth_block < 1:
            raise InvalidWindow("smooth_block must be >= 1")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _values(x) -> np.ndarray:
    if isinstance(x, Spectrum):
        return x.values
    if isinstance(x, HyperCube):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _reference(ref, bands: int) -> np.ndarray:
    """Bring a dark/white reference to a shape that broadcasts over a cube.

    Accepted: one spectrum per channel ``(bands,)``, one spectrum per column
    ``(samples, bands)``, or a reference cube whose lines are averaged into a
    per-column reference.
    """
    arr = _values(ref)
    if arr.shape[-1] != bands:
        raise ShapeMismatch(f"reference has {arr.shape[-1]} bands, cube has {bands}")
    if arr.ndim == 3:
        arr = arr.mean(axis=0)
    if arr.ndim not in (1, 2):
        raise ShapeMismatch(f"unsupported reference shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def calibrate_reflectance(raw: HyperCube, dark, white) -> HyperCube:
    """Convert raw intensities to reflectance using dark and white references.

    ``out = (raw - dark) / (white - dark)`` channel-wise (or column- and
    channel-wise for per-column references).
    """
    if not isinstance(raw, HyperCube):
        raw = HyperCube(raw)
    if raw.stage != Stage.RAW:
        raise StageError(f"calibration expects a raw cube, got {raw.stage.name}")
    d = _reference(dark, raw.bands)
    w = _reference(white, raw.bands)
    if d.ndim == 2 and d.shape[0] != raw.samples or w.ndim == 2 and w.shape[0] != raw.samples:
        raise ShapeMismatch("per-column references must have one row per sample")
    denom = w - d
    if np.any(np.abs(denom) < CALIBRATION_MIN_DENOM):
        raise ZeroDenominator("white and dark references coincide in some channel")
    out = (raw.data - d) / denom
    return HyperCube(out, raw.grid, Stage.REFLECTANCE)


def _snv_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise SNV. Returns the standardized rows and a validity mask;
    rows with zero variance are left as zeros and flagged False."""
    if X.shape[-1] < 2:
        raise TooShort("SNV needs at least two channels")
    mean = X.mean(axis=-1, keepdims=True)
    sd = X.std(axis=-1, ddof=1, keepdims=True)
    ok = sd[..., 0] >= SNV_MIN_SD
    safe = np.where(sd >= SNV_MIN_SD, sd, 1.0)
    out = np.where(ok[..., None], (X - mean) / safe, 0.0)
    return out, ok


def snv(x):
    """Standard normal variate: centre each spectrum and divide by its
    sample standard deviation (``ddof=1``).

    Works on a :class:`Spectrum`, a 1-D array, or a 2-D array of row
    spectra. Raises :class:`ZeroVariance` for constant spectra.
    """
    X = _values(x)
    out, ok = _snv_rows(X)
    if not np.all(ok):
        raise ZeroVariance("spectrum has (near) zero variance")
    if isinstance(x, Spectrum):
        return x.advance(out, Stage.SNV)
    return out


class BlockSpectrum(NamedTuple):
    row: int
    col: int
    spectrum: Spectrum


def _tile_means(data: np.ndarray, block: int) -> np.ndarray:
    lines, samples, bands = data.shape
    n_r, n_c = lines // block, samples // block
    if n_r == 0 or n_c == 0:
        raise EmptyOutput(
            f"{lines}x{samples} plane is smaller than the {block}x{block} block"
        )
    tiles = data[: n_r * block, : n_c * block].reshape(n_r, block, n_c, block, bands)
    return tiles.mean(axis=(1, 3))


def mean_smooth(cube: HyperCube, block: int = 5) -> list[BlockSpectrum]:
    """Average non-overlapping ``block x block`` tiles into single spectra.

    Tiles are anchored at the top-left corner; incomplete tiles along the
    right and bottom edges are discarded. Output is in row-major tile order.
    """
    if block < 1:
        raise InvalidWindow("block must be >= 1")
    if cube.stage >= Stage.SMOOTHED:
        raise StageError(f"cube is already at stage {cube.stage.name}")
    means = _tile_means(cube.data, block)
    out = []
    for r in range(means.shape[0]):
        for c in range(means.shape[1]):
            out.append(BlockSpectrum(r, c, Spectrum(means[r, c], Stage.SMOOTHED, cube.grid)))
    return out


def _check_savgol_args(window: int, polyorder: int, deriv: int) -> None:
    if window < 1 or window % 2 == 0:
        raise InvalidWindow(f"window must be a positive odd integer, got {window}")
    if polyorder < 0 or polyorder >= window:
        raise InvalidWindow(f"polyorder must lie in [0, window), got {polyorder}")
    if deriv < 0 or deriv > polyorder:
        raise InvalidWindow(f"deriv must lie in [0, polyorder], got {deriv}")


def _fit_weights(window: int, polyorder: int, deriv: int, at) -> np.ndarray:
    """Weights mapping a window of samples to the ``deriv``-th derivative of
    the least-squares polynomial, evaluated at offsets ``at`` from the window
    centre. Returns shape ``(len(at), window)``."""
    half = window // 2
    z = np.arange(-half, half + 1, dtype=np.float64)
    vander = z[:, None] ** np.arange(polyorder + 1)
    # rows of the pseudo-inverse turn samples into polynomial coefficients
    coef_map = np.linalg.pinv(vander)
    at = np.atleast_1d(np.asarray(at, dtype=np.float64))
    powers = np.arange(polyorder + 1)
    dfac = np.array(
        [factorial(k) / factorial(k - deriv) if k >= deriv else 0.0 for k in powers]
    )
    expo = np.clip(powers - deriv, 0, None)
    basis = dfac * at[:, None] ** expo
    return basis @ coef_map


def savgol_coefficients(window: int, polyorder: int, deriv: int = 0) -> np.ndarray:
    """Savitzky-Golay weights for the window centre.

    ``y[i] = sum_j w[j] * x[i - window//2 + j]`` gives the ``deriv``-th
    derivative (per channel step) of the local polynomial fit.
    """
    _check_savgol_args(window, polyorder, deriv)
    return _fit_weights(window, polyorder, deriv, [0.0])[0]


def savgol_filter(X, window: int = 9, polyorder: int = 2, deriv: int = 1) -> np.ndarray:
    """Length-preserving Savitzky-Golay filter along the last axis.

    Interior channels use the centred weights. The first and last
    ``window // 2`` channels evaluate the polynomial fitted to the first or
    last full window at the off-centre positions.
    """
    _check_savgol_args(window, polyorder, deriv)
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[-1]
    if n < window:
        raise TooShort(f"spectrum of length {n} is shorter than window {window}")
    half = window // 2
    out = np.empty_like(X)
    w = savgol_coefficients(window, polyorder, deriv)
    out[..., half : n - half] = sliding_window_view(X, window, axis=-1) @ w
    if half:
        left = _fit_weights(window, polyorder, deriv, np.arange(-half, 0))
        right = _fit_weights(window, polyorder, deriv, np.arange(1, half + 1))
        out[..., :half] = X[..., :window] @ left.T
        out[..., n - half :] = X[..., n - window :] @ right.T
    return out


def savgol_apply(x, cfg: PipelineConfig | None = None):
    """Apply the configured Savitzky-Golay filter to a spectrum or row stack."""
    cfg = cfg or PipelineConfig()
    out = savgol_filter(_values(x), cfg.sg_window, cfg.sg_polyorder, cfg.sg_deriv)
    if isinstance(x, Spectrum):
        return x.advance(out, Stage.DERIVATIVE)
    return out


def dark_mask(X, threshold: float = 0.05) -> np.ndarray:
    """Keep-mask for a stack of reflectance spectra (True = keep)."""
    X = np.asarray(X, dtype=np.float64)
    return ~(X.mean(axis=-1) < threshold)


def dark_sample_filter(x, threshold: float = 0.05) -> bool:
    """Screen a reflectance spectrum for near-total absorption.

    Returns True when the spectrum is kept. A spectrum is excluded only when
    its mean reflectance is strictly below ``threshold``. For
    :class:`Spectrum` inputs the decision is also stored in ``x.excluded``.
    """
    if isinstance(x, Spectrum) and x.stage != Stage.REFLECTANCE:
        raise StageError(f"dark filter expects reflectance, got {x.stage.name}")
    keep = bool(dark_mask(_values(x), threshold))
    if isinstance(x, Spectrum):
        x.excluded = not keep
    return keep


@dataclass
class PipelineResult:
    """Output of :func:`pipeline_apply`.

    ``spectra`` holds one processed block spectrum per row, ``coords`` the
    matching ``(tile_row, tile_col)``. Tiles containing a dark or
    zero-variance pixel are dropped and counted.
    """

    spectra: np.ndarray
    coords: np.ndarray
    n_tiles: int
    dropped_zero_variance: int = 0
    dropped_dark: int = 0
    grid: WavelengthGrid = DEFAULT_GRID
    dark_pixels: int = 0
    zero_variance_pixels: int = 0
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return self.spectra.shape[0]

    def as_spectra(self) -> list[Spectrum]:
        return [Spectrum(row, Stage.DERIVATIVE, self.grid) for row in self.spectra]


def pipeline_apply(cube: HyperCube, cfg: PipelineConfig | None = None) -> PipelineResult:
    """SNV per pixel, block mean smoothing, then Savitzky-Golay per block."""
    cfg = cfg or PipelineConfig()
    if cube.stage != Stage.REFLECTANCE:
        raise StageError(f"pipeline expects a reflectance cube, got {cube.stage.name}")
    data = cube.data
    keep = dark_mask(data, cfg.dark_threshold)
    if cfg.apply_snv:
        data, ok = _snv_rows(data)
    else:
        ok = np.ones(data.shape[:2], dtype=bool)
    b = cfg.smooth_block
    means = _tile_means(data, b)
    n_r, n_c = means.shape[:2]

    def tile_all(mask):
        m = mask[: n_r * b, : n_c * b].reshape(n_r, b, n_c, b)
        return m.all(axis=(1, 3))

    tile_dark = ~tile_all(keep)
    tile_zero = ~tile_all(ok) & ~tile_dark
    valid = ~(tile_dark | tile_zero)
    rows, cols = np.nonzero(valid)
    spectra = savgol_filter(means[rows, cols], cfg.sg_window, cfg.sg_polyorder, cfg.sg_deriv)
    return PipelineResult(
        spectra=spectra,
        coords=np.stack([rows, cols], axis=1),
        n_tiles=n_r * n_c,
        dropped_zero_variance=int(tile_zero.sum()),
        dropped_dark=int(tile_dark.sum()),
        grid=cube.grid,
        dark_pixels=int((~keep).sum()),
        zero_variance_pixels=int((~ok & keep).sum()),
    )


def preprocess_spectra(X, cfg: PipelineConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Process already block-averaged reflectance spectra (one per row).

    Returns ``(processed_rows, keep_mask)``; ``processed_rows`` only holds
    the kept spectra. Dark and zero-variance rows are dropped.
    """
    cfg = cfg or PipelineConfig()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    keep = dark_mask(X, cfg.dark_threshold)
    if cfg.apply_snv:
        Z, ok = _snv_rows(X)
        keep &= ok
    else:
        Z = X
    out = savgol_filter(Z[keep], cfg.sg_window, cfg.sg_polyorder, cfg.sg_deriv)
    return out, keep
