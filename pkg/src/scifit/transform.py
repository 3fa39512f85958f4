"""From panel counts to binary competitiveness matrices.

Per year: ``w = log(1 + c)``, Balassa RCA on ``w``, exponential smoothing of
the RCA series per cell, then the binary filter ``M = RCA >= threshold``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ingest import PanelCube

log = logging.getLogger(__name__)

# relative slack on the RCA threshold; absorbs rounding in cells whose RCA is
# mathematically equal to the threshold (e.g. a uniform matrix)
THRESHOLD_RTOL = 1e-12


def _labels(prefix: str, n: int) -> tuple[str, ...]:
    return tuple(f"{prefix}{i}" for i in range(n))


@dataclass(frozen=True)
class WeightMatrix:
    year: int
    geos: tuple[str, ...]
    sectors: tuple[str, ...]
    values: np.ndarray

    @classmethod
    def from_array(cls, values, year: int = 0, geos=None, sectors=None) -> "WeightMatrix":
        values = np.asarray(values, dtype=float)
        geos = tuple(geos) if geos is not None else _labels("g", values.shape[0])
        sectors = tuple(sectors) if sectors is not None else _labels("s", values.shape[1])
        return cls(year, geos, sectors, values)


@dataclass(frozen=True)
class RcaMatrix:
    """RCA values; cells in a row or column with zero marginal are masked (stored as 0)."""

    year: int
    geos: tuple[str, ...]
    sectors: tuple[str, ...]
    values: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_array(cls, values, year: int = 0, geos=None, sectors=None, mask=None) -> "RcaMatrix":
        values = np.asarray(values, dtype=float)
        geos = tuple(geos) if geos is not None else _labels("g", values.shape[0])
        sectors = tuple(sectors) if sectors is not None else _labels("s", values.shape[1])
        mask = np.ones(values.shape, bool) if mask is None else np.asarray(mask, bool)
        return cls(year, geos, sectors, np.where(mask, values, 0.0), mask)


@dataclass(frozen=True)
class CompetitivenessMatrix:
    year: int
    geos: tuple[str, ...]
    sectors: tuple[str, ...]
    values: np.ndarray

    @classmethod
    def from_array(cls, values, year: int = 0, geos=None, sectors=None) -> "CompetitivenessMatrix":
        values = np.asarray(values)
        if values.dtype != bool:
            if not np.isin(values, (0, 1)).all():
                raise ValueError("competitiveness matrix must be binary")
            values = values.astype(bool)
        geos = tuple(geos) if geos is not None else _labels("g", values.shape[0])
        sectors = tuple(sectors) if sectors is not None else _labels("s", values.shape[1])
        return cls(year, geos, sectors, values)

    @property
    def diversification(self) -> np.ndarray:
        return self.values.sum(axis=1)

    @property
    def ubiquity(self) -> np.ndarray:
        return self.values.sum(axis=0)


def log_counts(cube: PanelCube, year: int) -> WeightMatrix:
    """Log-transform one year of a cube: ``w = log(1 + c)``."""
    counts = cube.year_slice(year)
    if np.any(counts < 0):
        raise ValueError("negative counts")
    return WeightMatrix(year, cube.geos, cube.sectors, np.log1p(counts))


def rca(w: WeightMatrix) -> RcaMatrix:
    """Revealed comparative advantage of each (geo, sector) cell.

    ``RCA_gs = (w_gs / sum_s' w_gs') / (sum_g' w_g's / sum_g's' w_g's')``.
    Rows and columns whose marginal is zero are masked out instead of
    producing 0/0.
    """
    values = np.asarray(w.values, dtype=float)
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("weights must be finite and non-negative")
    total = values.sum()
    if not total > 0:
        raise ValueError("empty weight matrix")
    row = values.sum(axis=1)
    col = values.sum(axis=0)
    mask = (row > 0)[:, None] & (col > 0)[None, :]
    safe_row = np.where(row > 0, row, 1.0)
    safe_col = np.where(col > 0, col, 1.0)
    out = (values / safe_row[:, None]) / (safe_col[None, :] / total)
    return RcaMatrix(w.year, w.geos, w.sectors, np.where(mask, out, 0.0), mask)


def smoothing_alpha(half_life: float, elapsed: float = 1.0) -> float:
    """Weight on the new observation after ``elapsed`` years: ``1 - 2**(-elapsed/half_life)``."""
    if not half_life > 0:
        raise ValueError("half-life must be positive")
    return 1.0 - 2.0 ** (-elapsed / half_life)


def smooth_rca(series: Sequence[RcaMatrix], half_life: float = 3.0) -> list[RcaMatrix]:
    """Exponentially smooth each cell's RCA over the years.

    ``s_t = s_prev + a * (x_t - s_prev)`` with ``a = 1 - 2**(-dt/half_life)``,
    where ``dt`` is the number of years since the cell was last observed, so
    a gap of several years decays the old state accordingly.  A cell's first
    observation is taken as is.  Masked cells do not update the state and stay
    masked in the output.  Each output year keeps its input axes.
    """
    if not half_life > 0:
        raise ValueError("half-life must be positive")
    ordered = sorted(series, key=lambda r: r.year)
    if len({r.year for r in ordered}) != len(ordered):
        raise ValueError("duplicate years in RCA series")
    geos = sorted({g for r in ordered for g in r.geos})
    sectors = sorted({s for r in ordered for s in r.sectors})
    gi = {g: i for i, g in enumerate(geos)}
    si = {s: i for i, s in enumerate(sectors)}
    state = np.zeros((len(geos), len(sectors)))
    last = np.full((len(geos), len(sectors)), np.nan)

    out = []
    for r in ordered:
        rows = np.array([gi[g] for g in r.geos], dtype=int)
        cols = np.array([si[s] for s in r.sectors], dtype=int)
        sub = np.ix_(rows, cols)
        prev, seen = state[sub], last[sub]
        x = r.values
        with np.errstate(invalid="ignore"):
            alpha = 1.0 - np.exp2(-(r.year - seen) / half_life)
        smoothed = np.where(np.isnan(seen), x, prev + alpha * (x - prev))
        smoothed = np.where(r.mask, smoothed, 0.0)
        state[sub] = np.where(r.mask, smoothed, prev)
        last[sub] = np.where(r.mask, r.year, seen)
        out.append(RcaMatrix(r.year, r.geos, r.sectors, smoothed, r.mask.copy()))
    return out


def threshold(r: RcaMatrix, threshold: float = 1.0) -> CompetitivenessMatrix:
    """Binary filter: ``M = 1`` iff ``RCA >= threshold`` (masked cells are 0).

    The comparison allows ``THRESHOLD_RTOL`` of relative rounding slack.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    cut = threshold * (1.0 - THRESHOLD_RTOL)
    return CompetitivenessMatrix(r.year, r.geos, r.sectors, (r.values >= cut) & r.mask)


def competitiveness_series(
    cube: PanelCube,
    half_life: float = 3.0,
    rca_threshold: float = 1.0,
    years: Sequence[int] | None = None,
    skip_empty: bool = False,
) -> tuple[dict[int, CompetitivenessMatrix], dict[int, RcaMatrix], dict[int, str]]:
    """Run log -> RCA -> smoothing -> threshold over every year of a cube.

    Returns ``(M by year, smoothed RCA by year, skipped years with reason)``.
    Years with an all-zero slice raise unless ``skip_empty`` is set.
    """
    years = cube.years if years is None else [y for y in cube.years if y in set(years)]
    raw, skipped = [], {}
    for year in years:
        try:
            raw.append(rca(log_counts(cube, year)))
        except ValueError as exc:
            if not skip_empty:
                raise ValueError(f"year {year}: {exc}") from exc
            log.warning("year %s skipped: %s", year, exc)
            skipped[year] = str(exc)
    smoothed = smooth_rca(raw, half_life) if raw else []
    rcas = {r.year: r for r in smoothed}
    ms = {r.year: threshold(r, rca_threshold) for r in smoothed}
    return ms, rcas, skipped
