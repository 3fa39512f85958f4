"""Inequality and expenditure analytics on top of the Fitness pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .efc import FitnessResult
from .ingest import TL1, TL2, FosRegistry, GeoRegistry, PanelCube

log = logging.getLogger(__name__)

EXPENDITURE_MEASURES = ("HERD", "GERD", "HERD_pc", "GERD_pc")
DEFAULT_SOFT_SECTORS = ("Sociology", "Political Science", "Art", "Business", "Philosophy", "History")


# ---------------------------------------------------------------------------
# Gini


def _gini(values, shares) -> float:
    if np.ptp(values) == 0:
        return 0.0
    order = np.argsort(values, kind="stable")
    y = values[order]
    f = shares[order]
    S = np.cumsum(f * y)
    S_prev = np.concatenate(([0.0], S[:-1]))
    return float(1.0 - np.sum(f * (S_prev + S)) / S[-1])


def gini(values: Sequence[float]) -> float:
    """Gini index of non-negative values, each unit having share 1/n.

    ``G = 1 - sum_i f_i (S_{i-1} + S_i) / S_n`` over ascending values, with
    ``S_i = sum_{j<=i} f_j y_j``.
    """
    y = np.asarray(values, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("gini needs at least two values")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("gini values must be finite and non-negative")
    if not y.sum() > 0:
        raise ValueError("undefined inequality: all values are zero")
    return _gini(y, np.full(y.size, 1.0 / y.size))


def weighted_gini(values: Sequence[float], weights: Sequence[float]) -> float:
    """Gini index where unit i carries population share ``weights[i] / sum(weights)``."""
    y = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if y.shape != w.shape:
        raise ValueError("values and weights differ in length")
    if y.ndim != 1 or y.size < 2:
        raise ValueError("gini needs at least two values")
    if np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be positive")
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("gini values must be finite and non-negative")
    if not y.sum() > 0:
        raise ValueError("undefined inequality: all values are zero")
    return _gini(y, w / w.sum())


def _region_totals(cube: PanelCube, year: int) -> dict[str, float]:
    return dict(zip(cube.geos, cube.year_slice(year).sum(axis=1).tolist()))


def country_gini(
    cube: PanelCube,
    geo: GeoRegistry,
    min_regions: int = 2,
    headcount: Mapping[tuple[str, int], float] | None = None,
) -> dict[tuple[str, int], float]:
    """Gini of regional totals within each nation and year.

    ``cube`` must be at TL2.  With ``headcount`` (keyed by ``(region, year)``)
    the weighted index is used; regions without a positive headcount that
    year are left out.  Nations with fewer than ``min_regions`` regions, or
    no citations, are skipped.
    """
    if cube.geo_level not in (None, TL2):
        raise ValueError("country Gini needs a TL2 cube")
    by_nation: dict[str, list[str]] = {}
    for g in cube.geos:
        parent = geo.parent(g) if g in geo else None
        if parent is None:
            continue
        by_nation.setdefault(parent, []).append(g)
    out = {}
    for year in cube.years:
        totals = _region_totals(cube, year)
        for nation in sorted(by_nation):
            regions = by_nation[nation]
            if headcount is not None:
                regions = [r for r in regions if headcount.get((r, year), 0) > 0]
            if len(regions) < min_regions:
                continue
            y = [totals[r] for r in regions]
            if sum(y) <= 0:
                continue
            if headcount is None:
                out[nation, year] = gini(y)
            else:
                out[nation, year] = weighted_gini(y, [headcount[r, year] for r in regions])
    return out


def world_gini_series(cube: PanelCube) -> dict[int, float]:
    """Gini over every region of the cube, pooled worldwide, per year."""
    if len(cube.geos) < 2:
        raise ValueError("world Gini needs at least two regions")
    return {year: gini(cube.year_slice(year).sum(axis=1)) for year in cube.years}


# ---------------------------------------------------------------------------
# expenditure


@dataclass(frozen=True)
class ExpenditureSeries:
    geo: str
    measure: str
    values: dict[int, float]
    interpolated: frozenset = field(default_factory=frozenset)
    reconstructed: bool = False


def interpolate_expenditure(
    raw: Mapping[int, float],
    population: Mapping[int, float] | None = None,
    geo: str = "",
    measure: str = "HERD",
) -> ExpenditureSeries:
    """Fill interior gaps linearly; never extrapolate.

    With ``population`` the result is per capita (``<measure>_pc``) and only
    covers years where both the value and the population are known.
    """
    obs = {int(y): float(v) for y, v in raw.items() if v is not None and np.isfinite(v)}
    values = dict(sorted(obs.items()))
    filled: set[int] = set()
    if len(obs) >= 2:
        years = np.array(sorted(obs))
        span = np.arange(years[0], years[-1] + 1)
        interp = np.interp(span, years, [obs[y] for y in years])
        for y, v in zip(span.tolist(), interp.tolist()):
            if y not in obs:
                values[y] = v
                filled.add(y)
        values = dict(sorted(values.items()))
    if population is not None:
        values = {y: v / population[y] for y, v in values.items()
                  if population.get(y) not in (None, 0)}
        filled &= set(values)
        if not measure.endswith("_pc"):
            measure = f"{measure}_pc"
    return ExpenditureSeries(geo, measure, values, frozenset(filled))


def inherit_national(series: ExpenditureSeries, regions: Iterable[str]) -> dict[str, ExpenditureSeries]:
    """Regional series that keep the national (per-capita) value constant."""
    return {
        r: ExpenditureSeries(r, series.measure, dict(series.values), series.interpolated, True)
        for r in regions
    }


# ---------------------------------------------------------------------------
# cross-correlation


@dataclass(frozen=True)
class LagCorrelation:
    lag: int
    mean: float
    low: float
    high: float
    replicates: int
    n_years: int


def _pearson_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pearson correlation along the last axis; NaN where either side is constant."""
    xc = x - x.mean(axis=-1, keepdims=True)
    yc = y - y.mean(axis=-1, keepdims=True)
    num = (xc * yc).sum(axis=-1)
    den = np.sqrt((xc * xc).sum(axis=-1) * (yc * yc).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / den
    # a vanishing spread relative to the mean counts as constant
    flat = (den <= 1e-12 * np.sqrt((x * x).sum(axis=-1) * (y * y).sum(axis=-1))) | (den == 0)
    return np.where(flat, np.nan, np.clip(r, -1.0, 1.0))


def lagged_xcorr(
    fitness: Mapping[str, Mapping[int, float]],
    expenditure: Mapping[str, Mapping[int, float] | ExpenditureSeries],
    lags: Iterable[int] = range(-5, 6),
    replicates: int = 1000,
    seed: int = 0,
    quantiles: tuple[float, float] = (0.25, 0.75),
    min_geos: int = 3,
) -> list[LagCorrelation]:
    """Cross-sectional correlation between F_g(t) and E_g(t + lag), averaged over t.

    For every year the Pearson correlation is taken across geos that have
    both values; years with fewer than ``min_geos`` geos or no spread are
    left out.  The band comes from resampling the geo set with replacement
    (the same resample for every year of a replicate).  Each lag draws from
    its own stream derived from ``seed``.
    """
    exp = {g: (s.values if isinstance(s, ExpenditureSeries) else s) for g, s in expenditure.items()}
    geos = sorted(set(fitness) & set(exp))
    years = sorted({y for g in geos for y in fitness[g]})
    out = []
    for k, lag in enumerate(lags):
        X = np.full((len(years), len(geos)), np.nan)
        Y = np.full_like(X, np.nan)
        for j, g in enumerate(geos):
            for i, t in enumerate(years):
                f = fitness[g].get(t)
                e = exp[g].get(t + lag)
                if f is not None and e is not None:
                    X[i, j], Y[i, j] = f, e
        valid = ~np.isnan(X) & ~np.isnan(Y)
        usable = valid.sum(axis=1) >= min_geos
        if not usable.any():
            log.warning("lag %d omitted: fewer than %d geos overlap in every year", lag, min_geos)
            continue
        X, Y, valid = X[usable], Y[usable], valid[usable]
        per_year = np.array([_pearson_rows(X[i, valid[i]], Y[i, valid[i]]) for i in range(len(X))])
        if np.all(np.isnan(per_year)):
            log.warning("lag %d omitted: no year with spread in both series", lag)
            continue
        mean = float(np.nanmean(per_year))

        rng = np.random.default_rng([seed, k])
        idx = rng.integers(0, len(geos), size=(replicates, len(geos)))
        boot = _bootstrap_means(np.nan_to_num(X), np.nan_to_num(Y), valid, idx, min_geos)
        if np.all(np.isnan(boot)):
            low = high = mean
        else:
            low, high = (float(v) for v in np.nanquantile(boot, quantiles))
        out.append(LagCorrelation(lag, mean, low, high, replicates, int(len(X))))
    return out


def _bootstrap_means(X, Y, valid, idx, min_geos) -> np.ndarray:
    """Mean over years of the per-year correlation, for every resample in ``idx``."""
    sums = np.zeros(len(idx))
    counts = np.zeros(len(idx))
    for i in range(len(X)):
        v = valid[i][idx].astype(float)
        x, y = X[i][idx] * v, Y[i][idx] * v
        n = v.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mx = x.sum(axis=1) / n
            my = y.sum(axis=1) / n
        xc = (x - mx[:, None]) * v
        yc = (y - my[:, None]) * v
        den = np.sqrt((xc * xc).sum(axis=1) * (yc * yc).sum(axis=1))
        scale = np.sqrt((x * x).sum(axis=1) * (y * y).sum(axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.clip((xc * yc).sum(axis=1) / den, -1.0, 1.0)
        ok = (n >= min_geos) & (den > 1e-12 * scale) & (den > 0)
        sums += np.where(ok, r, 0.0)
        counts += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)


# ---------------------------------------------------------------------------
# national vs regional


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    r = _pearson_rows(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    return float(r)


def _fitness_map(entry) -> Mapping[str, float]:
    return entry.fitness if isinstance(entry, FitnessResult) else entry


def national_vs_regional(
    tl1: Mapping[int, FitnessResult | Mapping[str, float]],
    tl2: Mapping[int, FitnessResult | Mapping[str, float]],
    geo: GeoRegistry,
) -> tuple[float, float, int]:
    """Correlate national Fitness with the max and the mean of its regions.

    Each year maps to a FitnessResult or a plain ``{geo: F}`` dict.  Pools
    (nation, year) pairs present at both levels.  Returns
    ``(pearson_with_max, pearson_with_mean, n_pairs)``.
    """
    nat, mx, mn = [], [], []
    missing = set()
    for year in sorted(set(tl1) & set(tl2)):
        regional = _fitness_map(tl2[year])
        for nation, f in sorted(_fitness_map(tl1[year]).items()):
            if nation not in geo or geo.level(nation) != TL1:
                continue
            regions = [regional[r] for r in geo.children(nation) if r in regional]
            if not regions:
                missing.add(nation)
                continue
            nat.append(f)
            mx.append(max(regions))
            mn.append(float(np.mean(regions)))
    if missing:
        log.warning("nations without TL2 coverage excluded: %s", ", ".join(sorted(missing)))
    if len(nat) < 2:
        raise ValueError("need at least two nations with regional coverage")
    return pearson(nat, mx), pearson(nat, mn), len(nat)


# ---------------------------------------------------------------------------
# hard / soft production


def soft_sector_ids(fos: FosRegistry, names: Iterable[str] = DEFAULT_SOFT_SECTORS) -> set[str]:
    """Resolve soft-sector names (or ids) to layer-0 ids; unknown names are skipped with a warning."""
    ids, missing = set(), []
    for name in names:
        fid = name if name in fos else fos.by_name(name)
        if fid is None:
            missing.append(name)
            continue
        if fos.layer(fid) != 0:
            raise ValueError(f"soft sector {name!r} is not a layer-0 sector")
        ids.add(fid)
    if missing:
        log.warning("soft sectors not in the FoS registry: %s", ", ".join(missing))
    if not ids:
        raise ValueError("none of the soft sectors is in the FoS registry")
    return ids


def hard_soft_ratio(
    documents: PanelCube,
    soft: Iterable[str],
    fos: FosRegistry | None = None,
    years: Iterable[int] | None = None,
) -> dict[str, float | None]:
    """Per geo: soft-science documents divided by hard-science documents.

    ``documents`` must be at FoS layer 0.  Geos with no hard production map to
    ``None`` (undefined) rather than infinity.
    """
    if documents.fos_layer not in (None, 0):
        raise ValueError("hard/soft ratio needs a layer-0 cube")
    soft = set(soft)
    if fos is not None:
        bad = [s for s in soft if s not in fos or fos.layer(s) != 0]
        if bad:
            raise ValueError(f"soft set contains non layer-0 ids: {sorted(bad)}")
    ys = documents.years if years is None else [y for y in documents.years if y in set(years)]
    yi = [documents.years.index(y) for y in ys]
    totals = documents.values[:, :, yi].sum(axis=2)
    is_soft = np.array([s in soft for s in documents.sectors])
    soft_tot = totals[:, is_soft].sum(axis=1)
    hard_tot = totals[:, ~is_soft].sum(axis=1)
    return {
        g: (float(s / h) if h > 0 else None)
        for g, s, h in zip(documents.geos, soft_tot, hard_tot)
    }
