"""Fitness and Complexity fixed point on a binary geo x sector network.

The map, iterated from all-ones::

    F~_g = sum_s M_gs Q_s             F_g = F~_g / <F~>
    Q~_s = 1 / sum_g M_gs / F_g       Q_s = Q~_s / <Q~>

Fitness of weak areas can decay geometrically towards zero without the
vector ever settling, while the ranking is long fixed.  The loop therefore
stops on whichever comes first: a log-scale change below ``tol``, an
unchanged geo ranking for ``rank_window`` consecutive iterations, or
``max_iter``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .ingest import FosRegistry, PanelCube
from .transform import CompetitivenessMatrix, competitiveness_series

log = logging.getLogger(__name__)

TINY = np.finfo(float).tiny

TOLERANCE = "tolerance"
RANK_STABILITY = "rank_stability"
MAX_ITER = "max_iter"


class DegenerateNetworkError(ValueError):
    pass


@dataclass(frozen=True)
class FitnessResult:
    year: int
    fitness: dict[str, float]
    complexity: dict[str, float]
    iterations: int
    converged: bool
    criterion: str
    reference_geo: str | None = None
    dropped_geos: frozenset = field(default_factory=frozenset)
    dropped_sectors: frozenset = field(default_factory=frozenset)
    floor_events: int = 0

    def ranking(self) -> list[str]:
        """Geos by decreasing Fitness; ties keep the input order."""
        geos = list(self.fitness)
        values = np.array([self.fitness[g] for g in geos])
        return [geos[i] for i in np.argsort(-values, kind="stable")]


def _as_matrix(m) -> CompetitivenessMatrix:
    if isinstance(m, CompetitivenessMatrix):
        values = np.asarray(m.values)
        if values.dtype != bool and not np.isin(values, (0, 1)).all():
            raise ValueError("competitiveness matrix must be binary")
        return m
    return CompetitivenessMatrix.from_array(m)


def fitness_complexity(
    m,
    max_iter: int = 1000,
    tol: float = 1e-9,
    rank_window: int | None = 50,
    callback: Callable[[int, np.ndarray, np.ndarray], None] | None = None,
) -> FitnessResult:
    """Iterate the Fitness-Complexity map to its fixed point.

    Parameters
    ----------
    m : CompetitivenessMatrix or 2-d 0/1 array
        Binary geo x sector matrix.  All-zero rows and columns are pruned
        before iterating; pruned geos get Fitness 0, pruned sectors no
        Complexity.
    max_iter : int
        Hard cap on iterations.
    tol : float
        Stop when ``max |log x_n - log x_{n-1}|`` over F and Q is below this.
    rank_window : int or None
        Stop once the geo ranking has not changed for this many consecutive
        iterations.  ``None`` disables the criterion.
    callback : callable, optional
        Called as ``callback(n, F, Q)`` after every iteration with the
        mean-normalized vectors of the pruned network.

    Returns
    -------
    FitnessResult
        Mean-normalized F and Q (before any reference normalization).
    """
    m = _as_matrix(m)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if not tol >= 0:
        raise ValueError("tol must be non-negative")
    M = np.asarray(m.values, dtype=bool)
    rows = M.any(axis=1)
    cols = M.any(axis=0)
    if rows.sum() < 2 or cols.sum() < 2:
        raise DegenerateNetworkError("degenerate network")
    Mk = M[rows][:, cols].astype(float)
    geos = [g for g, keep in zip(m.geos, rows) if keep]
    sectors = [s for s, keep in zip(m.sectors, cols) if keep]

    # identical rows (columns) share one value by symmetry; iterating on the
    # unique ones with multiplicities keeps ties exact instead of ulp-noisy
    Mu, row_of, row_mult = np.unique(Mk, axis=0, return_inverse=True, return_counts=True)
    Mu, col_of, col_mult = np.unique(Mu, axis=1, return_inverse=True, return_counts=True)
    row_of, col_of = row_of.ravel(), col_of.ravel()
    n_geos, n_sectors = len(geos), len(sectors)

    F = np.ones(len(row_mult))
    Q = np.ones(len(col_mult))
    ranking = None
    stable = 0
    floors = 0
    converged, criterion = False, MAX_ITER
    n = 0
    for n in range(1, max_iter + 1):
        F_t = Mu @ (col_mult * Q)
        F_new = F_t / (row_mult @ F_t / n_geos)
        low = F_new < TINY
        if low.any():
            floors += int(row_mult[low].sum())
            F_new[low] = TINY
        with np.errstate(over="ignore", divide="ignore"):
            Q_t = 1.0 / ((row_mult / F_new) @ Mu)
        Q_new = Q_t / (col_mult @ Q_t / n_sectors)
        if callback is not None:
            callback(n, F_new[row_of], Q_new[col_of])

        with np.errstate(divide="ignore"):
            delta = max(
                np.max(np.abs(np.log(F_new) - np.log(F))),
                np.max(np.abs(np.log(np.maximum(Q_new, TINY)) - np.log(np.maximum(Q, TINY)))),
            )
        F, Q = F_new, Q_new
        if delta < tol:
            converged, criterion = True, TOLERANCE
            break
        if rank_window is not None:
            current = np.argsort(-F[row_of], kind="stable")
            if ranking is not None and np.array_equal(current, ranking):
                stable += 1
            else:
                stable = 0
            ranking = current
            if stable >= rank_window:
                converged, criterion = True, RANK_STABILITY
                break

    F, Q = F[row_of], Q[col_of]
    fitness = {g: 0.0 for g in m.geos}
    fitness.update(zip(geos, F.tolist()))
    return FitnessResult(
        year=m.year,
        fitness=fitness,
        complexity=dict(zip(sectors, Q.tolist())),
        iterations=n,
        converged=converged,
        criterion=criterion,
        dropped_geos=frozenset(g for g, keep in zip(m.geos, rows) if not keep),
        dropped_sectors=frozenset(s for s, keep in zip(m.sectors, cols) if not keep),
        floor_events=floors,
    )


def normalize_fitness(result: FitnessResult, reference_geo: str | None) -> FitnessResult:
    """Divide every Fitness by the reference geo's.

    Falls back to the highest-Fitness geo (with a warning) when the
    reference is absent or has zero Fitness.
    """
    if not result.fitness:
        raise ValueError("cannot normalize an empty result")
    ref_value = result.fitness.get(reference_geo, 0.0) if reference_geo else 0.0
    if not ref_value > 0:
        fallback = result.ranking()[0]
        if reference_geo is not None:
            log.warning("year %s: reference %r unavailable, normalizing by %r",
                        result.year, reference_geo, fallback)
        reference_geo, ref_value = fallback, result.fitness[fallback]
        if not ref_value > 0:
            raise ValueError("cannot normalize: no geo with positive Fitness")
    fitness = {g: f / ref_value for g, f in result.fitness.items()}
    fitness[reference_geo] = 1.0
    return replace(result, fitness=fitness, reference_geo=reference_geo)


def restrict_to_root(m: CompetitivenessMatrix, fos: FosRegistry, root: str) -> CompetitivenessMatrix:
    if root not in fos or fos.layer(root) != 0:
        raise ValueError(f"{root!r} is not a layer-0 sector")
    keep = [j for j, s in enumerate(m.sectors) if s in fos and root in fos.ancestors(s)]
    if not keep:
        raise ValueError(f"no sectors under root {root!r}")
    return CompetitivenessMatrix(
        m.year, m.geos, tuple(m.sectors[j] for j in keep), np.asarray(m.values)[:, keep]
    )


def sector_fitness(
    m_fine: CompetitivenessMatrix,
    fos: FosRegistry,
    root: str,
    reference_geo: str | None = None,
    **kwargs,
) -> FitnessResult:
    """Fitness restricted to the sub-sectors of one layer-0 sector.

    Geos with no competitive sub-sector under ``root`` get Fitness 0.
    """
    restricted = restrict_to_root(m_fine, fos, root)
    try:
        result = fitness_complexity(restricted, **kwargs)
    except DegenerateNetworkError as exc:
        raise DegenerateNetworkError(f"sector {root!r}: {exc}") from exc
    if reference_geo is not None:
        result = normalize_fitness(result, reference_geo)
    return result


def sector_complexity_order(result: FitnessResult, fos: FosRegistry) -> list[tuple[str, float]]:
    """Layer-0 sectors ranked by the mean Complexity of their layer-1 children."""
    out = []
    for root in fos.ids(0):
        qs = [result.complexity[c] for c in fos.children(root) if c in result.complexity]
        if not qs:
            log.warning("layer-0 sector %r has no children in the result", root)
            continue
        out.append((root, float(np.mean(qs))))
    out.sort(key=lambda item: (-item[1], item[0]))
    return out


@dataclass
class FitnessSeries:
    """Per-year results of the full pipeline on one cube."""

    measure: str
    results: dict[int, FitnessResult]
    skipped: dict[int, str]
    matrices: dict[int, CompetitivenessMatrix]

    def mean_fitness(self) -> dict[str, float]:
        """Average normalized Fitness per geo over the computed years (absent years count 0)."""
        geos = sorted({g for r in self.results.values() for g in r.fitness})
        n = len(self.results)
        return {g: sum(r.fitness.get(g, 0.0) for r in self.results.values()) / n for g in geos}


def fitness_series(
    cube: PanelCube,
    half_life: float = 3.0,
    rca_threshold: float = 1.0,
    reference_geo: str | None = None,
    max_iter: int = 1000,
    tol: float = 1e-9,
    rank_window: int | None = 50,
    years: Sequence[int] | None = None,
    skip_degenerate: bool = False,
) -> FitnessSeries:
    """Cube -> log counts -> smoothed RCA -> M -> fixed point -> reference normalization.

    Every year is computed independently (smoothing aside) and normalized by
    its own reference value.  With ``skip_degenerate`` the empty or degenerate
    years are reported in ``skipped`` instead of raising.
    """
    ms, _, skipped = competitiveness_series(
        cube, half_life, rca_threshold, years=years, skip_empty=skip_degenerate
    )
    results = {}
    for year, m in ms.items():
        try:
            res = fitness_complexity(m, max_iter=max_iter, tol=tol, rank_window=rank_window)
        except DegenerateNetworkError as exc:
            if not skip_degenerate:
                raise DegenerateNetworkError(f"year {year}: {exc}") from exc
            log.warning("year %s skipped: %s", year, exc)
            skipped[year] = str(exc)
            continue
        results[year] = normalize_fitness(res, reference_geo)
    if not results and not skip_degenerate:
        raise DegenerateNetworkError("no year produced a Fitness result")
    return FitnessSeries(cube.measure, results, dict(sorted(skipped.items())), ms)


def scientific_fitness(citations: PanelCube, **kwargs) -> FitnessSeries:
    """Fitness from log-citation counts."""
    if citations.measure != "citations":
        raise ValueError("scientific Fitness needs the citations cube")
    return fitness_series(citations, **kwargs)


def document_fitness(documents: PanelCube, **kwargs) -> FitnessSeries:
    """Same pipeline with log-document counts in place of log-citations."""
    if documents.measure != "documents":
        raise ValueError("document Fitness needs the documents cube")
    return fitness_series(documents, **kwargs)
