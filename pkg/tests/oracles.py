"""Plain reference implementations used to check the production code.

Deliberately naive: nested loops over Python lists, no shared helpers with
the package.
"""
from __future__ import annotations

import math


def fc_iterations(matrix: list[list[int]], n_iter: int) -> list[tuple[list[float], list[float]]]:
    """Every iterate (F, Q) of the Fitness-Complexity map from all-ones.

    ``matrix`` must have no empty rows or columns.
    """
    n_rows, n_cols = len(matrix), len(matrix[0])
    f = [1.0] * n_rows
    q = [1.0] * n_cols
    history = []
    for _ in range(n_iter):
        f_raw = [sum(matrix[g][s] * q[s] for s in range(n_cols)) for g in range(n_rows)]
        mean_f = sum(f_raw) / n_rows
        f = [max(v / mean_f, 2.2250738585072014e-308) for v in f_raw]
        q_raw = []
        for s in range(n_cols):
            inv = sum(matrix[g][s] / f[g] for g in range(n_rows))
            q_raw.append(1.0 / inv)
        mean_q = sum(q_raw) / n_cols
        q = [v / mean_q for v in q_raw]
        history.append((list(f), list(q)))
    return history


def gini_pairwise(values, weights=None) -> float:
    """Gini as the (weighted) mean absolute difference over twice the mean."""
    n = len(values)
    w = [1.0] * n if weights is None else [float(x) for x in weights]
    total_w = sum(w)
    mean = sum(wi * yi for wi, yi in zip(w, values)) / total_w
    acc = 0.0
    for i in range(n):
        for j in range(n):
            acc += w[i] * w[j] * abs(values[i] - values[j])
    return acc / (2.0 * total_w * total_w * mean)


def piecewise_linear(points: dict[int, float], year: int) -> float | None:
    """Value at ``year`` on the polyline through ``points``; None outside the range."""
    xs = sorted(points)
    if year < xs[0] or year > xs[-1]:
        return None
    if year in points:
        return points[year]
    for a, b in zip(xs, xs[1:]):
        if a < year < b:
            t = (year - a) / (b - a)
            return points[a] + t * (points[b] - points[a])
    return None


def group_mean(values: dict[str, float], groups: dict[str, list[str]]) -> dict[str, float]:
    out = {}
    for key, members in groups.items():
        present = [values[m] for m in members if m in values]
        if present:
            out[key] = sum(present) / len(present)
    return out


def pearson_plain(x, y) -> float:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def rca_plain(w: list[list[float]]) -> list[list[float]]:
    rows = [sum(r) for r in w]
    cols = [sum(w[g][s] for g in range(len(w))) for s in range(len(w[0]))]
    total = sum(rows)
    return [
        [(w[g][s] / rows[g]) / (cols[s] / total) for s in range(len(w[0]))]
        for g in range(len(w))
    ]


def is_nested(rows: list[set]) -> bool:
    """True when every pair of rows is ordered by inclusion."""
    return all(a <= b or b <= a for a in rows for b in rows)
