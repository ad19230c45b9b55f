"""Composite quadrature helpers shared by the grid, kernel and pairing code.

Everything here is deterministic: node generation and weight assembly use
fixed iteration orders so repeated runs byte-reproduce downstream CSVs.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Trapezoid weights for an increasing 1-D node array (sum equals the span)."""
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size < 2:
        raise ValueError("need at least two 1-D nodes")
    d = np.diff(nodes)
    if np.any(d <= 0):
        raise ValueError("nodes must be strictly increasing")
    w = np.zeros_like(nodes)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


@lru_cache(maxsize=16)
def gauss_legendre(n: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Gauss-Legendre nodes/weights on [-1, 1], cached and hashable."""
    x, w = np.polynomial.legendre.leggauss(n)
    return tuple(x.tolist()), tuple(w.tolist())


def gauss_points(a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule mapped to [a, b]."""
    x, w = gauss_legendre(n)
    x = np.asarray(x)
    w = np.asarray(w)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return mid + half * x, half * w


def panel_gauss(edges: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule over consecutive panels given by sorted edges."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(n)
    x = np.asarray(x)
    w = np.asarray(w)
    a = edges[:-1]
    h = np.diff(edges)
    pts = (a[:, None] + 0.5 * h[:, None] * (x[None, :] + 1.0)).ravel()
    wts = (0.5 * h[:, None] * w[None, :]).ravel()
    return pts, wts


def graded_axis(
    lo: float,
    hi: float,
    center: float,
    fine_cell: float,
    fine_extent: float,
    growth: float = 1.35,
    cap: float | None = None,
) -> np.ndarray:
    """1-D nodes on [lo, hi] with cells of size <= fine_cell within
    fine_extent of center, growing geometrically outward up to cap.

    The center is included as a node whenever it lies inside [lo, hi], so
    symmetric refinement about a boundary point is exact.
    """
    if not (lo < hi):
        raise ValueError("empty axis")
    if fine_cell <= 0 or fine_extent <= 0:
        raise ValueError("fine_cell and fine_extent must be positive")
    if cap is None:
        cap = (hi - lo) / 8.0
    cap = max(cap, fine_cell)

    def march(start: float, stop: float, direction: float) -> list[float]:
        out = []
        t = start
        h = fine_cell
        while direction * (stop - t) > 1e-14:
            if abs(t - center) < fine_extent - 1e-14:
                h = fine_cell
            else:
                h = min(h * growth, cap)
            t = t + direction * h
            if direction * (stop - t) < 0.25 * h:
                t = stop
            out.append(min(max(t, lo), hi))
        return out

    nodes = []
    if lo < center < hi:
        nodes.extend(march(center, lo, -1.0)[::-1])
        nodes.append(center)
        nodes.extend(march(center, hi, +1.0))
    elif center <= lo:
        nodes.append(lo)
        nodes.extend(march(max(center, lo), hi, +1.0))
        if nodes[0] != lo:
            nodes.insert(0, lo)
    else:
        nodes.extend(march(min(center, hi), lo, -1.0)[::-1])
        nodes.append(hi)
    arr = np.unique(np.asarray(nodes, dtype=float))
    arr[0], arr[-1] = lo, hi
    return arr


def refined_segment_rule(
    a: float,
    b: float,
    center: float,
    scale: float,
    n_gauss: int = 4,
    cells_per_scale: int = 8,
) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on [a, b] resolving variation at `scale` near `center`.

    Used for boundary integrands that vary on a short length scale around a
    boundary point (kernel traces, localized data).
    """
    edges = graded_axis(
        a,
        b,
        center,
        fine_cell=scale / cells_per_scale,
        fine_extent=4.0 * scale,
        cap=max((b - a) / 8.0, scale),
    )
    return panel_gauss(edges, n_gauss)


def time_panels(
    times: np.ndarray, breakpoints: tuple[float, ...] = ()
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-2 rule per stored time interval, split at the given breakpoints.

    Returns (t_q, w_q, level, theta): quadrature times and weights plus, for
    each point, the index of the interval's left stored level and the linear
    interpolation coordinate inside it.  Splitting at breakpoints keeps
    piecewise-polynomial factors (quadratic time cutoffs and their
    derivatives) integrated exactly.
    """
    times = np.asarray(times, dtype=float)
    t_q, w_q, lev, th = [], [], [], []
    for n in range(len(times) - 1):
        t0, t1 = times[n], times[n + 1]
        cuts = sorted({t0, t1} | {float(b) for b in breakpoints if t0 < b < t1})
        for left, right in zip(cuts[:-1], cuts[1:]):
            pts, wts = gauss_points(left, right, 2)
            t_q.extend(pts)
            w_q.extend(wts)
            lev.extend([n, n])
            th.extend(((pts - t0) / (t1 - t0)).tolist())
    return (
        np.asarray(t_q),
        np.asarray(w_q),
        np.asarray(lev, dtype=int),
        np.asarray(th),
    )


def fit_loglog_slope(eps: np.ndarray, values: np.ndarray, last: int | None = None) -> float:
    """Least-squares slope of log(values) against log(eps)."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if last is not None and last < len(eps):
        order = np.argsort(eps)
        eps = eps[order][:last]
        values = values[order][:last]
    if np.any(values <= 0):
        raise ValueError("log-log fit needs positive values")
    x = np.log(eps)
    y = np.log(values)
    A = np.vstack([np.ones_like(x), x]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[1])
