"""Recovery of a piecewise-linear diffusion a(u) from boundary flux pairings,
plus the change of variables w = A(u) that linearizes the principal part.

Synthetic data are produced on a grid strictly finer than the inversion grid
(half the spacing and time step); matching grids are flagged as an inverse
crime in the measurement manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, PiecewiseLinearDiffusion
from .flux import FluxFunctional
from .geometry import Domain, build_grid
from .singular import DirichletDatum, make_dirichlet_datum
from .solver import ProblemSpec, solve_parabolic
from .util import ordered_map


# ---------------------------------------------------------------------------
# Kirchhoff change of variables
# ---------------------------------------------------------------------------

def _knot_integrals(a: PiecewiseLinearDiffusion) -> np.ndarray:
    ks = np.asarray(a.u_knots)
    vs = np.asarray(a.values)
    seg = 0.5 * (vs[:-1] + vs[1:]) * np.diff(ks)
    return np.concatenate([[0.0], np.cumsum(seg)])


def kirchhoff_transform(a: PiecewiseLinearDiffusion, u_field: np.ndarray) -> np.ndarray:
    """w = A(u) nodewise with A(u) = int_{u0}^{u} a(s) ds, u0 the first knot.

    Outside the knot range a is extended by its end values, so A stays
    strictly increasing (a >= floor > 0) and globally invertible.
    """
    u = np.asarray(u_field, dtype=float)
    ks = np.asarray(a.u_knots)
    vs = np.asarray(a.values)
    acc = _knot_integrals(a)
    shape = u.shape
    x = u.ravel()
    idx = np.clip(np.searchsorted(ks, x, side="right") - 1, 0, len(ks) - 2)
    x0 = ks[idx]
    slope = (vs[idx + 1] - vs[idx]) / (ks[idx + 1] - ks[idx])
    dx = x - x0
    w = acc[idx] + vs[idx] * dx + 0.5 * slope * dx * dx
    below = x < ks[0]
    above = x > ks[-1]
    if below.any():
        w[below] = vs[0] * (x[below] - ks[0])
    if above.any():
        w[above] = acc[-1] + vs[-1] * (x[above] - ks[-1])
    return w.reshape(shape)


def inverse_kirchhoff(
    a: PiecewiseLinearDiffusion,
    w_field: np.ndarray,
    tol: float = 1e-12,
    max_newton: int = 60,
) -> np.ndarray:
    """Monotone inversion of A per node: bracketing bisection plus Newton."""
    w = np.asarray(w_field, dtype=float)
    shape = w.shape
    target = w.ravel()
    ks = np.asarray(a.u_knots)
    lo = np.full_like(target, ks[0])
    hi = np.full_like(target, ks[-1])
    # expand brackets for values outside the knot range (linear tails)
    w_lo = kirchhoff_transform(a, lo)
    w_hi = kirchhoff_transform(a, hi)
    below = target < w_lo
    above = target > w_hi
    lo[below] = ks[0] + (target[below]) / a.values[0] - 1.0
    hi[above] = ks[-1] + (target[above] - w_hi[above]) / a.values[-1] + 1.0
    u = 0.5 * (lo + hi)
    for _ in range(max_newton):
        f = kirchhoff_transform(a, u) - target
        done = np.abs(f) <= tol * (1.0 + np.abs(target))
        if done.all():
            break
        slope = np.maximum(a(u), a.a_floor)
        step = f / slope
        u_new = u - step
        # fall back to bisection when Newton leaves the bracket
        hi = np.where(f > 0, np.minimum(hi, u), hi)
        lo = np.where(f < 0, np.maximum(lo, u), lo)
        bad = (u_new < lo) | (u_new > hi)
        u = np.where(bad, 0.5 * (lo + hi), u_new)
    return u.reshape(shape)


# ---------------------------------------------------------------------------
# Measurement synthesis
# ---------------------------------------------------------------------------

@dataclass
class MeasurementSet:
    data: np.ndarray  # (n_data, n_phi) pairings
    datums: list[DirichletDatum]
    phi_battery: list
    noise: float
    manifest: dict = field(default_factory=dict)

    def as_manifest(self) -> dict:
        return dict(self.manifest)


def default_datum_battery(
    domain: Domain,
    u_lo: float,
    u_hi: float,
    n: int = 8,
    window: tuple[float, float] = (0.1, 0.9),
) -> list[DirichletDatum]:
    """Localized data with staggered base levels so the solutions visit the
    whole knot range (a single base level caps the excursion near the base)."""
    out = []
    eps_cycle = (domain.eps0, domain.eps0 / 2.0)
    for k in range(n):
        frac = k / max(n - 1, 1)
        g1 = u_lo + frac * (u_hi - u_lo) * 0.8
        g2 = u_hi
        if g2 - g1 < 0.05 * (u_hi - u_lo):
            g1 = g2 - 0.05 * (u_hi - u_lo)
        out.append(
            make_dirichlet_datum(domain, eps_cycle[k % 2], g1, g2, window, bounds=(u_lo, u_hi))
        )
    return out


def synthesize_measurements(
    true_coeffs: CoefficientSet,
    g_battery: list[DirichletDatum],
    phi_battery: list,
    domain: Domain,
    n_cells: int = 40,
    n_steps: int = 64,
    inversion_cells: int | None = None,
    inversion_steps: int | None = None,
    noise: float = 0.0,
    seed: int = 0,
    threads: int = 1,
) -> MeasurementSet:
    """Pairings of the true forward model on the synthesis grid.

    The manifest records the grids; matching synthesis and inversion grids
    raise the inverse-crime flag (and a warning) since results on them are
    vacuous.
    """
    import warnings

    grid = build_grid(domain, n_cells)

    def run(datum: DirichletDatum) -> np.ndarray:
        spec = ProblemSpec(grid, true_coeffs, g=datum, u0=datum.g1, n_steps=n_steps)
        fld = solve_parabolic(spec)
        return FluxFunctional(fld, true_coeffs).pair_many(phi_battery)

    rows = ordered_map(run, g_battery, threads)
    data = np.asarray(rows)
    clean = data.copy()
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        data = data * (1.0 + noise * rng.standard_normal(data.shape))
    inverse_crime = (
        inversion_cells is not None
        and inversion_steps is not None
        and inversion_cells == n_cells
        and inversion_steps == n_steps
    )
    if inverse_crime:
        warnings.warn(
            "synthesis and inversion share a discretization: inverse crime",
            stacklevel=2,
        )
    manifest = {
        "true_coefficients": true_coeffs.name,
        "noise": noise,
        "seed": seed,
        "synthesis_cells": n_cells,
        "synthesis_steps": n_steps,
        "inversion_cells": inversion_cells,
        "inversion_steps": inversion_steps,
        "inverse_crime": bool(inverse_crime),
        "n_data": len(g_battery),
        "n_phi": len(phi_battery),
    }
    return MeasurementSet(
        data=data,
        datums=list(g_battery),
        phi_battery=list(phi_battery),
        noise=noise,
        manifest={**manifest, "clean_data_norm": float(np.linalg.norm(clean))},
    )


# ---------------------------------------------------------------------------
# Output least squares with curvature regularization
# ---------------------------------------------------------------------------

def _second_difference_matrix(k: int) -> np.ndarray:
    if k < 3:
        return np.zeros((0, k))
    D = np.zeros((k - 2, k))
    for i in range(k - 2):
        D[i, i : i + 3] = (1.0, -2.0, 1.0)
    return D


@dataclass
class RecoveryResult:
    recovered: PiecewiseLinearDiffusion
    objective_history: list[float]
    misfit: float
    converged: bool
    n_solves: int
    diagnostics: dict = field(default_factory=dict)


def recover_a(
    measurements: MeasurementSet,
    init: PiecewiseLinearDiffusion,
    reg_weight: float = 1e-6,
    domain: Domain | None = None,
    n_cells: int = 20,
    n_steps: int = 32,
    max_iterations: int = 10,
    fd_step: float = 1e-4,
    threads: int = 1,
) -> RecoveryResult:
    """Projected Gauss-Newton on the knot values (floor a >= a_floor).

    The forward-map Jacobian uses central finite differences over the knots;
    each column costs one forward battery.  Line search halves the step until
    the objective decreases; failure returns the best iterate flagged
    NOT-CONVERGED.
    """
    if len(init.u_knots) > 16:
        raise ValueError("knot count capped at 16 (finite-difference gradients)")
    if reg_weight < 0:
        raise ValueError("regularization weight must be nonnegative")
    if domain is None:
        domain = Domain()
    if (
        measurements.manifest.get("synthesis_cells") == n_cells
        and measurements.manifest.get("synthesis_steps") == n_steps
    ):
        import warnings

        warnings.warn("inverting on the synthesis grid: inverse crime", stacklevel=2)

    grid = build_grid(domain, n_cells)
    data = measurements.data.ravel()
    knots = np.asarray(init.u_knots)
    u_range = (float(knots[0]), float(knots[-1]))
    D2 = _second_difference_matrix(len(knots))
    solve_count = 0

    def forward(theta: np.ndarray) -> np.ndarray:
        nonlocal solve_count
        table = init.with_values(theta)
        coeffs = table.as_coefficients(u_range)

        def run(datum):
            spec = ProblemSpec(grid, coeffs, g=datum, u0=datum.g1, n_steps=n_steps)
            fld = solve_parabolic(spec)
            return FluxFunctional(fld, coeffs).pair_many(measurements.phi_battery)

        rows = ordered_map(run, measurements.datums, threads)
        solve_count += len(measurements.datums)
        return np.asarray(rows).ravel()

    def objective(theta: np.ndarray, resid: np.ndarray) -> float:
        return float(np.sum(resid**2) + reg_weight * np.sum((D2 @ theta) ** 2))

    theta = np.asarray(init.values, dtype=float).copy()
    resid = forward(theta) - data
    best_obj = objective(theta, resid)
    history = [best_obj]
    converged = True
    stopped_by = "max_iterations"

    for _ in range(max_iterations):
        # central-difference Jacobian over knot values
        cols = []
        for i in range(len(theta)):
            h = fd_step * max(1.0, abs(theta[i]))
            tp = theta.copy()
            tm = theta.copy()
            tp[i] += h
            tm[i] = max(tm[i] - h, init.a_floor)
            denom = tp[i] - tm[i]
            cols.append((forward(tp) - forward(tm)) / denom)
        J = np.stack(cols, axis=1)
        grad = J.T @ resid + reg_weight * (D2.T @ (D2 @ theta))
        H = J.T @ J + reg_weight * (D2.T @ D2)
        H += 1e-12 * np.eye(len(theta)) * max(np.trace(H), 1.0)
        step = np.linalg.solve(H, -grad)
        alpha = 1.0
        improved = False
        while alpha > 1e-6:
            trial = np.maximum(theta + alpha * step, init.a_floor)
            try:
                r_trial = forward(trial) - data
            except Exception:
                alpha *= 0.5  # forward failure: reject the trial point
                continue
            obj = objective(trial, r_trial)
            if obj < best_obj * (1.0 - 1e-12):
                theta, resid, best_obj = trial, r_trial, obj
                history.append(obj)
                improved = True
                break
            alpha *= 0.5
        if not improved:
            # line-search failure: best iterate is returned; the flag stays
            # NOT-CONVERGED unless the objective already hit its floor
            stopped_by = "line_search"
            converged = bool(best_obj <= 0.1 * history[0])
            break
        if len(history) > 2 and history[-2] - history[-1] < 1e-8 * max(history[0], 1e-30):
            stopped_by = "objective_decrease"
            break

    misfit = float(np.sum(resid**2))
    return RecoveryResult(
        recovered=init.with_values(theta),
        objective_history=history,
        misfit=misfit,
        converged=converged,
        n_solves=solve_count,
        diagnostics={
            "final_objective": best_obj,
            "initial_objective": history[0],
            "reg_weight": reg_weight,
            "n_iterations": len(history) - 1,
            "stopped_by": stopped_by,
        },
    )
