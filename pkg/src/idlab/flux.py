"""Variational Neumann flux functionals and the localized flux-gap surrogate.

The flux of a solved field is never extracted as a one-sided normal
derivative; it acts on space-time test functions through the volume pairing

    <j, phi> = int_0^T int ( a grad u + b ) . grad phi + c phi - d dt phi

(the d-term enters with the sign matching the forward-in-time storage
convention; see coefficients module).  For converged fields the pairing with
any test function vanishing on the whole boundary and at t in {0, T} is the
weak-form residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientSet
from .geometry import Grid
from .quadrature import time_panels
from .solver import SpaceTimeField, SpatialField, element_data
from .testfuncs import check_vanishes_at_time_ends, h1h1_norm


class PairingError(ValueError):
    pass


def check_interior_trace(phi, grid: Grid, tol: float = 1e-12) -> None:
    """Require a vanishing trace on the whole boundary (sampled)."""
    pts = grid.nodes[grid.boundary_mask]
    T = grid.domain.T
    scale = 1.0
    for t in (0.31 * T, 0.5 * T, 0.77 * T):
        vals = np.abs(phi.value(pts, float(t)))
        if vals.max() > tol * max(scale, 1.0):
            raise PairingError(
                f"test function has nonzero boundary trace (max {vals.max():.3e})"
            )


def check_gamma_support(phi, grid: Grid, tol: float = 1e-12) -> None:
    """Require the trace to vanish on the boundary away from Gamma_M."""
    pts = grid.nodes[grid.boundary_mask & ~grid.gamma_mask]
    T = grid.domain.T
    for t in (0.31 * T, 0.5 * T, 0.77 * T):
        vals = np.abs(phi.value(pts, float(t)))
        if vals.max() > tol:
            raise PairingError(
                "battery member supported outside the measurement segment "
                f"(max off-patch trace {vals.max():.3e})"
            )


@dataclass
class FluxFunctional:
    """Pairing-side view of a solved field with its coefficient set."""

    field: SpaceTimeField | SpatialField
    coeffs: CoefficientSet

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def elliptic(self) -> bool:
        return isinstance(self.field, SpatialField)

    def pair(self, phi) -> float:
        return float(self.pair_many([phi])[0])

    def pair_many(self, phis: list) -> np.ndarray:
        if self.elliptic:
            return self._pair_many_elliptic(phis)
        return self._pair_many_parabolic(phis)

    # -- parabolic --------------------------------------------------------
    def _pair_many_parabolic(self, phis: list) -> np.ndarray:
        fld: SpaceTimeField = self.field
        for phi in phis:
            check_vanishes_at_time_ends(phi, self.grid.domain)
        ed = element_data(self.grid)
        X = np.stack([ed.gauss_x.ravel(), ed.gauss_y.ravel()], axis=1)
        gw = ed.gauss_w.ravel()
        breakpoints = sorted({b for phi in phis for b in phi.time_breakpoints})
        t_q, w_q, lev, theta = time_panels(fld.times, tuple(breakpoints))
        # separable members: spatial factors are time-independent, hoist them
        factors = [separable_factors(phi, X) for phi in phis]
        out = np.zeros(len(phis))
        for tq, wq, n, th in zip(t_q, w_q, lev, theta):
            u_node = (1.0 - th) * fld.values[n] + th * fld.values[n + 1]
            u_g = ed.gauss_values(u_node).ravel()
            gx, gy = ed.gauss_grads(u_node)
            gx = gx.ravel()
            gy = gy.ravel()
            t = float(tq)
            a = self.coeffs.eval_a(t, u_g)
            bv = self.coeffs.eval_b(X, t, u_g)
            cv = self.coeffs.eval_c(X, t, u_g, np.stack([gx, gy], axis=1))
            dv = self.coeffs.eval_d(t, u_g)
            wfx = gw * (a * gx + bv[:, 0])
            wfy = gw * (a * gy + bv[:, 1])
            wcv = gw * cv
            wdv = gw * dv
            for i, phi in enumerate(phis):
                fac = factors[i]
                if fac is not None:
                    sv, sgx, sgy, time_value, time_prime = fac
                    spatial = wfx @ sgx + wfy @ sgy + wcv @ sv
                    out[i] += wq * (
                        float(time_value(t)) * spatial - float(time_prime(t)) * (wdv @ sv)
                    )
                else:
                    gphi = phi.grad(X, t)
                    vphi = phi.value(X, t)
                    dtphi = phi.dt(X, t)
                    out[i] += wq * float(
                        wfx @ gphi[:, 0] + wfy @ gphi[:, 1] + wcv @ vphi - wdv @ dtphi
                    )
        return out

    # -- elliptic -----------------------------------------------------------
    def _pair_many_elliptic(self, phis: list) -> np.ndarray:
        fld: SpatialField = self.field
        ed = element_data(self.grid)
        X = np.stack([ed.gauss_x.ravel(), ed.gauss_y.ravel()], axis=1)
        gw = ed.gauss_w.ravel()
        u_g = ed.gauss_values(fld.values).ravel()
        gx, gy = ed.gauss_grads(fld.values)
        gx = gx.ravel()
        gy = gy.ravel()
        a = self.coeffs.eval_a(0.0, u_g)
        bv = self.coeffs.eval_b(X, 0.0, u_g)
        cv = self.coeffs.eval_c(X, 0.0, u_g, np.stack([gx, gy], axis=1))
        fx = a * gx + bv[:, 0]
        fy = a * gy + bv[:, 1]
        out = np.zeros(len(phis))
        for i, phi in enumerate(phis):
            sval, sgrad = _spatial_factors(phi, X)
            out[i] = float(np.sum(gw * (fx * sgrad[:, 0] + fy * sgrad[:, 1] + cv * sval)))
        return out


def separable_factors(phi, X: np.ndarray):
    """(X values, X gradients, q, q') for separable test functions, else None."""
    if hasattr(phi, "space_value") and hasattr(phi, "time_value"):
        sv = phi.space_value(X)
        sg = phi.space_grad(X)
        return sv, sg[:, 0].copy(), sg[:, 1].copy(), phi.time_value, phi.time_prime
    return None


def _spatial_factors(phi, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(phi, "space_value"):
        return phi.space_value(X), phi.space_grad(X)
    if callable(phi) and hasattr(phi, "grad"):
        return phi(X), phi.grad(X)  # bare spatial kernels (probes)
    if callable(getattr(phi, "value", None)):
        return phi.value(X, 0.0), phi.grad(X, 0.0)
    raise PairingError("elliptic pairing needs a spatial test function")


def weak_residual(field, phi, coeffs: CoefficientSet) -> float:
    """Residual of the space-time weak form against an interior test function."""
    check_interior_trace(phi, field.grid)
    return FluxFunctional(field, coeffs).pair(phi)


# ---------------------------------------------------------------------------
# Flux gap on the measurement segment
# ---------------------------------------------------------------------------

def flux_gap_on_gamma_m(
    j1: FluxFunctional,
    j2: FluxFunctional,
    battery: list,
    norm_grid: Grid | None = None,
) -> dict:
    """Normalized pairing gap max_phi |<j1 - j2, phi>| / ||phi||_{H1(0,T;H1)}.

    Every battery member must have a trace supported on Gamma_M; the result
    is the computable surrogate for flux disagreement on the measurement
    segment.
    """
    grid = norm_grid or j1.grid
    rows = []
    for phi in battery:
        check_gamma_support(phi, grid)
    p1 = j1.pair_many(battery)
    p2 = j2.pair_many(battery)
    gap = 0.0
    for phi, a, b in zip(battery, p1, p2):
        norm = h1h1_norm(phi, grid)
        val = abs(a - b) / max(norm, 1e-300)
        rows.append(
            {
                "center": getattr(phi, "center", float("nan")),
                "width": getattr(phi, "width", float("nan")),
                "window": getattr(phi, "window", (float("nan"), float("nan"))),
                "pair_1": float(a),
                "pair_2": float(b),
                "phi_norm": norm,
                "normalized_gap": val,
            }
        )
        gap = max(gap, val)
    return {"gap": gap, "rows": rows}


def flux_bound_margins(j: FluxFunctional, battery: list, C_U: float | None = None) -> np.ndarray:
    """|<j, phi>| / ( C_A (3 + C_U) ||phi|| ) over the battery (<= 1 expected)."""
    if C_U is None:
        C_U = float(j.field.stats.get("energy_norm", 1.0)) if hasattr(j.field, "stats") else 1.0
    pairs = j.pair_many(battery)
    margins = []
    for phi, p in zip(battery, pairs):
        norm = h1h1_norm(phi, j.grid)
        bound = j.coeffs.C_A * (3.0 + C_U) * norm
        margins.append(abs(p) / max(bound, 1e-300))
    return np.asarray(margins)
