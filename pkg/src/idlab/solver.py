"""Forward solvers on the structured grid.

Discretization: bilinear quadrilateral elements on the rectilinear tensor
grid, lumped storage, backward Euler in time, Picard lag on (a, b, c) with a
Newton chord on the storage nonlinearity d(t, u).  Each time step is
iterated until the fully implicit nonlinear residual of the discrete weak
form drops below the relative tolerance, so the converged field solves the
implicit scheme regardless of the lagging.

The linear systems are SPD (positive storage chord plus a positive-definite
stiffness) and are solved with a sparse direct factorization by default; a
conjugate-gradient path is kept for cross-checks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientSet
from .geometry import Grid

log = logging.getLogger(__name__)

_GAUSS_1D = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


class SolverError(RuntimeError):
    def __init__(self, message: str, step: int | None = None, history: list | None = None):
        super().__init__(message)
        self.step = step
        self.history = history or []


# ---------------------------------------------------------------------------
# Element data cached per grid
# ---------------------------------------------------------------------------

_P_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
_P_STIFF = np.array([[1.0, -1.0], [-1.0, 1.0]])
# local ordering (SW, SE, NW, NE): index = ix + 2*iy, so kron(Y, X)
_PAT_XX = np.kron(_P_MASS, _P_STIFF)
_PAT_YY = np.kron(_P_STIFF, _P_MASS)


class ElementData:
    """Per-grid assembly arrays: connectivity, geometric stiffness factors,
    Gauss-point shape values and coordinates."""

    def __init__(self, grid: Grid):
        self.grid = grid
        conn = grid.cells
        self.conn = conn
        w, h = grid.cell_w, grid.cell_h
        self.k_geo = (h / w)[:, None, None] * _PAT_XX[None, :, :] + (w / h)[
            :, None, None
        ] * _PAT_YY[None, :, :]
        self.rows = np.repeat(conn, 4, axis=1).ravel()
        self.cols = np.tile(conn, (1, 4)).ravel()
        # gradient integrals of the four basis functions over the element
        self.int_dx = np.array([-0.5, 0.5, -0.5, 0.5])
        self.int_dy = np.array([-0.5, -0.5, 0.5, 0.5])

        xi = np.array([_GAUSS_1D[0], _GAUSS_1D[1], _GAUSS_1D[0], _GAUSS_1D[1]])
        eta = np.array([_GAUSS_1D[0], _GAUSS_1D[0], _GAUSS_1D[1], _GAUSS_1D[1]])
        self.shape = np.stack(
            [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=1
        )  # (4 gauss, 4 nodes)
        self.dshape_dxi = np.stack([-(1 - eta), (1 - eta), -eta, eta], axis=1)
        self.dshape_deta = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=1)
        self.gauss_x = grid.cell_x0[:, None] + xi[None, :] * w[:, None]
        self.gauss_y = grid.cell_y0[:, None] + eta[None, :] * h[:, None]
        self.gauss_w = (grid.cell_area / 4.0)[:, None] * np.ones((1, 4))
        self.centroids = np.stack(
            [grid.cell_x0 + 0.5 * w, grid.cell_y0 + 0.5 * h], axis=1
        )

    # nodal -> element quantities -------------------------------------------------
    def corner_values(self, u: np.ndarray) -> np.ndarray:
        return u[self.conn]

    def centroid_values(self, u: np.ndarray) -> np.ndarray:
        return u[self.conn].mean(axis=1)

    def centroid_grads(self, u: np.ndarray) -> np.ndarray:
        uc = u[self.conn]
        gx = (uc[:, 1] + uc[:, 3] - uc[:, 0] - uc[:, 2]) / (2.0 * self.grid.cell_w)
        gy = (uc[:, 2] + uc[:, 3] - uc[:, 0] - uc[:, 1]) / (2.0 * self.grid.cell_h)
        return np.stack([gx, gy], axis=1)

    def gauss_values(self, u: np.ndarray) -> np.ndarray:
        return np.einsum("ej,gj->eg", u[self.conn], self.shape)

    def gauss_grads(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        uc = u[self.conn]
        gx = np.einsum("ej,gj->eg", uc, self.dshape_dxi) / self.grid.cell_w[:, None]
        gy = np.einsum("ej,gj->eg", uc, self.dshape_deta) / self.grid.cell_h[:, None]
        return gx, gy

    def stiffness(self, a_elem: np.ndarray) -> sp.csr_matrix:
        data = (a_elem[:, None, None] * self.k_geo).ravel()
        n = self.grid.n_nodes
        return sp.coo_matrix((data, (self.rows, self.cols)), shape=(n, n)).tocsr()

    def load_from_b(self, b_elem: np.ndarray) -> np.ndarray:
        """Vector with entries int b . grad(basis_i), b constant per element."""
        w, h = self.grid.cell_w, self.grid.cell_h
        contrib = (
            b_elem[:, 0][:, None] * (self.int_dx[None, :] * h[:, None])
            + b_elem[:, 1][:, None] * (self.int_dy[None, :] * w[:, None])
        )
        out = np.zeros(self.grid.n_nodes)
        np.add.at(out, self.conn.ravel(), contrib.ravel())
        return out

    def load_from_c(self, c_elem: np.ndarray) -> np.ndarray:
        """Vector with entries int c * basis_i, c constant per element."""
        contrib = (c_elem * self.grid.cell_area / 4.0)[:, None] * np.ones((1, 4))
        out = np.zeros(self.grid.n_nodes)
        np.add.at(out, self.conn.ravel(), contrib.ravel())
        return out


def element_data(grid: Grid) -> ElementData:
    cached = getattr(grid, "_element_data", None)
    if cached is None:
        cached = ElementData(grid)
        grid._element_data = cached
    return cached


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

@dataclass
class SpatialField:
    """Nodal scalar field with bilinear evaluation anywhere in the domain."""

    grid: Grid
    values: np.ndarray

    def _locate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.atleast_2d(x)
        ix, tx = self.grid.interp_1d(0, x[:, 0])
        iy, ty = self.grid.interp_1d(1, x[:, 1])
        nx = self.grid.shape[0]
        cell = ix + (nx - 1) * iy
        return cell, tx, ty

    def value_at(self, x: np.ndarray) -> np.ndarray:
        cell, tx, ty = self._locate(x)
        c = self.grid.cells[cell]
        u = self.values
        return (
            (1 - tx) * (1 - ty) * u[c[:, 0]]
            + tx * (1 - ty) * u[c[:, 1]]
            + (1 - tx) * ty * u[c[:, 2]]
            + tx * ty * u[c[:, 3]]
        )

    def grad_at(self, x: np.ndarray) -> np.ndarray:
        cell, tx, ty = self._locate(x)
        c = self.grid.cells[cell]
        u = self.values
        w = self.grid.cell_w[cell]
        h = self.grid.cell_h[cell]
        gx = ((1 - ty) * (u[c[:, 1]] - u[c[:, 0]]) + ty * (u[c[:, 3]] - u[c[:, 2]])) / w
        gy = ((1 - tx) * (u[c[:, 2]] - u[c[:, 0]]) + tx * (u[c[:, 3]] - u[c[:, 1]])) / h
        return np.stack([gx, gy], axis=1)

    def h1_norm_sq(self) -> float:
        ed = element_data(self.grid)
        gx, gy = ed.gauss_grads(self.values)
        semi = float(np.sum(ed.gauss_w * (gx * gx + gy * gy)))
        mass = float(np.sum(self.grid.node_weights * self.values**2))
        return mass + semi


@dataclass
class SpaceTimeField:
    """Discrete space-time field: one nodal vector per stored time level."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray  # (n_levels, n_nodes)
    stats: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.values.shape[0]

    def level(self, n: int) -> SpatialField:
        return SpatialField(self.grid, self.values[n])

    def at_time(self, t: float) -> np.ndarray:
        """Nodal values linearly interpolated in time."""
        times = self.times
        if t <= times[0]:
            return self.values[0]
        if t >= times[-1]:
            return self.values[-1]
        n = int(np.searchsorted(times, t, side="right") - 1)
        th = (t - times[n]) / (times[n + 1] - times[n])
        return (1.0 - th) * self.values[n] + th * self.values[n + 1]

    def trace(self, edge: str = "bottom") -> np.ndarray:
        idx = self.grid.edge_nodes[edge]
        return self.values[:, idx]

    def gamma_trace(self) -> np.ndarray:
        return self.values[:, self.grid.gamma_nodes]

    def energy_norm(self) -> float:
        """L^2(0, T; H^1) norm by trapezoid in time over the stored levels."""
        sq = np.array([SpatialField(self.grid, v).h1_norm_sq() for v in self.values])
        return float(np.sqrt(np.trapezoid(sq, self.times)))


# ---------------------------------------------------------------------------
# Problem specification
# ---------------------------------------------------------------------------

def as_boundary_data(g) -> Callable[[np.ndarray, float], np.ndarray]:
    if callable(g):
        return lambda x, t: np.broadcast_to(
            np.asarray(g(x, t), dtype=float), (np.atleast_2d(x).shape[0],)
        ).astype(float)
    gval = float(g)
    return lambda x, t: np.full(np.atleast_2d(x).shape[0], gval)


def as_initial_data(u0) -> Callable[[np.ndarray], np.ndarray]:
    if callable(u0):
        return lambda x: np.broadcast_to(
            np.asarray(u0(x), dtype=float), (np.atleast_2d(x).shape[0],)
        ).astype(float)
    val = float(u0)
    return lambda x: np.full(np.atleast_2d(x).shape[0], val)


@dataclass
class ProblemSpec:
    grid: Grid
    coeffs: CoefficientSet
    g: object = 0.0
    u0: object = 0.0
    n_steps: int = 32
    nonlinear_tol: float = 1e-10
    max_iterations: int = 50
    linear_solver: str = "direct"  # or "cg"

    def __post_init__(self) -> None:
        if self.grid.domain.dim != 2:
            raise SolverError("forward solves support dim 2 only")
        if self.n_steps < 1:
            raise SolverError("need at least one time step")
        if self.linear_solver not in ("direct", "cg"):
            raise SolverError(f"unknown linear solver {self.linear_solver!r}")

    def check_datum_resolution(self, eps: float, window: tuple[float, float]) -> None:
        """Step/grid preconditions for a localized datum at scale eps."""
        tau = self.grid.domain.T / self.n_steps
        if tau > (window[1] - window[0]) / 64.0 + 1e-14:
            raise SolverError(
                f"time step {tau:.4g} too coarse for window {window} (need <= window/64)"
            )
        xb = np.asarray(self.grid.domain.xbar)
        xs = self.grid.axes[0]
        inside = np.sum(np.abs(xs - xb[0]) <= eps + 1e-14)
        if inside < 4:
            raise SolverError(
                f"grid places only {inside} node(s) across the datum support "
                f"(width {2 * eps:.4g}); need >= 4"
            )


# ---------------------------------------------------------------------------
# Linear algebra helpers
# ---------------------------------------------------------------------------

class _LinearSolver:
    """Free-node system solver with factorization reuse across iterations."""

    def __init__(self, grid: Grid, method: str):
        self.grid = grid
        self.method = method
        self.free = np.nonzero(grid.free_mask)[0]
        self.fixed = np.nonzero(grid.dirichlet_mask)[0]
        self._sig: tuple | None = None
        self._lu = None
        self._aff = None
        self._afd = None

    def solve(self, A: sp.csr_matrix, rhs: np.ndarray, fixed_vals: np.ndarray, sig: tuple) -> np.ndarray:
        if self._sig != sig or self._lu is None:
            Af = A[self.free]
            self._aff = Af[:, self.free].tocsc()
            self._afd = Af[:, self.fixed].tocsr()
            if self.method == "direct":
                self._lu = spla.splu(self._aff)
            else:
                self._lu = None
            self._sig = sig
        b = rhs[self.free] - self._afd @ fixed_vals
        if self.method == "direct":
            xf = self._lu.solve(b)
        else:
            xf, info = spla.cg(self._aff, b, rtol=1e-12, atol=0.0, maxiter=20000)
            if info != 0:
                xf, info = spla.bicgstab(self._aff, b, rtol=1e-12, atol=0.0, maxiter=20000)
                if info != 0:
                    raise SolverError(f"iterative linear solver failed (info={info})")
        out = np.zeros(A.shape[0])
        out[self.free] = xf
        out[self.fixed] = fixed_vals
        return out


def _signature(*arrays: np.ndarray) -> tuple:
    # cheap change-detection: byte hash of the coefficient arrays
    return tuple(hash(a.tobytes()) for a in arrays)


# ---------------------------------------------------------------------------
# Parabolic solver
# ---------------------------------------------------------------------------

def _assemble_state(ed: ElementData, coeffs: CoefficientSet, t: float, u: np.ndarray):
    """Stiffness, drift and reaction load vectors at the lagged state u."""
    u_c = ed.centroid_values(u)
    a_e = coeffs.eval_a(t, u_c)
    K = ed.stiffness(a_e)
    g_c = ed.centroid_grads(u)
    b_e = coeffs.eval_b(ed.centroids, t, u_c)
    c_e = coeffs.eval_c(ed.centroids, t, u_c, g_c)
    bvec = ed.load_from_b(b_e) if np.any(b_e) else np.zeros(ed.grid.n_nodes)
    cvec = ed.load_from_c(c_e) if np.any(c_e) else np.zeros(ed.grid.n_nodes)
    return K, bvec, cvec, a_e


def solve_parabolic(spec: ProblemSpec) -> SpaceTimeField:
    grid = spec.grid
    ed = element_data(grid)
    coeffs = spec.coeffs
    g_fun = as_boundary_data(spec.g)
    u0_fun = as_initial_data(spec.u0)
    T = grid.domain.T
    nt = spec.n_steps
    tau = T / nt
    times = np.linspace(0.0, T, nt + 1)
    mass = grid.node_weights
    fixed = np.nonzero(grid.dirichlet_mask)[0]
    free = np.nonzero(grid.free_mask)[0]
    lin = _LinearSolver(grid, spec.linear_solver)

    u = u0_fun(grid.nodes)
    g0 = g_fun(grid.nodes[fixed], 0.0)
    if np.max(np.abs(u[fixed] - g0)) > 1e-8:
        log.warning(
            "initial value and boundary datum are incompatible at t=0 "
            "(max gap %.3e); first step ramps the boundary values",
            float(np.max(np.abs(u[fixed] - g0))),
        )
    levels = [u.copy()]
    iter_counts = []
    residual_floor = 0.0

    for n in range(nt):
        t1 = times[n + 1]
        u_old = levels[-1]
        d_old = coeffs.eval_d(times[n], u_old)
        u_k = u_old.copy()
        u_k[fixed] = g_fun(grid.nodes[fixed], t1)
        history = []
        converged = False
        for k in range(spec.max_iterations + 1):
            K, bvec, cvec, a_e = _assemble_state(ed, coeffs, t1, u_k)
            d_new = coeffs.eval_d(t1, u_k)
            resid = mass * (d_new - d_old) / tau + K @ u_k + bvec + cvec
            scale = (
                float(np.linalg.norm(mass * d_new / tau))
                + float(np.linalg.norm(K @ u_k))
                + float(np.linalg.norm(bvec))
                + float(np.linalg.norm(cvec))
            )
            rel = float(np.linalg.norm(resid[free])) / max(scale, 1e-30)
            history.append(rel)
            if rel <= spec.nonlinear_tol:
                converged = True
                break
            if k == spec.max_iterations:
                break
            du = coeffs.eval_d_u(t1, u_k)
            A = K + sp.diags(mass * du / tau)
            rhs = mass * (du * u_k - d_new + d_old) / tau - bvec - cvec
            u_k = lin.solve(A, rhs, g_fun(grid.nodes[fixed], t1), _signature(a_e, du))
        if not converged:
            raise SolverError(
                f"nonlinear iteration did not converge at step {n + 1} "
                f"(last residual {history[-1]:.3e})",
                step=n + 1,
                history=history,
            )
        residual_floor = max(residual_floor, history[-1])
        iter_counts.append(len(history) - 1)
        levels.append(u_k)

    fld = SpaceTimeField(
        grid,
        times,
        np.asarray(levels),
        stats={
            "iterations": iter_counts,
            "max_residual": residual_floor,
            "tau": tau,
            "nonlinear_tol": spec.nonlinear_tol,
        },
    )
    fld.stats["energy_norm"] = fld.energy_norm()
    return fld


# ---------------------------------------------------------------------------
# Elliptic solver
# ---------------------------------------------------------------------------

def solve_elliptic(spec: ProblemSpec) -> SpatialField:
    grid = spec.grid
    ed = element_data(grid)
    coeffs = spec.coeffs
    g_fun = as_boundary_data(spec.g)
    fixed = np.nonzero(grid.dirichlet_mask)[0]
    free = np.nonzero(grid.free_mask)[0]
    lin = _LinearSolver(grid, spec.linear_solver)
    g_vals = g_fun(grid.nodes[fixed], 0.0)

    u_k = np.full(grid.n_nodes, float(np.mean(g_vals)))
    u_k[fixed] = g_vals
    history = []
    for k in range(spec.max_iterations + 1):
        K, bvec, cvec, a_e = _assemble_state(ed, coeffs, 0.0, u_k)
        resid = K @ u_k + bvec + cvec
        scale = float(np.linalg.norm(K @ u_k)) + float(np.linalg.norm(bvec)) + float(
            np.linalg.norm(cvec)
        )
        rel = float(np.linalg.norm(resid[free])) / max(scale, 1e-30)
        history.append(rel)
        if rel <= spec.nonlinear_tol:
            break
        if k == spec.max_iterations:
            raise SolverError(
                f"elliptic iteration did not converge (last residual {rel:.3e})",
                history=history,
            )
        u_k = lin.solve(K, -bvec - cvec, g_vals, _signature(a_e))
    fld = SpatialField(grid, u_k)
    fld.stats = {"iterations": len(history) - 1, "residual": history[-1]}
    return fld


# ---------------------------------------------------------------------------
# Coupled parabolic-elliptic solver
# ---------------------------------------------------------------------------

@dataclass
class CoupledSpec:
    """Second-species description: -Lap V + V = h(u), homogeneous Neumann."""

    drift_strength: float = 0.5  # b(u) = chi u (1 - u) against grad V
    signal_source: Callable | None = None  # h(u), defaults to identity

    def h(self, u: np.ndarray) -> np.ndarray:
        if self.signal_source is None:
            return np.asarray(u, dtype=float)
        return np.asarray(self.signal_source(u), dtype=float)


def _drift_endpoints_ok(chi: float) -> bool:
    b = lambda u: chi * u * (1.0 - u)
    return abs(b(0.0)) < 1e-14 and abs(b(1.0)) < 1e-14


def solve_coupled(
    spec: ProblemSpec,
    second: CoupledSpec | None = None,
    outer_tol: float = 1e-11,
    max_outer: int = 40,
) -> tuple[SpaceTimeField, SpaceTimeField]:
    if second is None:
        second = CoupledSpec(
            drift_strength=getattr(spec.coeffs, "drift_strength", 0.5),
            signal_source=getattr(spec.coeffs, "signal_source", None),
        )
    chi = second.drift_strength
    if not _drift_endpoints_ok(chi):
        raise SolverError("drift must vanish at u = 0 and u = 1")
    u0_fun = as_initial_data(spec.u0)
    u0_vals = u0_fun(spec.grid.nodes)
    if np.any(u0_vals < -1e-12) or np.any(u0_vals > 1.0 + 1e-12):
        raise SolverError("coupled runs require 0 <= u0 <= 1")

    grid = spec.grid
    ed = element_data(grid)
    K1 = ed.stiffness(np.ones(grid.n_cells))
    M = sp.diags(grid.node_weights)
    V_solver = spla.splu((K1 + M).tocsc())

    def solve_signal(u: np.ndarray) -> np.ndarray:
        return V_solver.solve(grid.node_weights * second.h(u))

    g_fun = as_boundary_data(spec.g)
    T = grid.domain.T
    nt = spec.n_steps
    times = np.linspace(0.0, T, nt + 1)
    u_levels = [u0_vals.copy()]
    V_levels = [solve_signal(u0_vals)]
    outer_counts = []

    base = spec.coeffs

    for n in range(nt):
        u_prev = u_levels[-1]
        u_j = u_prev.copy()
        for j in range(max_outer):
            V_field = SpatialField(grid, solve_signal(u_j))

            def b_eff(x, t, u, V=V_field, chi=chi):
                gv = V.grad_at(np.atleast_2d(x))
                return chi * (np.asarray(u) * (1.0 - np.asarray(u)))[:, None] * gv

            coeffs_eff = CoefficientSet(
                a=base.a,
                b=b_eff,
                c=base.c,
                d=base.d,
                d_u=base.d_u,
                a_lo=base.a_lo,
                a_hi=base.a_hi,
                C_A=base.C_A,
                u_range=base.u_range,
                name=base.name + "+drift",
            )
            u_next = _single_parabolic_step(
                grid, ed, coeffs_eff, g_fun, u_prev, times[n], times[n + 1], spec
            )
            gap = float(np.max(np.abs(u_next - u_j)))
            u_j = u_next
            if gap <= outer_tol * max(1.0, float(np.max(np.abs(u_j)))):
                break
        else:
            raise SolverError(f"coupled outer loop stalled at step {n + 1}", step=n + 1)
        outer_counts.append(j + 1)
        u_levels.append(u_j)
        V_levels.append(solve_signal(u_j))

    u_field = SpaceTimeField(grid, times, np.asarray(u_levels), stats={"outer": outer_counts})
    V_field = SpaceTimeField(grid, times, np.asarray(V_levels), stats={})
    u_field.stats["energy_norm"] = u_field.energy_norm()
    return u_field, V_field


def _single_parabolic_step(grid, ed, coeffs, g_fun, u_old, t0, t1, spec) -> np.ndarray:
    tau = t1 - t0
    mass = grid.node_weights
    fixed = np.nonzero(grid.dirichlet_mask)[0]
    free = np.nonzero(grid.free_mask)[0]
    lin = _LinearSolver(grid, spec.linear_solver)
    d_old = coeffs.eval_d(t0, u_old)
    u_k = u_old.copy()
    u_k[fixed] = g_fun(grid.nodes[fixed], t1)
    for k in range(spec.max_iterations + 1):
        K, bvec, cvec, a_e = _assemble_state(ed, coeffs, t1, u_k)
        d_new = coeffs.eval_d(t1, u_k)
        resid = mass * (d_new - d_old) / tau + K @ u_k + bvec + cvec
        scale = (
            float(np.linalg.norm(mass * d_new / tau))
            + float(np.linalg.norm(K @ u_k))
            + float(np.linalg.norm(bvec))
            + float(np.linalg.norm(cvec))
        )
        rel = float(np.linalg.norm(resid[free])) / max(scale, 1e-30)
        if rel <= spec.nonlinear_tol:
            return u_k
        if k == spec.max_iterations:
            raise SolverError(f"inner step stalled (residual {rel:.3e})")
        du = coeffs.eval_d_u(t1, u_k)
        A = K + sp.diags(mass * du / tau)
        rhs = mass * (du * u_k - d_new + d_old) / tau - bvec - cvec
        u_k = lin.solve(A, rhs, g_fun(grid.nodes[fixed], t1), _signature(a_e, du, u_k))
    return u_k


# ---------------------------------------------------------------------------
# Convenience wrappers
# ---------------------------------------------------------------------------

def field_bounds(field: SpaceTimeField) -> tuple[float, float]:
    return float(field.values.min()), float(field.values.max())
