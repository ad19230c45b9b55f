"""Discrimination machinery: antiderivatives, the boundary integral identity,
two-sided growth estimates and the eps-sweep experiment.

The experiment's logic: when two diffusion coefficients disagree by a margin
eta on a (time, value) rectangle, localized boundary data driven into that
rectangle plus the exterior-pole test functions make the boundary term

    int (A_1(t, u_1) - A_2(t, u_2)) dn(phi_eps)

grow like eps^{(1-d)/2} while every lower-order contribution stays O(|log
eps|).  The pairing of the flux difference inherits the growth, which is the
computable contrapositive of flux agreement forcing coefficient agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coefficients import CoefficientSet, same_diffusion, same_lower_order
from .flux import FluxFunctional, flux_gap_on_gamma_m
from .geometry import Domain, Grid, build_graded_grid, build_grid
from .quadrature import fit_loglog_slope, gauss_points, panel_gauss, time_panels
from .singular import CutoffPair, DirichletDatum, SingularProbe, make_dirichlet_datum
from .solver import (
    ProblemSpec,
    SpaceTimeField,
    element_data,
    solve_elliptic,
    solve_parabolic,
)
from .testfuncs import (
    CompositeTestFn,
    SpatialCutoffWrapped,
    check_vanishes_at_time_ends,
    harmonic_defect,
    make_test_function,
)
from .util import ordered_map


# ---------------------------------------------------------------------------
# Antiderivatives of the diffusion coefficient
# ---------------------------------------------------------------------------

def antiderivative_A(
    coeffs: CoefficientSet, t: float, g, g1: float, n_gauss: int = 16
) -> np.ndarray | float:
    """A(t, g) = int_{g1}^{g} a(t, s) ds by composite Gauss quadrature.

    Panels split at the coefficient's breakpoints (piecewise-linear tables
    integrate exactly); smooth coefficients are resolved to ~1e-14 by the
    16-point rule on sub-unit panels.
    """
    g_arr = np.atleast_1d(np.asarray(g, dtype=float))
    out = np.zeros_like(g_arr)
    xi, wi = gauss_points(0.0, 1.0, n_gauss)
    for sgn, mask in ((1.0, g_arr >= g1), (-1.0, g_arr < g1)):
        if not mask.any():
            continue
        gs = g_arr[mask]
        lo = np.minimum(gs, g1)
        hi = np.maximum(gs, g1)
        lo_all, hi_all = float(lo.min()), float(hi.max())
        knots = coeffs.antiderivative_knots(lo_all, hi_all)
        # per target value, integrate piece by piece up to g
        acc = np.zeros_like(gs)
        for k0, k1 in zip(knots[:-1], knots[1:]):
            seg_lo = np.clip(lo, k0, k1)
            seg_hi = np.clip(hi, k0, k1)
            length = seg_hi - seg_lo
            live = length > 0
            if not live.any():
                continue
            pts = seg_lo[live, None] + length[live, None] * xi[None, :]
            vals = coeffs.eval_a(t, pts.ravel()).reshape(pts.shape)
            acc[live] += length[live] * (vals @ wi)
        out[mask] = sgn * acc
    return out if np.ndim(g) else float(out[0])


def antiderivative_difference(
    c1: CoefficientSet, c2: CoefficientSet, t: float, g, g1: float
) -> np.ndarray | float:
    return antiderivative_A(c1, t, g, g1) - antiderivative_A(c2, t, g, g1)


# ---------------------------------------------------------------------------
# Locating a disagreement rectangle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisagreementRegion:
    """Witness point, margin and rectangle where sign * (a1 - a2) >= eta."""

    witness: tuple[float, float]  # (t, g)
    eta: float
    orientation: int  # +1 when a1 >= a2 + eta on the rectangle, else -1
    t_window: tuple[float, float]
    u_interval: tuple[float, float]
    scan_n: int

    def margin_holds(self, c1: CoefficientSet, c2: CoefficientSet, n: int = 1024) -> bool:
        """Rescan the rectangle on a finer grid (tolerates sampling slack)."""
        t = np.linspace(self.t_window[0], self.t_window[1], n)
        u = np.linspace(self.u_interval[0], self.u_interval[1], n // 4)
        for tv in t[:: max(1, n // 64)]:
            gap = self.orientation * (c1.eval_a(float(tv), u) - c2.eval_a(float(tv), u))
            if gap.min() < self.eta * (1.0 - 1e-6) - 1e-12:
                return False
        return True


def locate_disagreement(
    c1: CoefficientSet,
    c2: CoefficientSet,
    domain: Domain,
    u_range: tuple[float, float] | None = None,
    n: int = 256,
    atol: float = 1e-10,
) -> DisagreementRegion | None:
    """Scan a uniform (t, u) grid for the largest coefficient gap and grow the
    surrounding rectangle on which half that gap persists."""
    if u_range is None:
        u_range = c1.u_range
    T = domain.T
    lo, hi = u_range
    tc = (np.arange(n) + 0.5) * T / n
    uc = lo + (np.arange(n) + 0.5) * (hi - lo) / n
    D = np.empty((n, n))
    for i, tv in enumerate(tc):
        D[i] = c1.eval_a(float(tv), uc) - c2.eval_a(float(tv), uc)
    flat = int(np.argmax(np.abs(D)))
    i0, j0 = np.unravel_index(flat, D.shape)
    peak = D[i0, j0]
    if abs(peak) <= atol:
        return None
    sign = 1 if peak > 0 else -1
    eta = abs(peak) / 2.0
    mask = sign * D >= eta

    ilo = ihi = i0
    jlo = jhi = j0
    grown = True
    while grown:
        grown = False
        if ilo > 0 and mask[ilo - 1, jlo : jhi + 1].all():
            ilo -= 1
            grown = True
        if ihi < n - 1 and mask[ihi + 1, jlo : jhi + 1].all():
            ihi += 1
            grown = True
        if jlo > 0 and mask[ilo : ihi + 1, jlo - 1].all():
            jlo -= 1
            grown = True
        if jhi < n - 1 and mask[ilo : ihi + 1, jhi + 1].all():
            jhi += 1
            grown = True

    t_win = (0.0 if ilo == 0 else float(tc[ilo]), T if ihi == n - 1 else float(tc[ihi]))
    u_int = (lo if jlo == 0 else float(uc[jlo]), hi if jhi == n - 1 else float(uc[jhi]))
    return DisagreementRegion(
        witness=(float(tc[i0]), float(uc[j0])),
        eta=float(eta),
        orientation=sign,
        t_window=t_win,
        u_interval=u_int,
        scan_n=n,
    )


# ---------------------------------------------------------------------------
# The boundary integral identity
# ---------------------------------------------------------------------------

@dataclass
class IdentityBreakdown:
    """Terms of the integral identity evaluated on a solved pair.

    lhs   = int (A1(t, u1) - A2(t, u2)) dn(phi) over the whole boundary,
    flux  = <j1 - j2, phi>,
    storage  = int (d1(t,u1) - d2(t,u2)) dt(phi),
    drift    = int (b1 - b2) . grad(phi),
    reaction = int (c1 - c2) phi.

    With the forward-in-time storage convention:
        lhs = flux - drift - reaction + storage.
    """

    lhs: float
    flux: float
    storage: float
    drift: float
    reaction: float

    @property
    def rhs_total(self) -> float:
        return self.flux - self.drift - self.reaction + self.storage

    @property
    def residual(self) -> float:
        return self.lhs - self.rhs_total

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / max(abs(self.lhs), 1.0)

    @property
    def lower_order_sum(self) -> float:
        return abs(self.storage) + abs(self.drift) + abs(self.reaction)

    def as_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "flux": self.flux,
            "storage": self.storage,
            "drift": self.drift,
            "reaction": self.reaction,
            "rhs_total": self.rhs_total,
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "lower_order_sum": self.lower_order_sum,
        }


def _edge_geometry(grid: Grid, edge: str):
    """Arc coordinate axis, fixed coordinate, and outward normal per edge."""
    if edge == "bottom":
        return grid.axes[0], 0, 0.0, np.array([0.0, -1.0])
    if edge == "top":
        return grid.axes[0], 0, 1.0, np.array([0.0, 1.0])
    if edge == "left":
        return grid.axes[1], 1, 0.0, np.array([-1.0, 0.0])
    if edge == "right":
        return grid.axes[1], 1, 1.0, np.array([1.0, 0.0])
    raise ValueError(edge)


def _boundary_term(
    field1: SpaceTimeField,
    field2: SpaceTimeField,
    c1: CoefficientSet,
    c2: CoefficientSet,
    phi: CompositeTestFn,
    g1_base: float,
) -> float:
    """int_0^T int_bdry (A1(t, tr u1) - A2(t, tr u2)) dn(phi) ds dt.

    Traces are interpolated linearly along each edge; the arc quadrature is
    refined toward xbar on the bottom edge where dn(phi) varies on scale eps.
    """
    grid = field1.grid
    dom = grid.domain
    probe = phi.probe
    total = 0.0
    t_q, w_q, lev, th = time_panels(field1.times, tuple(phi.time_breakpoints))
    for edge in ("bottom", "right", "top", "left"):
        axis, coord, fixed, normal = _edge_geometry(grid, edge)
        if edge == "bottom":
            from .quadrature import refined_segment_rule

            s_pts, s_wts = refined_segment_rule(0.0, 1.0, dom.xbar[0], probe.eps)
        else:
            edges = np.linspace(0.0, 1.0, 65)
            s_pts, s_wts = panel_gauss(edges, 3)
        pts = np.empty((len(s_pts), 2))
        pts[:, coord] = s_pts
        pts[:, 1 - coord] = fixed
        dn_lambda = probe.grad(pts) @ normal
        edge_idx = grid.edge_nodes[edge]
        edge_coords = grid.nodes[edge_idx, coord]
        order = np.argsort(edge_coords)
        edge_coords = edge_coords[order]
        tr1 = field1.values[:, edge_idx[order]]
        tr2 = field2.values[:, edge_idx[order]]
        for tq, wq, n, thq in zip(t_q, w_q, lev, th):
            chi = float(phi.cutoffs.chi_time(tq))
            if chi == 0.0:
                continue
            u1 = np.interp(s_pts, edge_coords, (1 - thq) * tr1[n] + thq * tr1[n + 1])
            u2 = np.interp(s_pts, edge_coords, (1 - thq) * tr2[n] + thq * tr2[n + 1])
            dA = antiderivative_A(c1, float(tq), u1, g1_base) - antiderivative_A(
                c2, float(tq), u2, g1_base
            )
            total += wq * chi * float(np.sum(s_wts * dA * dn_lambda))
    return total


def _difference_volume_terms(
    field1: SpaceTimeField,
    field2: SpaceTimeField,
    c1: CoefficientSet,
    c2: CoefficientSet,
    phi,
) -> tuple[float, float, float]:
    """(storage, drift, reaction) difference integrals in one sweep."""
    from .flux import separable_factors

    grid = field1.grid
    ed = element_data(grid)
    X = np.stack([ed.gauss_x.ravel(), ed.gauss_y.ravel()], axis=1)
    gw = ed.gauss_w.ravel()
    t_q, w_q, lev, th = time_panels(field1.times, tuple(phi.time_breakpoints))
    fac = separable_factors(phi, X)
    storage = drift = reaction = 0.0
    for tq, wq, n, thq in zip(t_q, w_q, lev, th):
        t = float(tq)
        out = []
        for fld, cs in ((field1, c1), (field2, c2)):
            u_node = (1.0 - thq) * fld.values[n] + thq * fld.values[n + 1]
            u_g = ed.gauss_values(u_node).ravel()
            gx, gy = ed.gauss_grads(u_node)
            grad = np.stack([gx.ravel(), gy.ravel()], axis=1)
            out.append(
                (
                    cs.eval_d(t, u_g),
                    cs.eval_b(X, t, u_g),
                    cs.eval_c(X, t, u_g, grad),
                )
            )
        (d1v, b1v, c1v), (d2v, b2v, c2v) = out
        if fac is not None:
            sv, sgx, sgy, time_value, time_prime = fac
            tv, tp = float(time_value(t)), float(time_prime(t))
            storage += wq * tp * float((gw * (d1v - d2v)) @ sv)
            db = b1v - b2v
            drift += wq * tv * float((gw * db[:, 0]) @ sgx + (gw * db[:, 1]) @ sgy)
            reaction += wq * tv * float((gw * (c1v - c2v)) @ sv)
        else:
            dtphi = phi.dt(X, t)
            gphi = phi.grad(X, t)
            vphi = phi.value(X, t)
            storage += wq * float(np.sum(gw * (d1v - d2v) * dtphi))
            drift += wq * float(np.sum(gw * ((b1v - b2v) * gphi).sum(axis=1)))
            reaction += wq * float(np.sum(gw * (c1v - c2v) * vphi))
    return storage, drift, reaction


def evaluate_identity(
    field1: SpaceTimeField,
    field2: SpaceTimeField,
    c1: CoefficientSet,
    c2: CoefficientSet,
    phi: CompositeTestFn,
    g1_base: float,
    harmonic_tol: float = 1e-6,
) -> IdentityBreakdown:
    """All five identity terms by quadrature; errors on non-harmonic phi."""
    dom = field1.grid.domain
    check_vanishes_at_time_ends(phi, dom)
    if not getattr(phi, "harmonic", False):
        t_mid = 0.5 * sum(phi.time_breakpoints)
        if harmonic_defect(phi, t_mid) > harmonic_tol:
            raise ValueError("identity requires a spatially harmonic test function")
    lhs = _boundary_term(field1, field2, c1, c2, phi, g1_base)
    fluxv = FluxFunctional(field1, c1).pair(phi) - FluxFunctional(field2, c2).pair(phi)
    storage, drift, reaction = _difference_volume_terms(field1, field2, c1, c2, phi)
    return IdentityBreakdown(lhs=lhs, flux=fluxv, storage=storage, drift=drift, reaction=reaction)


# ---------------------------------------------------------------------------
# Principal boundary term from the datum (analytic in the datum)
# ---------------------------------------------------------------------------

def principal_term(
    c1: CoefficientSet,
    c2: CoefficientSet,
    datum: DirichletDatum,
    probe: SingularProbe,
) -> float:
    """int chi(t) (A1(t, g_eps) - A2(t, g_eps), dn lambda) over the patch.

    Uses the closed-form datum and kernel traces, so it carries the exact
    eps^{(1-d)/2} growth without discretization error.
    """
    e = probe.eps
    t1, t2 = datum.cutoffs.window
    tq, tw = panel_gauss(np.linspace(t1, t2, 9), 4)
    if probe.dim == 2:
        edges = np.array([-e, -e / 2.0, 0.0, e / 2.0, e])
        sq, sw = panel_gauss(edges, 6)
        dn = probe.dn_on_gamma(np.abs(sq))
        hat = np.clip(2.0 - 2.0 * np.abs(sq) / e, 0.0, 1.0)
        ring = np.ones_like(sq)
    else:
        edges = np.array([0.0, e / 2.0, e])
        sq, sw = panel_gauss(edges, 6)
        dn = probe.dn_on_gamma(sq)
        hat = np.clip(2.0 - 2.0 * sq / e, 0.0, 1.0)
        ring = 2.0 * math.pi * sq
    total = 0.0
    g1 = datum.g1
    amp = datum.amplitude
    for t, wt in zip(tq, tw):
        chi = float(datum.cutoffs.chi_time(t))
        g_vals = g1 + amp * hat * chi
        dA = antiderivative_A(c1, float(t), g_vals, g1) - antiderivative_A(
            c2, float(t), g_vals, g1
        )
        total += wt * chi * float(np.sum(sw * ring * dA * dn))
    return total


# ---------------------------------------------------------------------------
# Lower-order mismatch and the sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LowerOrderMismatch:
    """Deliberate differences applied to side 2: reaction shift, storage
    factor, initial-data bump amplitude."""

    reaction_shift: float = 0.1
    storage_factor: float = 1.15
    u0_amplitude: float = 0.1

    def apply(self, coeffs: CoefficientSet) -> CoefficientSet:
        base_c = coeffs.c
        shift = self.reaction_shift
        factor = self.storage_factor

        def c_fn(x, t, u, grad_u):
            base = (
                np.zeros(np.atleast_2d(x).shape[0])
                if base_c is None
                else np.asarray(base_c(x, t, u, grad_u), dtype=float)
            )
            return base + shift

        base_d = coeffs.d

        def d_fn(t, u):
            inner = np.asarray(u, dtype=float) if base_d is None else np.asarray(
                base_d(t, u), dtype=float
            )
            return factor * inner

        def d_u_fn(t, u):
            if base_d is None:
                return np.full(np.shape(u), factor)
            h = 1e-6
            return factor * (np.asarray(base_d(t, np.asarray(u) + h)) - np.asarray(
                base_d(t, np.asarray(u) - h)
            )) / (2 * h)

        return replace(coeffs, c=c_fn, d=d_fn, d_u=d_u_fn, name=coeffs.name + "+mismatch")

    def perturb_initial(self, u0_base: float):
        amp = self.u0_amplitude

        def u0(x):
            x = np.atleast_2d(x)
            return u0_base + amp * np.sin(math.pi * x[:, 0]) * np.sin(math.pi * x[:, 1])

        return u0


@dataclass
class ScalingReport:
    rows: list[dict]
    verdict: str
    principal_slope: float
    predicted_slope: float
    lower_ratio_spread: float
    empirical_C1: float
    empirical_C2: float
    diagnostics: dict = field(default_factory=dict)

    def as_manifest(self) -> dict:
        return {
            "verdict": self.verdict,
            "principal_slope": self.principal_slope,
            "predicted_slope": self.predicted_slope,
            "lower_ratio_spread": self.lower_ratio_spread,
            "empirical_C1": self.empirical_C1,
            "empirical_C2": self.empirical_C2,
            "diagnostics": self.diagnostics,
        }


DEFAULT_SWEEP_FACTORS = tuple(2.0 ** (-k) for k in range(3, 8))


def _effective_window(region: DisagreementRegion | None, domain: Domain) -> tuple[float, float]:
    T = domain.T
    if region is None:
        return (0.25 * T, 0.75 * T)
    t1, t2 = region.t_window
    if t1 <= 0.01 * T and t2 >= 0.99 * T:
        return (0.25 * T, 0.75 * T)
    # keep the window interior so the temporal cutoff vanishes at 0 and T
    t1 = max(t1, 0.02 * T)
    t2 = min(t2, 0.98 * T)
    if not t1 < t2:
        mid = 0.5 * (region.t_window[0] + region.t_window[1])
        t1, t2 = max(mid - 0.05 * T, 0.02 * T), min(mid + 0.05 * T, 0.98 * T)
    return (t1, t2)


def _effective_interval(region: DisagreementRegion | None, u_range) -> tuple[float, float]:
    if region is None:
        lo, hi = u_range
        return (lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo))
    return region.u_interval


def discrimination_sweep(
    c1: CoefficientSet,
    c2: CoefficientSet,
    domain: Domain,
    lower_order_mismatch: LowerOrderMismatch | None = None,
    eps_factors: tuple[float, ...] = DEFAULT_SWEEP_FACTORS,
    mode: str = "parabolic",
    nonlinear_tol: float = 1e-10,
    slope_band: float = 0.1,
    domination_factor: float = 4.0,
    threads: int = 1,
) -> ScalingReport:
    """Solve the forward pair across the eps sweep, evaluate the identity with
    the composite test functions, fit growth, and emit a verdict."""
    region = locate_disagreement(c1, c2, domain, u_range=c1.u_range)
    window = _effective_window(region, domain)
    g_lo, g_hi = _effective_interval(region, c1.u_range)
    eps_list = [f * domain.eps0 for f in eps_factors]
    predicted = (1.0 - domain.dim) / 2.0

    c2_run = lower_order_mismatch.apply(c2) if lower_order_mismatch else c2
    u0_1 = g_lo
    u0_2 = (
        lower_order_mismatch.perturb_initial(g_lo)
        if lower_order_mismatch
        else g_lo
    )

    if region is None:
        rows = []
        for e in eps_list:
            datum = make_dirichlet_datum(domain, e, g_lo, g_hi, window)
            probe = SingularProbe(domain, e)
            rows.append(
                {
                    "eps": e,
                    "principal": principal_term(c1, c2, datum, probe),
                    "lhs": float("nan"),
                    "flux": float("nan"),
                    "storage": float("nan"),
                    "drift": float("nan"),
                    "reaction": float("nan"),
                    "residual": float("nan"),
                    "lower_order_sum": float("nan"),
                    "flux_near": float("nan"),
                    "flux_far": float("nan"),
                    "energy_1": float("nan"),
                    "energy_2": float("nan"),
                }
            )
        return ScalingReport(
            rows=rows,
            verdict="NOT-DETECTED",
            principal_slope=float("nan"),
            predicted_slope=predicted,
            lower_ratio_spread=float("nan"),
            empirical_C1=0.0,
            empirical_C2=float("nan"),
            diagnostics={"reason": "no disagreement located", "window": window},
        )

    def run_one(e: float) -> dict:
        datum = make_dirichlet_datum(domain, e, g_lo, g_hi, window)
        probe = SingularProbe(domain, e)
        phi = make_test_function(probe, CutoffPair(domain.xbar, e, window))
        if mode == "elliptic":
            return _run_one_elliptic(e, datum, probe, phi)
        grid = build_graded_grid(domain, e)
        n_steps = int(math.ceil(64.0 * domain.T / (window[1] - window[0])))
        spec1 = ProblemSpec(grid, c1, g=datum, u0=u0_1, n_steps=n_steps, nonlinear_tol=nonlinear_tol)
        spec1.check_datum_resolution(e, window)
        spec2 = ProblemSpec(grid, c2_run, g=datum, u0=u0_2, n_steps=n_steps, nonlinear_tol=nonlinear_tol)
        f1 = solve_parabolic(spec1)
        f2 = solve_parabolic(spec2)
        near = SpatialCutoffWrapped(phi, domain.xbar, domain.eps0, complement=False)
        far = SpatialCutoffWrapped(phi, domain.xbar, domain.eps0, complement=True)
        p1 = FluxFunctional(f1, c1).pair_many([phi, near, far])
        p2 = FluxFunctional(f2, c2_run).pair_many([phi, near, far])
        lhs = _boundary_term(f1, f2, c1, c2_run, phi, datum.g1)
        storage, drift, reaction = _difference_volume_terms(f1, f2, c1, c2_run, phi)
        breakdown = IdentityBreakdown(
            lhs=lhs, flux=float(p1[0] - p2[0]), storage=storage, drift=drift, reaction=reaction
        )
        row = {
            "eps": e,
            "principal": principal_term(c1, c2, datum, probe),
            **breakdown.as_dict(),
            "flux_near": float(p1[1] - p2[1]),
            "flux_far": float(p1[2] - p2[2]),
            "energy_1": f1.stats["energy_norm"],
            "energy_2": f2.stats["energy_norm"],
        }
        return row

    def _run_one_elliptic(e, datum, probe, phi) -> dict:
        grid = build_graded_grid(domain, e)
        g_fun = lambda x, t: datum(x, 0.5 * (window[0] + window[1]))
        u1 = solve_elliptic(ProblemSpec(grid, c1, g=g_fun, u0=g_lo, n_steps=1, nonlinear_tol=nonlinear_tol))
        u2 = solve_elliptic(ProblemSpec(grid, c2_run, g=g_fun, u0=g_lo, n_steps=1, nonlinear_tol=nonlinear_tol))
        j1 = FluxFunctional(u1, c1)
        j2 = FluxFunctional(u2, c2_run)
        fluxv = j1.pair(probe) - j2.pair(probe)
        # stationary principal term: no temporal cutoff
        chi_mid = float(datum.cutoffs.chi_time(0.5 * (window[0] + window[1])))
        edges = np.array([-e, -e / 2.0, 0.0, e / 2.0, e])
        sq, sw = panel_gauss(edges, 6)
        dn = probe.dn_on_gamma(np.abs(sq))
        hat = np.clip(2.0 - 2.0 * np.abs(sq) / e, 0.0, 1.0)
        g_vals = datum.g1 + datum.amplitude * hat * chi_mid
        dA = antiderivative_A(c1, 0.0, g_vals, datum.g1) - antiderivative_A(
            c2_run, 0.0, g_vals, datum.g1
        )
        principal = float(np.sum(sw * dA * dn))
        return {
            "eps": e,
            "principal": principal,
            "lhs": float("nan"),
            "flux": fluxv,
            "storage": 0.0,
            "drift": 0.0,
            "reaction": 0.0,
            "residual": float("nan"),
            "lower_order_sum": 0.0,
            "flux_near": float("nan"),
            "flux_far": float("nan"),
            "energy_1": float(np.sqrt(u1.h1_norm_sq())),
            "energy_2": float(np.sqrt(u2.h1_norm_sq())),
        }

    rows = ordered_map(run_one, eps_list, threads)
    eps_arr = np.asarray([r["eps"] for r in rows])
    principal_arr = np.asarray([abs(r["principal"]) for r in rows])
    lower_arr = np.asarray([r["lower_order_sum"] for r in rows])
    floor = 10.0 * nonlinear_tol
    diagnostics = {
        "eta": region.eta,
        "witness": region.witness,
        "window": window,
        "u_interval": (g_lo, g_hi),
        "orientation": region.orientation,
        "mode": mode,
    }
    if np.all(principal_arr <= floor):
        verdict = "NOT-DETECTED"
        slope = float("nan")
    else:
        slope = fit_loglog_slope(eps_arr, principal_arr)
        i_min = int(np.argmin(eps_arr))
        dominated = (
            mode == "elliptic"
            or principal_arr[i_min] >= domination_factor * max(lower_arr[i_min], 1e-300)
        )
        if abs(slope - predicted) <= slope_band and dominated:
            verdict = "DISTINGUISHABLE"
        else:
            verdict = "NOT-DETECTED"
    log_eps = np.abs(np.log(eps_arr))
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = lower_arr / log_eps
    good = np.isfinite(ratios) & (ratios > 0)
    spread = float(ratios[good].max() / ratios[good].min()) if good.any() else float("nan")
    C1 = float(np.min(principal_arr / eps_arr**predicted))
    C2 = float(np.nanmax(ratios)) if np.isfinite(ratios).any() else float("nan")
    return ScalingReport(
        rows=rows,
        verdict=verdict,
        principal_slope=float(slope),
        predicted_slope=predicted,
        lower_ratio_spread=spread,
        empirical_C1=C1,
        empirical_C2=C2,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Reverse consistency check
# ---------------------------------------------------------------------------

def reverse_check(
    coeffs: CoefficientSet,
    g_battery: list,
    domain: Domain,
    mode: str = "parabolic",
    n_cells: int = 24,
    n_steps: int = 32,
    battery=None,
    u0: object = None,
    perturb_a=None,
    gap_factor: float = 10.0,
    nonlinear_tol: float = 1e-10,
) -> dict:
    """Identical specs on both sides must produce matching fluxes.

    With perturb_a set, side 2 runs a(u) + perturb_a(u) and the report
    records the (expected, nonzero) gaps instead of asserting agreement.
    """
    from .testfuncs import gamma_battery

    grid = build_grid(domain, n_cells)
    if battery is None:
        battery = gamma_battery(domain, 8)
    side2 = coeffs
    if perturb_a is not None:
        base_a = coeffs.a
        side2 = replace(
            coeffs,
            a=lambda t, u: np.asarray(base_a(t, u), dtype=float) + perturb_a(u),
            name=coeffs.name + "+perturbed",
        )
    else:
        if not (same_diffusion(coeffs, side2) and same_lower_order(coeffs, side2)):
            raise ValueError("reverse check requires identical coefficient sets")
    rows = []
    for k, g in enumerate(g_battery):
        if mode == "elliptic":
            u1 = solve_elliptic(ProblemSpec(grid, coeffs, g=g, u0=0.0, n_steps=1, nonlinear_tol=nonlinear_tol))
            u2 = solve_elliptic(ProblemSpec(grid, side2, g=g, u0=0.0, n_steps=1, nonlinear_tol=nonlinear_tol))
        else:
            u0_k = u0 if u0 is not None else _datum_base(g)
            u1 = solve_parabolic(
                ProblemSpec(grid, coeffs, g=g, u0=u0_k, n_steps=n_steps, nonlinear_tol=nonlinear_tol)
            )
            u2 = solve_parabolic(
                ProblemSpec(grid, side2, g=g, u0=u0_k, n_steps=n_steps, nonlinear_tol=nonlinear_tol)
            )
        res = flux_gap_on_gamma_m(
            FluxFunctional(u1, coeffs), FluxFunctional(u2, side2), battery
        )
        rows.append({"datum": k, "gap": res["gap"]})
    gaps = np.asarray([r["gap"] for r in rows])
    threshold = gap_factor * nonlinear_tol
    return {
        "rows": rows,
        "max_gap": float(gaps.max()),
        "threshold": threshold,
        "perturbed": perturb_a is not None,
        "pass": bool(gaps.max() <= threshold) if perturb_a is None else bool(gaps.max() > threshold),
        "mode": mode,
    }


def _datum_base(g) -> float:
    if isinstance(g, DirichletDatum):
        return g.g1
    if callable(g):
        probe = np.array([[0.05, 0.0]])
        return float(np.asarray(g(probe, 0.0)).ravel()[0])
    return float(g)
