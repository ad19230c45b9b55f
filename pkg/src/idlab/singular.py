"""Harmonic kernels with an exterior pole, cutoffs and localized boundary data.

The probe function lambda_eps(x) = n . grad Phi(x - pole) is harmonic inside
the domain (its pole sits at distance eps outside the measurement point) and
concentrates on the measurement segment as eps -> 0.  This module provides
analytic evaluation of the probe and its gradient, quadrature of its L^p
norms on graded grids, the exact patch-flux integrals on Gamma_M, the radial
and temporal cutoffs, and the localized Dirichlet data built from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Domain, GeometryError, Grid, build_graded_grid, exterior_point
from .quadrature import fit_loglog_slope, panel_gauss


def fundamental(x: np.ndarray, dim: int) -> np.ndarray:
    """Free-space Green function of the Laplacian: -log|x|/(2 pi) or 1/(4 pi |x|)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r = np.linalg.norm(x, axis=1)
    if np.any(r == 0.0):
        raise ValueError("fundamental solution evaluated at its singularity")
    if dim == 2:
        out = -np.log(r) / (2.0 * math.pi)
    elif dim == 3:
        out = 1.0 / (4.0 * math.pi * r)
    else:
        raise ValueError("dim must be 2 or 3")
    return out if out.size > 1 else out[0]


def fundamental_grad(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = np.sum(x * x, axis=1)
    if dim == 2:
        return -x / (2.0 * math.pi * r2[:, None])
    if dim == 3:
        return -x / (4.0 * math.pi * (r2 ** 1.5)[:, None])
    raise ValueError("dim must be 2 or 3")


@dataclass(frozen=True)
class SingularProbe:
    """Directional-derivative kernel n . grad Phi(. - pole), pole = xbar + eps n.

    Harmonic and smooth on the closed domain; positive there for dim 2 with
    the bottom-edge geometry (n.z = -(y + eps) < 0).
    """

    domain: Domain
    eps: float

    def __post_init__(self) -> None:
        exterior_point(self.domain, self.eps)  # validates 0 < eps <= eps0

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def pole(self) -> np.ndarray:
        return exterior_point(self.domain, self.eps)

    @property
    def normal(self) -> np.ndarray:
        return self.domain.normal

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Kernel values; vectorized over rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = x - self.pole[None, :]
        r2 = np.sum(z * z, axis=1)
        nz = z @ self.normal
        if self.dim == 2:
            val = -nz / (2.0 * math.pi * r2)
        else:
            val = -nz / (4.0 * math.pi * r2 ** 1.5)
        # pole value pinned to 0; never hit on the closed domain
        return np.where(r2 == 0.0, 0.0, val)

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Analytic gradient (Hessian of Phi applied to the normal)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = x - self.pole[None, :]
        r2 = np.sum(z * z, axis=1)
        nz = z @ self.normal
        n = self.normal[None, :]
        if self.dim == 2:
            return (-n / r2[:, None] + 2.0 * nz[:, None] * z / (r2 ** 2)[:, None]) / (
                2.0 * math.pi
            )
        return (-n / (r2 ** 1.5)[:, None] + 3.0 * nz[:, None] * z / (r2 ** 2.5)[:, None]) / (
            4.0 * math.pi
        )

    # closed forms on the flat measurement boundary, s = |x - xbar| tangential
    def value_on_gamma(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        e = self.eps
        if self.dim == 2:
            return e / (2.0 * math.pi * (s * s + e * e))
        return e / (4.0 * math.pi * (s * s + e * e) ** 1.5)

    def dn_on_gamma(self, s: np.ndarray) -> np.ndarray:
        """Outward normal derivative on the bottom boundary at tangential offset s."""
        s = np.asarray(s, dtype=float)
        e = self.eps
        if self.dim == 2:
            return (e * e - s * s) / (2.0 * math.pi * (s * s + e * e) ** 2)
        return (2.0 * e * e - s * s) / (4.0 * math.pi * (s * s + e * e) ** 2.5)


# ---------------------------------------------------------------------------
# L^p norms on graded grids and the predicted growth exponents
# ---------------------------------------------------------------------------

def probe_norm_grid(domain: Domain, eps: float, cells_per_scale: int = 8) -> Grid:
    """Graded grid resolving the near-boundary layer at scale eps."""
    return build_graded_grid(domain, eps, cells_per_scale=cells_per_scale)


def _check_layer_resolution(grid: Grid, probe: SingularProbe) -> None:
    xbar = np.asarray(probe.domain.xbar)
    h = grid.spacing_near(xbar, 4.0 * probe.eps)
    if h > probe.eps / 2.0 + 1e-14:
        raise GeometryError(
            f"grid does not resolve the near-boundary layer: local spacing "
            f"{h:.3e} exceeds eps/2 = {probe.eps / 2:.3e}"
        )


def lp_norm_lambda(probe: SingularProbe, p: float, grid: Grid) -> float:
    """L^p(Omega) norm of the probe by graded-grid quadrature."""
    if p < 1:
        raise ValueError("p must be >= 1")
    _check_layer_resolution(grid, probe)
    vals = np.abs(probe(grid.nodes))
    return float(np.sum(grid.node_weights * vals ** p) ** (1.0 / p))


def lp_norm_grad_lambda(probe: SingularProbe, p: float, grid: Grid) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    _check_layer_resolution(grid, probe)
    g = probe.grad(grid.nodes)
    mags = np.linalg.norm(g, axis=1)
    return float(np.sum(grid.node_weights * mags ** p) ** (1.0 / p))


def norm_regime(p: float, dim: int, gradient: bool) -> tuple[str, float]:
    """Predicted growth of the probe norms as eps -> 0.

    Returns (kind, value): kind "power" with the eps exponent, "log" with the
    |log eps| power, or "bounded" (exponent 0).
    """
    crit = dim / (dim - 1.0)
    if gradient:
        if p == 1:
            return ("log", 1.0)
        return ("power", dim / p - dim)
    if p < crit - 1e-12:
        return ("bounded", 0.0)
    if abs(p - crit) <= 1e-12:
        return ("log", 1.0 / p)
    return ("power", 1.0 + dim / p - dim)


# ---------------------------------------------------------------------------
# Patch flux integral and far-field bounds
# ---------------------------------------------------------------------------

def dn_lambda_gamma_integral(
    probe: SingularProbe, grid: Grid | None = None, n_panels: int = 64
) -> tuple[float, float]:
    """Integral of the outward normal derivative over Gamma_M /\\ B_eps(xbar)
    and the minimum pointwise value on that patch.

    Exact limits: eps * integral = 1/(2 pi) for dim 2 and 1/(4 sqrt 2) for
    dim 3 (closed-form antiderivatives of the radial integrand).
    """
    if not (probe.eps < probe.domain.eps0):
        raise GeometryError("patch integral requires eps < eps0")
    e = probe.eps
    if probe.dim == 2:
        edges = np.linspace(-e, e, n_panels + 1)
        pts, wts = panel_gauss(edges, 4)
        vals = probe.dn_on_gamma(pts)
        integral = float(np.sum(wts * vals))
        pmin = float(vals.min())
    else:
        edges = np.linspace(0.0, e, n_panels + 1)
        pts, wts = panel_gauss(edges, 4)
        vals = probe.dn_on_gamma(pts)
        integral = float(np.sum(wts * vals * 2.0 * math.pi * pts))
        pmin = float(vals.min())
    return integral, pmin


def dn_patch_constant(dim: int) -> float:
    """Exact limit of eps * patch-flux integral."""
    if dim == 2:
        return 1.0 / (2.0 * math.pi)
    return 1.0 / (4.0 * math.sqrt(2.0))


def far_field_bound_check(probe: SingularProbe, grid: Grid) -> tuple[float, float]:
    """Max |lambda| and |grad lambda| over grid nodes with |x - xbar| >= eps0/2."""
    xbar = np.asarray(probe.domain.xbar)
    r = np.linalg.norm(grid.nodes - xbar[None, :], axis=1)
    mask = r >= probe.domain.eps0 / 2.0
    vals = np.abs(probe(grid.nodes[mask]))
    grads = np.linalg.norm(probe.grad(grid.nodes[mask]), axis=1)
    return float(vals.max()), float(grads.max())


def far_field_ceilings(domain: Domain) -> tuple[float, float]:
    """Analytic ceilings C (eps0/4)^(1-d) and C' (eps0/4)^(-d) for the far field."""
    d = domain.dim
    q = domain.eps0 / 4.0
    c_val = 1.0 / (2.0 * math.pi) if d == 2 else 1.0 / (4.0 * math.pi)
    c_grad = 1.0 / (2.0 * math.pi)
    return c_val * q ** (1 - d), c_grad * q ** (-d)


# ---------------------------------------------------------------------------
# Cutoffs and localized Dirichlet data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CutoffPair:
    """Radial hat cutoff around xbar and quadratic time window cutoff.

    chi_space = 1 on B_{eps/2}(xbar), linear down to 0 on B_eps(xbar);
    chi_time(t) = max((t - t1)(t2 - t), 0).
    """

    xbar: tuple[float, ...]
    eps: float
    window: tuple[float, float]

    def __post_init__(self) -> None:
        t1, t2 = self.window
        if not (t1 < t2):
            raise ValueError("empty time window")

    def chi_space(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x - np.asarray(self.xbar)[None, :], axis=1)
        return np.clip(2.0 - 2.0 * r / self.eps, 0.0, 1.0)

    def chi_time(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        return np.maximum((t - t1) * (t2 - t), 0.0)

    def chi_time_prime(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        inside = (t > t1) & (t < t2)
        return np.where(inside, t1 + t2 - 2.0 * t, 0.0)

    @property
    def chi_time_max(self) -> float:
        t1, t2 = self.window
        return (t2 - t1) ** 2 / 4.0

    @property
    def time_breakpoints(self) -> tuple[float, float]:
        return self.window


@dataclass(frozen=True)
class DirichletDatum:
    """Localized boundary datum g1 + gamma eps^((3-d)/2) chi_space chi_time.

    Constant g1 outside the patch and outside the time window; the amplitude
    gamma = 4 (g2 - g1) min(1, eps0^((d-3)/2)) / T^2 keeps the datum inside
    [g1, g2] pointwise for every eps <= eps0.
    """

    domain: Domain
    eps: float
    g1: float
    g2: float
    cutoffs: CutoffPair
    gamma: float

    @property
    def amplitude(self) -> float:
        d = self.domain.dim
        return self.gamma * self.eps ** ((3.0 - d) / 2.0)

    def __call__(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        chi_x = self.cutoffs.chi_space(x)
        chi_t = self.cutoffs.chi_time(np.asarray(t, dtype=float))
        return self.g1 + self.amplitude * chi_x * chi_t

    def dt(self, x: np.ndarray, t: float | np.ndarray) -> np.ndarray:
        chi_x = self.cutoffs.chi_space(x)
        dchi_t = self.cutoffs.chi_time_prime(np.asarray(t, dtype=float))
        return self.amplitude * chi_x * dchi_t

    @property
    def time_breakpoints(self) -> tuple[float, float]:
        return self.cutoffs.window


def make_dirichlet_datum(
    domain: Domain,
    eps: float,
    g1: float,
    g2: float,
    window: tuple[float, float],
    bounds: tuple[float, float] | None = None,
) -> DirichletDatum:
    if not (0.0 < eps <= domain.eps0):
        raise GeometryError(f"eps must lie in (0, eps0], got {eps}")
    if not (g1 < g2):
        raise ValueError("need g1 < g2")
    if bounds is not None and not (bounds[0] <= g1 and g2 <= bounds[1]):
        raise ValueError("datum range must sit inside the admissible bounds")
    t1, t2 = window
    if not (0.0 < t1 < t2 < domain.T):
        raise ValueError("time window must satisfy 0 < t1 < t2 < T")
    d = domain.dim
    gamma = 4.0 * (g2 - g1) * min(1.0, domain.eps0 ** ((d - 3.0) / 2.0)) / domain.T ** 2
    cut = CutoffPair(domain.xbar, eps, window)
    return DirichletDatum(domain, eps, g1, g2, cut, gamma)


def datum_h1h1_norm(datum: DirichletDatum, n_time: int = 64) -> float:
    """H^1(0,T; H^1(boundary)) norm of the datum by quadrature.

    Spatial integrals run over the whole boundary of the unit square (dim 2)
    or cube (dim 3); the localized part is integrated with panels split at
    the cutoff kinks so the piecewise-polynomial profiles are exact.
    """
    dom = datum.domain
    d = dom.dim
    e = datum.eps
    amp = datum.amplitude
    xb = dom.xbar[0] if d == 2 else None

    # spatial factors of the localized part: chi and |grad chi| on the patch
    if d == 2:
        edges = np.array([-e, -e / 2.0, e / 2.0, e])
        s, w = panel_gauss(edges, 4)
        chi = np.clip(2.0 - 2.0 * np.abs(s) / e, 0.0, 1.0)
        dchi = np.where(np.abs(s) > e / 2.0, 2.0 / e, 0.0)
        chi_l2 = float(np.sum(w * chi ** 2))
        dchi_l2 = float(np.sum(w * dchi ** 2))
        bdry_measure = 4.0
    else:
        edges = np.array([0.0, e / 2.0, e])
        s, w = panel_gauss(edges, 4)
        ring = 2.0 * math.pi * s
        chi = np.clip(2.0 - 2.0 * s / e, 0.0, 1.0)
        dchi = np.where(s > e / 2.0, 2.0 / e, 0.0)
        chi_l2 = float(np.sum(w * ring * chi ** 2))
        dchi_l2 = float(np.sum(w * ring * dchi ** 2))
        bdry_measure = 6.0

    t1, t2 = datum.cutoffs.window
    tq, tw = panel_gauss(np.array([0.0, t1, t2, dom.T]), 4)
    chi_t = datum.cutoffs.chi_time(tq)
    dchi_t = datum.cutoffs.chi_time_prime(tq)
    int_chi2 = float(np.sum(tw * chi_t ** 2))
    int_dchi2 = float(np.sum(tw * dchi_t ** 2))

    # || g ||^2_{H1(0,T;H1)} = int (||g||_H1^2 + ||dt g||_H1^2) dt
    const_part = datum.g1 ** 2 * bdry_measure * dom.T
    cross = 2.0 * datum.g1 * amp * float(np.sum(tw * chi_t)) * (
        float(np.sum(w * chi)) if d == 2 else float(np.sum(w * ring * chi))
    )
    local_l2 = amp ** 2 * (int_chi2 * chi_l2)
    local_h1 = amp ** 2 * (int_chi2 * dchi_l2)
    dt_l2 = amp ** 2 * (int_dchi2 * chi_l2)
    dt_h1 = amp ** 2 * (int_dchi2 * dchi_l2)
    total = const_part + cross + local_l2 + local_h1 + dt_l2 + dt_h1
    return math.sqrt(total)


# ---------------------------------------------------------------------------
# Growth-verification sweep
# ---------------------------------------------------------------------------

DEFAULT_EPS_FACTORS = tuple(2.0 ** (-k) for k in range(3, 10))


def scaling_rows(
    domain2: Domain,
    domain3: Domain | None = None,
    eps_factors: tuple[float, ...] = DEFAULT_EPS_FACTORS,
    slope_tol: float = 0.05,
    ratio_tol: float = 3.0,
    cells_per_scale: int = 8,
) -> list[dict]:
    """Evaluate every norm regime over the eps sweep and grade each one.

    Power regimes are graded by the fitted log-log slope over the last five
    sweep points; logarithmic regimes by the spread of value/|log eps|^power;
    bounded regimes by |slope| <= slope_tol.
    """
    rows: list[dict] = []
    domains = [domain2] + ([domain3] if domain3 is not None else [])
    for dom in domains:
        d = dom.dim
        eps_list = [f * dom.eps0 for f in eps_factors]
        grids = {e: probe_norm_grid(dom, e, cells_per_scale) for e in eps_list}
        p_norm = [1.0, d / (d - 1.0), 2.0, 4.0]
        p_norm = sorted(set(p_norm))
        specs = [("norm_lambda", p, False) for p in p_norm]
        specs += [("norm_grad_lambda", p, True) for p in (1.0, 2.0)]
        for name, p, gradient in specs:
            values = []
            for e in eps_list:
                probe = SingularProbe(dom, e)
                if gradient:
                    values.append(lp_norm_grad_lambda(probe, p, grids[e]))
                else:
                    values.append(lp_norm_lambda(probe, p, grids[e]))
            values = np.asarray(values)
            eps_arr = np.asarray(eps_list)
            kind, target = norm_regime(p, d, gradient)
            slope = fit_loglog_slope(eps_arr, values, last=5)
            if kind == "log":
                ratio = values / np.abs(np.log(eps_arr)) ** target
                spread = float(ratio.max() / ratio.min())
                ok = spread <= ratio_tol
            else:
                spread = float("nan")
                ok = abs(slope - target) <= slope_tol
            for e, v in zip(eps_list, values):
                rows.append(
                    {
                        "quantity": name,
                        "p": p,
                        "dim": d,
                        "eps": e,
                        "value": v,
                        "predicted_exponent": target if kind != "log" else 0.0,
                        "fitted_slope": slope,
                        "pass": bool(ok),
                        "regime": kind,
                        "log_power": target if kind == "log" else 0.0,
                        "ratio_spread": spread,
                    }
                )
    return rows


def patch_constant_rows(
    domain2: Domain,
    domain3: Domain | None = None,
    eps_factors: tuple[float, ...] = DEFAULT_EPS_FACTORS,
    tol: float = 1e-6,
) -> list[dict]:
    """eps * patch-flux integral against its exact constant, plus positivity."""
    rows = []
    for dom in [domain2] + ([domain3] if domain3 is not None else []):
        target = dn_patch_constant(dom.dim)
        for f in eps_factors:
            e = f * dom.eps0
            probe = SingularProbe(dom, e)
            integral, pmin = dn_lambda_gamma_integral(probe)
            val = e * integral
            rows.append(
                {
                    "quantity": "dn_lambda_patch",
                    "p": 0.0,
                    "dim": dom.dim,
                    "eps": e,
                    "value": val,
                    "predicted_exponent": target,
                    "fitted_slope": 0.0,
                    "pass": bool(abs(val - target) <= tol and pmin >= 0.0),
                    "regime": "constant",
                    "log_power": 0.0,
                    "ratio_spread": float(pmin),
                }
            )
    return rows
