"""Space-time test functions for the variational flux pairing.

All classes expose the same analytic surface: value/grad/dt/dt_grad at
arbitrary points, time breakpoints for exact panel quadrature, and trace
metadata used by the pairing preconditions.  Separable functions X(x)*q(t)
additionally expose their factors so norm computations stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .geometry import Domain, Grid
from .quadrature import panel_gauss
from .singular import CutoffPair, SingularProbe


@runtime_checkable
class SpaceTimeTestFn(Protocol):
    time_breakpoints: tuple[float, ...]

    def value(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def grad(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def dt(self, x: np.ndarray, t: float) -> np.ndarray: ...

    def dt_grad(self, x: np.ndarray, t: float) -> np.ndarray: ...


class _Separable:
    """X(x) * q(t) base; subclasses provide the factors."""

    def space_value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def space_grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def time_value(self, t) -> np.ndarray:
        raise NotImplementedError

    def time_prime(self, t) -> np.ndarray:
        raise NotImplementedError

    def value(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.space_value(x) * self.time_value(t)

    def grad(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.space_grad(x) * np.asarray(self.time_value(t))[..., None]

    def dt(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.space_value(x) * self.time_prime(t)

    def dt_grad(self, x: np.ndarray, t: float) -> np.ndarray:
        return self.space_grad(x) * np.asarray(self.time_prime(t))[..., None]


@dataclass
class CompositeTestFn(_Separable):
    """phi(x, t) = lambda_eps(x) * chi(t): harmonic in space, zero at t=0, T."""

    probe: SingularProbe
    cutoffs: CutoffPair

    def __post_init__(self) -> None:
        self.time_breakpoints = self.cutoffs.time_breakpoints
        self.harmonic = True
        self.trace_support = "all"

    def space_value(self, x: np.ndarray) -> np.ndarray:
        return self.probe(x)

    def space_grad(self, x: np.ndarray) -> np.ndarray:
        return self.probe.grad(x)

    def time_value(self, t) -> np.ndarray:
        return self.cutoffs.chi_time(t)

    def time_prime(self, t) -> np.ndarray:
        return self.cutoffs.chi_time_prime(t)

    def boundary_normal_derivative(self, edge_points: np.ndarray, normal: np.ndarray, t: float) -> np.ndarray:
        return (self.probe.grad(edge_points) @ normal) * float(self.cutoffs.chi_time(t))


def make_test_function(probe: SingularProbe, cutoffs: CutoffPair) -> CompositeTestFn:
    """Composite probe * time-cutoff test function (vanishes at t = 0 and T)."""
    t1, t2 = cutoffs.window
    if not (0.0 < t1 < t2 < probe.domain.T):
        raise ValueError("time window must be interior to (0, T)")
    return CompositeTestFn(probe, cutoffs)


@dataclass
class HatTimeTestFn(_Separable):
    """Tensor hat-in-x1 times linear wall decay times quadratic time bump.

    Trace support lies inside the hat's footprint on the bottom edge, so
    members with footprint inside Gamma_M are admissible for the localized
    flux-gap surrogate.  Not harmonic.
    """

    center: float
    width: float
    depth: float
    window: tuple[float, float]

    def __post_init__(self) -> None:
        if self.width <= 0 or self.depth <= 0:
            raise ValueError("width and depth must be positive")
        t1, t2 = self.window
        if not (t1 < t2):
            raise ValueError("empty time window")
        self.time_breakpoints = (t1, t2)
        self.harmonic = False
        self.trace_support = "gamma_m"

    def footprint(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width

    def space_value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        hat = np.clip(1.0 - np.abs(x[:, 0] - self.center) / self.width, 0.0, None)
        decay = np.clip(1.0 - x[:, 1] / self.depth, 0.0, None)
        return hat * decay

    def space_grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        s = x[:, 0] - self.center
        hat = np.clip(1.0 - np.abs(s) / self.width, 0.0, None)
        decay = np.clip(1.0 - x[:, 1] / self.depth, 0.0, None)
        inside_hat = hat > 0.0
        inside_dec = decay > 0.0
        gx = np.where(inside_hat & inside_dec, -np.sign(s) / self.width * decay, 0.0)
        gy = np.where(inside_hat & inside_dec, -hat / self.depth, 0.0)
        return np.stack([gx, gy], axis=1)

    def time_value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        scale = 4.0 / (t2 - t1) ** 2
        return np.maximum((t - t1) * (t2 - t), 0.0) * scale

    def time_prime(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        scale = 4.0 / (t2 - t1) ** 2
        return np.where((t > t1) & (t < t2), (t1 + t2 - 2.0 * t) * scale, 0.0)


@dataclass
class SmoothBumpTestFn(_Separable):
    """C^1 measurement functional: quartic bump in x1, quadratic wall decay,
    quadratic time window.  The continuous gradient keeps per-element Gauss
    quadrature of pairings second-order clean (hats converge only at first
    order with alignment-dependent constants)."""

    center: float
    width: float
    depth: float
    window: tuple[float, float]

    def __post_init__(self) -> None:
        if self.width <= 0 or self.depth <= 0:
            raise ValueError("width and depth must be positive")
        t1, t2 = self.window
        if not (t1 < t2):
            raise ValueError("empty time window")
        self.time_breakpoints = (t1, t2)
        self.harmonic = False
        self.trace_support = "gamma_m"

    def footprint(self) -> tuple[float, float]:
        return self.center - self.width, self.center + self.width

    def _bump(self, s: np.ndarray) -> np.ndarray:
        q = np.clip(1.0 - (s / self.width) ** 2, 0.0, None)
        return q * q

    def _bump_prime(self, s: np.ndarray) -> np.ndarray:
        q = np.clip(1.0 - (s / self.width) ** 2, 0.0, None)
        return -4.0 * s / self.width**2 * q

    def space_value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        decay = np.clip(1.0 - x[:, 1] / self.depth, 0.0, None) ** 2
        return self._bump(x[:, 0] - self.center) * decay

    def space_grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        s = x[:, 0] - self.center
        lin = np.clip(1.0 - x[:, 1] / self.depth, 0.0, None)
        gx = self._bump_prime(s) * lin * lin
        gy = self._bump(s) * (-2.0 / self.depth) * lin
        return np.stack([gx, gy], axis=1)

    def time_value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        scale = 4.0 / (t2 - t1) ** 2
        return np.maximum((t - t1) * (t2 - t), 0.0) * scale

    def time_prime(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        scale = 4.0 / (t2 - t1) ** 2
        return np.where((t > t1) & (t < t2), (t1 + t2 - 2.0 * t) * scale, 0.0)


def measurement_battery(domain: Domain, size: int = 6) -> list[SmoothBumpTestFn]:
    """Smooth Gamma_M-supported functionals for synthetic measurement data."""
    xb, e0, T = domain.xbar[0], domain.eps0, domain.T
    layouts = [
        (-0.4, 0.6, 0.25, (0.10, 0.60)),
        (0.0, 0.8, 0.25, (0.20, 0.80)),
        (0.4, 0.6, 0.25, (0.40, 0.90)),
        (-0.2, 0.5, 0.30, (0.30, 0.70)),
        (0.2, 0.5, 0.30, (0.15, 0.55)),
        (0.0, 1.0, 0.20, (0.50, 0.95)),
        (-0.3, 0.4, 0.35, (0.25, 0.85)),
        (0.3, 0.4, 0.35, (0.05, 0.45)),
    ]
    out = []
    for off, wfrac, depth, (a, b) in layouts[:size]:
        center = xb + off * e0
        width = min(wfrac * e0, center - (xb - e0), (xb + e0) - center)
        out.append(SmoothBumpTestFn(center, width, depth, (a * T, b * T)))
    return out


@dataclass
class ConstSpaceTestFn(_Separable):
    """phi(x, t) = q(t): constant in space (nonzero trace everywhere)."""

    window: tuple[float, float]

    def __post_init__(self) -> None:
        self.time_breakpoints = self.window
        self.harmonic = True
        self.trace_support = "all"

    def space_value(self, x: np.ndarray) -> np.ndarray:
        return np.ones(np.atleast_2d(x).shape[0])

    def space_grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.zeros_like(x, dtype=float)

    def time_value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        return np.maximum((t - t1) * (t2 - t), 0.0)

    def time_prime(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        t1, t2 = self.window
        return np.where((t > t1) & (t < t2), t1 + t2 - 2.0 * t, 0.0)


@dataclass
class LinearCombination:
    """alpha*phi1 + beta*phi2, used by the linearity checks."""

    alpha: float
    phi1: SpaceTimeTestFn
    beta: float
    phi2: SpaceTimeTestFn

    def __post_init__(self) -> None:
        self.time_breakpoints = tuple(
            sorted(set(self.phi1.time_breakpoints) | set(self.phi2.time_breakpoints))
        )
        self.harmonic = getattr(self.phi1, "harmonic", False) and getattr(
            self.phi2, "harmonic", False
        )
        self.trace_support = "mixed"

    def value(self, x, t):
        return self.alpha * self.phi1.value(x, t) + self.beta * self.phi2.value(x, t)

    def grad(self, x, t):
        return self.alpha * self.phi1.grad(x, t) + self.beta * self.phi2.grad(x, t)

    def dt(self, x, t):
        return self.alpha * self.phi1.dt(x, t) + self.beta * self.phi2.dt(x, t)

    def dt_grad(self, x, t):
        return self.alpha * self.phi1.dt_grad(x, t) + self.beta * self.phi2.dt_grad(x, t)


@dataclass
class SpatialCutoffWrapped:
    """chi(x) * phi(x, t) with a radial hat chi; used for near/far splitting.

    The product rule gradient uses the hat's almost-everywhere derivative;
    the wrapped function is generally not harmonic and is only paired, never
    inserted in the identity.
    """

    inner: SpaceTimeTestFn
    xbar: tuple[float, ...]
    eps: float
    complement: bool = False

    def __post_init__(self) -> None:
        self.time_breakpoints = self.inner.time_breakpoints
        self.harmonic = False
        self.trace_support = "mixed"

    def _chi(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        r = np.linalg.norm(x - np.asarray(self.xbar)[None, :], axis=1)
        chi = np.clip(2.0 - 2.0 * r / self.eps, 0.0, 1.0)
        return 1.0 - chi if self.complement else chi

    def _chi_grad(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        dx = x - np.asarray(self.xbar)[None, :]
        r = np.linalg.norm(dx, axis=1)
        on_ramp = (r > self.eps / 2.0) & (r < self.eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, dx / np.maximum(r, 1e-300)[:, None], 0.0)
        g = np.where(on_ramp[:, None], -2.0 / self.eps * unit, 0.0)
        return -g if self.complement else g

    def value(self, x, t):
        return self._chi(x) * self.inner.value(x, t)

    def grad(self, x, t):
        return (
            self._chi(x)[:, None] * self.inner.grad(x, t)
            + self._chi_grad(x) * self.inner.value(x, t)[:, None]
        )

    def dt(self, x, t):
        return self._chi(x) * self.inner.dt(x, t)

    def dt_grad(self, x, t):
        return (
            self._chi(x)[:, None] * self.inner.dt_grad(x, t)
            + self._chi_grad(x) * self.inner.dt(x, t)[:, None]
        )

    # the wrap of a separable function is separable (same time factor)
    def space_value(self, x):
        return self._chi(x) * self.inner.space_value(x)

    def space_grad(self, x):
        return (
            self._chi(x)[:, None] * self.inner.space_grad(x)
            + self._chi_grad(x) * self.inner.space_value(x)[:, None]
        )

    def time_value(self, t):
        return self.inner.time_value(t)

    def time_prime(self, t):
        return self.inner.time_prime(t)


def gamma_battery(
    domain: Domain,
    size: int,
    depth: float = 0.2,
    seed: int | None = None,
) -> list[HatTimeTestFn]:
    """Deterministic battery of hat*time test functions supported on Gamma_M.

    Without a seed the centers/widths/windows follow a fixed low-discrepancy
    layout; with a seed they are drawn reproducibly.
    """
    xb = domain.xbar[0]
    e0 = domain.eps0
    T = domain.T
    battery: list[HatTimeTestFn] = []
    if seed is None:
        for k in range(size):
            frac = (k + 1) / (size + 1)
            center = xb - e0 + 2.0 * e0 * frac
            width = e0 * (0.15 + 0.35 * ((k * 7919) % 97) / 96.0)
            width = min(width, center - (xb - e0), (xb + e0) - center)
            t1 = T * (0.1 + 0.5 * ((k * 104729) % 89) / 88.0)
            t2 = min(t1 + 0.3 * T, 0.95 * T)
            battery.append(HatTimeTestFn(center, max(width, 0.05 * e0), depth, (t1, t2)))
    else:
        rng = np.random.default_rng(seed)
        for _ in range(size):
            center = xb + e0 * rng.uniform(-0.8, 0.8)
            width = min(
                e0 * rng.uniform(0.1, 0.5), center - (xb - e0), (xb + e0) - center
            )
            t1 = rng.uniform(0.05, 0.6) * T
            t2 = rng.uniform(t1 + 0.1 * T, 0.95 * T)
            battery.append(HatTimeTestFn(center, max(width, 0.05 * e0), depth, (t1, t2)))
    return battery


def h1h1_norm(phi: SpaceTimeTestFn, grid: Grid, n_time_panels: int = 48) -> float:
    """H^1(0,T; H^1(Omega)) norm by grid quadrature in space, panels in time."""
    T = grid.domain.T
    cuts = sorted({0.0, T} | {b for b in phi.time_breakpoints if 0.0 < b < T})
    tq, tw = panel_gauss(np.asarray(cuts), 3)
    # refine long panels
    if len(tq) < n_time_panels:
        edges = np.unique(
            np.concatenate([np.asarray(cuts), np.linspace(0.0, T, n_time_panels + 1)])
        )
        tq, tw = panel_gauss(edges, 3)
    total = 0.0
    X = grid.nodes
    w = grid.node_weights
    for t, wt in zip(tq, tw):
        v = phi.value(X, float(t))
        g = phi.grad(X, float(t))
        dv = phi.dt(X, float(t))
        dg = phi.dt_grad(X, float(t))
        total += wt * float(
            np.sum(w * (v * v + np.sum(g * g, axis=1) + dv * dv + np.sum(dg * dg, axis=1)))
        )
    return float(np.sqrt(total))


def check_vanishes_at_time_ends(phi: SpaceTimeTestFn, domain: Domain, tol: float = 1e-12) -> None:
    probe_pts = np.array([[0.3, 0.4], [0.7, 0.1], [0.5, 0.0]])[:, : domain.dim]
    for t in (0.0, domain.T):
        if np.max(np.abs(phi.value(probe_pts, t))) > tol:
            raise ValueError("test function must vanish at t = 0 and t = T")


def harmonic_defect(phi: SpaceTimeTestFn, t: float, h: float = 1e-4) -> float:
    """Cancellation ratio |D_xx + D_yy| / (|D_xx| + |D_yy|) at interior probes.

    Near zero for spatially harmonic functions (the finite-difference second
    derivatives cancel); order one otherwise.  Dimensionless, so usable as a
    precondition check at a fixed tolerance.
    """
    pts = np.array([[0.45, 0.3], [0.62, 0.55], [0.5, 0.12], [0.35, 0.7]])
    base = phi.value(pts, t)
    second = []
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        second.append((phi.value(pts + e, t) + phi.value(pts - e, t) - 2.0 * base) / (h * h))
    dxx, dyy = second
    denom = np.abs(dxx) + np.abs(dyy)
    good = denom > 1e-10
    if not good.any():
        return 0.0
    return float(np.max(np.abs(dxx + dyy)[good] / denom[good]))
