"""Coefficient quadruples (a, b, c, d) for the quasilinear problems.

Conventions.  The parabolic equation solved here is

    d/dt d(t, u) - div( a(t, u) grad u + b(x, t, u) ) + c(x, t, u, grad u) = 0

so d(t, u) = u gives the standard heat operator.  Callbacks are vectorized:
`a(t, u)` and `d(t, u)` map scalar t and array u to arrays, `b(x, t, u)`
maps (n, dim) points to (n, dim) vectors, `c(x, t, u, grad_u)` to (n,).
Evaluation outside the admissible u-range is clamped (logged once per set).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class CoefficientSet:
    a: Callable
    b: Callable | None = None
    c: Callable | None = None
    d: Callable | None = None
    d_u: Callable | None = None
    a_lo: float = 1e-8
    a_hi: float = 1e8
    C_A: float = 10.0
    C_0: float = 10.0
    u_range: tuple[float, float] = (0.0, 1.0)
    name: str = "custom"
    u_knots: np.ndarray | None = None  # breakpoints of piecewise-linear a, if any
    _warned: bool = field(default=False, repr=False)

    def clamp(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.u_range
        u = np.asarray(u, dtype=float)
        if not self._warned and (np.any(u < lo - 1e-12) or np.any(u > hi + 1e-12)):
            log.warning(
                "coefficient set %r evaluated outside u-range [%g, %g]; clamping",
                self.name,
                lo,
                hi,
            )
            object.__setattr__(self, "_warned", True)
        return np.clip(u, lo, hi)

    def eval_a(self, t: float, u: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.a(t, self.clamp(u)), dtype=float)
        vals = np.broadcast_to(vals, np.shape(u)).astype(float, copy=True)
        if np.any(vals < self.a_lo - 1e-12):
            raise ValueError(
                f"diffusion coefficient of {self.name!r} fell below its floor "
                f"{self.a_lo} (min {vals.min():.3e})"
            )
        if np.any(vals > self.a_hi + 1e-12):
            raise ValueError(f"diffusion coefficient of {self.name!r} exceeded its cap")
        return vals

    def eval_b(self, x: np.ndarray, t: float, u: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.b is None:
            return np.zeros_like(x, dtype=float)
        out = np.asarray(self.b(x, t, self.clamp(u)), dtype=float)
        return np.broadcast_to(out, x.shape).astype(float, copy=True)

    def eval_c(self, x: np.ndarray, t: float, u: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.c is None:
            return np.zeros(x.shape[0])
        out = np.asarray(self.c(x, t, self.clamp(u), grad_u), dtype=float)
        return np.broadcast_to(out, (x.shape[0],)).astype(float, copy=True)

    def eval_d(self, t: float, u: np.ndarray) -> np.ndarray:
        # storage is extended linearly outside the admissible range: a flat
        # clamp would zero the time-derivative slope and break parabolicity
        if self.d is None:
            return np.asarray(u, dtype=float)
        u = np.asarray(u, dtype=float)
        uc = self.clamp(u)
        out = np.asarray(self.d(t, uc), dtype=float)
        out = np.broadcast_to(out, np.shape(u)).astype(float, copy=True)
        overshoot = u - uc
        if np.any(overshoot):
            out += self.eval_d_u(t, uc) * overshoot
        return out

    def eval_d_u(self, t: float, u: np.ndarray) -> np.ndarray:
        if self.d is None:
            return np.ones(np.shape(u))
        if self.d_u is not None:
            out = np.asarray(self.d_u(t, self.clamp(u)), dtype=float)
        else:
            h = 1e-6
            uc = self.clamp(u)
            out = (self.d(t, uc + h) - self.d(t, uc - h)) / (2.0 * h)
        out = np.broadcast_to(out, np.shape(u)).astype(float, copy=True)
        return np.maximum(out, 1e-10)

    def antiderivative_knots(self, g_low: float, g_high: float) -> np.ndarray:
        """Integration breakpoints of a(t, .) inside [g_low, g_high]."""
        if self.u_knots is None:
            return np.array([g_low, g_high])
        ks = np.asarray(self.u_knots, dtype=float)
        inner = ks[(ks > g_low) & (ks < g_high)]
        return np.concatenate([[g_low], inner, [g_high]])


def same_lower_order(c1: CoefficientSet, c2: CoefficientSet, samples: int = 7) -> bool:
    """Sample-based equality of b, c, d over the admissible box."""
    rng = np.random.default_rng(0)
    lo, hi = c1.u_range
    x = rng.uniform(0.05, 0.95, size=(samples, 2))
    u = rng.uniform(lo, hi, size=samples)
    g = rng.uniform(-1.0, 1.0, size=(samples, 2))
    for t in (0.1, 0.5, 0.9):
        if not np.allclose(c1.eval_b(x, t, u), c2.eval_b(x, t, u), atol=1e-13):
            return False
        if not np.allclose(c1.eval_c(x, t, u, g), c2.eval_c(x, t, u, g), atol=1e-13):
            return False
        if not np.allclose(c1.eval_d(t, u), c2.eval_d(t, u), atol=1e-13):
            return False
    return True


def same_diffusion(c1: CoefficientSet, c2: CoefficientSet, samples: int = 9) -> bool:
    rng = np.random.default_rng(1)
    lo, hi = c1.u_range
    u = rng.uniform(lo, hi, size=samples)
    return all(
        np.allclose(c1.eval_a(t, u), c2.eval_a(t, u), atol=1e-13) for t in (0.1, 0.5, 0.9)
    )


# ---------------------------------------------------------------------------
# Piecewise-linear (table) diffusion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PiecewiseLinearDiffusion:
    """a(u) piecewise linear on u-knots, clamp-extrapolated outside."""

    u_knots: tuple[float, ...]
    values: tuple[float, ...]
    a_floor: float = 1e-3

    def __post_init__(self) -> None:
        ks = np.asarray(self.u_knots, dtype=float)
        vs = np.asarray(self.values, dtype=float)
        if ks.ndim != 1 or ks.size < 2 or vs.shape != ks.shape:
            raise ValueError("need matching 1-D knot and value arrays (>= 2 knots)")
        if np.any(np.diff(ks) <= 0):
            raise ValueError("u-knots must be strictly increasing")
        if np.any(vs < self.a_floor):
            raise ValueError(f"knot values must stay >= the positivity floor {self.a_floor}")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(u, dtype=float), self.u_knots, self.values)

    def with_values(self, values: np.ndarray) -> "PiecewiseLinearDiffusion":
        return PiecewiseLinearDiffusion(self.u_knots, tuple(float(v) for v in values), self.a_floor)

    def as_coefficients(self, u_range: tuple[float, float] | None = None) -> CoefficientSet:
        vs = np.asarray(self.values)
        if u_range is None:
            u_range = (float(self.u_knots[0]), float(self.u_knots[-1]))
        return CoefficientSet(
            a=lambda t, u: self(u),
            a_lo=float(min(vs.min(), self.a_floor)),
            a_hi=float(vs.max()) * 1.01 + 1e-9,
            C_A=float(vs.max() + np.max(np.abs(np.diff(vs)) / np.diff(self.u_knots))),
            u_range=u_range,
            name="table",
            u_knots=np.asarray(self.u_knots, dtype=float),
        )


# ---------------------------------------------------------------------------
# Named presets
# ---------------------------------------------------------------------------

def _bump(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return np.sin(math.pi * x[:, 0]) * np.sin(math.pi * x[:, 1])


def manufactured_solution(x: np.ndarray, t: float) -> np.ndarray:
    return _bump(x) * math.exp(-t)


def manufactured_forcing(x: np.ndarray, t: float) -> np.ndarray:
    """c-slot forcing making sin(pi x) sin(pi y) e^{-t} solve the a=1+u^2 problem.

    c = div(a(u*) grad u*) - dt u* with a(u) = 1 + u^2:
        div(a grad u) = a(u) Lap u + a'(u) |grad u|^2.
    """
    x = np.atleast_2d(x)
    s = _bump(x)
    u = s * math.exp(-t)
    pi = math.pi
    cossin = np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1])
    sincos = np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1])
    grad_sq = (pi * math.exp(-t)) ** 2 * (cossin**2 + sincos**2)
    lap_u = -2.0 * pi * pi * u
    return (1.0 + u * u) * lap_u + 2.0 * u * grad_sq + u


PRESET_NAMES = ("constant", "affine", "bioheat", "chemotaxis", "manufactured", "table")


def make_preset(name: str, **params) -> CoefficientSet:
    """Coefficient sets by name; params override the documented defaults."""
    if name == "constant":
        k = float(params.pop("k", 1.0))
        u_range = tuple(params.pop("u_range", (0.0, 1.0)))
        _reject_extra(name, params)
        return CoefficientSet(
            a=lambda t, u, k=k: np.full(np.shape(u), k),
            a_lo=k * 0.999,
            a_hi=k * 1.001,
            C_A=max(k, 1.0),
            u_range=u_range,
            name=f"constant[{k}]",
        )
    if name == "affine":
        a0 = float(params.pop("a0", 1.0))
        a1 = float(params.pop("a1", 1.0))
        u_range = tuple(params.pop("u_range", (0.0, 1.0)))
        _reject_extra(name, params)
        lo = min(a0 + a1 * u_range[0], a0 + a1 * u_range[1])
        hi = max(a0 + a1 * u_range[0], a0 + a1 * u_range[1])
        if lo <= 0:
            raise ValueError("affine preset must stay positive on its u-range")
        return CoefficientSet(
            a=lambda t, u, a0=a0, a1=a1: a0 + a1 * np.asarray(u, dtype=float),
            a_lo=lo * 0.999,
            a_hi=hi * 1.001,
            C_A=hi + abs(a1),
            u_range=u_range,
            name=f"affine[{a0}+{a1}u]",
        )
    if name == "bioheat":
        u_b = float(params.pop("u_b", 1.0))
        omega = float(params.pop("omega", 0.5))
        _reject_extra(name, params)
        # perfusion c-slot omega*(u - u_b) relaxes the state toward u_b and is
        # monotone increasing in u, so [0, u_b] is invariant
        return CoefficientSet(
            a=lambda t, u, u_b=u_b: 1.0 + np.clip(u, 0.0, u_b) / u_b,
            c=lambda x, t, u, g, omega=omega, u_b=u_b: omega * (u - u_b),
            a_lo=0.999,
            a_hi=2.001,
            C_A=2.0 + 1.0 / u_b + omega * (1.0 + u_b),
            u_range=(0.0, u_b),
            name="bioheat",
        )
    if name == "chemotaxis":
        chi = float(params.pop("chi", 0.5))
        _reject_extra(name, params)
        cs = CoefficientSet(
            a=lambda t, u: 1.0 + 0.25 * np.asarray(u, dtype=float),
            a_lo=0.999,
            a_hi=1.2501,
            C_A=2.0 + chi,
            u_range=(0.0, 1.0),
            name="chemotaxis",
        )
        cs.drift_strength = chi  # b(u) = chi * u (1 - u), applied against grad V
        cs.signal_source = lambda u: np.asarray(u, dtype=float)  # h(u) = u
        return cs
    if name == "manufactured":
        _reject_extra(name, params)
        return CoefficientSet(
            a=lambda t, u: 1.0 + np.asarray(u, dtype=float) ** 2,
            c=lambda x, t, u, g: manufactured_forcing(x, t),
            a_lo=0.999,
            a_hi=2.001,
            C_A=5.0,
            u_range=(-1.0, 1.0),
            name="manufactured",
        )
    if name == "table":
        knots = params.pop("u_knots")
        values = params.pop("values")
        u_range = params.pop("u_range", None)
        _reject_extra(name, params)
        return PiecewiseLinearDiffusion(tuple(knots), tuple(values)).as_coefficients(u_range)
    raise ValueError(f"unknown preset {name!r} (choose from {PRESET_NAMES})")


def _reject_extra(name: str, params: dict) -> None:
    if params:
        raise ValueError(f"unknown parameters for preset {name!r}: {sorted(params)}")


def drift_endpoint_ok(chi: float, tol: float = 1e-12) -> bool:
    """b(u) = chi u (1-u) vanishes at u = 0 and u = 1 by construction."""
    return abs(chi * 0.0 * (1.0 - 0.0)) <= tol and abs(chi * 1.0 * (1.0 - 1.0)) <= tol
