import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idlab.coefficients import make_preset
from idlab.flux import (
    FluxFunctional,
    PairingError,
    flux_bound_margins,
    flux_gap_on_gamma_m,
    weak_residual,
)
from idlab.geometry import build_grid
from idlab.singular import CutoffPair, SingularProbe, make_dirichlet_datum
from idlab.solver import ProblemSpec, solve_elliptic, solve_parabolic
from idlab.testfuncs import (
    HatTimeTestFn,
    LinearCombination,
    gamma_battery,
    make_test_function,
)


class InteriorBump:
    """sin(pi x) sin(pi y) with a quadratic time window: interior test function."""

    time_breakpoints = (0.3, 0.7)

    def _q(self, t):
        return max((t - 0.3) * (0.7 - t), 0.0)

    def _qp(self, t):
        return (1.0 - 2.0 * t) if 0.3 < t < 0.7 else 0.0

    def value(self, x, t):
        x = np.atleast_2d(x)
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * self._q(t)

    def grad(self, x, t):
        x = np.atleast_2d(x)
        gx = np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * self._q(t)
        gy = np.pi * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]) * self._q(t)
        return np.stack([gx, gy], axis=1)

    def dt(self, x, t):
        x = np.atleast_2d(x)
        return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * self._qp(t)

    def dt_grad(self, x, t):
        x = np.atleast_2d(x)
        gx = np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * self._qp(t)
        gy = np.pi * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]) * self._qp(t)
        return np.stack([gx, gy], axis=1)


@pytest.fixture(scope="module")
def const_field(domain):
    grid = build_grid(domain, 16)
    coeffs = make_preset("constant", k=1.0)
    return solve_parabolic(ProblemSpec(grid, coeffs, g=0.4, u0=0.4, n_steps=8)), coeffs


# session-scoped domain fixture comes from conftest; redeclare at module scope
@pytest.fixture(scope="module")
def domain():
    from idlab.geometry import Domain

    return Domain()


class TestPairing:
    def test_constant_solution_pairs_to_zero(self, const_field, domain):
        field, coeffs = const_field
        j = FluxFunctional(field, coeffs)
        probe = SingularProbe(domain, 0.0625)
        phi = make_test_function(probe, CutoffPair(domain.xbar, 0.0625, (0.3, 0.7)))
        assert abs(j.pair(phi)) < 1e-10
        hat = HatTimeTestFn(0.5, 0.1, 0.2, (0.3, 0.7))
        assert abs(j.pair(hat)) < 1e-10

    def test_weak_residual_constant(self, const_field):
        field, coeffs = const_field
        assert abs(weak_residual(field, InteriorBump(), coeffs)) < 1e-10

    def test_weak_residual_rejects_boundary_trace(self, const_field):
        field, coeffs = const_field
        hat = HatTimeTestFn(0.5, 0.1, 0.2, (0.3, 0.7))  # nonzero trace on Gamma_M
        with pytest.raises(PairingError):
            weak_residual(field, hat, coeffs)

    def test_pair_rejects_temporal_support(self, const_field, domain):
        field, coeffs = const_field

        class BadTime(HatTimeTestFn):
            def time_value(self, t):
                return np.ones_like(np.asarray(t, dtype=float))

            def time_prime(self, t):
                return np.zeros_like(np.asarray(t, dtype=float))

        with pytest.raises(ValueError):
            FluxFunctional(field, coeffs).pair(BadTime(0.5, 0.1, 0.2, (0.3, 0.7)))

    @given(
        alpha=st.floats(min_value=-3, max_value=3),
        beta=st.floats(min_value=-3, max_value=3),
    )
    @settings(max_examples=10, deadline=None)
    def test_linearity(self, alpha, beta):
        from idlab.geometry import Domain

        dom = Domain()
        grid = build_grid(dom, 12)
        coeffs = make_preset("affine", a0=1.0, a1=0.5)
        dat = make_dirichlet_datum(dom, dom.eps0 / 2, 0.1, 0.9, (0.3, 0.7))
        field = solve_parabolic(ProblemSpec(grid, coeffs, g=dat, u0=0.1, n_steps=8))
        j = FluxFunctional(field, coeffs)
        phi1 = HatTimeTestFn(0.45, 0.12, 0.25, (0.2, 0.6))
        phi2 = HatTimeTestFn(0.55, 0.15, 0.2, (0.4, 0.8))
        combo = LinearCombination(alpha, phi1, beta, phi2)
        # shared panel layout isolates linearity from quadrature differences
        p1, p2, pc = FluxFunctional(field, coeffs).pair_many([phi1, phi2, combo])
        scale = abs(alpha) * abs(p1) + abs(beta) * abs(p2) + 1.0
        assert pc == pytest.approx(alpha * p1 + beta * p2, abs=1e-12 * scale)

    def test_divergence_theorem_elliptic(self, domain):
        grid = build_grid(domain, 16)
        coeffs = make_preset("constant", k=1.0)

        def g(x, t):
            x = np.atleast_2d(x)
            return 0.2 + 0.3 * x[:, 0] + 0.1 * x[:, 1]

        u = solve_elliptic(ProblemSpec(grid, coeffs, g=g, n_steps=1))
        j = FluxFunctional(u, coeffs)

        class One:
            def space_value(self, X):
                return np.ones(np.atleast_2d(X).shape[0])

            def space_grad(self, X):
                return np.zeros_like(np.atleast_2d(X), dtype=float)

        assert abs(j.pair(One())) < 1e-8

    def test_strong_flux_consistency(self, domain):
        """The pairing must match the boundary quadrature of a dn(u) for a
        known harmonic field, at discretization order."""
        coeffs = make_preset("constant", k=1.0)
        errs = []
        for n in (16, 32):
            grid = build_grid(domain, n)

            def g(x, t):
                x = np.atleast_2d(x)
                return x[:, 0] * x[:, 1]  # harmonic polynomial xy

            u = solve_elliptic(ProblemSpec(grid, coeffs, g=g, n_steps=1))
            j = FluxFunctional(u, coeffs)
            probe = SingularProbe(domain, domain.eps0)
            pairing = j.pair(probe)
            # exact boundary integral of dn(xy) lambda over the four edges
            from idlab.quadrature import panel_gauss

            s, w = panel_gauss(np.linspace(0, 1, 201), 4)
            total = 0.0
            for pts, normal, dn_u in (
                (np.stack([s, np.zeros_like(s)], 1), [0, -1], -s),  # bottom: -x
                (np.stack([s, np.ones_like(s)], 1), [0, 1], s),  # top: +x
                (np.stack([np.zeros_like(s), s], 1), [-1, 0], -s),  # left: -y
                (np.stack([np.ones_like(s), s], 1), [1, 0], s),  # right: +y
            ):
                total += float(np.sum(w * dn_u * probe(pts)))
            errs.append(abs(pairing - total))
        assert errs[1] < errs[0] / 2.0

    def test_mesh_independence(self, domain):
        vals = []
        for n, nt in ((12, 12), (24, 24), (48, 48)):
            grid = build_grid(domain, n)
            coeffs = make_preset("affine", a0=1.0, a1=1.0)
            dat = make_dirichlet_datum(domain, domain.eps0, 0.1, 0.9, (0.25, 0.75))
            field = solve_parabolic(ProblemSpec(grid, coeffs, g=dat, u0=0.1, n_steps=nt))
            probe = SingularProbe(domain, domain.eps0 / 2)
            phi = make_test_function(probe, CutoffPair(domain.xbar, probe.eps, (0.25, 0.75)))
            vals.append(FluxFunctional(field, coeffs).pair(phi))
        assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])
        assert abs(vals[1] - vals[0]) < 0.1 * abs(vals[2])


class TestFluxBound:
    def test_uniform_bound_random_battery(self, domain):
        grid = build_grid(domain, 16)
        coeffs = make_preset("affine", a0=1.0, a1=1.0)
        dat = make_dirichlet_datum(domain, domain.eps0 / 2, 0.1, 0.9, (0.25, 0.75))
        field = solve_parabolic(ProblemSpec(grid, coeffs, g=dat, u0=0.1, n_steps=16))
        j = FluxFunctional(field, coeffs)
        battery = gamma_battery(domain, 12, seed=7)
        margins = flux_bound_margins(j, battery)
        assert np.all(margins <= 1.0)


class TestFluxGap:
    def test_identical_runs_gap_zero(self, domain):
        grid = build_grid(domain, 16)
        coeffs = make_preset("constant", k=2.0)
        dat = make_dirichlet_datum(domain, domain.eps0 / 2, 0.0, 1.0, (0.25, 0.75))
        f1 = solve_parabolic(ProblemSpec(grid, coeffs, g=dat, u0=0.0, n_steps=16))
        f2 = solve_parabolic(ProblemSpec(grid, coeffs, g=dat, u0=0.0, n_steps=16))
        res = flux_gap_on_gamma_m(
            FluxFunctional(f1, coeffs), FluxFunctional(f2, coeffs), gamma_battery(domain, 8)
        )
        assert res["gap"] <= 10 * 1e-10

    def test_different_diffusion_separates(self, domain):
        grid = build_grid(domain, 16)
        c1 = make_preset("constant", k=2.0)
        c2 = make_preset("constant", k=1.0)
        dat = make_dirichlet_datum(domain, domain.eps0 / 2, 0.0, 1.0, (0.25, 0.75))
        f1 = solve_parabolic(ProblemSpec(grid, c1, g=dat, u0=0.0, n_steps=16))
        f2 = solve_parabolic(ProblemSpec(grid, c2, g=dat, u0=0.0, n_steps=16))
        res = flux_gap_on_gamma_m(
            FluxFunctional(f1, c1), FluxFunctional(f2, c2), gamma_battery(domain, 8)
        )
        assert res["gap"] > 100 * 1e-10

    def test_gap_monotone_in_battery_size(self, domain):
        grid = build_grid(domain, 16)
        c1 = make_preset("constant", k=2.0)
        c2 = make_preset("constant", k=1.0)
        dat = make_dirichlet_datum(domain, domain.eps0 / 2, 0.0, 1.0, (0.25, 0.75))
        f1 = solve_parabolic(ProblemSpec(grid, c1, g=dat, u0=0.0, n_steps=16))
        f2 = solve_parabolic(ProblemSpec(grid, c2, g=dat, u0=0.0, n_steps=16))
        battery = gamma_battery(domain, 16)
        j1, j2 = FluxFunctional(f1, c1), FluxFunctional(f2, c2)
        gaps = [flux_gap_on_gamma_m(j1, j2, battery[:k])["gap"] for k in (4, 8, 16)]
        assert gaps[0] <= gaps[1] <= gaps[2]

    def test_support_precondition(self, domain):
        grid = build_grid(domain, 16)
        coeffs = make_preset("constant", k=1.0)
        dat = make_dirichlet_datum(domain, domain.eps0 / 2, 0.0, 1.0, (0.25, 0.75))
        f1 = solve_parabolic(ProblemSpec(grid, coeffs, g=dat, u0=0.0, n_steps=8))
        off_patch = HatTimeTestFn(0.1, 0.08, 0.2, (0.3, 0.7))  # outside Gamma_M
        with pytest.raises(PairingError):
            flux_gap_on_gamma_m(
                FluxFunctional(f1, coeffs), FluxFunctional(f1, coeffs), [off_patch]
            )


class TestWeakResidualConvergence:
    def test_manufactured_residual_refines(self, domain):
        from idlab.coefficients import manufactured_solution

        residuals = []
        for n in (8, 16, 32):
            grid = build_grid(domain, n)
            spec = ProblemSpec(
                grid,
                make_preset("manufactured"),
                g=0.0,
                u0=lambda x: manufactured_solution(x, 0.0),
                n_steps=2 * n,
            )
            field = solve_parabolic(spec)
            residuals.append(abs(weak_residual(field, InteriorBump(), make_preset("manufactured"))))
        assert residuals[2] < residuals[0] / 4.0  # order >= 1 over two refinements
