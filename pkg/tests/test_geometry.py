import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idlab.geometry import (
    Domain,
    GeometryError,
    build_graded_grid,
    build_grid,
    exterior_point,
)


class TestDomain:
    def test_defaults(self, domain):
        assert domain.dim == 2
        assert domain.xbar == (0.5, 0.0)
        np.testing.assert_array_equal(domain.normal, [0.0, -1.0])

    def test_xbar_off_bottom_rejected(self):
        with pytest.raises(GeometryError):
            Domain(xbar=(0.5, 0.1))

    def test_corner_clearance_rejected(self):
        with pytest.raises(GeometryError):
            Domain(xbar=(0.1, 0.0), eps0=0.25)

    def test_measurement_edge_must_be_dirichlet(self):
        with pytest.raises(GeometryError):
            Domain(bc_labels={"bottom": "neumann"})

    def test_mixed_labels_accepted(self):
        d = Domain(bc_labels={"top": "neumann", "left": "neumann"})
        assert d.edge_bc("top") == "neumann"
        assert d.edge_bc("bottom") == "dirichlet"


class TestExteriorPoint:
    def test_vector_arithmetic(self, domain):
        np.testing.assert_allclose(exterior_point(domain, 0.1), [0.5, -0.1])

    def test_out_of_range_eps(self, domain):
        with pytest.raises(GeometryError):
            exterior_point(domain, 1.5 * domain.eps0)
        with pytest.raises(GeometryError):
            exterior_point(domain, 0.0)

    def test_ball_disjoint_at_eps0(self, domain):
        assert domain.ball_is_exterior(domain.eps0)

    @given(frac=st.floats(min_value=1e-3, max_value=1.0))
    @settings(max_examples=25, deadline=None)
    def test_ball_disjoint_for_all_eps(self, frac):
        dom = Domain()
        assert dom.ball_is_exterior(frac * dom.eps0)


class TestGrid:
    def test_uniform_counts(self, domain):
        g = build_grid(domain, 16)
        assert g.shape == (17, 17)
        assert g.n_nodes == 17 * 17
        assert np.isclose(g.h_min, 1 / 16) and np.isclose(g.h_max, 1 / 16)

    def test_gamma_span(self, domain):
        g = build_grid(domain, 16)
        xs = g.nodes[g.gamma_nodes, 0]
        assert xs.min() == pytest.approx(0.25)
        assert xs.max() == pytest.approx(0.75)
        assert np.all(g.nodes[g.gamma_nodes, 1] == 0.0)

    def test_under_resolved_gamma_rejected(self):
        dom = Domain(eps0=0.05)
        with pytest.raises(GeometryError, match="under-resolved"):
            build_grid(dom, 4)

    def test_small_n_cells_rejected(self, domain):
        with pytest.raises(GeometryError):
            build_grid(domain, 4)

    def test_volume_weights_sum_to_area(self, domain):
        g = build_grid(domain, 12)
        assert np.sum(g.node_weights) == pytest.approx(1.0, abs=1e-14)

    def test_gamma_weights_sum_to_length(self, domain):
        g = build_grid(domain, 12)  # 0.25 not a multiple of 1/12: clipping matters
        assert np.sum(g.gamma_weights_bottom) == pytest.approx(2 * domain.eps0, abs=1e-14)

    def test_boundary_partition(self, domain):
        g = build_grid(domain, 10)
        on_edges = np.zeros(g.n_nodes, dtype=int)
        boundary = g.boundary_mask
        # every boundary node is either a measurement node or not, exactly once
        gamma = set(g.gamma_nodes.tolist())
        rest = set(np.nonzero(boundary)[0].tolist()) - gamma
        assert gamma.isdisjoint(rest)
        assert gamma | rest == set(np.nonzero(boundary)[0].tolist())

    @given(n=st.integers(min_value=8, max_value=40))
    @settings(max_examples=12, deadline=None)
    def test_weight_sums_any_resolution(self, n):
        g = build_grid(Domain(), n)
        assert np.sum(g.node_weights) == pytest.approx(1.0, abs=1e-13)
        assert np.sum(g.gamma_weights_bottom) == pytest.approx(0.5, abs=1e-13)


class TestGradedGrid:
    def test_local_resolution(self, domain):
        eps = domain.eps0 / 64
        g = build_graded_grid(domain, eps)
        xbar = np.asarray(domain.xbar)
        assert g.spacing_near(xbar, 4 * eps) <= eps / 8 + 1e-15
        assert np.sum(g.node_weights) == pytest.approx(1.0, abs=1e-12)

    def test_probe_evaluable_everywhere(self, domain):
        from idlab.singular import SingularProbe

        eps = domain.eps0 / 16
        g = build_graded_grid(domain, eps)
        probe = SingularProbe(domain, eps)
        vals = probe(g.nodes)
        assert np.all(np.isfinite(vals))
        dist = np.linalg.norm(g.nodes - probe.pole[None, :], axis=1)
        assert dist.min() >= eps - 1e-12
