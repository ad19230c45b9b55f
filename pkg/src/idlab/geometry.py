"""Computational domain, measurement segment and structured grids.

The domain is the unit square (0,1)^2 (unit cube for quadrature-only 3-D
work) with a flat measurement segment Gamma_M on the bottom boundary,
centered at a point xbar with half-width eps0.  The outward normal on the
bottom edge/face is -e_d, so exterior pole points xbar + eps*n sit strictly
below the domain and the open ball of radius eps around them misses Omega.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .quadrature import graded_axis, trapezoid_weights

EDGES_2D = ("bottom", "right", "top", "left")
BC_KINDS = ("dirichlet", "neumann")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Domain:
    """Unit square/cube with a flat measurement patch on the bottom boundary."""

    dim: int = 2
    xbar: tuple[float, ...] = (0.5, 0.0)
    eps0: float = 0.25
    T: float = 1.0
    bc_labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise GeometryError(f"dim must be 2 or 3, got {self.dim}")
        xbar = tuple(float(v) for v in self.xbar)
        if len(xbar) != self.dim:
            raise GeometryError("xbar dimension mismatch")
        if xbar[-1] != 0.0:
            raise GeometryError("xbar must lie on the bottom boundary (last coord 0)")
        if not (self.eps0 > 0):
            raise GeometryError("eps0 must be positive")
        for c in xbar[:-1]:
            if c - self.eps0 < 0.0 or c + self.eps0 > 1.0:
                raise GeometryError(
                    "measurement patch must stay at least eps0 away from corners"
                )
        if not (self.T > 0):
            raise GeometryError("T must be positive")
        labels = dict(self.bc_labels)
        for edge, kind in labels.items():
            if self.dim == 2 and edge not in EDGES_2D:
                raise GeometryError(f"unknown edge label {edge!r}")
            if kind not in BC_KINDS:
                raise GeometryError(f"unknown bc kind {kind!r} on edge {edge!r}")
        if labels.get("bottom", "dirichlet") != "dirichlet":
            raise GeometryError("the measurement edge must be Dirichlet-controlled")
        object.__setattr__(self, "xbar", xbar)
        object.__setattr__(self, "bc_labels", labels)

    @property
    def normal(self) -> np.ndarray:
        """Outward unit normal at xbar (and on all of Gamma_M): -e_d."""
        n = np.zeros(self.dim)
        n[-1] = -1.0
        return n

    def edge_bc(self, edge: str) -> str:
        return dict(self.bc_labels).get(edge, "dirichlet")

    def exterior_point(self, eps: float) -> np.ndarray:
        return exterior_point(self, eps)

    def ball_is_exterior(self, eps: float) -> bool:
        """Whether the open ball B_eps(xbar + eps*n) misses the open domain."""
        center = self.exterior_point(eps)
        # distance from the center to the closed unit box
        clipped = np.clip(center, 0.0, 1.0)
        dist = float(np.linalg.norm(center - clipped))
        return dist >= eps - 1e-14


def exterior_point(domain: Domain, eps: float) -> np.ndarray:
    """Pole location xbar + eps * n(xbar), strictly outside the domain."""
    if not (0.0 < eps <= domain.eps0):
        raise GeometryError(f"eps must lie in (0, eps0={domain.eps0}], got {eps}")
    return np.asarray(domain.xbar, dtype=float) + eps * domain.normal


@dataclass
class Grid:
    """Rectilinear tensor-product grid with quadrature weights and labels.

    Nodes are ordered x-fastest, i.e. flat index = ix + nx*(iy + ny*iz).
    For dim 2 the grid additionally carries the Q1 cell connectivity and the
    boundary partition (Gamma_M nodes vs the rest) used by the solvers.
    """

    domain: Domain
    axes: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.axes) != self.domain.dim:
            raise GeometryError("axis count does not match domain dimension")
        for ax in self.axes:
            if ax[0] != 0.0 or ax[-1] != 1.0:
                raise GeometryError("axes must span [0, 1]")
            if np.any(np.diff(ax) <= 0):
                raise GeometryError("axis nodes must be strictly increasing")
        self._build()

    # -- construction -----------------------------------------------------
    def _build(self) -> None:
        dim = self.domain.dim
        self.shape = tuple(len(ax) for ax in self.axes)
        self.n_nodes = int(np.prod(self.shape))
        axis_w = [trapezoid_weights(ax) for ax in self.axes]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        # flatten with x fastest: meshgrid(indexing="ij") gives arr[ix,iy,...]
        self.nodes = np.stack([m.ravel(order="F") for m in mesh], axis=1)
        wmesh = np.meshgrid(*axis_w, indexing="ij")
        w = np.ones(self.shape)
        for m in wmesh:
            w = w * m
        self.node_weights = w.ravel(order="F")

        if dim == 2:
            self._build_2d(axis_w)
        else:
            self._build_3d()

    def _build_2d(self, axis_w: list[np.ndarray]) -> None:
        xs, ys = self.axes
        nx, ny = self.shape
        ix = np.arange(nx)
        iy = np.arange(ny)

        def flat(ixv, iyv):
            return ixv + nx * iyv

        self.edge_nodes = {
            "bottom": flat(ix, 0),
            "top": flat(ix, ny - 1),
            "left": flat(np.zeros(ny, dtype=int), iy),
            "right": flat(np.full(ny, nx - 1, dtype=int), iy),
        }
        boundary = np.zeros(self.n_nodes, dtype=bool)
        for idx in self.edge_nodes.values():
            boundary[idx] = True
        self.boundary_mask = boundary
        self.interior_mask = ~boundary

        xb = self.domain.xbar[0]
        e0 = self.domain.eps0
        on_bottom = np.isclose(self.nodes[:, 1], 0.0)
        self.gamma_mask = on_bottom & (np.abs(self.nodes[:, 0] - xb) <= e0 + 1e-12)
        self.gamma_nodes = np.nonzero(self.gamma_mask)[0]

        # clipped trapezoid weights along the bottom edge: each bottom cell
        # contributes its overlap with [xb-e0, xb+e0], so the Gamma_M weights
        # sum to |Gamma_M| exactly even without aligned nodes
        overlap = np.clip(np.minimum(xs[1:], xb + e0) - np.maximum(xs[:-1], xb - e0), 0.0, None)
        gw = np.zeros(nx)
        gw[:-1] += 0.5 * overlap
        gw[1:] += 0.5 * overlap
        self.gamma_weights_bottom = gw  # indexed by ix along the bottom edge

        self.edge_weights = {
            "bottom": axis_w[0],
            "top": axis_w[0],
            "left": axis_w[1],
            "right": axis_w[1],
        }

        # Dirichlet mask per bc labels (corner nodes: Dirichlet wins)
        dmask = np.zeros(self.n_nodes, dtype=bool)
        nmask = np.zeros(self.n_nodes, dtype=bool)
        for edge, idx in self.edge_nodes.items():
            if self.domain.edge_bc(edge) == "dirichlet":
                dmask[idx] = True
            else:
                nmask[idx] = True
        self.dirichlet_mask = dmask
        self.free_mask = ~dmask
        self.free_nodes = np.nonzero(self.free_mask)[0]
        self.dirichlet_nodes = np.nonzero(dmask)[0]

        # Q1 cell connectivity (SW, SE, NW, NE) and cell geometry
        cx = np.arange(nx - 1)
        cy = np.arange(ny - 1)
        CX, CY = np.meshgrid(cx, cy, indexing="ij")
        sw = flat(CX, CY).ravel(order="F")
        self.cells = np.stack([sw, sw + 1, sw + nx, sw + nx + 1], axis=1)
        wx = np.diff(xs)
        wy = np.diff(ys)
        WX, WY = np.meshgrid(wx, wy, indexing="ij")
        self.cell_w = WX.ravel(order="F")
        self.cell_h = WY.ravel(order="F")
        self.cell_area = self.cell_w * self.cell_h
        x0, y0 = np.meshgrid(xs[:-1], ys[:-1], indexing="ij")
        self.cell_x0 = x0.ravel(order="F")
        self.cell_y0 = y0.ravel(order="F")
        self.n_cells = self.cells.shape[0]

    def _build_3d(self) -> None:
        xb = np.asarray(self.domain.xbar[:-1])
        on_bottom = np.isclose(self.nodes[:, -1], 0.0)
        r = np.linalg.norm(self.nodes[:, :-1] - xb[None, :], axis=1)
        self.gamma_mask = on_bottom & (r <= self.domain.eps0 + 1e-12)
        self.boundary_mask = np.zeros(self.n_nodes, dtype=bool)
        for d in range(3):
            self.boundary_mask |= np.isclose(self.nodes[:, d], 0.0)
            self.boundary_mask |= np.isclose(self.nodes[:, d], 1.0)
        self.interior_mask = ~self.boundary_mask

    # -- helpers ----------------------------------------------------------
    @property
    def h_min(self) -> float:
        return float(min(np.diff(ax).min() for ax in self.axes))

    @property
    def h_max(self) -> float:
        return float(max(np.diff(ax).max() for ax in self.axes))

    def spacing_near(self, point: np.ndarray, radius: float) -> float:
        """Largest cell size among cells overlapping the open ball at point."""
        out = 0.0
        for d, ax in enumerate(self.axes):
            lo, hi = point[d] - radius, point[d] + radius
            cells = np.diff(ax)
            mask = (ax[1:] > lo + 1e-14) & (ax[:-1] < hi - 1e-14)
            if mask.any():
                out = max(out, float(cells[mask].max()))
        return out

    def bottom_index(self) -> np.ndarray:
        return self.edge_nodes["bottom"]

    def interp_1d(self, axis: int, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and local coordinate along one axis for given coords."""
        ax = self.axes[axis]
        idx = np.clip(np.searchsorted(ax, coords, side="right") - 1, 0, len(ax) - 2)
        theta = (coords - ax[idx]) / (ax[idx + 1] - ax[idx])
        return idx, np.clip(theta, 0.0, 1.0)


def build_grid(domain: Domain, n_cells: int) -> Grid:
    """Uniform grid with n_cells per axis; rejects under-resolved Gamma_M."""
    n_cells = int(n_cells)
    nodes_across = _gamma_node_count(domain, n_cells)
    if nodes_across < 4:
        raise GeometryError(
            f"Gamma_M under-resolved: only {nodes_across} node(s) across the "
            f"measurement segment at n_cells={n_cells} (need >= 4)"
        )
    if n_cells < 8:
        raise GeometryError(f"n_cells must be >= 8, got {n_cells}")
    ax = np.linspace(0.0, 1.0, n_cells + 1)
    return Grid(domain, tuple(ax.copy() for _ in range(domain.dim)))


def _gamma_node_count(domain: Domain, n_cells: int) -> int:
    ax = np.linspace(0.0, 1.0, n_cells + 1)
    if domain.dim == 2:
        return int(np.sum(np.abs(ax - domain.xbar[0]) <= domain.eps0 + 1e-12))
    xb = np.asarray(domain.xbar[:-1])
    X = np.meshgrid(*[ax] * (domain.dim - 1), indexing="ij")
    pts = np.stack([m.ravel() for m in X], axis=1)
    r = np.linalg.norm(pts - xb[None, :], axis=1)
    return int(np.sum(r <= domain.eps0 + 1e-12))


def build_graded_grid(
    domain: Domain,
    fine_scale: float,
    fine_extent: float | None = None,
    cap: float | None = None,
    growth: float = 1.35,
    cells_per_scale: int = 8,
) -> Grid:
    """Tensor grid graded toward xbar: cells <= fine_scale/cells_per_scale
    within fine_extent of xbar, geometric growth outward, far spacing <= cap.
    """
    if fine_extent is None:
        fine_extent = 4.0 * fine_scale
    if cap is None:
        cap = 1.0 / 24.0
    fine_cell = fine_scale / cells_per_scale
    axes = []
    for d in range(domain.dim):
        center = domain.xbar[d]
        axes.append(
            graded_axis(0.0, 1.0, center, fine_cell, fine_extent, growth=growth, cap=cap)
        )
    return Grid(domain, tuple(axes))
