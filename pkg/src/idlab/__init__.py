"""idlab: numerical laboratory for identifiability of nonlinear diffusion
coefficients from partial Dirichlet-to-Neumann boundary flux data."""

from .coefficients import CoefficientSet, PiecewiseLinearDiffusion, make_preset
from .flux import FluxFunctional, flux_gap_on_gamma_m, weak_residual
from .geometry import Domain, Grid, build_graded_grid, build_grid, exterior_point
from .identify import (
    DisagreementRegion,
    IdentityBreakdown,
    LowerOrderMismatch,
    ScalingReport,
    antiderivative_A,
    discrimination_sweep,
    evaluate_identity,
    locate_disagreement,
    reverse_check,
)
from .reconstruct import (
    MeasurementSet,
    inverse_kirchhoff,
    kirchhoff_transform,
    recover_a,
    synthesize_measurements,
)
from .singular import (
    CutoffPair,
    DirichletDatum,
    SingularProbe,
    dn_lambda_gamma_integral,
    far_field_bound_check,
    fundamental,
    lp_norm_grad_lambda,
    lp_norm_lambda,
    make_dirichlet_datum,
)
from .solver import (
    ProblemSpec,
    SpaceTimeField,
    SpatialField,
    solve_coupled,
    solve_elliptic,
    solve_parabolic,
)
from .testfuncs import CompositeTestFn, gamma_battery, make_test_function

__version__ = "0.1.0"

__all__ = [
    "CoefficientSet",
    "CompositeTestFn",
    "CutoffPair",
    "DirichletDatum",
    "DisagreementRegion",
    "Domain",
    "FluxFunctional",
    "Grid",
    "IdentityBreakdown",
    "LowerOrderMismatch",
    "MeasurementSet",
    "PiecewiseLinearDiffusion",
    "ProblemSpec",
    "ScalingReport",
    "SingularProbe",
    "SpaceTimeField",
    "SpatialField",
    "antiderivative_A",
    "build_graded_grid",
    "build_grid",
    "discrimination_sweep",
    "dn_lambda_gamma_integral",
    "evaluate_identity",
    "exterior_point",
    "far_field_bound_check",
    "flux_gap_on_gamma_m",
    "fundamental",
    "gamma_battery",
    "inverse_kirchhoff",
    "kirchhoff_transform",
    "locate_disagreement",
    "lp_norm_grad_lambda",
    "lp_norm_lambda",
    "make_dirichlet_datum",
    "make_preset",
    "make_test_function",
    "recover_a",
    "reverse_check",
    "solve_coupled",
    "solve_elliptic",
    "solve_parabolic",
    "synthesize_measurements",
    "weak_residual",
]
