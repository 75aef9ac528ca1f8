"""sinkbridge: Sinkhorn matrix scaling, entropy-projection stability
constants, and spectral diagnostics for rescaled random matrices.

The package is organized by layer: :mod:`scaling` (Sinkhorn iteration and
gauges), :mod:`measures` (grid densities and divergences), :mod:`stability`
(explicit constants and inequality verifiers), :mod:`ensembles` (random
matrix generators), :mod:`spectral` (fluctuation matrices and the Dyson
solver), :mod:`experiments` (Monte Carlo harnesses), and :mod:`cli`.
"""

from ._version import __version__
from .scaling import (
    Gauge,
    MarginPair,
    Potentials,
    ScalingProblem,
    ScalingResult,
    check_scalability,
    dual_objective,
    gauge_distance,
    gauge_fix,
    kl_to_reference,
    potential_bounds,
    sinkhorn_scale,
)
from .measures import (
    GridDensity1D,
    GridDensity2D,
    cost_bound_K,
    delta_smoothness,
    hellinger,
    histogram_density_1d,
    kernel_density_2d,
    kl_divergence,
    total_variation,
)
from .stability import (
    StabilityConstants,
    concentration_constants,
    potential_stability_check,
    row_alignment,
    stability_constant_CA,
)
from .ensembles import EntryKind, ExperimentConfig, build_config_matrices, sample_matrix, subexp_params
from .spectral import (
    DysonSolution,
    FluctuationPair,
    VarianceProfile,
    gram_eigenvalues,
    mp_density,
    solve_dyson,
)
from .experiments import clt_covariance

__all__ = [
    "__version__",
    "Gauge", "MarginPair", "Potentials", "ScalingProblem", "ScalingResult",
    "check_scalability", "dual_objective", "gauge_distance", "gauge_fix",
    "kl_to_reference", "potential_bounds", "sinkhorn_scale",
    "GridDensity1D", "GridDensity2D", "cost_bound_K", "delta_smoothness",
    "hellinger", "histogram_density_1d", "kernel_density_2d", "kl_divergence",
    "total_variation",
    "StabilityConstants", "concentration_constants", "potential_stability_check",
    "row_alignment", "stability_constant_CA",
    "EntryKind", "ExperimentConfig", "build_config_matrices", "sample_matrix",
    "subexp_params",
    "DysonSolution", "FluctuationPair", "VarianceProfile", "gram_eigenvalues",
    "mp_density", "solve_dyson",
    "clt_covariance",
]
