"""Finite element laboratory for semidiscrete parabolic problems with nonsmooth coefficients."""
from .coefficients import CATALOGUE, make_sample
from .evolution import (BochnerField, SpectralDecomposition, duhamel_solve, propagate, semigroup_apply,
                        spectral_decompose, theta_step_solve)
from .fespace import CoefficientField, FESpace, OperatorPair, assemble, build_space, validate_coefficient
from .geometry import (DomainMetrics, Mesh, MeshQuality, Polygon, build_polygon_mesh, domain_metrics,
                       locate_point, measure_quality, refine_uniform, unit_square_mesh)
from .greens import (DyadicDecomposition, GreenField, KappaReport, discrete_green, dyadic_decomposition,
                     green_error_functional, kappa_functional, local_energy_ratio, reference_green)
from .harness import ExperimentConfig, SweepReport
from .norms import NormSpec, bochner_norm, linf_stability_constant, space_norm
from .projections import (DecayFit, RegularizedDelta, clement_interpolate, discrete_delta, l2_project,
                          lagrange_interpolate, regularized_delta, ritz_project, superapprox_check)

__version__ = "0.1.0"
