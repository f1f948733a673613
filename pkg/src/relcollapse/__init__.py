"""Numerical toolkit for relativistic collapse models driven by a non-white noise field.

Submodules
----------
core            parameters, spacetime points, quadrature and occupancy specs
noise_kernel    Lorentz-invariant noise kernel, position transforms, sampling
field_kernel    free-field two-point functions and discrete box modes
fock            truncated Fock-space operators
energy_rate     energy-increase rates and their limits
microcausality  second-order commutator probes and the Wick check
unraveling      stochastic unravelings and the order-gamma master equation
cli             command-line entry point
"""
__version__ = "0.1.0"

from .core import (ArtifactError, ConvergenceError, InvalidInput, ModelParams, NormalizationError, OccupancySpec,
                   QuadratureConfig, SpacetimePoint, causal_classify, interval, occupancy_normalize)
from .energy_rate import (RateResult, cutoff_convergence, rate_momentum_space, rate_nr_limit,
                          rate_position_space, rate_rel_limit, white_noise_divergence_scan)
from .field_kernel import TwoPointContext, box_modes, pauli_jordan, symmetric_two_point
from .fock import build_fock
from .microcausality import CommutatorProbe, mcc_second_order, mcc_sweep, spacelike_verdict, wick_check
from .noise_kernel import KernelSpec, meijer_g, meijer_g_oracle, position_correlation, spectral_eval
from .unraveling import (TrajectoryConfig, compare_unravelings, evolve_linear, evolve_nonlinear, evolve_unitary,
                         master_equation_rho2, preset, sample_noise_paths)

__all__ = [
    "ArtifactError", "ConvergenceError", "InvalidInput", "NormalizationError",
    "ModelParams", "OccupancySpec", "QuadratureConfig", "SpacetimePoint", "causal_classify", "interval",
    "occupancy_normalize",
    "KernelSpec", "spectral_eval", "position_correlation", "meijer_g", "meijer_g_oracle",
    "TwoPointContext", "pauli_jordan", "symmetric_two_point", "box_modes", "build_fock",
    "RateResult", "rate_position_space", "rate_momentum_space", "rate_nr_limit", "rate_rel_limit",
    "cutoff_convergence", "white_noise_divergence_scan",
    "CommutatorProbe", "mcc_second_order", "mcc_sweep", "spacelike_verdict", "wick_check",
    "TrajectoryConfig", "preset", "sample_noise_paths", "evolve_nonlinear", "evolve_linear", "evolve_unitary",
    "master_equation_rho2", "compare_unravelings",
]
