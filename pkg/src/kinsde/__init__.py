"""Monte Carlo laboratory for kinetic SDEs with singular drifts.

Library layout:

- ``geometry``: phase-space types, the shear transport, anisotropic
  distance, mixed Lebesgue norms, Holder conjugates.
- ``noise``: exact degenerate Gaussian step noise and free-process samples
  on reproducible counter-based streams.
- ``kernels``: the free kinetic heat kernel, its scaling relations, and
  semigroup evaluation by quadrature or Monte Carlo.
- ``drift``: drift catalog and the cutoff / mollification tamings.
- ``scheme``: tamed and standard Euler-Maruyama engines plus the exact
  Ornstein-Uhlenbeck reference solver.
- ``besov``: anisotropic Littlewood-Paley blocks, Besov norms, and the
  taming-rate verifier.
- ``harness``: weak-error and density-distance experiments, skeleton
  refinement, log-log rate fitting.
- ``cli``: the ``kinsde`` command-line front end.
"""

from .geometry import (ANISOTROPY, GridFunction, GridSpec, MixedExponent,
                       PhaseState, anisotropic_distance, gamma_transport,
                       holder_conjugate, mixed_norm)
from .noise import (RngStream, StepNoise, sample_free_endpoint, sample_step,
                    step_cholesky, step_covariance)
from .kernels import (KernelEvalConfig, free_density, free_density_grid,
                      gamma_twisted_density, semigroup_apply)
from .drift import (DriftField, MollifierSpec, TamingParams, builtin_drifts,
                    cutoff_tame, drift_from_id, mollify_tame, tame,
                    verify_taming_growth)
from .scheme import (PathSample, SchemeConfig, exact_kinetic_ou,
                     kinetic_ou_moments, simulate_standard_em,
                     simulate_tamed_em, tamed_em_step)
from .besov import (BlockSystem, besov_norm, block_apply, build_block_system,
                    taming_rate_fit)
from .fitting import RateFitResult, fit_loglog
from .harness import (DensityEstimate, ExperimentConfig, NoiseSkeleton,
                      coarsen_skeleton, density_distance, make_functional,
                      refine_brownian_skeleton, sample_skeleton, weak_error)

__version__ = "0.1.0"
