"""Levenberg-Marquardt with a singular scaling matrix, GSVD diagnostics and
heat-conduction parameter identification benchmarks."""

from .errors import (CompletenessError, ConfigError, DimensionError, DomainError, LmmssError,
                     SingularPairError)
from .gsvd import (GsvdFactors, PsiMax, gamma_filter, gen_singular_values, gsvd_pair, psi,
                   psi_max, step_norm_bound)
from .scaling import (Assembly, ScalingOperator, assemble_grad2d, assemble_tilde2d,
                      block_orthotropic, completeness_gamma, first_diff, identity, kron,
                      second_diff, third_diff)
from .solver import (Discrepancy, NlsProblem, SolverConfig, SolveTrace, StepMethod, StopReason,
                     damping, gradient, line_search, lm_step, model_value, solve)

__version__ = "0.1.0"
