"""Chebyshev collocation models, time stepping and sensitivities."""

from .bioheat import (BioheatMesh, BioheatParams, ManufacturedBioheat, assemble_bioheat,
                      bioheat_mesh, default_bioheat_sensors, manufactured_bioheat_data)
from .cheb import ChebGrid, cheb_grid, cheb_interp_matrix
from .conduction import (ConductionMesh, ConductionParams, FaceCondition, assemble_conduction,
                         conduction_mesh, full_grid_sensors, isotropic_example,
                         orthotropic_example, reference_states)
from .inverse import ForwardModel, parameter_fit_problem
from .system import (ParamTerm, SemiDiscreteSystem, SensorLayout, TimeGrid, crank_nicolson,
                     observe, rk_cn_predictor_corrector, sensitivity_jacobian)
