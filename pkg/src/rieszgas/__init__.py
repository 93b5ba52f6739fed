"""Sampling and potential theory for confined Riesz and Coulomb gases."""
from .errors import (ConfigError, FieldTooWeakError, InitializationError, MethodUnavailableError,
                     NumericalError, RieszGasError, SingularityError, StepSizeError,
                     UnsupportedFieldError, UnsupportedModelError, UsageError)
from .kernel import (CustomField, GasModel, KernelSpec, PowerField, PrescribedField, RadialField,
                     TableField, canonical_order, energy_delta, energy_gradient, eval_kernel,
                     eval_kernel_gradient, quadratic, total_energy)
from .sampler import (AnnealSchedule, SamplerParams, euler_maruyama, init_configuration,
                      mala_step, metropolis_sweep, run_chain)
from .equilibrium import (Box, RadialDensity, UniformDensity, euler_lagrange_residual,
                          nice_partition, prescribed_field, radial_coulomb_potential,
                          riesz_potential_estimate, robin_constant, solve_radial_coulomb,
                          sphere_potential, uniform_ball_density, uniform_ball_radius)
from .measures import (DiscreteMeasure, RadialCDF, discrete_rate_I, empirical_measure,
                       fortet_mourier, max_radius, radial_cdf_of_density, radial_ks, wasserstein1)

__version__ = "0.1.0"
