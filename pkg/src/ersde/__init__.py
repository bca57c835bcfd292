"""Extended reverse-time SDE samplers for diffusion models, with analytic test oracles."""

from .errors import (AdmissibilityError, DividedDifferenceError, ErsdeError, ParameterError,
                     SolverError)
from .noise_scale import NoiseScaleFn, catalogue, check_admissible, fei, fei_curve, parse_phi
from .predictors import (ConstantPredictor, DataPredictor, GaussianMixtureOracle,
                         MixturePredictor, convert_prediction, gaussian_posterior_mean,
                         vp_predict)
from .schedules import (CosineVPSchedule, EDMVPSchedule, LinearVPSchedule, TimeGrid,
                        VESchedule, edm_step_grid, edm_to_vp, make_schedule,
                        uniform_time_grid)
from .solvers import SamplerConfig, SampleResult, sample, step, step_coefficients

__version__ = "0.1.0"
