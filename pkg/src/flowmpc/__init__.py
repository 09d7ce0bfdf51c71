"""Hard-constrained sampling for flow-matching models via receding-horizon control."""
from .constraints import ConstraintSet
from .estimator import ConstrainedFlowSampler
from .samplers import METHODS, SamplerConfig, run_sampler
from .schedulers import (DegenerateSchedulerError, Scheduler, TimeGrid, available_schedulers,
                         get_scheduler, lambda_of, posterior_mean, posterior_noise,
                         register_scheduler)
from .solvers import SolverConfig
from .tasks import get_task

__version__ = "0.1.0"
