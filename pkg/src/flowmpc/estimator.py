"""Scikit-learn style front end: fit a velocity field, transform noise into constrained samples."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .samplers import METHODS, SamplerConfig, run_sampler
from .schedulers import available_schedulers
from .solvers import SolverConfig
from .tasks import TASKS, get_task
from .validation import (as_generator, check_choice, check_count, check_fraction, check_points,
                         check_positive)
from .velocity import GaussianVelocityField, MLPVelocityField, VelocityField


class ConstrainedFlowSampler(TransformerMixin, BaseEstimator):
    """Sample a flow-matching model under the hard constraints of a task.

    ``fit(X)`` learns (or, with no data, builds) the velocity field; ``X`` are
    target samples. ``transform(X0)`` integrates source draws ``X0`` with the
    selected sampler and returns the terminal points. ``sample(n)`` draws the
    sources itself.

    Parameters
    ----------
    task : str
        Task name, see ``flowmpc.tasks.TASKS``.
    method : str
        Sampler name, see ``flowmpc.samplers.METHODS``.
    n_steps : int or None
        Euler steps; ``None`` uses the task default.
    lambda_oc : float
        Control-energy weight.
    activation : float
        Fraction of early steps left uncontrolled.
    scheduler : str
    velocity_field : VelocityField or None
        Use this field instead of building one. Unfitted estimators are
        cloned and fitted on ``X``.
    solver_method : str
        Subproblem solver, ``"auto"`` picks the closed form when it applies.
    random_state : int or None
    """

    def __init__(self, task="gauss2d/halfspace", method="hardflow", n_steps=None,
                 lambda_oc=1.0, activation=0.5, scheduler="linear", velocity_field=None,
                 solver_method="auto", random_state=0):
        self.task = task
        self.method = method
        self.n_steps = n_steps
        self.lambda_oc = lambda_oc
        self.activation = activation
        self.scheduler = scheduler
        self.velocity_field = velocity_field
        self.solver_method = solver_method
        self.random_state = random_state

    def _validate_params(self):
        check_choice(self.task, TASKS, "task")
        check_choice(self.method, METHODS, "method")
        check_choice(self.scheduler, available_schedulers(), "scheduler")
        check_positive(self.lambda_oc, "lambda_oc")
        check_fraction(self.activation, "activation")
        if self.n_steps is not None:
            check_count(self.n_steps, "n_steps", minimum=1)

    def _build_field(self, task, X) -> VelocityField:
        seed = 0 if self.random_state is None else int(self.random_state)
        vf = self.velocity_field
        if vf is not None:
            if hasattr(vf, "get_params") and not _is_fitted(vf):
                return clone(vf).fit(X)
            return vf
        if X is None:
            if task.analytic:
                return GaussianVelocityField(n_features=task.dim, scheduler=self.scheduler).fit()
            return task.default_field(seed)
        if task.analytic:
            return GaussianVelocityField(scheduler=self.scheduler).fit(X)
        cfg = task.train
        return MLPVelocityField(hidden=cfg.hidden, activation=cfg.activation, steps=cfg.steps,
                                batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                                scheduler=self.scheduler, random_state=seed).fit(X)

    def fit(self, X=None, y=None):
        self._validate_params()
        task = get_task(self.task)
        if X is not None:
            X = check_points(X, task.dim)
        self.task_ = task
        self.field_ = self._build_field(task, X)
        if self.field_.dim != task.dim:
            raise ValueError(f"velocity field has dimension {self.field_.dim}, task needs {task.dim}")
        self.config_ = SamplerConfig(
            n_steps=self.n_steps or task.n_steps, lambda_oc=float(self.lambda_oc),
            method=self.method, activation=float(self.activation), scheduler=self.scheduler,
            solver=SolverConfig(method=self.solver_method))
        self.n_features_in_ = task.dim
        return self

    def transform(self, X):
        """Terminal points reached from source draws ``X``; runs are kept in ``runs_``."""
        check_is_fitted(self, "field_")
        X = check_points(X, self.n_features_in_)
        task = self.task_
        self.runs_ = [run_sampler(self.field_, x0, task.cost, task.constraints, self.config_)
                      for x0 in X]
        if not self.runs_:
            return np.zeros((0, self.n_features_in_))
        return np.array([r.terminal for r in self.runs_])

    def predict(self, X):
        """Alias of :meth:`transform`."""
        return self.transform(X)

    def sample(self, n_samples: int = 1, random_state=None):
        check_is_fitted(self, "field_")
        n_samples = check_count(n_samples, "n_samples")
        rng = as_generator(self.random_state if random_state is None else random_state)
        return self.transform(self.task_.sample_source(rng, n_samples))

    def residuals(self, X) -> np.ndarray:
        """Constraint residual ``max_i h_i(x)`` of each row of ``X`` under the task."""
        check_is_fitted(self, "field_")
        X = check_points(X, self.n_features_in_)
        return np.array([self.task_.constraints.max_violation(x) for x in X])

    def score(self, X, y=None, tol: float = 1e-6) -> float:
        """Safety rate of the samples generated from source draws ``X``."""
        Y = self.transform(X)
        return float(np.mean(self.residuals(Y) <= tol)) if len(Y) else 1.0


def _is_fitted(est) -> bool:
    return any(k.endswith("_") and not k.startswith("__") for k in vars(est))
