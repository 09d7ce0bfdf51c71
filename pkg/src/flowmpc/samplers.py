"""Euler samplers: nominal, receding-horizon constrained (HardFlow), and baselines.

Every sampler returns a `SampleRun` with the full state trajectory. The
implicit control of a run is ``u_i = (x_{i+1} - xbar_{i+1}) / dt_i`` where
``xbar_{i+1} = x_i + v(t_i, x_i) dt_i`` is the uncontrolled prediction, so
the control-energy objective can be evaluated for every method.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constraints import ConstraintSet, CostFn, FeasibilityReport, ZeroCost
from .schedulers import Scheduler, TimeGrid, get_scheduler, posterior_mean, posterior_noise
from .solvers import (SolverConfig, SolverResult, SubproblemInstance, lbfgs, project,
                      solve)
from .velocity import VelocityField, input_vjp

METHODS = ("nominal", "hardflow", "posthoc-projection", "projection-all", "projection-late",
           "projection-relaxed", "gradient-guidance")


class InfeasibleSampleError(RuntimeError):
    """The final constrained subproblem did not converge; the sample is invalid."""

    def __init__(self, message, run=None):
        super().__init__(message)
        self.run = run


class NonFiniteStateError(FloatingPointError):
    pass


@dataclass
class SamplerConfig:
    """Sampling settings shared by all methods.

    Parameters
    ----------
    n_steps : int
        Number of uniform Euler steps (ignored when `grid` is given).
    lambda_oc : float
        Control-energy weight.
    method : str
        One of `METHODS`.
    activation : float
        Fraction of steps skipped before constrained subproblems start. The
        final step is always active.
    guidance_step : float
        Step size of the posterior-mean gradient update (gradient guidance).
    penalty_weight : float
        Weight of the quadratic constraint penalty inside the guidance cost.
    relaxed_iters : int
        Augmented Lagrangian iterations per step (projection-relaxed).
    relaxed_inner : int
        Inner steps between multiplier updates (projection-relaxed).
    guidance_with_projection : bool
        Add cost-only gradient guidance to the projection baselines.
    """

    n_steps: int = 50
    lambda_oc: float = 1.0
    method: str = "hardflow"
    activation: float = 0.5
    scheduler: str = "linear"
    solver: SolverConfig = field(default_factory=SolverConfig)
    guidance_step: float = 0.1
    penalty_weight: float = 10.0
    relaxed_iters: int = 5
    relaxed_inner: int = 8
    guidance_with_projection: bool = False
    warm_start: bool = True
    grid: TimeGrid | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not self.lambda_oc > 0:
            raise ValueError("lambda_oc must be positive")
        if not 0.0 <= self.activation <= 1.0:
            raise ValueError("activation fraction must lie in [0, 1]")
        if self.relaxed_iters < 0 or self.relaxed_inner < 1:
            raise ValueError("relaxed_iters >= 0 and relaxed_inner >= 1 required")
        if self.guidance_step < 0 or self.penalty_weight < 0:
            raise ValueError("guidance_step and penalty_weight must be nonnegative")
        if self.grid is None:
            self.grid = TimeGrid.uniform(self.n_steps)
        else:
            self.n_steps = self.grid.n_steps
        get_scheduler(self.scheduler)

    def is_active(self, i: int) -> bool:
        n = self.grid.n_steps
        return i >= self.activation * n or i == n - 1


@dataclass
class SampleRun:
    method: str
    x0: np.ndarray
    states: np.ndarray
    predicted: np.ndarray
    knots: np.ndarray
    anchors: list = field(default_factory=list)
    solutions: list = field(default_factory=list)
    solver_results: list = field(default_factory=list)
    report: FeasibilityReport | None = None
    cost: float = 0.0
    objective: float = 0.0
    lambda_oc: float = 1.0
    wall_time: float = 0.0
    final_converged: bool = True

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    @property
    def controls(self) -> np.ndarray:
        dt = np.diff(self.knots)[:, None]
        return (self.states[1:] - self.predicted) / dt

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def residual(self) -> float:
        return self.report.residual if self.report is not None else float("-inf")


def control_objective(cost: CostFn, terminal, controls, knots, lambda_oc) -> float:
    """``C(x_N) + lambda_oc * sum_i 0.5 ||u_i||^2 dt_i``."""
    dt = np.diff(knots)
    energy = 0.5 * float(np.sum(np.sum(np.asarray(controls) ** 2, axis=1) * dt))
    return cost.value(terminal) + lambda_oc * energy


def _check(x, i):
    if not np.all(np.isfinite(x)):
        raise NonFiniteStateError(f"non-finite state after step {i}")
    return x


def _finalize(run: SampleRun, cost: CostFn, constraints: ConstraintSet, t0: float) -> SampleRun:
    run.report = constraints.residual(run.terminal)
    run.cost = cost.value(run.terminal)
    run.objective = control_objective(cost, run.terminal, run.controls, run.knots, run.lambda_oc)
    run.wall_time = time.perf_counter() - t0
    return run


def _setup(field_: VelocityField, x0, cfg: SamplerConfig):
    x0 = np.array(x0, dtype=float)
    if x0.ndim != 1:
        raise ValueError("x0 must be a single point")
    return x0, get_scheduler(cfg.scheduler), cfg.grid


def sample_nominal(field_: VelocityField, x0, cfg: SamplerConfig | None = None,
                   cost: CostFn | None = None, constraints: ConstraintSet | None = None) -> SampleRun:
    """Uncontrolled Euler integration ``x_{i+1} = x_i + v(t_i, x_i) dt_i``."""
    cfg = cfg or SamplerConfig(method="nominal")
    cost = cost or ZeroCost()
    constraints = constraints or ConstraintSet()
    t_start = time.perf_counter()
    x, _, grid = _setup(field_, x0, cfg)
    knots, dts = grid.knots, grid.steps
    states = [x]
    for i in range(grid.n_steps):
        x = _check(x + field_.velocity(knots[i], x) * dts[i], i)
        states.append(x)
    states = np.asarray(states)
    run = SampleRun("nominal", states[0].copy(), states, states[1:].copy(), knots,
                    lambda_oc=cfg.lambda_oc)
    return _finalize(run, cost, constraints, t_start)


def sample_nominal_batch(field_: VelocityField, X0, grid: TimeGrid) -> np.ndarray:
    """Terminal points of the nominal sampler for a batch of starting points."""
    X = np.array(X0, dtype=float)
    for t, dt in zip(grid.knots[:-1], grid.steps):
        X = X + field_.velocity(t, X) * dt
    return X


def nominal_marginals(field_: VelocityField, X0, grid: TimeGrid) -> np.ndarray:
    """All intermediate states ``(N+1, n, d)`` of the nominal sampler."""
    X = np.array(X0, dtype=float)
    out = [X]
    for t, dt in zip(grid.knots[:-1], grid.steps):
        X = X + field_.velocity(t, X) * dt
        out.append(X)
    return np.asarray(out)


def hardflow_step(field_: VelocityField, sched: Scheduler, t_next: float, dt: float,
                  x_pred: np.ndarray, lambda_oc: float, cost: CostFn,
                  constraints: ConstraintSet, solver_cfg: SolverConfig, warm_start=None):
    """One active step: anchor, subproblem, and surrogate reconstruction.

    Returns ``(x_next, anchor, result)``. Only forward evaluations of the field
    are used.
    """
    a, b, _, _ = sched.coefficients(t_next)
    if a == 0.0:
        raise ValueError(f"alpha({t_next}) = 0 gives a zero subproblem weight")
    v_pred = field_.velocity(t_next, x_pred)
    anchor = posterior_mean(sched, t_next, x_pred, v_pred)
    noise = posterior_noise(sched, t_next, x_pred, v_pred)
    inst = SubproblemInstance(anchor, lambda_oc * a * a / dt, cost, constraints, warm_start)
    result = solve(inst, solver_cfg)
    x_next = a * result.solution + b * noise if b != 0.0 else a * result.solution
    return x_next, anchor, result


def sample_hardflow(field_: VelocityField, x0, cost: CostFn | None = None,
                    constraints: ConstraintSet | None = None,
                    cfg: SamplerConfig | None = None) -> SampleRun:
    """Receding-horizon constrained sampling.

    Inactive steps are plain Euler steps. On an active step the uncontrolled
    prediction is mapped to its terminal estimate, the anchored subproblem is
    solved, and the next state is rebuilt from the solution and the source
    estimate of the prediction. Raises `InfeasibleSampleError` if the last
    subproblem fails to converge.
    """
    cfg = cfg or SamplerConfig()
    cost = cost or ZeroCost()
    constraints = constraints or ConstraintSet()
    t_start = time.perf_counter()
    x, sched, grid = _setup(field_, x0, cfg)
    knots, dts = grid.knots, grid.steps
    n = grid.n_steps
    states, predicted, anchors, solutions, results = [x], [], [], [], []
    warm = None
    final_ok = True
    for i in range(n):
        x_pred = _check(x + field_.velocity(knots[i], x) * dts[i], i)
        predicted.append(x_pred)
        if cfg.is_active(i):
            x, anchor, res = hardflow_step(field_, sched, knots[i + 1], dts[i], x_pred,
                                           cfg.lambda_oc, cost, constraints, cfg.solver,
                                           warm if cfg.warm_start else None)
            warm = res.solution
            anchors.append(anchor)
            solutions.append(res.solution)
            results.append(res)
            if i == n - 1:
                final_ok = res.converged
        else:
            x = x_pred
            anchors.append(None)
            solutions.append(None)
            results.append(None)
        states.append(_check(x, i))
    run = SampleRun("hardflow", states[0].copy(), np.asarray(states), np.asarray(predicted), knots,
                    anchors, solutions, results, lambda_oc=cfg.lambda_oc, final_converged=final_ok)
    _finalize(run, cost, constraints, t_start)
    if not final_ok:
        last = results[-1]
        raise InfeasibleSampleError(
            f"final subproblem did not converge (residual {last.residual:.3e}, "
            f"{last.iterations} iterations)", run)
    return run


def _guidance_gradient(field_, sched, t, x, cost: CostFn, constraints: ConstraintSet | None,
                       penalty_weight: float) -> np.ndarray:
    """Gradient of ``C_hat(M_t(x))`` with respect to ``x``.

    ``C_hat = C + penalty_weight * sum_i max(0, h_i)^2``.
    """
    a, b, ad, bd = sched.coefficients(t)
    v = field_.velocity(t, x)
    m = posterior_mean(sched, t, x, v)
    g = cost.gradient(m)
    if constraints and penalty_weight > 0:
        g = g + 2.0 * penalty_weight * constraints.vjp(m, np.maximum(0.0, constraints.values(m)))
    if b == 0.0:
        return g
    lam = a * bd - ad * b
    return (bd * g - b * input_vjp(field_, t, x, g)) / lam


def sample_gradient_guidance(field_: VelocityField, x0, cost: CostFn | None = None,
                             constraints: ConstraintSet | None = None,
                             cfg: SamplerConfig | None = None) -> SampleRun:
    """Training-free guidance on the cost evaluated at the posterior mean.

    At step ``i`` the state moves by ``-eta * grad C_hat(M_{t_i}(x_i))`` and the
    Euler step is then taken from the guided point.
    """
    cfg = cfg or SamplerConfig(method="gradient-guidance")
    cost = cost or ZeroCost()
    constraints = constraints or ConstraintSet()
    t_start = time.perf_counter()
    x, sched, grid = _setup(field_, x0, cfg)
    knots, dts = grid.knots, grid.steps
    states, predicted = [x], []
    for i in range(grid.n_steps):
        predicted.append(x + field_.velocity(knots[i], x) * dts[i])
        if cfg.guidance_step > 0:
            x = x - cfg.guidance_step * _guidance_gradient(
                field_, sched, knots[i], x, cost, constraints, cfg.penalty_weight)
        x = _check(x + field_.velocity(knots[i], x) * dts[i], i)
        states.append(x)
    run = SampleRun("gradient-guidance", states[0].copy(), np.asarray(states),
                    np.asarray(predicted), knots, lambda_oc=cfg.lambda_oc)
    return _finalize(run, cost, constraints, t_start)


def _projection_sampler(name: str, should_project: Callable[[int, int], bool]):
    def sampler(field_: VelocityField, x0, cost: CostFn | None = None,
                constraints: ConstraintSet | None = None,
                cfg: SamplerConfig | None = None) -> SampleRun:
        cfg = cfg or SamplerConfig(method=name)
        cost = cost or ZeroCost()
        constraints = constraints or ConstraintSet()
        t_start = time.perf_counter()
        x, sched, grid = _setup(field_, x0, cfg)
        knots, dts = grid.knots, grid.steps
        n = grid.n_steps
        guided = cfg.guidance_with_projection and cfg.guidance_step > 0
        states, predicted, solutions, results = [x], [], [], []
        warm = None
        final_ok = True
        for i in range(n):
            predicted.append(x + field_.velocity(knots[i], x) * dts[i])
            if guided:
                x = x - cfg.guidance_step * _guidance_gradient(field_, sched, knots[i], x, cost,
                                                               None, 0.0)
                x = x + field_.velocity(knots[i], x) * dts[i]
            else:
                x = predicted[-1]
            x = _check(x, i)
            if constraints and should_project(i, n):
                res = project(x, constraints, cfg.solver, warm if cfg.warm_start else None)
                x = res.solution
                warm = x
                solutions.append(x)
                results.append(res)
                if i == n - 1:
                    final_ok = res.converged
            else:
                solutions.append(None)
                results.append(None)
            states.append(x)
        run = SampleRun(name, states[0].copy(), np.asarray(states), np.asarray(predicted), knots,
                        [None] * n, solutions, results, lambda_oc=cfg.lambda_oc,
                        final_converged=final_ok)
        return _finalize(run, cost, constraints, t_start)

    sampler.__name__ = "sample_" + name.replace("-", "_")
    sampler.__doc__ = f"Euler sampling with Euclidean projection ({name})."
    return sampler


sample_projection_all = _projection_sampler("projection-all", lambda i, n: True)
sample_projection_late = _projection_sampler("projection-late", lambda i, n: i >= n / 2)
sample_posthoc = _projection_sampler("posthoc-projection", lambda i, n: i == n - 1)


def sample_projection_relaxed(field_: VelocityField, x0, cost: CostFn | None = None,
                              constraints: ConstraintSet | None = None,
                              cfg: SamplerConfig | None = None) -> SampleRun:
    """A fixed number of augmented Lagrangian iterations after every Euler step.

    Multipliers and penalty persist across sampling steps, so the constraints
    are only loosely enforced early on while the multipliers are still small.
    """
    cfg = cfg or SamplerConfig(method="projection-relaxed")
    cost = cost or ZeroCost()
    constraints = constraints or ConstraintSet()
    t_start = time.perf_counter()
    x, sched, grid = _setup(field_, x0, cfg)
    knots, dts = grid.knots, grid.steps
    n = grid.n_steps
    scfg = cfg.solver
    mu = np.zeros(len(constraints))
    rho = scfg.initial_penalty or 10.0
    prev_viol = math.inf
    guided = cfg.guidance_with_projection and cfg.guidance_step > 0
    states, predicted = [x], []
    for i in range(n):
        predicted.append(x + field_.velocity(knots[i], x) * dts[i])
        if guided:
            x = x - cfg.guidance_step * _guidance_gradient(field_, sched, knots[i], x, cost, None, 0.0)
            x = x + field_.velocity(knots[i], x) * dts[i]
        else:
            x = predicted[-1]
        x = _check(x, i)
        if constraints and cfg.relaxed_iters > 0:
            target = x.copy()

            def merit(z):
                h = constraints.values(z)
                shifted = np.maximum(0.0, mu + rho * h)
                r = z - target
                val = 0.5 * r @ r + (shifted @ shifted - mu @ mu) / (2 * rho)
                return val, r + constraints.vjp(z, shifted)

            for _ in range(cfg.relaxed_iters):
                x, *_ = lbfgs(merit, x, cfg.relaxed_inner, scfg.inner_tol, scfg.memory)
                h = constraints.values(x)
                viol = float(max(0.0, h.max()))
                mu = np.maximum(0.0, mu + rho * h)
                if viol > 0.25 * prev_viol:
                    rho = min(rho * scfg.growth, scfg.max_penalty)
                prev_viol = viol
            x = _check(x, i)
        states.append(x)
    run = SampleRun("projection-relaxed", states[0].copy(), np.asarray(states),
                    np.asarray(predicted), knots, lambda_oc=cfg.lambda_oc)
    run = _finalize(run, cost, constraints, t_start)
    run.final_converged = run.report.residual <= scfg.feas_tol
    return run


SAMPLERS = {
    "nominal": lambda f, x0, cost, cs, cfg: sample_nominal(f, x0, cfg, cost, cs),
    "hardflow": sample_hardflow,
    "posthoc-projection": sample_posthoc,
    "projection-all": sample_projection_all,
    "projection-late": sample_projection_late,
    "projection-relaxed": sample_projection_relaxed,
    "gradient-guidance": sample_gradient_guidance,
}


def run_sampler(field_: VelocityField, x0, cost: CostFn | None = None,
                constraints: ConstraintSet | None = None,
                cfg: SamplerConfig | None = None) -> SampleRun:
    """Dispatch on ``cfg.method``."""
    cfg = cfg or SamplerConfig()
    return SAMPLERS[cfg.method](field_, x0, cost, constraints, cfg)
