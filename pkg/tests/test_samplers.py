import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowmpc.constraints import (BallObstacle, ConstraintSet, Halfspace, QuadraticCost, ZeroCost)
from flowmpc.samplers import (METHODS, InfeasibleSampleError, NonFiniteStateError, SamplerConfig,
                              control_objective, hardflow_step, run_sampler, sample_gradient_guidance,
                              sample_hardflow, sample_nominal, sample_posthoc,
                              sample_projection_all, sample_projection_late,
                              sample_projection_relaxed)
from flowmpc.schedulers import TimeGrid, get_scheduler, posterior_mean, posterior_noise
from flowmpc.solvers import SolverConfig, solve_closed_form, SubproblemInstance
from flowmpc.velocity import (CapabilityError, ConstantField, GaussianVelocityField, LinearField,
                              VelocityField)

HALF = ConstraintSet([Halfspace([1.0, 0.0], -1.0)])
BALL = ConstraintSet([BallObstacle([0.0, 0.0], 1.0)])


class NoGradientField(VelocityField):
    """Forward-only wrapper: any input-gradient request fails the test."""

    supports_vjp = True

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def dim(self):
        return self.inner.dim

    def velocity(self, t, x):
        self.calls += 1
        return self.inner.velocity(t, x)

    def input_vjp(self, t, x, w):
        raise AssertionError("input_vjp called")


def test_nominal_constant_field():
    run = sample_nominal(ConstantField([1.0, -2.0]), np.zeros(2), SamplerConfig(n_steps=7))
    assert np.allclose(run.terminal, [1.0, -2.0], atol=1e-14)
    assert run.states.shape == (8, 2) and run.n_steps == 7


def test_nominal_single_step(standard_field):
    x0 = np.array([0.4, -1.1])
    run = sample_nominal(standard_field, x0, SamplerConfig(n_steps=1))
    assert np.array_equal(run.terminal, x0 + standard_field.velocity(0.0, x0))


def test_nominal_nonfinite_raises():
    with pytest.raises(NonFiniteStateError):
        sample_nominal(ConstantField([np.inf]), np.zeros(1), SamplerConfig(n_steps=2))


def test_hardflow_unconstrained_matches_nominal(standard_field):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x0 = rng.standard_normal(2)
        cfg = SamplerConfig(n_steps=30, activation=0.0)
        a = sample_hardflow(standard_field, x0, ZeroCost(), ConstraintSet(), cfg)
        b = sample_nominal(standard_field, x0, cfg)
        assert np.max(np.abs(a.states - b.states)) <= 1e-9


def test_hardflow_halfspace_feasible(standard_field):
    rng = np.random.default_rng(1)
    cfg = SamplerConfig(n_steps=50, activation=0.5, lambda_oc=1.0)
    for x0 in rng.standard_normal((200, 2)):
        run = sample_hardflow(standard_field, x0, ZeroCost(), HALF, cfg)
        assert run.final_converged and run.residual <= 1e-6


def test_hardflow_early_steps_are_nominal(standard_field):
    x0 = np.array([2.0, 0.5])
    cfg = SamplerConfig(n_steps=20, activation=0.5)
    run = sample_hardflow(standard_field, x0, ZeroCost(), HALF, cfg)
    ref = sample_nominal(standard_field, x0, cfg)
    assert np.array_equal(run.states[:11], ref.states[:11])
    assert all(s is None for s in run.solutions[:10])
    assert all(s is not None for s in run.solutions[10:])


def test_final_step_always_active():
    cfg = SamplerConfig(n_steps=10, activation=1.0)
    assert [cfg.is_active(i) for i in range(10)] == [False] * 9 + [True]


def test_hardflow_never_calls_input_vjp(standard_field):
    f = NoGradientField(standard_field)
    run = sample_hardflow(f, np.array([0.5, 0.0]), QuadraticCost([2.0, 1.0], 0.3), BALL,
                          SamplerConfig(n_steps=10))
    assert f.calls > 0 and run.residual <= 1e-6


def test_final_step_failure_is_hard_error(standard_field):
    cfg = SamplerConfig(n_steps=4, solver=SolverConfig(method="augmented-lagrangian",
                                                       max_outer=1, max_inner=1))
    with pytest.raises(InfeasibleSampleError) as info:
        sample_hardflow(standard_field, np.array([0.05, 0.02]), ZeroCost(), BALL, cfg)
    assert info.value.run is not None and not info.value.run.final_converged


@pytest.mark.parametrize("sched", ["linear", "trig", "quadratic"])
def test_surrogate_reconstruction_identity(standard_field, sched):
    s = get_scheduler(sched)
    f = GaussianVelocityField(mu1=[1.0, -1.0], sigma1=0.8, scheduler=sched).fit()
    rng = np.random.default_rng(2)
    for t in (0.3, 0.6, 0.95):
        xb = rng.standard_normal(2)
        v = f.velocity(t, xb)
        a, b, _, _ = s.coefficients(t)
        back = a * posterior_mean(s, t, xb, v) + b * posterior_noise(s, t, xb, v)
        assert np.max(np.abs(back - xb)) <= 1e-9


def test_quadratic_penalty_equivalence():
    s = get_scheduler("linear")
    f = GaussianVelocityField(mu1=[0.5, 0.0], sigma1=1.2).fit()
    rng = np.random.default_rng(3)
    t, xb = 0.7, rng.standard_normal(2)
    v = f.velocity(t, xb)
    m, n = posterior_mean(s, t, xb, v), posterior_noise(s, t, xb, v)
    for _ in range(20):
        xh = rng.standard_normal(2) * 3
        x_next = t * xh + (1 - t) * n
        assert np.sum((x_next - xb) ** 2) == pytest.approx(t * t * np.sum((xh - m) ** 2), rel=1e-10)


def test_hardflow_step_weight(standard_field):
    s = get_scheduler("linear")
    xb = np.array([0.0, 1.0])
    x_next, anchor, res = hardflow_step(standard_field, s, 0.8, 0.1, xb, 2.0, ZeroCost(), HALF,
                                        SolverConfig())
    expected = solve_closed_form(SubproblemInstance(anchor, 2.0 * 0.64 / 0.1, ZeroCost(), HALF))
    assert np.allclose(res.solution, expected.solution)
    assert np.allclose(x_next, 0.8 * res.solution
                       + 0.2 * posterior_noise(s, 0.8, xb, standard_field.velocity(0.8, xb)))


@pytest.mark.parametrize("lam", [0.5, 1.0, 10.0])
def test_final_step_is_projection(standard_field, lam):
    run = sample_hardflow(standard_field, np.array([0.3, 0.2]), ZeroCost(), HALF,
                          SamplerConfig(n_steps=10, lambda_oc=lam))
    xb = run.predicted[-1]
    proj = xb - max(0.0, xb[0] + 1.0) * np.array([1.0, 0.0])
    assert np.array_equal(run.terminal, proj)


def test_controls_and_objective(standard_field):
    cost = QuadraticCost([1.0, 1.0], 0.5)
    run = sample_hardflow(standard_field, np.array([0.3, 0.2]), cost, HALF, SamplerConfig(n_steps=8))
    dt = np.diff(run.knots)
    u = (run.states[1:] - run.predicted) / dt[:, None]
    assert np.allclose(run.controls, u)
    J = cost.value(run.terminal) + run.lambda_oc * 0.5 * np.sum(np.sum(u * u, axis=1) * dt)
    assert run.objective == pytest.approx(J, rel=1e-12)
    assert control_objective(cost, run.terminal, u, run.knots, run.lambda_oc) == pytest.approx(J)


def test_posthoc_examples(standard_field):
    cfg = SamplerConfig(n_steps=20, method="posthoc-projection")
    feasible_start = np.array([-3.0, 0.0])
    nom = sample_nominal(standard_field, feasible_start, cfg)
    assert nom.terminal[0] <= -1.0
    run = sample_posthoc(standard_field, feasible_start, ZeroCost(), HALF, cfg)
    assert np.array_equal(run.terminal, nom.terminal)
    x0 = np.array([0.5, 1.0])
    nom = sample_nominal(standard_field, x0, cfg)
    run = sample_posthoc(standard_field, x0, ZeroCost(), HALF, cfg)
    assert np.allclose(run.terminal, [-1.0, nom.terminal[1]], atol=1e-14)


def test_projection_all_and_late(standard_field):
    x0 = np.array([0.8, -0.3])
    cfg = SamplerConfig(n_steps=10)
    for sampler, first in ((sample_projection_all, 0), (sample_projection_late, 5)):
        run = sampler(standard_field, x0, ZeroCost(), BALL, cfg)
        assert run.residual <= 1e-6 and run.final_converged
        assert all(s is None for s in run.solutions[:first])
        assert all(s is not None for s in run.solutions[first:])


def test_projection_relaxed(standard_field):
    x0 = np.array([0.1, 0.2])
    nominal = sample_nominal(standard_field, x0, SamplerConfig(n_steps=20))
    off = sample_projection_relaxed(standard_field, x0, ZeroCost(), BALL,
                                    SamplerConfig(n_steps=20, relaxed_iters=0))
    assert np.array_equal(off.terminal, nominal.terminal)
    on = sample_projection_relaxed(standard_field, x0, ZeroCost(), BALL,
                                   SamplerConfig(n_steps=20, relaxed_iters=40, relaxed_inner=50))
    assert on.final_converged and on.residual <= 1e-6


def test_guidance_zero_step_is_nominal(standard_field):
    x0 = np.array([0.4, 0.4])
    cfg = SamplerConfig(n_steps=15, method="gradient-guidance", guidance_step=0.0)
    run = sample_gradient_guidance(standard_field, x0, QuadraticCost([3.0, 0.0]), HALF, cfg)
    assert np.array_equal(run.terminal, sample_nominal(standard_field, x0, cfg).terminal)


def test_guidance_linear_field_hand_formula():
    A, c = np.array([[-0.5, 0.2], [0.1, -0.3]]), np.array([0.3, -0.1])
    g, eta, n = np.array([1.0, 2.0]), 0.05, 6
    cfg = SamplerConfig(n_steps=n, method="gradient-guidance", guidance_step=eta)
    run = sample_gradient_guidance(LinearField(A, c), np.array([0.2, -0.4]), QuadraticCost(g), None, cfg)
    x = np.array([0.2, -0.4])
    for i in range(n):
        t, dt = i / n, 1 / n
        P = np.eye(2) + (1 - t) * A
        m = P @ x + (1 - t) * c
        x = x - eta * P.T @ (2 * (m - g))
        x = x + (A @ x + c) * dt
    assert np.allclose(run.terminal, x, atol=1e-12)


def test_guidance_constant_field():
    cvec, g, eta = np.array([0.5, -0.5]), np.array([1.0, 0.0]), 0.1
    cfg = SamplerConfig(n_steps=1, method="gradient-guidance", guidance_step=eta)
    x0 = np.array([0.0, 0.0])
    run = sample_gradient_guidance(ConstantField(cvec), x0, QuadraticCost(g), None, cfg)
    grad = 2 * (x0 + cvec - g)
    assert np.allclose(run.terminal, x0 - eta * grad + cvec)


def test_guidance_needs_input_gradients():
    class Opaque(VelocityField):
        dim = 2

        def velocity(self, t, x):
            return -np.asarray(x)

    with pytest.raises(CapabilityError):
        sample_gradient_guidance(Opaque(), np.ones(2), QuadraticCost([0.0, 0.0]), None,
                                 SamplerConfig(n_steps=3, method="gradient-guidance"))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 16))
def test_all_methods_reduce_to_nominal(seed):
    f = GaussianVelocityField(mu1=[1.0, 0.0]).fit()
    x0 = np.random.default_rng(seed).standard_normal(2)
    for method in METHODS:
        cfg = SamplerConfig(n_steps=12, method=method)
        ref = sample_nominal(f, x0, cfg)
        run = run_sampler(f, x0, ZeroCost(), ConstraintSet(), cfg)
        assert np.max(np.abs(run.terminal - ref.terminal)) <= 1e-12


@pytest.mark.parametrize("kwargs", [{"method": "ddim"}, {"lambda_oc": 0.0}, {"activation": 1.5},
                                    {"relaxed_inner": 0}, {"guidance_step": -1.0},
                                    {"scheduler": "sigmoid"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


def test_custom_grid():
    cfg = SamplerConfig(grid=TimeGrid(np.array([0.0, 0.2, 0.7, 1.0])))
    assert cfg.n_steps == 3
    run = sample_nominal(ConstantField([1.0]), np.zeros(1), cfg)
    assert np.allclose(run.states[:, 0], [0.0, 0.2, 0.7, 1.0])


def test_point_input_required(standard_field):
    with pytest.raises(ValueError):
        sample_nominal(standard_field, np.zeros((2, 2)))
