import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowmpc.checks import random_projection_instance
from flowmpc.constraints import (BallObstacle, Box, ConstraintSet, CustomCost, Halfspace,
                                 LinearDynamics, LinearInequality, PathLengthCost, QuadraticCost, ZeroCost,
                                 make_burgers_dynamics)
from flowmpc.solvers import (SolverConfig, SolverDivergedError, StructureMismatchError,
                             SubproblemInstance, UnsupportedProjectionError, closed_form_applicable,
                             lbfgs, project, solve, solve_aug_lagrangian, solve_closed_form,
                             solve_projected_gradient)

AL = SolverConfig(method="augmented-lagrangian")
PG = SolverConfig(method="projected-gradient")
HALF = ConstraintSet([Halfspace([1.0, 0.0], 1.0)])
BALL = ConstraintSet([BallObstacle([0.0, 0.0], 1.0)])
BOX = ConstraintSet([Box([-1.0, -1.0], [1.0, 1.0])])


def _inst(anchor, cs, cost=None, weight=1.0):
    return SubproblemInstance(np.asarray(anchor, dtype=float), weight, cost or ZeroCost(), cs)


def test_closed_form_examples():
    assert np.allclose(solve_closed_form(_inst([2.0, 0.0], HALF)).solution, [1.0, 0.0])
    assert np.array_equal(solve_closed_form(_inst([0.5, 3.0], HALF)).solution, [0.5, 3.0])
    assert np.allclose(solve_closed_form(_inst([3.0, -0.5], BOX)).solution, [1.0, -0.5])


def test_closed_form_general_halfspace_formula():
    a, b, xb = np.array([1.0, 2.0]), 0.5, np.array([3.0, 1.0])
    expected = xb - (a @ xb - b) / (a @ a) * a
    cs = ConstraintSet([Halfspace(a, b)])
    assert np.allclose(solve_closed_form(_inst(xb, cs)).solution, expected, atol=1e-14)


def test_closed_form_structure_mismatch():
    with pytest.raises(StructureMismatchError):
        solve_closed_form(_inst([0.0, 0.0], BALL + BOX))
    with pytest.raises(StructureMismatchError):
        solve_closed_form(_inst([0.0, 0.0], HALF, PathLengthCost([[0], [1]])))
    with pytest.raises(StructureMismatchError):
        solve_closed_form(_inst(np.zeros(4), ConstraintSet([LinearDynamics(np.eye(1), np.eye(1), None, 2)])))
    assert not closed_form_applicable(_inst([0.0, 0.0], BALL + BOX))


def test_aug_lagrangian_halfspace_matches_closed_form():
    got = solve_aug_lagrangian(_inst([2.0, 0.0], HALF), AL)
    assert got.converged
    assert np.allclose(got.solution, [1.0, 0.0], atol=1e-6)


def test_aug_lagrangian_ball_radial_projection():
    anchor = np.array([0.3, -0.4])
    got = solve_aug_lagrangian(_inst(anchor, BALL), AL)
    assert got.converged
    assert np.allclose(got.solution, anchor / np.linalg.norm(anchor), atol=1e-5)


@pytest.mark.parametrize("w", [0.1, 1.0, 37.0])
def test_aug_lagrangian_unconstrained_quadratic(w):
    xb, g = np.array([1.0, -2.0, 0.5]), np.array([0.0, 3.0, -1.0])
    got = solve_aug_lagrangian(_inst(xb, ConstraintSet(), QuadraticCost(g), w), AL)
    assert np.allclose(got.solution, (w * xb + 2 * g) / (w + 2), atol=1e-8)


def test_projected_gradient_mirrors():
    assert np.allclose(solve_projected_gradient(_inst([2.0, 0.0], HALF), PG).solution, [1.0, 0.0], atol=1e-4)
    anchor = np.array([0.3, -0.4])
    assert np.allclose(solve_projected_gradient(_inst(anchor, BALL), PG).solution,
                       anchor / 0.5, atol=1e-4)
    xb, g, w = np.array([1.0, -2.0]), np.array([0.0, 3.0]), 2.0
    got = solve_projected_gradient(_inst(xb, ConstraintSet(), QuadraticCost(g), w), PG)
    assert np.allclose(got.solution, (w * xb + 2 * g) / (w + 2), atol=1e-4)


def test_projected_gradient_monotone_and_feasible():
    rng = np.random.default_rng(3)
    for _ in range(8):
        inst = random_projection_instance(rng, 4)
        res = solve_projected_gradient(inst, PG)
        f = np.array([h[0] for h in res.history])
        assert np.all(np.diff(f) <= 1e-12 * np.maximum(1.0, np.abs(f[:-1])))
        assert max(h[1] for h in res.history) <= 1e-12


def test_projected_gradient_unsupported():
    cs = ConstraintSet([LinearDynamics(np.eye(1), np.eye(1), None, 2)])
    with pytest.raises(UnsupportedProjectionError):
        solve_projected_gradient(_inst(np.zeros(4), cs), PG)


def test_cross_solver_agreement_and_kkt():
    rng = np.random.default_rng(0)
    for _ in range(15):
        inst = random_projection_instance(rng, int(rng.integers(2, 6)))
        cf = solve_closed_form(inst)
        pg = solve_projected_gradient(inst, PG)
        al = solve_aug_lagrangian(inst, AL)
        scale = max(1.0, abs(cf.objective))
        assert abs(pg.objective - cf.objective) <= 1e-4 * scale
        assert abs(al.objective - cf.objective) <= 1e-4 * scale
        assert al.converged
        assert al.kkt_residual <= 1e-3
        assert al.complementarity <= 1e-4
        assert np.all(al.multipliers >= 0)


@pytest.mark.parametrize("cs", [HALF, BALL, BOX], ids=["halfspace", "ball", "box"])
def test_weight_monotonicity(cs):
    anchor = np.array([2.0, 0.3]) if cs is not BALL else np.array([0.2, 0.1])
    cost = QuadraticCost([-3.0, 2.0], 1.0)
    proj = solve_closed_form(_inst(anchor, cs)).solution
    dists = [np.linalg.norm(solve(_inst(anchor, cs, cost, w), AL).solution - proj)
             for w in (1.0, 1e2, 1e4, 1e6)]
    assert all(a > b for a, b in zip(dists, dists[1:]))
    assert dists[-1] < 1e-4


def test_budget_exhaustion_never_claims_convergence():
    cfg = SolverConfig(method="augmented-lagrangian", max_outer=1, max_inner=1)
    res = solve_aug_lagrangian(_inst([0.1, 0.05], BALL), cfg)
    assert not res.converged
    assert res.residual > cfg.feas_tol


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_converged_implies_feasible(seed):
    rng = np.random.default_rng(seed)
    anchor = rng.normal(scale=0.7, size=2)
    res = solve_aug_lagrangian(_inst(anchor, BALL + ConstraintSet([Halfspace([0.0, 1.0], 0.8, name="h")])), AL)
    if res.converged:
        assert res.residual <= AL.feas_tol


def test_nonfinite_cost_raises():
    cost = CustomCost(lambda x: np.nan, lambda x: np.full_like(x, np.nan))
    with pytest.raises(SolverDivergedError):
        solve_aug_lagrangian(_inst([2.0, 0.0], HALF, cost), AL)
    with pytest.raises(SolverDivergedError):
        solve_projected_gradient(_inst([2.0, 0.0], HALF, cost), PG)


def test_warm_start_does_not_change_answer():
    cost = QuadraticCost([1.0, 2.0], 0.5)
    cold = solve_aug_lagrangian(_inst([0.2, 0.1], BALL, cost, 3.0), AL)
    inst = _inst([0.2, 0.1], BALL, cost, 3.0)
    inst.warm_start = np.array([-2.0, 1.0])
    warm = solve_aug_lagrangian(inst, AL)
    assert np.allclose(cold.solution, warm.solution, atol=1e-6)


def test_newton_and_lbfgs_inner_agree():
    # convex instance: both inner solvers must reach the unique minimizer
    rng = np.random.default_rng(1)
    G = rng.standard_normal((6, 5))
    cs = ConstraintSet([LinearInequality(G, np.ones(6)), Box(-np.ones(5), np.ones(5))])
    inst = _inst(2 * rng.standard_normal(5), cs, QuadraticCost(rng.standard_normal(5), 0.7), 3.0)
    newton = solve_aug_lagrangian(inst, SolverConfig(method="augmented-lagrangian", inner="newton"))
    quasi = solve_aug_lagrangian(inst, SolverConfig(method="augmented-lagrangian", inner="lbfgs"))
    assert newton.converged and quasi.converged
    assert np.allclose(newton.solution, quasi.solution, atol=1e-6)
    assert newton.kkt_residual <= 1e-6


def test_newton_burgers_subproblem_converges():
    cs = make_burgers_dynamics(4, 6, 0.0, 0.02)
    anchor = 0.2 * np.random.default_rng(1).standard_normal(48)
    inst = _inst(anchor, cs, QuadraticCost(np.zeros(24), 1.0, np.arange(24, 48)), 5.0)
    res = solve_aug_lagrangian(inst, SolverConfig(method="augmented-lagrangian", inner="newton"))
    assert res.converged and res.residual <= 1e-9 and res.kkt_residual <= 1e-3


def test_newton_requires_hessian():
    cost = CustomCost(lambda x: float(x @ x), lambda x: 2 * x)
    with pytest.raises(ValueError, match="Hessian"):
        solve_aug_lagrangian(_inst([2.0, 0.0], HALF, cost),
                             SolverConfig(method="augmented-lagrangian", inner="newton"))


def test_auto_dispatch():
    assert solve(_inst([2.0, 0.0], HALF)).method == "closed-form"
    assert solve(_inst([0.1, 0.0], BALL + BOX)).method == "augmented-lagrangian"


def test_project_helper():
    assert np.allclose(project([3.0, -0.5], BOX).solution, [1.0, -0.5])


def test_lbfgs_rosenbrock():
    def fg(z):
        x, y = z
        return (1 - x) ** 2 + 100 * (y - x * x) ** 2, np.array(
            [-2 * (1 - x) - 400 * x * (y - x * x), 200 * (y - x * x)])

    x, f, g, it, ok = lbfgs(fg, np.array([-1.2, 1.0]), 5000, 1e-10)
    assert ok and np.allclose(x, [1.0, 1.0], atol=1e-6)


@pytest.mark.parametrize("kwargs", [{"method": "simplex"}, {"feas_tol": 0.0}, {"growth": 1.0},
                                    {"update_every": 0}, {"inner": "bfgs"}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_instance_validation():
    with pytest.raises(ValueError):
        SubproblemInstance(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        SubproblemInstance(np.array([np.inf, 0.0]), 1.0)


@pytest.mark.parametrize("update_every", [8, None])
def test_multiplier_schedules_agree(update_every):
    assert SolverConfig().update_every == 8
    cfg = SolverConfig(method="augmented-lagrangian", update_every=update_every, inner="lbfgs")
    res = solve_aug_lagrangian(_inst([0.3, -0.4], BALL), cfg)
    assert res.converged
    assert np.allclose(res.solution, [0.6, -0.8], atol=1e-5)
