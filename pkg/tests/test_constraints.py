import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flowmpc.constraints import (AffineEquality, BallObstacle, Box, BurgersDynamics,
                                 BurgersStateBounds, ConstraintSet, ControlEnergyCost,
                                 CustomConstraint, Halfspace, LinearDynamics, LinearInequality,
                                 NotSerializableError, PathLengthCost, QuadraticCost, ZeroCost,
                                 burgers_grid, constraint_from_dict, constraints_from_list,
                                 cost_from_dict, dirichlet_pairs, make_burgers_dynamics,
                                 make_linear_dynamics, make_state_bounds_burgers, residual,
                                 rollout_linear)
from flowmpc.formats import validate

M, N = 6, 16


def _fd_jacobian(fun, x, h=1e-5):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def _simulate(u0, f, nu, dt, ds):
    # plain forward Euler with zero Dirichlet boundaries
    u = np.zeros_like(f)
    u[0, 1:-1] = u0[1:-1]
    for k in range(f.shape[0] - 1):
        for j in range(1, f.shape[1] - 1):
            adv = u[k, j] * (u[k, j + 1] - u[k, j - 1]) / (2 * ds)
            dif = (u[k, j + 1] - 2 * u[k, j] + u[k, j - 1]) / ds ** 2
            u[k + 1, j] = u[k, j] + dt * (-adv + nu * dif + f[k, j])
    return u


def _burgers_point(rng, nu):
    _, s, dt, ds = burgers_grid(M, N)
    f = 0.5 * rng.standard_normal((M, N))
    u = _simulate(0.3 * np.sin(np.pi * s), f, nu, dt, ds)
    return np.concatenate([u.ravel(), f.ravel()]), dt, ds


def _blocks(rng):
    d = 6
    return {
        "linear": (LinearInequality(rng.standard_normal((3, d)), rng.standard_normal(3)), d),
        "halfspace": (Halfspace(rng.standard_normal(d), 0.3), d),
        "box": (Box(-np.ones(d), np.ones(d)), d),
        "ball_obstacle": (BallObstacle([0.2, -0.1], 0.5, [[0, 1], [2, 3], [4, 5]]), d),
        "affine_equality": (AffineEquality(rng.standard_normal((2, d)), rng.standard_normal(2)), d),
        "linear_dynamics": (LinearDynamics(np.eye(2), np.ones((2, 1)), None, 2), d),
        "burgers_dynamics": (BurgersDynamics(M, N, 0.0, 0.02, *burgers_grid(M, N)[2:]), 2 * M * N),
        "burgers_state_bounds": (BurgersStateBounds(M, N), 2 * M * N),
    }


def test_halfspace_example():
    cs = ConstraintSet([Halfspace([1.0, 0.0], 1.0)])
    rep = cs.residual(np.zeros(2))
    assert rep.residual == -1.0 and rep.feasible


def test_ball_example():
    cs = ConstraintSet([BallObstacle([0.0, 0.0], 1.0)])
    rep = residual(cs, np.array([0.5, 0.0]))
    assert rep.residual == pytest.approx(0.5) and not rep.feasible
    assert rep.violated_indices == (0,)


def test_ball_center_is_nudged():
    b = BallObstacle([1.0, 1.0], 0.5)
    assert np.isfinite(b.jacobian(np.array([1.0, 1.0]))).all()
    assert b.values(np.array([1.0, 1.0]))[0] == pytest.approx(0.5, abs=1e-8)


def test_linear_dynamics_rollout_feasible():
    rng = np.random.default_rng(0)
    A = np.eye(4) + 0.1 * rng.standard_normal((4, 4))
    B, c = rng.standard_normal((4, 2)), rng.standard_normal(4)
    cs = make_linear_dynamics(A, B, c, 7, state_dim=4, action_dim=2)
    # iterate the map here rather than through the package helper
    s, parts = rng.standard_normal(4), []
    for a in rng.standard_normal((7, 2)):
        parts += [s, a]
        s = A @ s + B @ a + c
    x = np.concatenate(parts)
    assert abs(cs.residual(x).residual) <= 1e-12
    assert np.allclose(x, rollout_linear(A, B, c, parts[0], np.array(parts[1::2])))
    assert len(cs) == 2 * 6 * 4


def test_zero_dynamics_constant_state():
    cs = make_linear_dynamics(np.eye(3), np.zeros((3, 1)), None, 5)
    x = np.concatenate([np.r_[1.0, -2.0, 3.0, u] for u in np.random.default_rng(0).random(5)])
    assert cs.residual(x).residual == 0.0


def test_random_trajectory_infeasible():
    cs = make_linear_dynamics(np.eye(2), np.ones((2, 1)), None, 4)
    assert cs.residual(np.random.default_rng(1).standard_normal(12)).residual > 0


def test_dynamics_dimension_mismatch():
    with pytest.raises(ValueError):
        make_linear_dynamics(np.eye(2), np.ones((2, 1)), None, 3, state_dim=3)
    with pytest.raises(ValueError):
        make_linear_dynamics(np.eye(2), np.ones((3, 1)), None, 3)
    with pytest.raises(ValueError):
        make_linear_dynamics(np.eye(2), np.ones((2, 1)), None, 1)


def test_burgers_zero_feasible():
    cs = make_burgers_dynamics(M, N, 0.0, 0.02)
    assert cs.residual(np.zeros(2 * M * N)).residual <= 0.0


def test_burgers_simulated_feasible_and_unforced_infeasible():
    x, *_ = _burgers_point(np.random.default_rng(4), 0.01)
    cs = make_burgers_dynamics(M, N, 0.0, 0.02)
    assert cs.residual(x).residual <= 1e-12
    x0 = x.copy()
    x0[M * N:] = 0.0
    assert cs.residual(x0).residual > 1e-3


def test_burgers_degenerate_interval_is_equality():
    nu = 0.013
    x, dt, ds = _burgers_point(np.random.default_rng(5), 0.02)
    block = BurgersDynamics(M, N, nu, nu, dt, ds)
    u, f = x[:M * N].reshape(M, N), x[M * N:].reshape(M, N)
    c, l, r = u[:-1, 1:-1], u[:-1, :-2], u[:-1, 2:]
    defect = (u[1:, 1:-1] - c + dt * c * (r - l) / (2 * ds)
              - dt * nu * (r - 2 * c + l) / ds ** 2 - dt * f[:-1, 1:-1])
    assert np.max(block.values(x)) == pytest.approx(np.max(np.abs(defect)), rel=1e-10)


def test_burgers_grid_too_small():
    with pytest.raises(ValueError, match="too small"):
        make_burgers_dynamics(1, 16, 0.0, 0.02)
    with pytest.raises(ValueError, match="too small"):
        BurgersDynamics(6, 2, 0.0, 0.02, 0.1, 0.1)


def test_dirichlet_pairs():
    block = dirichlet_pairs(M, N)
    x = np.zeros(2 * M * N)
    assert np.max(block.values(x)) == 0.0
    x[N - 1] = 0.3
    assert np.max(block.values(x)) == pytest.approx(0.3)


def test_state_bounds_examples():
    m = 3  # knots at t = 0, 0.5, 1
    cs = make_state_bounds_burgers(m, N)
    assert len(cs) == 2 * m * N
    assert cs.residual(np.zeros(2 * m * N)).feasible
    x = np.zeros(2 * m * N)
    x[N:2 * N] = 0.8
    assert cs.residual(x).residual == pytest.approx(0.4)
    x = np.zeros(2 * m * N)
    x[:N] = 0.8
    rep = cs.residual(x)
    assert rep.residual == pytest.approx(0.0, abs=1e-15) and rep.feasible


@pytest.mark.parametrize("kind", list(_blocks(np.random.default_rng(0))))
def test_jacobians_match_finite_differences(kind):
    rng = np.random.default_rng(42)
    block, d = _blocks(rng)[kind]
    for _ in range(100):
        x = rng.standard_normal(d) * (0.3 if d > 10 else 1.0)
        J = block.jacobian(x)
        fd = _fd_jacobian(block.values, x)
        assert np.linalg.norm(J - fd) <= 1e-4 * max(1.0, np.linalg.norm(J))
        w = rng.random(block.size)
        assert np.allclose(block.vjp(x, w), J.T @ w, atol=1e-10)


@pytest.mark.parametrize("kind", list(_blocks(np.random.default_rng(0))))
def test_curvature_matches_finite_differences(kind):
    rng = np.random.default_rng(43)
    block, d = _blocks(rng)[kind]
    for _ in range(5):
        x = rng.standard_normal(d) * (0.3 if d > 10 else 1.0)
        w = rng.random(block.size)
        H = block.curvature(x, w)
        fd = _fd_jacobian(lambda z: block.vjp(z, w), x)
        assert np.linalg.norm(H - fd) <= 1e-4 * max(1.0, np.linalg.norm(H))
        assert np.allclose(H, H.T)


def test_set_curvature_none_for_custom():
    cs = ConstraintSet([Halfspace([1.0], 0.0), CustomConstraint(lambda x: x ** 2, lambda x: np.diag(2 * x), 1)])
    assert cs.curvature(np.ones(1), np.ones(2)) is None


@pytest.mark.parametrize("cost", [
    QuadraticCost([1.0, -1.0], 0.7, [0, 3]),
    QuadraticCost(np.zeros(4), 2.0),
    ControlEnergyCost([1, 2]),
    PathLengthCost([[0, 1], [2, 3]]),
    ZeroCost(),
])
def test_cost_gradients(cost):
    rng = np.random.default_rng(3)
    for _ in range(100):
        x = rng.standard_normal(4)
        g = cost.gradient(x)
        fd = _fd_jacobian(lambda z: np.array([cost.value(z)]), x)[0]
        assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))
        H = cost.hessian(x)
        if H is not None:
            assert np.allclose(H, _fd_jacobian(cost.gradient, x), atol=1e-6)


def test_equality_pair_is_absolute_defect():
    rng = np.random.default_rng(6)
    eq = AffineEquality(rng.standard_normal((3, 4)), rng.standard_normal(3))
    for _ in range(20):
        x = rng.standard_normal(4)
        v = eq.values(x)
        assert np.allclose(np.maximum(v[:3], v[3:]), np.abs(eq.defect(x)))


def test_nonfinite_components_flagged():
    cs = ConstraintSet([Halfspace([1.0, 0.0], 0.0, name="h"), Box(-1.0 * np.ones(2), np.ones(2))])
    rep = cs.residual(np.array([np.nan, 0.0]))
    assert rep.residual == float("inf")
    assert 0 in rep.nonfinite_indices and 0 in rep.violated_indices
    assert not rep.feasible


def test_empty_set():
    rep = ConstraintSet().residual(np.zeros(3))
    assert rep.residual == float("-inf") and rep.feasible
    assert not ConstraintSet()


def test_duplicate_names_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        ConstraintSet([Halfspace([1.0], 0.0, name="a"), Halfspace([2.0], 0.0, name="a")])


@settings(max_examples=200, deadline=None)
@given(x=arrays(float, 2, elements=st.floats(-5, 5)), tol=st.floats(1e-9, 1e-2))
def test_report_residual_iff_violations(x, tol):
    cs = ConstraintSet([Halfspace([1.0, 0.0], -1.0), BallObstacle([0.0, 0.0], 1.0)])
    rep = cs.residual(x, tol)
    assert (rep.residual <= tol) == (len(rep.violated_indices) == 0)


@settings(max_examples=100, deadline=None)
@given(x=arrays(float, 4, elements=st.floats(-1e3, 1e3)))
def test_residual_finite_for_finite_input(x):
    cs = ConstraintSet([AffineEquality(np.eye(4)[:2], np.zeros(2)), BallObstacle(np.zeros(2), 0.5, [[0, 1], [2, 3]])])
    assert np.isfinite(cs.residual(x).residual)


def test_serialization_round_trip():
    rng = np.random.default_rng(0)
    blocks = [b for b, _ in _blocks(rng).values()]
    for k, b in enumerate(blocks):
        b.name = f"b{k}"
    cs = ConstraintSet(blocks)
    items = json.loads(json.dumps(cs.to_list()))
    validate(items, "constraints")
    back = constraints_from_list(items)
    assert back.kinds == cs.kinds
    for b, c in zip(cs.blocks, back.blocks):
        x = rng.standard_normal(2 * M * N if b.kind.startswith("burgers") else 6)
        assert np.allclose(b.values(x), c.values(x))


def test_box_serializes_infinite_bounds():
    b = Box([-np.inf, 0.0], [1.0, np.inf])
    back = constraint_from_dict(json.loads(json.dumps(b.to_dict())))
    assert back.size == 2
    assert np.array_equal(back.values(np.array([2.0, -1.0])), [1.0, 1.0])


def test_cost_round_trip():
    for cost in (ZeroCost(), QuadraticCost([1.0], 2.0, [3]), ControlEnergyCost([0, 1]),
                 PathLengthCost([[0, 1], [2, 3]])):
        back = cost_from_dict(json.loads(json.dumps(cost.to_dict())))
        x = np.arange(4.0)
        assert back.value(x) == pytest.approx(cost.value(x))


def test_custom_not_serializable():
    c = CustomConstraint(lambda x: x, lambda x: np.eye(x.size), 2)
    with pytest.raises(NotSerializableError):
        c.to_dict()


def test_unknown_kind():
    with pytest.raises(ValueError):
        constraint_from_dict({"kind": "torus", "name": "t"})


def test_constructor_validation():
    with pytest.raises(ValueError):
        Halfspace([0.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        BallObstacle([0.0], -1.0)
    with pytest.raises(ValueError):
        Box([1.0], [0.0])
    with pytest.raises(ValueError):
        LinearInequality(np.eye(2), [1.0])
    with pytest.raises(ValueError):
        BurgersDynamics(M, N, 0.05, 0.01, 0.1, 0.1)
