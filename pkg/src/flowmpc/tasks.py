"""Desk-scale benchmark tasks.

``gauss2d/*``
    Standard normal in 2-D with the exact Gaussian field; a halfspace
    ``x_1 <= -1`` or a unit-disc keep-out region.
``planar-traj``
    12-step planar trajectories ``(p, p_des, a)`` following a first-order
    tracking model, two circular obstacles, and a terminal-goal cost.
``mini-burgers``
    Burgers states and forcing on a 6 x 16 grid with uncertain viscosity,
    time-varying state bounds, and a control-energy cost.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constraints import (BallObstacle, ConstraintSet, ControlEnergyCost, CostFn, Halfspace,
                          LinearDynamics, QuadraticCost, ZeroCost, burgers_grid,
                          burgers_state_bound, dirichlet_pairs, BurgersDynamics,
                          BurgersStateBounds)
from .velocity import GaussianVelocityField, TrainConfig, VelocityField, cfm_train

Dataset = Callable[[np.random.Generator, int], np.ndarray]


@dataclass
class TaskSpec:
    name: str
    dim: int
    constraints: ConstraintSet
    cost: CostFn
    data: Dataset
    n_steps: int = 50
    lambda_oc: float = 1.0
    analytic: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: tuple[str, ...] = ("safety_rate", "mean_residual", "mean_cost", "energy_distance",
                                "mean_time")
    info: dict = field(default_factory=dict)

    def sample_source(self, rng, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim))

    def pairs(self, rng, n: int):
        return self.sample_source(rng, n), self.data(rng, n)

    def feasible_reference(self, rng, n: int, max_draws: int = 10 ** 7, tol: float = 1e-6) -> np.ndarray:
        """Rejection sampling from the data distribution restricted to the feasible set."""
        kept, drawn = [], 0
        batch = max(4 * n, 1024)
        while sum(len(k) for k in kept) < n:
            if drawn >= max_draws:
                raise RuntimeError(f"rejection sampling for {self.name} exceeded {max_draws} draws")
            X = self.data(rng, batch)
            drawn += batch
            ok = np.array([self.constraints.max_violation(x) <= tol for x in X])
            kept.append(X[ok])
        return np.concatenate(kept)[:n]

    def training_pool(self, seed: int = 0, size: int = 20000) -> np.ndarray:
        return self.data(np.random.default_rng([seed, 7]), size)

    def train_network(self, cfg: TrainConfig | None = None, scheduler: str = "linear",
                      pool_size: int = 20000, callback=None) -> VelocityField:
        """Fit a network field on minibatches from a fixed pool of data draws."""
        cfg = cfg or self.train
        pool = self.training_pool(cfg.seed, pool_size)

        def dataset(rng, n):
            return rng.standard_normal((n, self.dim)), pool[rng.integers(0, pool.shape[0], n)]

        return cfm_train(dataset, scheduler, cfg, self.dim, callback=callback)

    def default_field(self, seed: int = 0, cfg: TrainConfig | None = None) -> VelocityField:
        """Exact field for analytic tasks, otherwise a network trained with the task defaults."""
        if self.analytic:
            return GaussianVelocityField(n_features=self.dim).fit()
        return self.train_network(cfg or TrainConfig(**{**self.train.__dict__, "seed": seed}))

    def extra_metrics(self, x) -> dict:
        fn = self.info.get("extra_metrics")
        return fn(np.asarray(x, dtype=float)) if fn is not None else {}


# ---------------------------------------------------------------------------
# gauss2d
# ---------------------------------------------------------------------------

def _gauss_data(rng, n):
    return rng.standard_normal((n, 2))


def gauss2d(variant: str = "halfspace") -> TaskSpec:
    if variant == "halfspace":
        cs = ConstraintSet([Halfspace([1.0, 0.0], -1.0, name="halfspace")])
    elif variant in ("ball", "ball-obstacle"):
        cs = ConstraintSet([BallObstacle([0.0, 0.0], 1.0, name="obstacle")])
        variant = "ball-obstacle"
    elif variant == "none":
        cs = ConstraintSet()
    else:
        raise ValueError(f"unknown gauss2d variant {variant!r}")
    return TaskSpec(f"gauss2d/{variant}", 2, cs, ZeroCost(), _gauss_data, n_steps=50,
                    analytic=True, train=TrainConfig(hidden=(64, 64), steps=3000),
                    info={"variant": variant})


# ---------------------------------------------------------------------------
# planar-traj
# ---------------------------------------------------------------------------

PLANAR_HORIZON = 12
PLANAR_DT = 0.1
PLANAR_GAIN = 4.0
PLANAR_GOAL = np.array([1.0, 1.0])
PLANAR_OBSTACLES = ((np.array([0.5, 0.5]), 0.16), (np.array([0.85, 0.45]), 0.1))


def planar_dynamics(dt: float = PLANAR_DT, gain: float = PLANAR_GAIN):
    """State ``(p, p_des)``: positions track the desired point, actions move it."""
    I = np.eye(2)
    A = np.block([[(1 - gain * dt) * I, gain * dt * I], [np.zeros((2, 2)), I]])
    B = np.vstack([np.zeros((2, 2)), dt * I])
    return A, B, np.zeros(4)


def planar_data(rng, n, horizon: int = PLANAR_HORIZON):
    A, B, c = planar_dynamics()
    tau = np.linspace(0.0, 1.0, horizon)
    start = 0.03 * rng.standard_normal((n, 2))
    goal = PLANAR_GOAL + 0.03 * rng.standard_normal((n, 2))
    side = rng.choice([-1.0, 1.0], size=(n, 1))
    offset = side * (0.48 + 0.05 * rng.standard_normal((n, 1))) * np.array([-1.0, 1.0]) / np.sqrt(2)
    mid = 0.5 * (start + goal) + offset
    # quadratic Bezier path of desired points, arriving slightly early
    s = np.minimum(1.0, tau * 1.15)[None, :, None]
    pdes = ((1 - s) ** 2 * start[:, None] + 2 * s * (1 - s) * mid[:, None]
            + s ** 2 * goal[:, None])
    actions = np.zeros((n, horizon, 2))
    actions[:, :-1] = np.diff(pdes, axis=1) / PLANAR_DT
    actions[:, -1] = actions[:, -2]
    out = np.empty((n, horizon, 6))
    state = np.concatenate([start, start], axis=1)
    for j in range(horizon):
        out[:, j, :4] = state
        out[:, j, 4:] = actions[:, j]
        state = state @ A.T + actions[:, j] @ B.T + c
    return out.reshape(n, horizon * 6)


def fit_linear_dynamics(trajs, state_dim: int, action_dim: int):
    """Least-squares ``(A, B, c)`` from flattened ``(s_0, a_0, ..., s_{H-1}, a_{H-1})`` rows."""
    trajs = np.atleast_2d(trajs)
    step = state_dim + action_dim
    H = trajs.shape[1] // step
    T = trajs.reshape(trajs.shape[0], H, step)
    S, Acts = T[:, :-1, :state_dim], T[:, :-1, state_dim:]
    S_next = T[:, 1:, :state_dim]
    X = np.concatenate([S, Acts, np.ones(S.shape[:2] + (1,))], axis=2).reshape(-1, step + 1)
    Y = S_next.reshape(-1, state_dim)
    W, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return W[:state_dim].T, W[state_dim:step].T, W[step]


def planar_position_indices(horizon: int = PLANAR_HORIZON) -> np.ndarray:
    return np.array([[6 * k, 6 * k + 1] for k in range(horizon)])


def planar_path_length(x, horizon: int = PLANAR_HORIZON) -> dict:
    pos = np.asarray(x)[planar_position_indices(horizon)]
    return {"path_length": float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))}


def planar_traj(fit_samples: int = 2000, seed: int = 1234) -> TaskSpec:
    A, B, c = fit_linear_dynamics(planar_data(np.random.default_rng(seed), fit_samples), 4, 2)
    pos = planar_position_indices()
    blocks = [LinearDynamics(A, B, c, PLANAR_HORIZON, name="dynamics")]
    for k, (center, radius) in enumerate(PLANAR_OBSTACLES):
        blocks.append(BallObstacle(center, radius, pos, name=f"obstacle{k}"))
    cost = QuadraticCost(PLANAR_GOAL, 1.0, pos[-1])
    return TaskSpec("planar-traj", 6 * PLANAR_HORIZON, ConstraintSet(blocks), cost, planar_data,
                    n_steps=10, train=TrainConfig(hidden=(128, 128), steps=3000, batch_size=256),
                    info={"horizon": PLANAR_HORIZON, "A": A.tolist(), "B": B.tolist(),
                          "c": c.tolist(), "extra_metrics": planar_path_length})


# ---------------------------------------------------------------------------
# mini-burgers
# ---------------------------------------------------------------------------

BURGERS_M, BURGERS_N = 6, 16
BURGERS_NU = (0.0, 0.02)


def burgers_forcing(u, nu, dt, ds):
    """Forcing rows that make ``u`` an exact forward-Euler solution with viscosity ``nu``."""
    m, n = u.shape
    f = np.zeros_like(u)
    c, left, right = u[:-1, 1:-1], u[:-1, :-2], u[:-1, 2:]
    d1 = (right - left) / (2 * ds)
    d2 = (right - 2 * c + left) / ds ** 2
    f[:-1, 1:-1] = (u[1:, 1:-1] - c) / dt + c * d1 - nu * d2
    return f


def burgers_simulate(u0, f, nu, dt, ds):
    """Forward-Euler rollout with Dirichlet zero boundaries."""
    m = f.shape[0]
    u = np.zeros_like(f)
    u[0] = u0
    u[0, 0] = u[0, -1] = 0.0
    for k in range(m - 1):
        c, left, right = u[k, 1:-1], u[k, :-2], u[k, 2:]
        d1 = (right - left) / (2 * ds)
        d2 = (right - 2 * c + left) / ds ** 2
        u[k + 1, 1:-1] = c + dt * (-c * d1 + nu * d2 + f[k, 1:-1])
    return u


def burgers_data(rng, n, m: int = BURGERS_M, n_space: int = BURGERS_N):
    t, s, dt, ds = burgers_grid(m, n_space)
    nu = 0.5 * sum(BURGERS_NU)
    modes = np.sin(np.pi * np.outer(np.arange(1, 4), s))  # (3, n_space)
    bound = burgers_state_bound(t)[None, :, None]
    a0 = rng.standard_normal((n, 1, 3)) / np.arange(1, 4)
    a1 = rng.standard_normal((n, 1, 3)) / np.arange(1, 4)
    coef = (1 - t)[None, :, None] * a0 + t[None, :, None] * a1  # initial-to-terminal blend
    u = coef @ modes
    peak = np.abs(u).max(axis=2, keepdims=True)
    u = u * np.minimum(1.0, 0.9 * bound / np.maximum(peak, 1e-12))
    f = np.stack([burgers_forcing(uk, nu, dt, ds) for uk in u])
    return np.concatenate([u.reshape(n, -1), f.reshape(n, -1)], axis=1)


def mini_burgers(m: int = BURGERS_M, n: int = BURGERS_N) -> TaskSpec:
    _, _, dt, ds = burgers_grid(m, n)
    blocks = [BurgersDynamics(m, n, *BURGERS_NU, dt, ds, name="dynamics"),
              dirichlet_pairs(m, n, name="boundary"),
              BurgersStateBounds(m, n, name="state_bounds")]
    cost = ControlEnergyCost(np.arange(m * n, 2 * m * n))
    return TaskSpec("mini-burgers", 2 * m * n, ConstraintSet(blocks), cost,
                    lambda rng, k: burgers_data(rng, k, m, n), n_steps=10,
                    train=TrainConfig(hidden=(128, 128), steps=3000, batch_size=256),
                    info={"m": m, "n": n, "nu": list(BURGERS_NU)})


TASKS = {
    "gauss2d": lambda: gauss2d("halfspace"),
    "gauss2d/halfspace": lambda: gauss2d("halfspace"),
    "gauss2d/ball-obstacle": lambda: gauss2d("ball-obstacle"),
    "gauss2d/ball": lambda: gauss2d("ball-obstacle"),
    "gauss2d/none": lambda: gauss2d("none"),
    "planar-traj": planar_traj,
    "mini-burgers": mini_burgers,
}


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]()
    except KeyError:
        raise ValueError(f"unknown task {name!r}; available: {sorted(TASKS)}") from None
