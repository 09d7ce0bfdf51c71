"""Affine probability-path schedulers and posterior operators.

A scheduler defines the interpolation ``X_t = alpha(t) X_1 + beta(t) X_0``.
Given the marginal velocity ``v`` at a point ``x``, the posterior means of
the two endpoints are available in closed form::

    M_t(x) = (beta'(t) x - beta(t) v) / Lambda(t)      # E[X_1 | X_t = x]
    N_t(x) = (-alpha'(t) x + alpha(t) v) / Lambda(t)   # E[X_0 | X_t = x]

with ``Lambda(t) = alpha(t) beta'(t) - alpha'(t) beta(t)``, and they satisfy
``x = alpha(t) M_t(x) + beta(t) N_t(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LAMBDA_EPS = 1e-12


class DegenerateSchedulerError(ValueError):
    """Raised when Lambda(t) vanishes, so the posterior maps are undefined."""


@dataclass(frozen=True)
class Scheduler:
    name: str
    alpha: Callable[[float], float]
    beta: Callable[[float], float]
    alpha_dot: Callable[[float], float]
    beta_dot: Callable[[float], float]

    def __reduce__(self):
        # pickle by registry name so fields can cross process boundaries
        return (get_scheduler, (self.name,))

    def coefficients(self, t: float) -> tuple[float, float, float, float]:
        t = float(t)
        return (float(self.alpha(t)), float(self.beta(t)),
                float(self.alpha_dot(t)), float(self.beta_dot(t)))


def _linear() -> Scheduler:
    return Scheduler("linear", lambda t: t, lambda t: 1.0 - t,
                     lambda t: 1.0, lambda t: -1.0)


def _cosine() -> Scheduler:
    # alpha = sin^2(pi t / 2); Lambda vanishes at both endpoints
    return Scheduler(
        "cosine",
        lambda t: np.sin(0.5 * np.pi * t) ** 2,
        lambda t: 1.0 - np.sin(0.5 * np.pi * t) ** 2,
        lambda t: 0.5 * np.pi * np.sin(np.pi * t),
        lambda t: -0.5 * np.pi * np.sin(np.pi * t),
    )


def _trig() -> Scheduler:
    return Scheduler(
        "trig",
        lambda t: np.sin(0.5 * np.pi * t),
        lambda t: np.cos(0.5 * np.pi * t),
        lambda t: 0.5 * np.pi * np.cos(0.5 * np.pi * t),
        lambda t: -0.5 * np.pi * np.sin(0.5 * np.pi * t),
    )


def _quadratic() -> Scheduler:
    # alpha = t (2 - t) keeps Lambda <= -1 on all of [0, 1]
    return Scheduler(
        "quadratic",
        lambda t: t * (2.0 - t),
        lambda t: 1.0 - t,
        lambda t: 2.0 - 2.0 * t,
        lambda t: -1.0,
    )


def check_scheduler(sched: Scheduler, n_points: int = 101, tol: float = 1e-6) -> None:
    """Validate boundary values and supplied derivatives.

    Raises ``ValueError`` when ``alpha(0)=0, alpha(1)=1, beta(0)=1, beta(1)=0``
    fail to hold within 1e-12, or when the derivatives disagree with central
    finite differences by more than `tol` on a uniform grid.
    """
    a0, b0, _, _ = sched.coefficients(0.0)
    a1, b1, _, _ = sched.coefficients(1.0)
    if max(abs(a0), abs(a1 - 1.0), abs(b0 - 1.0), abs(b1)) > 1e-12:
        raise ValueError(f"scheduler {sched.name!r} violates boundary conditions")
    h = 1e-6
    for t in np.linspace(0.0, 1.0, n_points):
        # centered even at the endpoints: the formulas extend past [0, 1]
        fd_a = (sched.alpha(t + h) - sched.alpha(t - h)) / (2 * h)
        fd_b = (sched.beta(t + h) - sched.beta(t - h)) / (2 * h)
        if abs(fd_a - sched.alpha_dot(t)) > tol or abs(fd_b - sched.beta_dot(t)) > tol:
            raise ValueError(f"scheduler {sched.name!r} derivative mismatch at t={t:.3f}")


_REGISTRY: dict[str, Scheduler] = {}


def register_scheduler(sched: Scheduler) -> Scheduler:
    check_scheduler(sched)
    _REGISTRY[sched.name] = sched
    return sched


for _factory in (_linear, _cosine, _trig, _quadratic):
    register_scheduler(_factory())


def get_scheduler(name: str | Scheduler) -> Scheduler:
    if isinstance(name, Scheduler):
        return name
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown scheduler {name!r}; available: {sorted(_REGISTRY)}") from None


def available_schedulers() -> list[str]:
    return sorted(_REGISTRY)


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing knots ``0 = t_0 < ... < t_N = 1``."""

    knots: np.ndarray = field(repr=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a time grid needs at least two knots")
        if knots[0] != 0.0 or knots[-1] != 1.0:
            raise ValueError("time grid must start at 0 and end at 1")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("time grid knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        knots = np.linspace(0.0, 1.0, n_steps + 1)
        knots[-1] = 1.0
        return cls(knots)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def n_steps(self) -> int:
        return self.knots.size - 1

    def __len__(self) -> int:
        return self.n_steps


def lambda_of(sched: Scheduler, t: float) -> float:
    """Return ``alpha(t) beta'(t) - alpha'(t) beta(t)``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    a, b, ad, bd = sched.coefficients(t)
    lam = a * bd - ad * b
    if abs(lam) < LAMBDA_EPS:
        raise DegenerateSchedulerError(
            f"Lambda({t}) = {lam:.3e} for scheduler {sched.name!r}")
    return lam


def posterior_mean(sched: Scheduler, t: float, x, v) -> np.ndarray:
    """Terminal estimate ``E[X_1 | X_t = x]`` from the velocity ``v`` at ``x``.

    Works on a single point or on a batch of rows.
    """
    x = np.asarray(x, dtype=float)
    a, b, ad, bd = sched.coefficients(t)
    if b == 0.0:
        return x.copy()
    lam = lambda_of(sched, t)
    return (bd * x - b * np.asarray(v, dtype=float)) / lam


def posterior_noise(sched: Scheduler, t: float, x, v) -> np.ndarray:
    """Source estimate ``E[X_0 | X_t = x]`` from the velocity ``v`` at ``x``."""
    x = np.asarray(x, dtype=float)
    a, b, ad, bd = sched.coefficients(t)
    if a == 0.0:
        return x.copy()
    lam = lambda_of(sched, t)
    return (-ad * x + a * np.asarray(v, dtype=float)) / lam
