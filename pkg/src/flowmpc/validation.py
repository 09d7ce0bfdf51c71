"""Argument checks shared by the estimator, the CLI, and config loading."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_array, check_random_state


def check_points(X, dim: int | None = None, name: str = "X") -> np.ndarray:
    """2-D float array of finite points, optionally with a fixed feature count."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_min_samples=0)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} features, expected {dim}")
    return X


def check_point(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {x.shape}")
    if dim is not None and x.size != dim:
        raise ValueError(f"{name} has length {x.size}, expected {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_positive(value, name: str, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ValueError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return value


def check_fraction(value, name: str) -> float:
    value = check_positive(value, name, strict=False)
    if value > 1:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_count(value, name: str, minimum: int = 0) -> int:
    if not isinstance(value, numbers.Integral) or isinstance(value, bool):
        raise TypeError(f"{name} must be an integer, got {type(value).__name__}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_choice(value, choices, name: str) -> str:
    if value not in choices:
        raise ValueError(f"unknown {name} {value!r}; expected one of {sorted(choices)}")
    return value


def as_generator(random_state) -> np.random.Generator:
    """Accept ``None``, an int, a ``Generator``, or a legacy ``RandomState``."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, numbers.Integral):
        return np.random.default_rng(random_state)
    rs = check_random_state(random_state)
    return np.random.default_rng(rs.randint(2 ** 32 - 1))
