"""Hard constraints ``h(x) <= 0`` (componentwise) and scalar costs ``C(x)``.

A `ConstraintSet` is an ordered list of blocks. Each block returns a vector
of component values and its Jacobian at a single point. Equalities are
always stored as a ``(g, -g)`` pair so the residual of a pair is ``|g|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_TOL = 1e-6
CENTER_NUDGE = 1e-9


class NotSerializableError(TypeError):
    pass


# ---------------------------------------------------------------------------
# Constraint blocks
# ---------------------------------------------------------------------------

class ConstraintBlock:
    kind = "abstract"

    def __init__(self, name: str | None = None):
        self.name = name or self.kind

    @property
    def size(self) -> int:
        raise NotImplementedError

    def values(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """``J(x)^T w`` for a cotangent over this block's components."""
        return self.jacobian(x).T @ w

    def curvature(self, x: np.ndarray, w: np.ndarray) -> np.ndarray | None:
        """``sum_i w_i hess h_i(x)`` as a dense matrix, or ``None`` if unavailable."""
        return None

    def params(self) -> dict:
        raise NotSerializableError(f"{self.kind} constraints cannot be serialized")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, **self.params()}


class LinearInequality(ConstraintBlock):
    """``G x - g <= 0`` row by row."""

    kind = "linear"

    def __init__(self, G, g, name=None):
        super().__init__(name)
        self.G = np.atleast_2d(np.asarray(G, dtype=float))
        self.g = np.atleast_1d(np.asarray(g, dtype=float))
        if self.G.shape[0] != self.g.size:
            raise ValueError(f"G has {self.G.shape[0]} rows but g has {self.g.size} entries")

    @property
    def size(self):
        return self.g.size

    def values(self, x):
        return self.G @ x - self.g

    def jacobian(self, x):
        return self.G

    def curvature(self, x, w):
        return np.zeros((x.size, x.size))

    def params(self):
        return {"G": self.G.tolist(), "g": self.g.tolist()}


class Halfspace(LinearInequality):
    """Single halfspace ``a^T x <= b``."""

    kind = "halfspace"

    def __init__(self, a, b, name=None):
        a = np.asarray(a, dtype=float).ravel()
        if not np.any(a):
            raise ValueError("halfspace normal must be nonzero")
        super().__init__(a[None, :], [float(b)], name)
        self.a = a
        self.b = float(b)

    def params(self):
        return {"a": self.a.tolist(), "b": self.b}


class Box(ConstraintBlock):
    """``lower <= x <= upper``; infinite bounds are dropped."""

    kind = "box"

    def __init__(self, lower, upper, name=None):
        super().__init__(name)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        self.lower, self.upper = np.broadcast_arrays(lower, upper)
        self.lower = np.array(self.lower, dtype=float)
        self.upper = np.array(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")
        self._hi = np.flatnonzero(np.isfinite(self.upper))
        self._lo = np.flatnonzero(np.isfinite(self.lower))

    @property
    def size(self):
        return self._hi.size + self._lo.size

    def values(self, x):
        return np.concatenate([x[self._hi] - self.upper[self._hi],
                               self.lower[self._lo] - x[self._lo]])

    def jacobian(self, x):
        J = np.zeros((self.size, x.size))
        J[np.arange(self._hi.size), self._hi] = 1.0
        J[self._hi.size + np.arange(self._lo.size), self._lo] = -1.0
        return J

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def curvature(self, x, w):
        return np.zeros((x.size, x.size))

    def params(self):
        enc = lambda v: [None if not np.isfinite(e) else float(e) for e in v]
        return {"lower": enc(self.lower), "upper": enc(self.upper)}


class BallObstacle(ConstraintBlock):
    """Keep-out discs: ``radius - ||x[idx_k] - center|| <= 0`` for each row ``idx_k``.

    `indices` is an ``(k, p)`` integer array selecting ``k`` sub-vectors of
    length ``p`` that must all stay outside the same ball. ``None`` means the
    whole vector.
    """

    kind = "ball_obstacle"

    def __init__(self, center, radius, indices=None, name=None):
        super().__init__(name)
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if indices is None:
            indices = np.arange(self.center.size)[None, :]
        self.indices = np.atleast_2d(np.asarray(indices, dtype=int))
        if self.indices.shape[1] != self.center.size:
            raise ValueError("index rows must match the center dimension")

    @property
    def size(self):
        return self.indices.shape[0]

    def _offsets(self, x):
        diff = x[self.indices] - self.center
        norms = np.linalg.norm(diff, axis=1)
        at_center = norms == 0.0
        if np.any(at_center):
            diff[at_center, 0] = CENTER_NUDGE
            norms[at_center] = CENTER_NUDGE
        return diff, norms

    def values(self, x):
        _, norms = self._offsets(x)
        return self.radius - norms

    def jacobian(self, x):
        diff, norms = self._offsets(x)
        J = np.zeros((self.size, x.size))
        rows = np.repeat(np.arange(self.size), self.center.size)
        J[rows, self.indices.ravel()] = -(diff / norms[:, None]).ravel()
        return J

    def curvature(self, x, w):
        diff, norms = self._offsets(x)
        p = self.center.size
        H = np.zeros((x.size, x.size))
        for k in np.flatnonzero(w):
            n = diff[k] / norms[k]
            idx = self.indices[k]
            H[np.ix_(idx, idx)] -= w[k] * (np.eye(p) - np.outer(n, n)) / norms[k]
        return H

    def project(self, x):
        """Push every offending sub-vector radially onto the sphere."""
        y = np.array(x, dtype=float)
        diff, norms = self._offsets(y)
        for k in np.flatnonzero(norms < self.radius):
            y[self.indices[k]] = self.center + self.radius * diff[k] / norms[k]
        return y

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius,
                "indices": self.indices.tolist()}


class AffineEquality(ConstraintBlock):
    """``A x - b = 0`` stored as the pair ``(A x - b <= 0, b - A x <= 0)``."""

    kind = "affine_equality"

    def __init__(self, A, b, name=None):
        super().__init__(name)
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        if self.A.shape[0] != self.b.size:
            raise ValueError("A and b row counts differ")

    @property
    def size(self):
        return 2 * self.b.size

    def defect(self, x):
        return self.A @ x - self.b

    def values(self, x):
        g = self.defect(x)
        return np.concatenate([g, -g])

    def jacobian(self, x):
        return np.vstack([self.A, -self.A])

    def vjp(self, x, w):
        q = self.b.size
        return self.A.T @ (w[:q] - w[q:])

    def curvature(self, x, w):
        return np.zeros((x.size, x.size))

    def params(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}


class LinearDynamics(AffineEquality):
    """``s_{k+1} = A s_k + B a_k + c`` over ``x = (s_0, a_0, ..., s_{H-1}, a_{H-1})``."""

    kind = "linear_dynamics"

    def __init__(self, A, B, c, horizon, name=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        ns, na = A.shape[0], B.shape[1]
        c = np.zeros(ns) if c is None else np.asarray(c, dtype=float).ravel()
        if A.shape != (ns, ns) or B.shape[0] != ns or c.size != ns:
            raise ValueError(f"inconsistent dynamics shapes A{A.shape} B{B.shape} c{c.shape}")
        if horizon < 2:
            raise ValueError("horizon must be >= 2")
        step = ns + na
        rows = np.zeros(((horizon - 1) * ns, horizon * step))
        for k in range(horizon - 1):
            r = slice(k * ns, (k + 1) * ns)
            rows[r, k * step:k * step + ns] = A
            rows[r, k * step + ns:(k + 1) * step] = B
            rows[r, (k + 1) * step:(k + 1) * step + ns] = -np.eye(ns)
        # A s + B a - s' + c = 0  <=>  [A B -I] x - (-c) = 0
        super().__init__(rows, np.tile(-c, horizon - 1), name)
        self.dyn_A, self.dyn_B, self.dyn_c = A, B, c
        self.horizon = int(horizon)

    def params(self):
        return {"A": self.dyn_A.tolist(), "B": self.dyn_B.tolist(),
                "c": self.dyn_c.tolist(), "horizon": self.horizon}


def make_linear_dynamics(A, B, c, horizon, state_dim=None, action_dim=None,
                         name="dynamics") -> "ConstraintSet":
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if state_dim is not None and A.shape[0] != state_dim:
        raise ValueError(f"A is {A.shape}, expected state dim {state_dim}")
    if action_dim is not None and B.shape[1] != action_dim:
        raise ValueError(f"B is {B.shape}, expected action dim {action_dim}")
    return ConstraintSet([LinearDynamics(A, B, c, horizon, name=name)])


def rollout_linear(A, B, c, s0, actions) -> np.ndarray:
    """Flattened trajectory generated by iterating the dynamics map."""
    s = np.asarray(s0, dtype=float)
    out = []
    for a in np.atleast_2d(actions):
        out += [s, np.asarray(a, dtype=float)]
        s = A @ s + B @ a + (0.0 if c is None else c)
    return np.concatenate(out)


class BurgersDynamics(ConstraintBlock):
    """Forward-Euler / central-difference Burgers defect with uncertain viscosity.

    The decision vector is ``x = (u, f)`` with ``u`` and ``f`` both ``m x n``
    in time-major order; the ``n`` spatial nodes include the two boundary
    nodes. For every interior node the defect

        r(nu) = u[k+1,j] - u[k,j] + dt u (D1 u) - dt nu (D2 u) - dt f[k,j]

    must vanish for some ``nu`` in ``[nu_min, nu_max]``. Since ``r`` is affine
    in ``nu`` this is ``|r(nu_mid)| <= dt (nu_max - nu_min) / 2 |D2 u|``,
    encoded as two components.
    """

    kind = "burgers_dynamics"

    def __init__(self, m, n, nu_min, nu_max, dt, ds, name=None):
        super().__init__(name)
        if m < 2 or n < 3:
            raise ValueError(f"Burgers grid too small: m={m}, n={n} (need m >= 2, n >= 3)")
        if not 0.0 <= nu_min <= nu_max:
            raise ValueError("need 0 <= nu_min <= nu_max")
        self.m, self.n = int(m), int(n)
        self.nu_min, self.nu_max = float(nu_min), float(nu_max)
        self.dt, self.ds = float(dt), float(ds)
        self.nu_mid = 0.5 * (self.nu_min + self.nu_max)
        self.half_width = 0.5 * self.dt * (self.nu_max - self.nu_min)

    @property
    def size(self):
        return 2 * (self.m - 1) * (self.n - 2)

    def _split(self, x):
        mn = self.m * self.n
        return x[:mn].reshape(self.m, self.n), x[mn:2 * mn].reshape(self.m, self.n)

    def _parts(self, x):
        u, f = self._split(x)
        uk, up = u[:-1], u[1:]
        c, left, right = uk[:, 1:-1], uk[:, :-2], uk[:, 2:]
        d1 = (right - left) / (2 * self.ds)
        d2 = (right - 2 * c + left) / self.ds ** 2
        r = up[:, 1:-1] - c + self.dt * c * d1 - self.dt * self.nu_mid * d2 - self.dt * f[:-1, 1:-1]
        return r, d2

    def defect(self, x, nu=None):
        nu = self.nu_mid if nu is None else nu
        r, d2 = self._parts(x)
        return (r - self.dt * (nu - self.nu_mid) * d2).ravel()

    def values(self, x):
        r, d2 = self._parts(x)
        slack = self.half_width * np.abs(d2)
        return np.concatenate([(r - slack).ravel(), (-r - slack).ravel()])

    def jacobian(self, x):
        m, n, dt, ds, nu = self.m, self.n, self.dt, self.ds, self.nu_mid
        mn = m * n
        u, _ = self._split(x)
        _, d2 = self._parts(x)
        k, j = np.meshgrid(np.arange(m - 1), np.arange(1, n - 1), indexing="ij")
        k, j = k.ravel(), j.ravel()
        rows = np.arange(k.size)
        c, lft, rgt = u[k, j], u[k, j - 1], u[k, j + 1]
        Jr = np.zeros((k.size, 2 * mn))
        Jr[rows, (k + 1) * n + j] = 1.0
        Jr[rows, k * n + j] = -1.0 + dt * (rgt - lft) / (2 * ds) + 2 * dt * nu / ds ** 2
        Jr[rows, k * n + j + 1] = dt * c / (2 * ds) - dt * nu / ds ** 2
        Jr[rows, k * n + j - 1] = -dt * c / (2 * ds) - dt * nu / ds ** 2
        Jr[rows, mn + k * n + j] = -dt
        s = np.sign(d2).ravel() * self.half_width / ds ** 2
        Js = np.zeros_like(Jr)
        Js[rows, k * n + j + 1] = s
        Js[rows, k * n + j - 1] = s
        Js[rows, k * n + j] = -2 * s
        return np.vstack([Jr - Js, -Jr - Js])

    def curvature(self, x, w):
        # only the advection term u (D1 u) is curved; |D2 u| is piecewise linear
        m, n = self.m, self.n
        q = (m - 1) * (n - 2)
        coef = (w[:q] - w[q:]) * self.dt / (2 * self.ds)
        k, j = np.meshgrid(np.arange(m - 1), np.arange(1, n - 1), indexing="ij")
        c = (k * n + j).ravel()
        H = np.zeros((x.size, x.size))
        np.add.at(H, (c, c + 1), coef)
        np.add.at(H, (c, c - 1), -coef)
        np.add.at(H, (c + 1, c), coef)
        np.add.at(H, (c - 1, c), -coef)
        return H

    def params(self):
        return {"m": self.m, "n": self.n, "nu_min": self.nu_min, "nu_max": self.nu_max,
                "dt": self.dt, "ds": self.ds}


def burgers_grid(m: int, n: int, T: float = 1.0, L: float = 1.0):
    """Time knots, space nodes (including both boundaries), dt and ds."""
    t = np.linspace(0.0, T, m)
    s = np.linspace(0.0, L, n)
    return t, s, T / (m - 1), L / (n - 1)


def burgers_state_bound(t):
    return 0.8 * (2.0 * np.asarray(t, dtype=float) ** 2 - 2.0 * np.asarray(t, dtype=float) + 1.0)


def dirichlet_pairs(m: int, n: int, name="boundary") -> AffineEquality:
    """``u[k, 0] = u[k, n-1] = 0`` for every time row."""
    rows = np.zeros((2 * m, 2 * m * n))
    for k in range(m):
        rows[2 * k, k * n] = 1.0
        rows[2 * k + 1, k * n + n - 1] = 1.0
    return AffineEquality(rows, np.zeros(2 * m), name=name)


def make_burgers_dynamics(m, n, nu_min, nu_max, dt=None, ds=None, boundary=True,
                          name="dynamics") -> "ConstraintSet":
    """Burgers defect constraints, plus Dirichlet equality pairs when `boundary`."""
    if m < 2 or n < 3:
        raise ValueError(f"Burgers grid too small: m={m}, n={n} (need m >= 2, n >= 3)")
    _, _, dt0, ds0 = burgers_grid(m, n)
    blocks = [BurgersDynamics(m, n, nu_min, nu_max, dt0 if dt is None else dt,
                              ds0 if ds is None else ds, name=name)]
    if boundary:
        blocks.append(dirichlet_pairs(m, n))
    return ConstraintSet(blocks)


class BurgersStateBounds(LinearInequality):
    """``|u[k, j]| <= 0.8 (2 t_k^2 - 2 t_k + 1)`` on every grid node."""

    kind = "burgers_state_bounds"

    def __init__(self, m, n, T=1.0, name=None):
        t, *_ = burgers_grid(m, n, T)
        bound = np.repeat(burgers_state_bound(t), n)
        mn = m * n
        eye = np.eye(mn, 2 * mn)
        super().__init__(np.vstack([eye, -eye]), np.concatenate([bound, bound]), name)
        self.m, self.n, self.T = int(m), int(n), float(T)

    def params(self):
        return {"m": self.m, "n": self.n, "T": self.T}


def make_state_bounds_burgers(m, n, name="state_bounds") -> "ConstraintSet":
    return ConstraintSet([BurgersStateBounds(m, n, name=name)])


class CustomConstraint(ConstraintBlock):
    kind = "custom"

    def __init__(self, fun: Callable, jac: Callable, size: int, name=None):
        super().__init__(name)
        self.fun, self.jac, self._size = fun, jac, int(size)

    @property
    def size(self):
        return self._size

    def values(self, x):
        return np.atleast_1d(np.asarray(self.fun(x), dtype=float))

    def jacobian(self, x):
        return np.atleast_2d(np.asarray(self.jac(x), dtype=float))


# ---------------------------------------------------------------------------
# Sets and feasibility reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeasibilityReport:
    residual: float
    violated_indices: tuple[int, ...]
    tol: float = DEFAULT_TOL
    nonfinite_indices: tuple[int, ...] = ()
    block_residuals: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return not self.violated_indices


class ConstraintSet:
    """Concatenation of constraint blocks, immutable after construction."""

    def __init__(self, blocks: Sequence[ConstraintBlock] = ()):
        self.blocks = tuple(blocks)
        names = [b.name for b in self.blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate block names: {names}")

    def __len__(self):
        return sum(b.size for b in self.blocks)

    def __bool__(self):
        return len(self) > 0

    def __add__(self, other: "ConstraintSet") -> "ConstraintSet":
        return ConstraintSet(self.blocks + other.blocks)

    @property
    def kinds(self) -> list[str]:
        return [b.kind for b in self.blocks]

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.values(x) for b in self.blocks])

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.blocks:
            return np.zeros((0, x.size))
        return np.vstack([b.jacobian(x) for b in self.blocks])

    def vjp(self, x, w) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        k = 0
        for b in self.blocks:
            out += b.vjp(x, w[k:k + b.size])
            k += b.size
        return out

    def curvature(self, x, w) -> np.ndarray | None:
        x = np.asarray(x, dtype=float)
        H = np.zeros((x.size, x.size))
        k = 0
        for b in self.blocks:
            Hb = b.curvature(x, w[k:k + b.size])
            if Hb is None:
                return None
            H += Hb
            k += b.size
        return H

    def max_violation(self, x) -> float:
        h = self.values(x)
        return float(max(0.0, h.max())) if h.size else 0.0

    def residual(self, x, tol: float = DEFAULT_TOL) -> FeasibilityReport:
        x = np.asarray(x, dtype=float)
        per_block, parts = {}, []
        for b in self.blocks:
            v = b.values(x)
            parts.append(v)
            finite = v[np.isfinite(v)]
            per_block[b.name] = float(finite.max()) if finite.size else (
                float("nan") if v.size else float("-inf"))
        h = np.concatenate(parts) if parts else np.zeros(0)
        bad = np.flatnonzero(~np.isfinite(h))
        if h.size == 0:
            res = float("-inf")
        elif bad.size:
            res = float("inf")
        else:
            res = float(h.max())
        violated = np.flatnonzero(~(h <= tol))
        return FeasibilityReport(res, tuple(int(i) for i in violated), tol,
                                 tuple(int(i) for i in bad), per_block)

    def to_list(self) -> list[dict]:
        return [b.to_dict() for b in self.blocks]


def residual(cs: ConstraintSet, x, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    return cs.residual(x, tol)


# ---------------------------------------------------------------------------
# Costs
# ---------------------------------------------------------------------------

class CostFn:
    kind = "abstract"

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray | None:
        """Dense Hessian, or ``None`` when the cost does not provide one."""
        return None

    def __call__(self, x) -> float:
        return self.value(x)

    def to_dict(self) -> dict:
        raise NotSerializableError(f"{self.kind} costs cannot be serialized")


class ZeroCost(CostFn):
    kind = "zero"

    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def hessian(self, x):
        d = np.asarray(x).size
        return np.zeros((d, d))

    def to_dict(self):
        return {"kind": self.kind}


class QuadraticCost(CostFn):
    """``weight * sum_j (x[idx_j] - target_j)^2``."""

    kind = "quadratic"

    def __init__(self, target, weight=1.0, indices=None):
        self.target = np.atleast_1d(np.asarray(target, dtype=float))
        self.weight = float(weight)
        if self.weight < 0:
            raise ValueError("cost weight must be nonnegative")
        self.indices = None if indices is None else np.asarray(indices, dtype=int).ravel()

    def _sel(self, x):
        x = np.asarray(x, dtype=float)
        return x if self.indices is None else x[self.indices]

    def value(self, x):
        r = self._sel(x) - self.target
        return float(self.weight * r @ r)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        r = 2.0 * self.weight * (self._sel(x) - self.target)
        if self.indices is None:
            return r
        np.add.at(g, self.indices, r)
        return g

    def hessian(self, x):
        d = np.asarray(x).size
        diag = np.zeros(d)
        if self.indices is None:
            diag[:] = 2.0 * self.weight
        else:
            np.add.at(diag, self.indices, 2.0 * self.weight)
        return np.diag(diag)

    def to_dict(self):
        return {"kind": self.kind, "target": self.target.tolist(), "weight": self.weight,
                "indices": None if self.indices is None else self.indices.tolist()}


class ControlEnergyCost(QuadraticCost):
    """Sum of squared entries over `indices` (e.g. the control block)."""

    kind = "control_energy"

    def __init__(self, indices, weight=1.0):
        idx = np.asarray(indices, dtype=int).ravel()
        super().__init__(np.zeros(idx.size), weight, idx)

    def to_dict(self):
        return {"kind": self.kind, "indices": self.indices.tolist(), "weight": self.weight}


class PathLengthCost(CostFn):
    """Smoothed polyline length through the points ``x[idx_k]``."""

    kind = "path_length"

    def __init__(self, indices, weight=1.0, eps=1e-6):
        self.indices = np.atleast_2d(np.asarray(indices, dtype=int))
        self.weight = float(weight)
        self.eps = float(eps)

    def _seg(self, x):
        pts = np.asarray(x, dtype=float)[self.indices]
        d = np.diff(pts, axis=0)
        return d, np.sqrt(np.sum(d * d, axis=1) + self.eps ** 2)

    def value(self, x):
        _, lens = self._seg(x)
        return float(self.weight * lens.sum())

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        d, lens = self._seg(x)
        u = self.weight * d / lens[:, None]
        gp = np.zeros((self.indices.shape[0], self.indices.shape[1]))
        gp[1:] += u
        gp[:-1] -= u
        g = np.zeros_like(x)
        np.add.at(g, self.indices.ravel(), gp.ravel())
        return g

    def to_dict(self):
        return {"kind": self.kind, "indices": self.indices.tolist(),
                "weight": self.weight, "eps": self.eps}


class CustomCost(CostFn):
    kind = "custom"

    def __init__(self, fun: Callable, grad: Callable):
        self.fun, self.grad = fun, grad

    def value(self, x):
        return float(self.fun(x))

    def gradient(self, x):
        return np.asarray(self.grad(x), dtype=float)


# ---------------------------------------------------------------------------
# JSON (de)serialization
# ---------------------------------------------------------------------------

def _bound(v, missing):
    return np.array([missing if e is None else e for e in v], dtype=float)


def constraint_from_dict(d: dict) -> ConstraintBlock:
    kind, name = d["kind"], d.get("name")
    if kind == "halfspace":
        return Halfspace(d["a"], d["b"], name)
    if kind == "linear":
        return LinearInequality(d["G"], d["g"], name)
    if kind == "box":
        return Box(_bound(d["lower"], -np.inf), _bound(d["upper"], np.inf), name)
    if kind == "ball_obstacle":
        return BallObstacle(d["center"], d["radius"], d.get("indices"), name)
    if kind == "affine_equality":
        return AffineEquality(d["A"], d["b"], name)
    if kind == "linear_dynamics":
        return LinearDynamics(d["A"], d["B"], d["c"], d["horizon"], name)
    if kind == "burgers_dynamics":
        return BurgersDynamics(d["m"], d["n"], d["nu_min"], d["nu_max"], d["dt"], d["ds"], name)
    if kind == "burgers_state_bounds":
        return BurgersStateBounds(d["m"], d["n"], d.get("T", 1.0), name)
    raise ValueError(f"unknown constraint kind {kind!r}")


def constraints_from_list(items: list[dict]) -> ConstraintSet:
    return ConstraintSet([constraint_from_dict(d) for d in items])


def cost_from_dict(d: dict | None) -> CostFn:
    if d is None or d["kind"] == "zero":
        return ZeroCost()
    kind = d["kind"]
    if kind == "quadratic":
        return QuadraticCost(d["target"], d.get("weight", 1.0), d.get("indices"))
    if kind == "control_energy":
        return ControlEnergyCost(d["indices"], d.get("weight", 1.0))
    if kind == "path_length":
        return PathLengthCost(d["indices"], d.get("weight", 1.0), d.get("eps", 1e-6))
    raise ValueError(f"unknown cost kind {kind!r}")
