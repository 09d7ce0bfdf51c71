"""Per-step subproblem solvers.

Each sampling step solves

    minimize  C(x) + (w / 2) ||x - anchor||^2   subject to  h(x) <= 0

with ``w = lambda_oc * alpha(t_{i+1})^2 / dt``. Three methods are provided:
exact closed forms for simple structure, projected gradient for sets with an
exact Euclidean projection, and an augmented Lagrangian for everything else.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .constraints import (BallObstacle, Box, ConstraintSet, CostFn, Halfspace,
                          QuadraticCost, ZeroCost)

METHODS = ("auto", "closed-form", "projected-gradient", "augmented-lagrangian")


class StructureMismatchError(ValueError):
    """The instance does not have the structure a closed form requires."""


class UnsupportedProjectionError(ValueError):
    """The constraint set has no exact Euclidean projection."""


class SolverDivergedError(FloatingPointError):
    """A solver iterate became non-finite."""


@dataclass
class SubproblemInstance:
    anchor: np.ndarray
    weight: float
    cost: CostFn = field(default_factory=ZeroCost)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        if not self.weight > 0:
            raise ValueError(f"weight must be positive, got {self.weight}")
        if not np.all(np.isfinite(self.anchor)):
            raise ValueError("anchor must be finite")

    def objective(self, x) -> float:
        r = x - self.anchor
        return self.cost.value(x) + 0.5 * self.weight * float(r @ r)

    def gradient(self, x) -> np.ndarray:
        return self.cost.gradient(x) + self.weight * (x - self.anchor)

    def hessian(self, x) -> np.ndarray | None:
        H = self.cost.hessian(x)
        if H is None:
            return None
        return H + self.weight * np.eye(x.size)

    def start(self) -> np.ndarray:
        ws = self.warm_start
        if ws is not None and np.shape(ws) == self.anchor.shape and np.all(np.isfinite(ws)):
            return np.array(ws, dtype=float)
        return self.anchor.copy()


@dataclass
class SolverConfig:
    """Solver settings.

    Multipliers are updated after every `update_every` inner steps (default 8);
    ``None`` runs each inner minimization to `inner_tol` first.
    """

    method: str = "auto"
    max_outer: int = 40
    max_inner: int = 2000
    growth: float = 10.0
    update_every: int | None = 8
    feas_tol: float = 1e-9
    inner_tol: float = 1e-10
    initial_penalty: float | None = None
    max_penalty: float = 1e12
    pg_max_iter: int = 20000
    memory: int = 10
    inner: str = "auto"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown solver method {self.method!r}; choose from {METHODS}")
        if not (self.feas_tol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.growth > 1:
            raise ValueError("penalty growth factor must exceed 1")
        if self.update_every is not None and self.update_every < 1:
            raise ValueError("update_every must be a positive integer or None")
        if self.inner not in ("auto", "lbfgs", "newton"):
            raise ValueError(f"unknown inner solver {self.inner!r}")


@dataclass
class SolverResult:
    solution: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    method: str
    kkt_residual: float = float("nan")
    multipliers: np.ndarray | None = None
    complementarity: float = float("nan")
    penalty: float = float("nan")
    history: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"method": self.method, "objective": self.objective, "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged,
                "kkt_residual": self.kkt_residual}


def _residual(cs: ConstraintSet, x) -> float:
    return cs.max_violation(x) if cs else 0.0


def kkt_report(inst: SubproblemInstance, x, mu) -> tuple[float, float]:
    """Stationarity norm and max complementarity ``|mu_i h_i|``."""
    g = inst.gradient(x)
    if inst.constraints and mu is not None and len(mu):
        g = g + inst.constraints.vjp(x, mu)
        comp = float(np.max(np.abs(mu * inst.constraints.values(x))))
    else:
        comp = 0.0
    return float(np.linalg.norm(g)), comp


def _finish(inst, x, mu, iters, converged, method, penalty=float("nan")) -> SolverResult:
    res = _residual(inst.constraints, x)
    kkt, comp = kkt_report(inst, x, mu)
    return SolverResult(x, inst.objective(x), res, iters, converged, method, kkt,
                        None if mu is None else np.asarray(mu, dtype=float), comp, penalty)


# ---------------------------------------------------------------------------
# Closed form
# ---------------------------------------------------------------------------

def _diag_quadratic(inst: SubproblemInstance):
    """Return ``(D, z)`` with objective ``sum_j D_j/2 (x_j - z_j)^2 + const``."""
    d = inst.anchor.size
    w = inst.weight
    if isinstance(inst.cost, ZeroCost):
        return np.full(d, w), inst.anchor.copy()
    if isinstance(inst.cost, QuadraticCost):
        q = inst.cost.weight
        D = np.full(d, w)
        lin = w * inst.anchor
        idx = np.arange(d) if inst.cost.indices is None else inst.cost.indices
        if np.unique(idx).size != idx.size:
            raise StructureMismatchError("repeated cost indices")
        D[idx] += 2 * q
        lin[idx] += 2 * q * np.broadcast_to(inst.cost.target, idx.shape)
        return D, lin / D
    raise StructureMismatchError(f"closed form needs zero or quadratic cost, got {inst.cost.kind}")


def closed_form_applicable(inst: SubproblemInstance) -> bool:
    try:
        _closed_form_plan(inst)
        return True
    except StructureMismatchError:
        return False


def _closed_form_plan(inst):
    D, z = _diag_quadratic(inst)
    blocks = inst.constraints.blocks
    if len(blocks) > 1:
        raise StructureMismatchError("closed form handles at most one constraint block")
    if blocks:
        b = blocks[0]
        if not isinstance(b, (Halfspace, Box, BallObstacle)):
            raise StructureMismatchError(f"no closed form for {b.kind} constraints")
        if isinstance(b, BallObstacle):
            if b.size != 1 or np.ptp(D) != 0:
                raise StructureMismatchError("ball closed form needs one ball and an isotropic metric")
    return D, z, (blocks[0] if blocks else None)


def solve_closed_form(inst: SubproblemInstance) -> SolverResult:
    D, z, block = _closed_form_plan(inst)
    mu = None
    if block is None:
        x = z
    elif isinstance(block, Halfspace):
        a = block.a
        viol = a @ z - block.b
        tau = max(0.0, viol / float(a @ (a / D)))
        x = z - tau * a / D
        mu = np.array([tau])
    elif isinstance(block, Box):
        x = np.clip(z, block.lower, block.upper)
        over = np.maximum(z - block.upper, 0.0)
        under = np.maximum(block.lower - z, 0.0)
        mu = np.concatenate([(D * over)[block._hi], (D * under)[block._lo]])
    else:
        x = block.project(z)
        idx = block.indices[0]
        dist = np.linalg.norm(z[idx] - block.center)
        mu = np.array([D[0] * max(0.0, block.radius - dist)])
    return _finish(inst, x, mu, 0, True, "closed-form")


# ---------------------------------------------------------------------------
# Projected gradient
# ---------------------------------------------------------------------------

def _projector(cs: ConstraintSet) -> Callable[[np.ndarray], np.ndarray]:
    if not cs:
        return lambda x: x
    if len(cs.blocks) == 1:
        b = cs.blocks[0]
        if isinstance(b, Halfspace):
            def proj(x):
                v = b.a @ x - b.b
                return x if v <= 0 else x - (v / (b.a @ b.a)) * b.a
            return proj
        if isinstance(b, Box):
            return b.project
        if isinstance(b, BallObstacle) and b.size == 1:
            return b.project
    if all(isinstance(b, Box) for b in cs.blocks):
        def proj(x):
            for b in cs.blocks:
                x = b.project(x)
            return x
        return proj
    raise UnsupportedProjectionError(
        f"no exact projection for constraint kinds {cs.kinds}")


def solve_projected_gradient(inst: SubproblemInstance, cfg: SolverConfig | None = None) -> SolverResult:
    cfg = cfg or SolverConfig()
    proj = _projector(inst.constraints)
    x = proj(inst.start())
    f = inst.objective(x)
    history = [(f, _residual(inst.constraints, x))]
    step = 1.0 / inst.weight
    converged = False
    it = 0
    for it in range(1, cfg.pg_max_iter + 1):
        g = inst.gradient(x)
        while True:
            y = proj(x - step * g)
            d = y - x
            fy = inst.objective(y)
            if not np.isfinite(fy):
                raise SolverDivergedError(f"non-finite objective at projected-gradient iteration {it}")
            if fy <= f + g @ d + (0.5 / step) * (d @ d) + 1e-15 * abs(f):
                break
            step *= 0.5
            if step < 1e-16:
                break
        gap = np.linalg.norm(d) / step
        if fy <= f:
            x, f = y, fy
            history.append((f, _residual(inst.constraints, x)))
        if gap <= cfg.inner_tol * max(1.0, inst.weight):
            converged = True
            break
        step *= 1.5
    mu = _pg_multipliers(inst, x)
    out = _finish(inst, x, mu, it, converged, "projected-gradient")
    out.history = history
    return out


def _pg_multipliers(inst, x):
    """Least-squares multipliers on the active components, clipped at zero."""
    cs = inst.constraints
    if not cs:
        return None
    h = cs.values(x)
    active = np.flatnonzero(h > -1e-8)
    mu = np.zeros(h.size)
    if active.size:
        J = cs.jacobian(x)[active]
        sol, *_ = np.linalg.lstsq(J.T, -inst.gradient(x), rcond=None)
        mu[active] = np.maximum(sol, 0.0)
    return mu


# ---------------------------------------------------------------------------
# Augmented Lagrangian with an L-BFGS inner loop
# ---------------------------------------------------------------------------

def lbfgs(fun_grad: Callable, x0: np.ndarray, max_iter: int, gtol: float,
          memory: int = 10) -> tuple[np.ndarray, float, np.ndarray, int, bool]:
    """Minimize a smooth function with limited-memory BFGS and Armijo backtracking.

    Returns ``(x, f, g, iterations, converged)``.
    """
    x = np.array(x0, dtype=float)
    f, g = fun_grad(x)
    hist: deque = deque(maxlen=memory)
    for it in range(max_iter):
        if np.linalg.norm(g, np.inf) <= gtol:
            return x, f, g, it, True
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(hist):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if hist:
            s, y, _ = hist[-1]
            q *= (s @ y) / (y @ y)
        else:
            q /= max(1.0, np.linalg.norm(g))
        for (s, y, rho), a in zip(hist, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        p = -q
        slope = g @ p
        if slope >= 0:
            hist.clear()
            p = -g / max(1.0, np.linalg.norm(g))
            slope = g @ p
        step = 1.0
        while True:
            xn = x + step * p
            fn, gn = fun_grad(xn)
            if not np.isfinite(fn):
                step *= 0.25
            elif fn <= f + 1e-4 * step * slope + 4e-16 * abs(f):
                # the last term absorbs rounding once f stops resolving progress
                break
            else:
                step *= 0.5
            if step < 1e-20:
                return x, f, g, it, bool(np.linalg.norm(g, np.inf) <= gtol)
        s, y = xn - x, gn - g
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            hist.append((s, y, 1.0 / sy))
        x, f, g = xn, fn, gn
    return x, f, g, max_iter, bool(np.linalg.norm(g, np.inf) <= gtol)


@dataclass
class ALOutcome:
    x: np.ndarray
    multipliers: np.ndarray
    penalty: float
    iterations: int
    converged: bool
    violation: float


def augmented_lagrangian(fun_grad: Callable, cons: Callable, cons_vjp: Callable, x0,
                         n_cons: int, cfg: SolverConfig, penalty: float,
                         multipliers=None, hess: Callable | None = None,
                         cons_jac: Callable | None = None,
                         curvature: Callable | None = None) -> ALOutcome:
    """Generic inequality augmented Lagrangian in the smooth PHR form.

    The merit function is ``f(x) + sum_i (max(0, mu_i + rho h_i)^2 - mu_i^2) / (2 rho)``,
    which equals ``f + mu h + rho/2 h^2`` on active components. Multipliers are
    updated as ``max(0, mu + rho h)`` and the penalty grows by ``cfg.growth``
    whenever the violation fails to shrink by a factor of four. The returned
    point is the best iterate ordered by (violation, objective). With `hess`
    and `cons_jac` the inner loop is a semismooth Newton method, otherwise
    L-BFGS.
    """
    x = np.array(x0, dtype=float)
    mu = np.zeros(n_cons) if multipliers is None else np.array(multipliers, dtype=float)
    rho = float(penalty)
    inner_budget = cfg.update_every or cfg.max_inner
    total = 0
    best = None
    prev_viol = math.inf

    def merit(z):
        h = cons(z)
        shifted = np.maximum(0.0, mu + rho * h)
        f, g = fun_grad(z)
        return f + (shifted @ shifted - mu @ mu) / (2 * rho), g + cons_vjp(z, shifted)

    use_newton = (cfg.inner != "lbfgs" and hess is not None and cons_jac is not None)
    if cfg.inner == "newton" and not use_newton:
        raise ValueError("newton inner solver needs a cost Hessian and constraint Jacobian")
    converged = False
    for outer in range(cfg.max_outer):
        f0, g0 = fun_grad(x)
        if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
            raise SolverDivergedError(f"non-finite objective or gradient at outer iteration {outer}")
        scale = max(1.0, np.linalg.norm(g0, np.inf))
        if use_newton:
            x, _, _, it, _ = semismooth_newton(fun_grad, hess, cons, cons_jac, mu, rho, x,
                                               inner_budget, cfg.inner_tol * scale,
                                               curvature=curvature)
        else:
            x, _, _, it, _ = lbfgs(merit, x, inner_budget, cfg.inner_tol * scale, cfg.memory)
        total += it
        if not np.all(np.isfinite(x)):
            raise SolverDivergedError(f"non-finite iterate at outer iteration {outer}")
        h = cons(x)
        viol = float(max(0.0, h.max())) if h.size else 0.0
        mu = np.maximum(0.0, mu + rho * h)
        f, g = fun_grad(x)
        key = (max(viol, cfg.feas_tol), f)
        if best is None or key < best[0]:
            best = (key, x.copy(), mu.copy(), viol)
        stationarity = np.linalg.norm(g + cons_vjp(x, mu), np.inf)
        comp = float(np.max(np.abs(mu * h))) if h.size else 0.0
        if viol <= cfg.feas_tol and stationarity <= 1e-7 * scale and comp <= 1e-7 * scale:
            converged = True
            best = (key, x.copy(), mu.copy(), viol)
            break
        if viol > cfg.feas_tol and viol > 0.25 * prev_viol:
            rho = min(rho * cfg.growth, cfg.max_penalty)
        prev_viol = viol
    _, x, mu, viol = best
    return ALOutcome(x, mu, rho, total, converged, viol)


def semismooth_newton(fun_grad, hess, cons, cons_jac, mu, rho, x0, max_iter, gtol,
                      short_limit: int = 5, curvature: Callable | None = None):
    """Minimize the PHR merit with Hessian ``H_f + rho J_A^T J_A`` on the active set.

    With `curvature` the term ``sum_i shifted_i hess h_i`` is added whenever the
    result stays positive definite; otherwise the step is Gauss-Newton. After
    `short_limit` consecutive damped steps (step < 0.1) the direction is
    judged unreliable and the remaining budget goes to L-BFGS.
    """
    x = np.array(x0, dtype=float)

    def merit(z):
        h = cons(z)
        shifted = np.maximum(0.0, mu + rho * h)
        f, g = fun_grad(z)
        return f + (shifted @ shifted - mu @ mu) / (2 * rho), g + cons_jac(z).T @ shifted, shifted

    f, g, shifted = merit(x)
    short = 0
    for it in range(max_iter):
        if np.linalg.norm(g, np.inf) <= gtol:
            return x, f, g, it, True
        if short >= short_limit:
            x, f, g, more, ok = lbfgs(lambda z: merit(z)[:2], x, max_iter - it, gtol)
            return x, f, g, it + more, ok
        J = cons_jac(x)[shifted > 0]
        H = hess(x) + rho * (J.T @ J)
        p = None
        if curvature is not None:
            Hc = curvature(x, shifted)
            if Hc is not None:
                try:
                    p = -cho_solve(cho_factor(H + Hc), g)
                except np.linalg.LinAlgError:
                    p = None
        if p is None:
            try:
                p = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                p = -g
        slope = g @ p
        if not slope < 0:
            p, slope = -g, -(g @ g)
        step = 1.0
        while True:
            xn = x + step * p
            fn, gn, sn = merit(xn)
            if np.isfinite(fn) and fn <= f + 1e-4 * step * slope + 4e-16 * abs(f):
                break
            step *= 0.5
            if step < 1e-20:
                return x, f, g, it, bool(np.linalg.norm(g, np.inf) <= gtol)
        short = short + 1 if step < 0.1 else 0
        x, f, g, shifted = xn, fn, gn, sn
    return x, f, g, max_iter, bool(np.linalg.norm(g, np.inf) <= gtol)


def solve_aug_lagrangian(inst: SubproblemInstance, cfg: SolverConfig | None = None,
                         multipliers=None, penalty=None) -> SolverResult:
    """Augmented Lagrangian with an L-BFGS inner loop; see `augmented_lagrangian`."""
    cfg = cfg or SolverConfig()
    cs = inst.constraints
    x = inst.start()
    fg = lambda z: (inst.objective(z), inst.gradient(z))
    if not cs:
        x, f, g, it, ok = lbfgs(fg, x, cfg.max_inner, cfg.inner_tol, cfg.memory)
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise SolverDivergedError("non-finite objective or gradient")
        return _finish(inst, x, None, it, ok, "augmented-lagrangian")
    rho = penalty or cfg.initial_penalty or 10.0 * max(inst.weight, 1.0)
    hess = inst.hessian if inst.hessian(x) is not None else None
    out = augmented_lagrangian(fg, cs.values, cs.vjp, x, len(cs), cfg, rho, multipliers,
                               hess=hess, cons_jac=cs.jacobian, curvature=cs.curvature)
    return _finish(inst, out.x, out.multipliers, out.iterations, out.converged,
                   "augmented-lagrangian", out.penalty)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

def solve(inst: SubproblemInstance, cfg: SolverConfig | None = None) -> SolverResult:
    cfg = cfg or SolverConfig()
    method = cfg.method
    if method == "auto":
        method = "closed-form" if closed_form_applicable(inst) else "augmented-lagrangian"
    if method == "closed-form":
        return solve_closed_form(inst)
    if method == "projected-gradient":
        return solve_projected_gradient(inst, cfg)
    return solve_aug_lagrangian(inst, cfg)


def project(x, constraints: ConstraintSet, cfg: SolverConfig | None = None,
            warm_start=None) -> SolverResult:
    """Euclidean projection onto ``{h <= 0}`` via the zero-cost subproblem."""
    inst = SubproblemInstance(np.asarray(x, dtype=float), 1.0, ZeroCost(), constraints, warm_start)
    return solve(inst, cfg)


def with_method(cfg: SolverConfig, method: str) -> SolverConfig:
    return replace(cfg, method=method)
