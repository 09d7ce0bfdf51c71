"""Verification suites returning JSON-ready verdicts.

Each suite returns ``{"suite", "passed", "metrics", "details"}``; sizes
default to values that keep a full ``verify`` run to a few minutes and can be
raised to the acceptance sizes by the caller.
"""
from __future__ import annotations


import numpy as np

from .constraints import Box, ConstraintSet, Halfspace, QuadraticCost, ZeroCost
from .samplers import (METHODS, InfeasibleSampleError, SamplerConfig, run_sampler,
                       sample_hardflow, sample_nominal)
from .schedulers import (LAMBDA_EPS, TimeGrid, available_schedulers, get_scheduler,
                         posterior_mean, posterior_noise)
from .solvers import (SolverConfig, SubproblemInstance, solve_aug_lagrangian, solve_closed_form,
                      solve_projected_gradient)
from .tasks import TaskSpec, gauss2d
from .verification import (check_fixed_point_bound, energy_distance_bootstrap,
                           equivalence_recursions, measure_consistency_error, solve_full_horizon)
from .velocity import GaussianVelocityField, VelocityField

SUITES = ("identity", "feasibility", "nominal-reduction", "theorem1", "theorem3", "equivalence",
          "consistency", "shift", "solvers")


def analytic_field(dim: int = 2) -> GaussianVelocityField:
    """Standard normal to standard normal, the field of the gauss2d tasks."""
    return GaussianVelocityField(n_features=dim).fit()


def _verdict(suite, passed, metrics, details=None):
    return {"suite": suite, "passed": bool(passed), "metrics": metrics, "details": details or []}


# ---------------------------------------------------------------------------

def identity_suite(n_probes: int = 10_000, seed: int = 0, tol: float = 1e-9) -> dict:
    """``alpha M + beta N = x`` at random (scheduler, t, x, v) probes."""
    rng = np.random.default_rng(seed)
    names = available_schedulers()
    worst, done = 0.0, 0
    while done < n_probes:
        sched = get_scheduler(names[rng.integers(len(names))])
        t = float(rng.random())
        a, b, ad, bd = sched.coefficients(t)
        if abs(a * bd - ad * b) < LAMBDA_EPS:
            continue
        d = int(rng.integers(1, 6))
        x, v = rng.standard_normal(d), 3 * rng.standard_normal(d)
        back = a * posterior_mean(sched, t, x, v) + b * posterior_noise(sched, t, x, v)
        worst = max(worst, float(np.max(np.abs(back - x))))
        done += 1
    return _verdict("identity", worst <= tol,
                    {"n_probes": done, "max_error": worst, "tolerance": tol})


def feasibility_suite(task: TaskSpec, field_: VelocityField, n_samples: int = 200, seed: int = 0,
                      tol: float = 1e-6, cfg: SamplerConfig | None = None) -> dict:
    """HardFlow terminal residuals; a final-step solver failure counts as a miss."""
    cfg = cfg or SamplerConfig(n_steps=task.n_steps, lambda_oc=task.lambda_oc)
    X0 = task.sample_source(np.random.default_rng(seed), n_samples)
    residuals, failures = [], 0
    for x0 in X0:
        try:
            run = sample_hardflow(field_, x0, task.cost, task.constraints, cfg)
            residuals.append(run.residual)
        except InfeasibleSampleError as err:
            failures += 1
            residuals.append(err.run.residual if err.run is not None else float("inf"))
    residuals = np.asarray(residuals)
    ok = int(np.sum(residuals <= tol))
    rate = float(np.mean(residuals <= tol)) if n_samples else 1.0
    passed = failures == 0 and ok == n_samples
    return _verdict("feasibility", passed,
                    {"task": task.name, "n_samples": n_samples, "safety_rate": rate,
                     "solver_failures": failures,
                     "max_residual": float(residuals.max()) if n_samples else 0.0})


def nominal_reduction_suite(field_: VelocityField | None = None, n_seeds: int = 100,
                            n_steps: int = 20, tol: float = 1e-9, methods=METHODS) -> dict:
    """Every sampler with no constraints and zero cost reproduces the nominal sampler."""
    field_ = field_ or analytic_field()
    worst = {}
    for m in methods:
        cfg = SamplerConfig(n_steps=n_steps, method=m)
        errs = []
        for seed in range(n_seeds):
            x0 = np.random.default_rng(seed).standard_normal(field_.dim)
            ref = sample_nominal(field_, x0, cfg)
            run = run_sampler(field_, x0, ZeroCost(), ConstraintSet(), cfg)
            errs.append(float(np.linalg.norm(run.terminal - ref.terminal)))
        worst[m] = max(errs)
    return _verdict("nominal-reduction", all(v <= tol for v in worst.values()),
                    {"n_seeds": n_seeds, "tolerance": tol, "max_terminal_distance": worst})


def boundary_goal_instance():
    """d=2 instance whose goal lies across the constraint boundary."""
    cs = ConstraintSet([Halfspace([1.0, 0.0], -1.0, name="halfspace")])
    return QuadraticCost([1.0, 1.0], 0.5), cs


def oracle_gap_suite(field_: VelocityField | None = None, n_seeds: int = 100, n_steps: int = 8,
                   lambda_oc: float = 1.0, restarts: int = 8, slack: float = 1e-6,
                   min_fraction: float = 0.95) -> dict:
    """Receding-horizon objective is not below the full-horizon oracle objective."""
    field_ = field_ or analytic_field()
    cost, cs = boundary_goal_instance()
    cfg = SamplerConfig(n_steps=n_steps, lambda_oc=lambda_oc)
    grid = TimeGrid.uniform(n_steps)
    rows, good = [], 0
    for seed in range(n_seeds):
        x0 = np.random.default_rng(seed).standard_normal(field_.dim)
        run = sample_hardflow(field_, x0, cost, cs, cfg)
        oracle = solve_full_horizon(field_, grid, x0, cost, cs, lambda_oc, restarts=restarts,
                                    seed=seed)
        gap = run.objective - oracle.objective
        good += gap >= -slack
        rows.append({"seed": seed, "hardflow": run.objective, "oracle": oracle.objective,
                     "gap": gap, "oracle_converged": oracle.converged})
    frac = good / n_seeds if n_seeds else 1.0
    return _verdict("theorem1", frac >= min_fraction,
                    {"n_seeds": n_seeds, "fraction_nonnegative": frac, "slack": slack,
                     "min_gap": min(r["gap"] for r in rows) if rows else 0.0}, rows)


def surrogate_bound_suite(fields: dict, t_min: float = 0.8, t_max: float = 1.0, n_probes: int = 50,
                   n_steps: int = 50, lambda_oc: float = 1.0, seed: int = 0,
                   safety: float = 1.5) -> dict:
    """Surrogate-vs-exact objective gap against the contraction bound along a HardFlow run.

    `fields` maps labels to fields on the gauss2d/halfspace task. Every
    active step with ``t_min <= t_{i+1} <= t_max`` is probed; inapplicable
    steps (contraction factor >= 1) are reported, and at least half of the
    probed steps must be applicable.
    """
    task = gauss2d("halfspace")
    cfg = SamplerConfig(n_steps=n_steps, lambda_oc=lambda_oc)
    sched = get_scheduler(cfg.scheduler)
    details, n_probed, n_applicable, holds = [], 0, 0, True
    for label, field_ in fields.items():
        x0 = np.random.default_rng(seed).standard_normal(task.dim)
        run = sample_hardflow(field_, x0, task.cost, task.constraints, cfg)
        for i in range(run.n_steps):
            t1 = float(run.knots[i + 1])
            if not cfg.is_active(i) or not (t_min - 1e-12 <= t1 <= t_max + 1e-12):
                continue
            rep = check_fixed_point_bound(field_, sched, t1, float(run.knots[i + 1] - run.knots[i]),
                                          lambda_oc, run.predicted[i], n_probes=n_probes,
                                          safety=safety, rng=[seed, i])
            n_probed += 1
            n_applicable += rep.applicable
            holds &= rep.holds
            details.append({"field": label, "step": i, **rep.to_dict()})
    passed = holds and n_probed > 0 and n_applicable >= 0.5 * n_probed
    return _verdict("theorem3", passed,
                    {"t_min": t_min, "t_max": t_max, "steps_probed": n_probed,
                     "steps_applicable": n_applicable, "all_hold": holds,
                     "max_ratio": max((d["max_ratio"] for d in details), default=0.0)}, details)


def equivalence_suite(field_: VelocityField | None = None, n_seeds: int = 20, n_steps: int = 10,
                      tol: float = 1e-4) -> dict:
    """State-variable and estimate-variable recursions reach the same terminal point."""
    field_ = field_ or analytic_field()
    cost, cs = boundary_goal_instance()
    cfg = SamplerConfig(n_steps=n_steps)
    dists, rows = [], []
    for seed in range(n_seeds):
        x0 = np.random.default_rng(seed).standard_normal(field_.dim)
        out = equivalence_recursions(field_, x0, cost, cs, cfg)
        dist = float(np.linalg.norm(out["state"][0] - out["estimate"][0]))
        dists.append(dist)
        rows.append({"seed": seed, "distance": dist,
                     "converged": bool(out["state"][1] and out["estimate"][1])})
    worst = max(dists) if dists else 0.0
    return _verdict("equivalence", worst <= tol,
                    {"n_seeds": n_seeds, "max_distance": worst, "tolerance": tol}, rows)


def consistency_suite(field_: VelocityField | None = None, coarse: int = 25, fine: int = 50,
                      n_probes: int = 2000, seed: int = 0, band=(0.4, 0.6)) -> dict:
    """Mean per-step consistency error ratio when the step count doubles."""
    field_ = field_ or analytic_field()
    X0 = np.random.default_rng(seed).standard_normal((n_probes, field_.dim))
    e_c = measure_consistency_error(field_, "linear", TimeGrid.uniform(coarse), X0)
    e_f = measure_consistency_error(field_, "linear", TimeGrid.uniform(fine), X0)
    ratio = e_f.mean_error / e_c.mean_error if e_c.mean_error > 0 else float("nan")
    return _verdict("consistency", band[0] <= ratio <= band[1],
                    {"coarse_steps": coarse, "fine_steps": fine,
                     "coarse_mean_error": e_c.mean_error, "fine_mean_error": e_f.mean_error,
                     "ratio": ratio, "band": list(band)})


def shift_suite(field_: VelocityField | None = None, n_samples: int = 2000, seed: int = 0,
                n_boot: int = 200) -> dict:
    """Energy distance to rejection-sampled ground truth: HardFlow below post-hoc projection."""
    field_ = field_ or analytic_field()
    task = gauss2d("halfspace")
    rng = np.random.default_rng([seed, 1])
    reference = task.feasible_reference(rng, n_samples)
    X0 = task.sample_source(np.random.default_rng([seed, 2]), n_samples)
    out = {}
    for method in ("hardflow", "posthoc-projection"):
        cfg = SamplerConfig(n_steps=task.n_steps, method=method)
        out[method] = np.array([run_sampler(field_, x0, task.cost, task.constraints, cfg).terminal
                                for x0 in X0])
    ed = energy_distance_bootstrap(reference, out, n_boot=n_boot, rng=[seed, 3])
    hf, ph = ed["hardflow"], ed["posthoc-projection"]
    return _verdict("shift", hf["high"] < ph["low"] and hf["value"] < ph["value"],
                    {"n_samples": n_samples, "energy_distance": ed})


def random_projection_instance(rng, dim: int = 3) -> SubproblemInstance:
    """Quadratic cost plus one halfspace or one box: every solver applies."""
    anchor = 2 * rng.standard_normal(dim)
    weight = float(10 ** rng.uniform(-1, 2))
    cost = QuadraticCost(rng.standard_normal(dim), float(rng.uniform(0, 2)))
    if rng.random() < 0.5:
        a = rng.standard_normal(dim)
        cs = ConstraintSet([Halfspace(a, float(rng.normal()))])
    else:
        lo = -rng.uniform(0.2, 1.5, dim)
        cs = ConstraintSet([Box(lo, lo + rng.uniform(0.2, 2.0, dim))])
    return SubproblemInstance(anchor, weight, cost, cs)


def solvers_suite(n_instances: int = 50, seed: int = 0, tol: float = 1e-4,
                  kkt_tol: float = 1e-3) -> dict:
    """Closed form, projected gradient, and augmented Lagrangian agree; AL meets KKT."""
    rng = np.random.default_rng(seed)
    rows, worst_gap, worst_kkt = [], 0.0, 0.0
    for k in range(n_instances):
        inst = random_projection_instance(rng, int(rng.integers(2, 6)))
        cf = solve_closed_form(inst)
        pg = solve_projected_gradient(inst, SolverConfig(method="projected-gradient"))
        al = solve_aug_lagrangian(inst, SolverConfig(method="augmented-lagrangian"))
        scale = max(1.0, abs(cf.objective))
        gap = max(abs(cf.objective - pg.objective), abs(cf.objective - al.objective)) / scale
        worst_gap = max(worst_gap, gap)
        worst_kkt = max(worst_kkt, al.kkt_residual)
        rows.append({"instance": k, "closed_form": cf.objective, "projected_gradient": pg.objective,
                     "augmented_lagrangian": al.objective, "relative_gap": gap,
                     "kkt_residual": al.kkt_residual, "al_converged": al.converged})
    passed = worst_gap <= tol and worst_kkt <= kkt_tol and all(r["al_converged"] for r in rows)
    return _verdict("solvers", passed,
                    {"n_instances": n_instances, "max_relative_gap": worst_gap,
                     "max_kkt_residual": worst_kkt, "tolerance": tol}, rows)
