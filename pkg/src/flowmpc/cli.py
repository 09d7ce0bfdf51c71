"""Command-line interface: ``flowmpc {train,sample,bench,verify}``.

Exit codes: 0 success, 1 a check failed (or an invalid sample was produced),
2 usage or configuration error. ``HARDFLOW_OUTPUT_DIR`` overrides the output
directory from the config file; ``--out`` overrides both.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, checks
from .formats import (ConfigError, config_hash, describe_sampler, file_sha256, header,
                      load_config, sampler_config, train_config, write_csv, write_json,
                      write_jsonl)
from .samplers import (METHODS, InfeasibleSampleError, NonFiniteStateError, SamplerConfig,
                       run_sampler)
from .solvers import SolverDivergedError
from .tasks import TASKS, TaskSpec, get_task
from .velocity import (CheckpointError, VelocityField, load_checkpoint, read_checkpoint_header,
                       save_checkpoint)
from .verification import energy_distance_bootstrap

OUTPUT_ENV = "HARDFLOW_OUTPUT_DIR"
HARD_FEASIBILITY_METHODS = ("hardflow", "posthoc-projection", "projection-all", "projection-late")
HELDOUT_SIZE = 2048
PLOT_COORDINATE_LIMIT = 8


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _config(args) -> dict:
    return load_config(args.config) if getattr(args, "config", None) else {}


def _task(args, cfg) -> TaskSpec:
    name = getattr(args, "task", None) or cfg.get("task", {}).get("name")
    if name is None:
        raise UsageError("no task given (use --task or a config with a [task] section)")
    if name not in TASKS:
        raise UsageError(f"unknown task {name!r}; available: {', '.join(sorted(TASKS))}")
    return get_task(name)


def _output_dir(args, cfg) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV) or cfg.get("output", {}).get("dir") or "outputs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _field(args, task: TaskSpec, cfg: dict, seed: int) -> tuple[VelocityField, str]:
    """Checkpoint if given, exact field for analytic tasks, otherwise a freshly trained network."""
    if getattr(args, "checkpoint", None):
        path = Path(args.checkpoint)
        if not path.is_file():
            raise UsageError(f"checkpoint not found: {path}")
        field_ = load_checkpoint(path)
        if field_.dim != task.dim:
            raise UsageError(f"checkpoint dimension {field_.dim} does not match task "
                             f"{task.name} (dimension {task.dim})")
        return field_, f"checkpoint:{file_sha256(path)[:16]}"
    if task.analytic:
        return task.default_field(seed), "analytic"
    tcfg = train_config(cfg, replace(task.train, seed=seed))
    pool = cfg.get("train", {}).get("pool_size", 20000)
    return task.train_network(tcfg, pool_size=pool), f"trained:seed={tcfg.seed}"


def _sources(task: TaskSpec, seed: int, num: int) -> np.ndarray:
    """One independent stream per sample so results do not depend on the worker count."""
    children = np.random.SeedSequence(seed).spawn(num)
    if not children:
        return np.zeros((0, task.dim))
    return np.array([task.sample_source(np.random.default_rng(c), 1)[0] for c in children])


def _sample_one(field_, task: TaskSpec, cfg: SamplerConfig, x0):
    start = time.perf_counter()
    run, error = None, None
    try:
        run = run_sampler(field_, x0, task.cost, task.constraints, cfg)
    except InfeasibleSampleError as err:
        run, error = err.run, str(err)
    except (NonFiniteStateError, SolverDivergedError, FloatingPointError) as err:
        error = f"{type(err).__name__}: {err}"
    rec = {"x0": x0, "terminal": None, "residual": None, "feasible": False,
           "block_residuals": {}, "cost": None, "objective": None, "final_converged": False,
           "error": error, "metrics": {}}
    if run is not None:
        rep = run.report
        rec.update(terminal=run.terminal, residual=rep.residual, feasible=rep.feasible,
                   block_residuals=rep.block_residuals, cost=run.cost, objective=run.objective,
                   final_converged=bool(run.final_converged and error is None),
                   metrics=task.extra_metrics(run.terminal))
        if error is not None:
            rec["feasible"] = False
    return rec, time.perf_counter() - start


_WORKER = {}


def _worker_init(field_, task_name, cfg):
    _WORKER.update(field=field_, task=get_task(task_name), cfg=cfg)


def _worker_run(x0):
    return _sample_one(_WORKER["field"], _WORKER["task"], _WORKER["cfg"], x0)


def _sample_many(field_, task: TaskSpec, cfg: SamplerConfig, X0, workers: int):
    if workers <= 1 or len(X0) <= 1:
        out = [_sample_one(field_, task, cfg, x0) for x0 in X0]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(field_, task.name, cfg)) as pool:
            out = list(pool.map(_worker_run, list(X0), chunksize=max(1, len(X0) // (4 * workers))))
    return [r for r, _ in out], [t for _, t in out]


def _mean(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def _max(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.max(vals)) if vals else None


def _sample_rows(records, dim, method=None, coords=True):
    rows = []
    for i, rec in enumerate(records):
        row = {"index": i, "feasible": int(rec["feasible"]), "residual": rec["residual"],
               "cost": rec["cost"], "objective": rec["objective"],
               "final_converged": int(rec["final_converged"])}
        if method is not None:
            row["method"] = method
        row.update({f"residual_{k}": v for k, v in rec["block_residuals"].items()})
        row.update(rec["metrics"])
        if coords and rec["terminal"] is not None:
            row.update({f"terminal_{j}": v for j, v in enumerate(rec["terminal"])})
        rows.append(row)
    return rows


def _sample_columns(task: TaskSpec, records, coords=True, method=False):
    cols = (["method"] if method else []) + ["index", "feasible", "residual", "cost", "objective",
                                             "final_converged"]
    cols += [f"residual_{b.name}" for b in task.constraints.blocks]
    extra = sorted({k for r in records for k in r["metrics"]})
    cols += extra
    if coords:
        cols += [f"terminal_{j}" for j in range(task.dim)]
    return cols


def _write_timing(out: Path, command: str, total: float, per_item: dict) -> None:
    write_json(out / "timing.json", {**header("timing"), "command": command,
                                     "total_seconds": total, "per_item_seconds": per_item},
               "timing")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    start = time.perf_counter()
    cfg = _config(args)
    task = _task(args, cfg)
    tcfg = train_config(cfg, task.train)
    if args.seed is not None:
        tcfg = replace(tcfg, seed=args.seed)
    if args.steps is not None:
        tcfg = replace(tcfg, steps=args.steps)
    sched = cfg.get("train", {}).get("scheduler", "linear")
    pool = cfg.get("train", {}).get("pool_size", 20000)
    out = _output_dir(args, cfg)

    field_ = task.train_network(tcfg, scheduler=sched, pool_size=pool)
    init = task.train_network(replace(tcfg, steps=0), scheduler=sched, pool_size=pool)
    rng = np.random.default_rng([tcfg.seed, 99])
    x0, x1 = task.pairs(rng, HELDOUT_SIZE)
    t = rng.random(HELDOUT_SIZE)
    held_init, held_final = init.loss(x0, x1, t), field_.loss(x0, x1, t)

    ckpt = out / "checkpoint.fmpc"
    save_checkpoint(field_, ckpt, extra={"task": task.name})
    curve = field_.loss_curve_
    log = {**header("train_log"), "task": task.name,
           "config": {"train": {**tcfg.__dict__, "hidden": list(tcfg.hidden)},
                      "scheduler": sched, "pool_size": pool},
           "checkpoint": ckpt.name, "checkpoint_sha256": file_sha256(ckpt),
           "n_parameters": field_.n_parameters, "loss_curve": curve,
           "initial_loss": curve[0] if curve else None, "final_loss": curve[-1] if curve else None,
           "heldout_loss_initial": held_init, "heldout_loss_final": held_final}
    write_json(out / "train_log.json", log, "train_log")
    _write_timing(out, "train", time.perf_counter() - start, {})
    print(f"trained {task.name}: held-out CFM loss {held_init:.4f} -> {held_final:.4f}; "
          f"checkpoint {ckpt}")
    if tcfg.steps > 0 and not held_final < held_init:
        print("check failed: held-out loss did not decrease", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------

def _sampler_overrides(args):
    return {"method": getattr(args, "method", None), "lambda_oc": args.lambda_oc,
            "n_steps": args.steps, "activation": args.activation}


def cmd_sample(args) -> int:
    start = time.perf_counter()
    cfg = _config(args)
    task = _task(args, cfg)
    scfg = sampler_config(cfg, task.n_steps, **_sampler_overrides(args))
    out = _output_dir(args, cfg)
    field_, label = _field(args, task, cfg, args.seed)
    desc = {"task": task.name, "sampler": describe_sampler(scfg), "field": label}
    chash = config_hash(desc)

    X0 = _sources(task, args.seed, args.num)
    records, times = _sample_many(field_, task, scfg, X0, args.workers)
    for i, rec in enumerate(records):
        rec.update({**header("sample_record"), "index": i, "seed": args.seed,
                    "config_hash": chash, "method": scfg.method})
    write_jsonl(out / "samples.jsonl", records, "sample_record")
    write_csv(out / "samples.csv", _sample_rows(records, task.dim),
              _sample_columns(task, records))
    failures = sum(r["error"] is not None for r in records)
    summary = {**header("sample_summary"), "task": task.name, "method": scfg.method,
               "seed": args.seed, "num": args.num, "config": desc, "config_hash": chash,
               "field": label,
               "safety_rate": float(np.mean([r["feasible"] for r in records])) if records else None,
               "mean_residual": _mean([r["residual"] for r in records]),
               "max_residual": _max([r["residual"] for r in records]),
               "mean_cost": _mean([r["cost"] for r in records]),
               "mean_objective": _mean([r["objective"] for r in records]),
               "solver_failures": failures}
    write_json(out / "summary.json", summary, "sample_summary")
    _write_timing(out, "sample", time.perf_counter() - start, {scfg.method: times})
    rate = summary["safety_rate"]
    print(f"{task.name} {scfg.method}: {args.num} samples, safety rate "
          f"{'n/a' if rate is None else f'{rate:.4f}'}, solver failures {failures}")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _parse_methods(text: str) -> list[str]:
    if text == "all":
        return list(METHODS)
    methods = [m.strip() for m in text.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown method(s) {unknown or text!r}; choose from {', '.join(METHODS)}")
    return methods


def box_stats(values) -> dict:
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {"n": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    return {"n": int(v.size), "min": float(v.min()), "whisker_low": float(inside.min()),
            "q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_high": float(inside.max()), "max": float(v.max()), "mean": float(v.mean()),
            "n_outliers": int(v.size - inside.size)}


def _plot_tables(per_method: dict, metrics: list[str], bins: int = 20):
    box, hist = [], []
    for metric in metrics:
        data = {m: [r.get(metric) for r in rows] for m, rows in per_method.items()}
        pooled = np.asarray([x for vals in data.values() for x in vals
                             if x is not None and np.isfinite(x)], dtype=float)
        edges = np.histogram_bin_edges(pooled, bins=bins) if pooled.size else None
        for m, vals in data.items():
            box.append({"method": m, "metric": metric, **box_stats(vals)})
            if edges is None:
                continue
            finite = np.asarray([x for x in vals if x is not None and np.isfinite(x)], dtype=float)
            counts, _ = np.histogram(finite, bins=edges)
            for k, c in enumerate(counts):
                hist.append({"method": m, "metric": metric, "bin": k, "left": edges[k],
                             "right": edges[k + 1], "count": int(c)})
    return box, hist


def cmd_bench(args) -> int:
    start = time.perf_counter()
    cfg = _config(args)
    task = _task(args, cfg)
    methods = _parse_methods(args.methods)
    base = sampler_config(cfg, task.n_steps, **_sampler_overrides(args))
    out = _output_dir(args, cfg)
    field_, label = _field(args, task, cfg, args.seed)
    desc = {"task": task.name, "sampler": describe_sampler(base), "field": label,
            "methods": methods, "n_boot": args.n_boot}
    chash = config_hash(desc)

    X0 = _sources(task, args.seed, args.num)
    per_method, timings = {}, {}
    for m in methods:
        recs, times = _sample_many(field_, task, replace(base, method=m), X0, args.workers)
        per_method[m], timings[m] = recs, times

    reference = (task.feasible_reference(np.random.default_rng([args.seed, 1]), args.num)
                 if args.num else np.zeros((0, task.dim)))
    terminals = {m: np.array([r["terminal"] for r in recs if r["terminal"] is not None])
                 for m, recs in per_method.items()}
    usable = {m: T for m, T in terminals.items() if len(T) and len(reference)}
    ed = energy_distance_bootstrap(reference, usable, n_boot=args.n_boot,
                                   rng=[args.seed, 3]) if usable else {}

    rows = []
    blocks = [b.name for b in task.constraints.blocks]
    for m, recs in per_method.items():
        e = ed.get(m, {})
        rows.append({
            "method": m, "n": len(recs),
            "safety_rate": float(np.mean([r["feasible"] for r in recs])) if recs else None,
            "mean_residual": _mean([r["residual"] for r in recs]),
            "max_residual": _max([r["residual"] for r in recs]),
            "mean_cost": _mean([r["cost"] for r in recs]),
            "mean_objective": _mean([r["objective"] for r in recs]),
            "energy_distance": e.get("value"), "energy_distance_low": e.get("low"),
            "energy_distance_high": e.get("high"),
            "solver_failures": sum(r["error"] is not None for r in recs),
            "block_residuals": {b: _max([r["block_residuals"].get(b) for r in recs]) for b in blocks},
            "metrics": {k: _mean([r["metrics"].get(k) for r in recs])
                        for k in sorted({k for r in recs for k in r["metrics"]})},
        })

    bench_checks = []
    by = {r["method"]: r for r in rows}
    if "hardflow" in by and args.num:
        hf = by["hardflow"]
        bench_checks.append({"name": "hardflow_safety_rate", "passed": hf["safety_rate"] == 1.0,
                             "detail": f"safety rate {hf['safety_rate']}"})
        for b in blocks:
            worst = hf["block_residuals"][b]
            bench_checks.append({"name": f"hardflow_{b}_residual",
                                 "passed": worst is not None and worst <= 1e-6,
                                 "detail": f"max residual {worst}"})
        rivals = [m for m in HARD_FEASIBILITY_METHODS if m in by and m != "hardflow"]
        if rivals and hf["energy_distance"] is not None:
            best = min(rivals, key=lambda m: by[m]["energy_distance"])
            bench_checks.append({
                "name": "hardflow_lowest_energy_distance",
                "passed": hf["energy_distance"] < by[best]["energy_distance"],
                "detail": f"hardflow {hf['energy_distance']:.6f} vs {best} "
                          f"{by[best]['energy_distance']:.6f}"})
    passed = all(c["passed"] for c in bench_checks)

    report = {**header("bench_report"), "task": task.name, "seed": args.seed, "num": args.num,
              "methods": methods, "config": desc, "config_hash": chash, "field": label,
              "reference_size": len(reference), "rows": rows, "checks": bench_checks,
              "passed": passed}
    write_json(out / "bench.json", report, "bench_report")
    flat_cols = ["method", "n", "safety_rate", "mean_residual", "max_residual", "mean_cost",
                 "mean_objective", "energy_distance", "energy_distance_low",
                 "energy_distance_high", "solver_failures"]
    extra = sorted({k for r in rows for k in r["metrics"]})
    flat = [{**{c: r[c] for c in flat_cols},
             **{f"residual_{b}": r["block_residuals"][b] for b in blocks},
             **{f"mean_{k}": r["metrics"].get(k) for k in extra}} for r in rows]
    write_csv(out / "bench.csv", flat,
              flat_cols + [f"residual_{b}" for b in blocks] + [f"mean_{k}" for k in extra])

    coords = task.dim <= PLOT_COORDINATE_LIMIT
    all_recs = [r for recs in per_method.values() for r in recs]
    sample_rows = {m: _sample_rows(recs, task.dim, method=m, coords=coords)
                   for m, recs in per_method.items()}
    write_csv(out / "samples.csv", [r for rs in sample_rows.values() for r in rs],
              _sample_columns(task, all_recs, coords=coords, method=True))
    metrics = ["residual", "cost", "objective"] + sorted({k for r in all_recs for k in r["metrics"]})
    box, hist = _plot_tables(sample_rows, metrics)
    write_csv(out / "boxstats.csv", box,
              ["method", "metric", "n", "min", "whisker_low", "q1", "median", "q3",
               "whisker_high", "max", "mean", "n_outliers"])
    write_csv(out / "histogram.csv", hist, ["method", "metric", "bin", "left", "right", "count"])
    _write_timing(out, "bench", time.perf_counter() - start, timings)

    for r in rows:
        ed_txt = "n/a" if r["energy_distance"] is None else f"{r['energy_distance']:.4f}"
        print(f"{r['method']:>20s}  safety {r['safety_rate']}  ED {ed_txt}")
    for c in bench_checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    return 0 if passed else 1


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

SUITE_SIZES = {
    False: {"identity": 10_000, "feasibility": 200, "nominal": 100, "theorem1": 100,
            "equivalence": 20, "consistency": 2000, "shift": 2000, "solvers": 50, "probes": 50},
    True: {"identity": 2000, "feasibility": 20, "nominal": 10, "theorem1": 10,
           "equivalence": 3, "consistency": 500, "shift": 300, "solvers": 10, "probes": 10},
}


def cmd_verify(args) -> int:
    start = time.perf_counter()
    out = _output_dir(args, {})
    sizes = SUITE_SIZES[bool(args.quick)]
    seed = args.seed
    analytic = checks.analytic_field()
    extra_field, label, ckpt_task = None, "analytic", None
    if args.checkpoint:
        path = Path(args.checkpoint)
        if not path.is_file():
            raise UsageError(f"checkpoint not found: {path}")
        extra_field = load_checkpoint(path)
        ckpt_task = read_checkpoint_header(path).get("extra", {}).get("task")
        label = f"analytic+checkpoint:{file_sha256(path)[:16]}"
    if not 0.0 <= args.t_min <= args.t_max <= 1.0:
        raise UsageError("need 0 <= --t-min <= --t-max <= 1")

    suites = checks.SUITES if args.suite == "full" else (args.suite,)
    results, timings = [], {}
    for name in suites:
        t0 = time.perf_counter()
        if name == "identity":
            res = [checks.identity_suite(sizes["identity"], seed=seed)]
        elif name == "feasibility":
            res = [checks.feasibility_suite(get_task(t), analytic, sizes["feasibility"], seed=seed)
                   for t in ("gauss2d/halfspace", "gauss2d/ball-obstacle")]
            if extra_field is not None and ckpt_task in TASKS and not get_task(ckpt_task).analytic:
                res.append(checks.feasibility_suite(get_task(ckpt_task), extra_field,
                                                    sizes["feasibility"], seed=seed))
        elif name == "nominal-reduction":
            res = [checks.nominal_reduction_suite(analytic, sizes["nominal"])]
        elif name == "theorem1":
            res = [checks.oracle_gap_suite(analytic, sizes["theorem1"])]
        elif name == "theorem3":
            fields = {"analytic": analytic}
            if extra_field is not None and extra_field.dim == 2:
                fields["checkpoint"] = extra_field
            res = [checks.surrogate_bound_suite(fields, args.t_min, args.t_max, sizes["probes"], seed=seed)]
        elif name == "equivalence":
            res = [checks.equivalence_suite(analytic, sizes["equivalence"])]
        elif name == "consistency":
            res = [checks.consistency_suite(analytic, n_probes=sizes["consistency"], seed=seed)]
        elif name == "shift":
            res = [checks.shift_suite(analytic, sizes["shift"], seed=seed)]
        else:
            res = [checks.solvers_suite(sizes["solvers"], seed=seed)]
        timings[name] = [time.perf_counter() - t0]
        results.extend(res)
        for r in res:
            print(f"{'PASS' if r['passed'] else 'FAIL'} {r['suite']}")

    passed = all(r["passed"] for r in results)
    write_json(out / "verify.json", {**header("verify_report"), "suite": args.suite, "field": label,
                                     "seed": seed, "quick": bool(args.quick), "passed": passed,
                                     "results": results}, "verify_report")
    _write_timing(out, "verify", time.perf_counter() - start, timings)
    return 0 if passed else 1


# ---------------------------------------------------------------------------

def _add_sampling_flags(p, with_method=True):
    p.add_argument("--task", help="task name (default: from --config)")
    p.add_argument("--config", help="INI config file or packaged config name")
    p.add_argument("--checkpoint", help="trained field; analytic tasks default to the exact field")
    if with_method:
        p.add_argument("--method", choices=METHODS, help="sampler (default: from config, hardflow)")
    p.add_argument("--lambda-oc", type=float, dest="lambda_oc", help="control-energy weight")
    p.add_argument("--steps", type=int, help="number of Euler steps")
    p.add_argument("--activation", type=float, help="fraction of early steps left uncontrolled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num", type=_nonneg_int, default=100, help="number of samples")
    p.add_argument("--workers", type=_pos_int, default=1)
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./outputs)")


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowmpc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"flowmpc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a velocity network and write a checkpoint")
    p.add_argument("--config", required=True, help="INI config file or packaged config name")
    p.add_argument("--task")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=_nonneg_int, help="override the number of training steps")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw samples with one sampler")
    _add_sampling_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("bench", help="compare samplers on one task")
    _add_sampling_flags(p, with_method=False)
    p.add_argument("--methods", default="all", help="comma-separated sampler names or 'all'")
    p.add_argument("--n-boot", type=_pos_int, default=200, dest="n_boot",
                   help="bootstrap resamples for energy-distance intervals")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("--suite", default="full", choices=(*checks.SUITES, "full"))
    p.add_argument("--checkpoint", help="also check this trained field")
    p.add_argument("--t-min", type=float, default=0.8, dest="t_min")
    p.add_argument("--t-max", type=float, default=1.0, dest="t_max")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="smaller probe counts")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
