"""Command-line runner: ``drsp run``, ``drsp probe`` and ``drsp sweep``."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
import time
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import geometry as geo
from . import models
from . import network as net
from . import oracle
from . import problems
from . import rng as rngmod
from . import solver
from .errors import ConfigError, DrspError

log = logging.getLogger("drsp")

OUTPUT_ENV = "DRSP_OUTPUT_DIR"
SWEEP_PARAMS = ("cond_B", "graph_kind", "model_kind", "c")
PROBE_LEMMAS = ("normal_vector", "mean_gap", "backward_step", "retraction_constants")


# --------------------------------------------------------------------------
# configuration


def schema():
    return json.loads(resources.files("drsp.configs").joinpath("schema.json").read_text())


def bundled_configs():
    return sorted(
        p.name[: -len(".json")]
        for p in resources.files("drsp.configs").iterdir()
        if p.name.endswith(".json") and p.name != "schema.json"
    )


def resolve_config_path(name):
    """A file path, or the name of a bundled config (with or without .json)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    if stem in bundled_configs():
        return Path(str(resources.files("drsp.configs").joinpath(stem + ".json")))
    raise ConfigError(f"no such config file or bundled config: {name}", path="")


def validate_config(cfg):
    v = jsonschema.Draft202012Validator(schema())
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ConfigError(e.message, path=path)
    beta = cfg["solver"]["beta"]
    if beta["kind"] == "diminishing" and "c" not in beta and "c_by_model" not in beta:
        raise ConfigError("diminishing schedule needs 'c'", path="solver/beta/c")
    if beta["kind"] == "fixed_horizon" and "beta_bar" not in beta:
        raise ConfigError("fixed-horizon schedule needs 'beta_bar'", path="solver/beta/beta_bar")
    return cfg


def load_config(path):
    path = resolve_config_path(path)
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", path="") from exc
    cfg = validate_config(cfg)
    cfg.setdefault("name", Path(path).stem)
    return cfg


def _schedule(beta, model, K):
    if beta["kind"] == "fixed_horizon":
        return solver.fixed_horizon(beta["beta_bar"], beta.get("K", K))
    c = beta.get("c")
    by_model = beta.get("c_by_model", {})
    key = models.ModelKind.parse(model).value
    for name, val in by_model.items():
        if models.ModelKind.parse(name).value == key:
            c = val
    if c is None:
        raise ConfigError(f"no c for model {model!r}", path="solver/beta/c")
    return solver.diminishing(c)


def build(cfg):
    """(problem, topology, SolverConfig) from a validated config."""
    pspec = dict(cfg["problem"])
    problem = problems.build_problem(pspec)
    g = cfg["graph"]
    topo = net.build_topology(g["kind"], problem.n_agents, seed=g.get("seed", 0), p=g.get("p", 0.2))
    s = cfg["solver"]
    t = s.get("t", 1)
    if t == "auto":
        t = net.min_consensus_steps(net.metropolis_weights(topo, g.get("epsilon", 0.5)))
    sc = solver.SolverConfig(
        model=s["model"],
        beta=_schedule(s["beta"], s["model"], s["K"]),
        K=s["K"],
        alpha=s.get("alpha", 1.0),
        t=int(t),
        seed=s.get("seed", 0),
        delta1=s.get("delta1"),
        delta2=s.get("delta2"),
        log_every=s.get("log_every", 10),
        check_every=s.get("check_every", 50),
        stationarity_every=s.get("stationarity_every", 0),
        stationarity_iters=s.get("stationarity_iters", 2000),
        init=s.get("init", "shared"),
        scatter_radius=s.get("scatter_radius", 0.0),
    )
    return problem, topo, sc


def output_dir(cfg, override=None):
    if override is not None:
        return Path(override)
    root = os.environ.get(OUTPUT_ENV)
    if root:
        return Path(root) / cfg["name"]
    return Path(cfg.get("output", {}).get("dir", Path("runs") / cfg["name"]))


# --------------------------------------------------------------------------
# run


def execute(cfg, out, plot=True):
    """Run one config, write trajectory.csv, manifest.json and a figure; returns the trajectory."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    problem, topo, sc = build(cfg)
    t0 = time.perf_counter()
    traj, status = None, "completed"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            traj = solver.run(sc, problem, topo)
        except solver.RunAborted as exc:
            traj, status = exc.trajectory, f"aborted: {exc.cause}"
    wall = time.perf_counter() - t0
    csv_path = out / "trajectory.csv"
    csv_path.write_text(traj.to_csv())
    files = {"trajectory": str(csv_path)}
    if plot and traj.rows:
        from .plotting import plot_trajectory

        fig = plot_trajectory(traj.rows, out / "trajectory.png", title=cfg["name"])
        files["figure"] = str(fig)
    W = net.metropolis_weights(topo, cfg["graph"].get("epsilon", 0.5))
    manifest = {
        "config": cfg,
        "status": status,
        "seeds": {
            "problem": problem.seed,
            "solver": sc.seed,
            "graph": cfg["graph"].get("seed", 0),
        },
        "rng": "numpy Generator over Philox4x64-10; key=[seed, (purpose<<32)|index], counter=[0,0,k,0]",
        "problem": problem.describe(),
        "graph": {"kind": cfg["graph"]["kind"], "edges": len(topo.edges), "sigma2": net.sigma2(W)},
        "beta_schedule": sc.beta.to_json(),
        "constants": _jsonable(traj.constants),
        "final": _jsonable(traj.final),
        "warnings": [str(w.message) for w in caught],
        "K_is_desk_estimate": True,
        "outputs": files,
        "wall_clock_seconds": wall,
        "versions": {"numpy": np.__version__},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if status != "completed":
        raise DrspError(status)
    return traj


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def cmd_run(args):
    cfg = load_config(args.config)
    out = output_dir(cfg, args.output)
    traj = execute(cfg, out, plot=not args.no_plot and cfg.get("output", {}).get("plot", True))
    fin = traj.final
    print(
        f"{cfg['name']}: K={fin['k']} error={fin['error_metric']:.6g} "
        f"consensus={fin['consensus_error']:.3g} stationarity={fin['stationarity']['measure']:.3g}"
    )
    print(f"wrote {out}")
    return 0


# --------------------------------------------------------------------------
# sweep


def apply_param(cfg, param, value):
    cfg = copy.deepcopy(cfg)
    if param == "cond_B":
        if cfg["problem"]["kind"] != "gevp":
            raise ConfigError("cond_B only applies to the gevp problem", path="problem/cond_B")
        cfg["problem"]["cond_B"] = float(value)
    elif param == "graph_kind":
        cfg["graph"]["kind"] = str(value)
    elif param == "model_kind":
        cfg["solver"]["model"] = models.ModelKind.parse(value).value
    elif param == "c":
        cfg["solver"]["beta"]["c"] = float(value)
        cfg["solver"]["beta"].pop("c_by_model", None)
    else:
        raise ConfigError(f"cannot sweep {param!r}; choose from {', '.join(SWEEP_PARAMS)}", path="")
    cfg["name"] = f"{cfg['name']}__{param}={value}"
    return validate_config(cfg)


SUMMARY_COLUMNS = (
    "param",
    "value",
    "status",
    "K",
    "final_error_metric",
    "final_consensus_error",
    "final_objective",
    "final_stationarity",
)


def sweep(cfg, param, values, out, plot=True):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    runs, summary = {}, []
    for value in values:
        sub = apply_param(cfg, param, value)
        status = "completed"
        try:
            traj = execute(sub, out / f"{param}={value}", plot=False)
            fin = traj.final
            summary.append(
                [param, value, status, fin["k"], fin["error_metric"], fin["consensus_error"],
                 fin["objective_at_iam"], fin["stationarity"]["measure"]]
            )
            runs[f"{param}={value}"] = traj.rows
        except DrspError as exc:
            summary.append([param, value, f"aborted: {exc}", "", "", "", "", ""])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summary:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    if plot and runs:
        from .plotting import plot_runs

        plot_runs(runs, out / "comparison.png", title=f"{cfg['name']}: sweep over {param}")
    return summary


def cmd_sweep(args):
    cfg = load_config(args.config)
    out = output_dir(cfg, args.output)
    out = out.parent / f"{out.name}__sweep_{args.param}" if args.output is None else out
    summary = sweep(cfg, args.param, args.values, out, plot=not args.no_plot)
    for row in summary:
        print(" ".join(str(x) for x in row))
    print(f"wrote {out}")
    return 0 if all(r[2] == "completed" for r in summary) else 1


# --------------------------------------------------------------------------
# probes


def parse_manifold(spec):
    """sphere[:n[:r]], stiefel[:n:p], gen_stiefel[:n:p[:cond]] or euclidean[:d]."""
    kind, *rest = spec.split(":")
    nums = [float(x) for x in rest]
    if kind == "sphere":
        return geo.Sphere(int(nums[0]) if nums else 3, nums[1] if len(nums) > 1 else 1.0)
    if kind == "stiefel":
        return geo.Stiefel(*(int(x) for x in nums)) if nums else geo.Stiefel(5, 2)
    if kind in ("gen_stiefel", "generalized_stiefel"):
        n, p = (int(nums[0]), int(nums[1])) if len(nums) >= 2 else (6, 3)
        cond = nums[2] if len(nums) > 2 else 10.0
        B = problems.spd_with_condition(n, cond, rngmod.stream(0, rngmod.DIAGNOSTICS, 7))
        return geo.GeneralizedStiefel(n, p, B)
    if kind == "euclidean":
        return geo.Euclidean(int(nums[0]) if nums else 3)
    raise ConfigError(f"unknown manifold {spec!r}", path="manifold")


def probe_backward_step(trials, seed):
    """Random prox calls on every problem family; max of ||v|| - L / beta."""
    gen = rngmod.stream(seed, rngmod.DIAGNOSTICS, 2)
    cases = [
        (problems.gen_blind_deconv(N=4, seed=seed, eval_pool=10), ("ssg", "spp", "spl"), 1.0),
        (problems.gen_dict_learn(m=400, N=4, seed=seed), ("ssg", "spp", "spl"), 1.0),
        (problems.gen_gevp(m_each=100, N=4, seed=seed), ("ssg", "spp"), 10.0),
    ]
    worst = -math.inf
    for j in range(trials):
        prob, kinds, bmin = cases[j % len(cases)]
        X = geo.random_point(prob.manifold, gen)
        xi = prob.draw_sample(j % prob.n_agents, j)
        kind = kinds[(j // len(cases)) % len(kinds)]
        beta = bmin * float(np.exp(gen.uniform(0.0, np.log(50.0))))
        res = models.prox_step(kind, prob, X, xi, beta)
        worst = max(worst, float(np.linalg.norm(res.v)) - res.lipschitz / beta)
    return {"trials": trials, "max_violation": worst, "passed": worst <= 1e-8}


def run_probe(manifold, lemma, trials, seed):
    gen = rngmod.stream(seed, rngmod.DIAGNOSTICS, 3)
    if lemma == "backward_step":
        return probe_backward_step(trials, seed)
    M = parse_manifold(manifold)
    if lemma == "normal_vector":
        if not isinstance(M, (geo.Sphere, geo.Stiefel)):
            raise ConfigError("normal_vector probe supports sphere and stiefel", path="manifold")
        return oracle.probe_normal_inequality(M, trials, gen)
    if lemma == "mean_gap":
        if not isinstance(M, (geo.Sphere, geo.Stiefel)):
            raise ConfigError("mean_gap probe supports sphere and stiefel", path="manifold")
        return oracle.probe_mean_gap(M, trials, gen)
    if lemma == "retraction_constants":
        c = geo.fit_retraction_constants(M, trials, gen)
        return {"trials": trials, "M1": c.M1, "M2": c.M2, "passed": math.isfinite(c.M1) and math.isfinite(c.M2)}
    raise ConfigError(f"unknown lemma {lemma!r}", path="lemma")


def cmd_probe(args):
    rep = run_probe(args.manifold, args.lemma, args.trials, args.seed)
    for k, v in rep.items():
        print(f"{k}: {v}")
    print("PASS" if rep["passed"] else "FAIL")
    return 0 if rep["passed"] else 1


# --------------------------------------------------------------------------


def make_parser():
    ap = argparse.ArgumentParser(prog="drsp", description="Distributed Riemannian stochastic proximal experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one config")
    r.add_argument("config", help="config file or bundled config name")
    r.add_argument("-o", "--output", help=f"output directory (default: ${OUTPUT_ENV}/<name> or runs/<name>)")
    r.add_argument("--no-plot", action="store_true", help="skip the PNG figure")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("probe", help="run a lemma probe")
    p.add_argument("manifold", help="sphere[:n[:r]], stiefel[:n:p], gen_stiefel[:n:p[:cond]], euclidean[:d], any")
    p.add_argument("lemma", choices=PROBE_LEMMAS)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    s = sub.add_parser("sweep", help="rerun a config over one parameter")
    s.add_argument("config")
    s.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("-o", "--output")
    s.add_argument("--no-plot", action="store_true")
    s.set_defaults(func=cmd_sweep)

    sub.add_parser("configs", help="list bundled configs").set_defaults(
        func=lambda a: print("\n".join(bundled_configs())) or 0
    )
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DrspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
