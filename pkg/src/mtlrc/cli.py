"""Command-line entry point: ``mtlrc <subcommand> [--config c.json] [--seed N] [--out path] [--format csv|json]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .bounds import grc_family, lrc_family
from .core import (
    ConfidenceParams,
    InvalidInput,
    LossSpec,
    PowerLawDecay,
    ProblemParams,
    TaskSpectra,
    power_law_spectra,
)
from .empirical import EigenSystem, MultiTaskSample, TalagrandConfig, empirical_grc, empirical_local_rc, talagrand_experiment
from .experiments import (
    GraphComparisonConfig,
    SweepConfig,
    TraceComparisonConfig,
    family_from_dict,
    run_comparison_graph,
    run_comparison_trace,
    run_sweep,
)
from .fixedpoint import excess_risk_dist, fixed_point_bound, solve_fixed_point, wrap_lrc
from .train import SyntheticTaskConfig, generate_tasks, risk_report, train_frank_wolfe


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def config_hash(config: dict, seed: int) -> str:
    blob = json.dumps({"config": config, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def to_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


# -- config helpers -----------------------------------------------------------


def _family(cfg: dict, T: int):
    fam = cfg.get("family", {"kind": "group", "q": 2.0})
    if isinstance(fam, str):
        fam = {"kind": fam, "q": cfg.get("q", 2.0), "radius": cfg.get("radius", 1.0), "graph": cfg.get("graph", {})}
    return family_from_dict(fam, T)


def _spectra(cfg: dict, T: int) -> TaskSpectra:
    if "spectra" in cfg:
        sp = TaskSpectra(cfg["spectra"])
        if sp.T != T:
            raise InvalidInput("spectra must list one sequence per task")
        return sp
    dec = cfg.get("decay", {"d": 1.0, "alpha": 2.0})
    decay = PowerLawDecay(dec.get("d", 1.0), dec.get("alpha", 2.0)).with_tasks(T)
    return power_law_spectra(decay, int(dec.get("length", 1024)))


def _loss(cfg: dict) -> LossSpec:
    d = cfg.get("loss", {})
    return LossSpec(d.get("L", 1.0), d.get("b", 1.0), d.get("B_prime", 1.0))


def _conf(cfg: dict) -> ConfidenceParams:
    d = cfg.get("confidence", {})
    return ConfidenceParams(d.get("K", 2.0), d.get("x", 1.0))


def _params(cfg: dict) -> ProblemParams:
    return ProblemParams(int(cfg.get("n", 100)), int(cfg.get("T", 1)), float(cfg.get("kernel_bound", 1.0)))


# -- subcommands: each returns (columns, rows, payload) -------------------------


def cmd_bound(cfg, seed):
    params = _params(cfg)
    fam = _family(cfg, params.T)
    sp = _spectra(cfg, params.T)
    rs = cfg.get("r", [1e-3, 1e-2, 1e-1])
    rs = rs if isinstance(rs, list) else [rs]
    tag = config_hash(cfg, seed)
    q = None if fam.kind == "graph" else fam.q

    def row(r, b):
        c = b.components
        return (tag, fam.kind, q, r, b.value, c.get("A1"), c.get("A2"), c.get("additive"))

    rows = [row(float(r), lrc_family(float(r), fam, sp, params)) for r in rs]
    rows.append(row(None, grc_family(fam, sp, params)))
    return ("config_hash", "family", "q", "r", "value", "A1", "A2", "additive"), rows, {}


def cmd_fixed_point(cfg, seed):
    params = _params(cfg)
    fam = _family(cfg, params.T)
    sp = _spectra(cfg, params.T)
    loss, conf = _loss(cfg), _conf(cfg)
    res = solve_fixed_point(wrap_lrc(fam, sp, params, loss))
    closed, h = fixed_point_bound(fam, sp, params, loss, return_h=True)
    convex = bool(cfg.get("convex", True))
    rows = [
        ("r_star", res.r_star),
        ("method", res.method),
        ("residual", res.residual),
        ("excess_risk", excess_risk_dist(res.r_star, loss, conf, params, convex)),
        ("confidence", 1.0 - math.exp(-conf.x)),
        ("r_star_closed_form", closed),
        ("excess_risk_closed_form", excess_risk_dist(closed, loss, conf, params, convex)),
    ]
    meta = {"truncation": [int(v) for v in h], "iterations": res.iterations}
    meta.update(rows[:5])
    return ("quantity", "value"), rows, meta


def read_sample_csv(path) -> MultiTaskSample:
    """Load a sample from CSV with columns task, y, x1..xp; every task needs the same row count."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        xcols = sorted((c for c in names if c[:1] == "x" and c[1:].isdigit()), key=lambda c: int(c[1:]))
        if "task" not in names or not xcols:
            raise InvalidInput("sample CSV needs columns task, y, x1..xp")
        by_task: dict = {}
        for rec in reader:
            y = rec.get("y")
            by_task.setdefault(int(rec["task"]), []).append(
                ([float(rec[c]) for c in xcols], float(y) if y not in (None, "") else 0.0))
    tasks = [by_task[k] for k in sorted(by_task)]
    if not tasks or len({len(t) for t in tasks}) != 1:
        raise InvalidInput("every task needs the same number of rows")
    X = np.array([[x for x, _ in t] for t in tasks])
    y = np.array([[v for _, v in t] for t in tasks])
    return MultiTaskSample(X, y)


def cmd_empirical(cfg, seed):
    T, n, p = int(cfg.get("T", 2)), int(cfg.get("n", 10)), int(cfg.get("p", 3))
    fam = _family(cfg, T)
    rng = np.random.default_rng([seed, 17])
    if "sample_csv" in cfg:
        sample = read_sample_csv(cfg["sample_csv"])
        fam = _family(cfg, sample.T)
    elif "features" in cfg:
        sample = MultiTaskSample(np.asarray(cfg["features"], float))
    else:
        sample = MultiTaskSample(EigenSystem.random(T, p, rng, float(cfg.get("decay", 1.0))).sample(n, rng))
    draws = int(cfg.get("mc_draws", 2000))
    g = empirical_grc(sample, fam, mc_draws=draws, seed=seed)
    rows = [("grc", None, g.estimate, g.std_error, g.draws, False)]
    local_draws = int(cfg.get("local_draws", 200))
    for r in cfg.get("r", []):
        e = empirical_local_rc(sample, fam, float(r), mc_draws=local_draws, seed=seed,
                               solver=cfg.get("solver", "auto"))
        rows.append(("local", float(r), e.estimate, e.std_error, e.draws, e.flagged))
    return ("quantity", "r", "estimate", "std_error", "draws", "flagged"), rows, g.as_dict()


def cmd_train(cfg, seed, weights_path=None):
    T, n, p = int(cfg.get("T", 4)), int(cfg.get("n", 100)), int(cfg.get("p", 5))
    fam = _family(cfg, T)
    seed = int(cfg.get("seed", seed))
    synth = SyntheticTaskConfig(
        T, n, p, fam,
        structure=cfg.get("structure", "shared_low_rank"),
        rank=int(cfg.get("rank", 1)),
        support=int(cfg.get("support", min(2, p))),
        noise_std=float(cfg.get("noise_std", 0.1)),
        features=cfg.get("features", "gaussian"),
        feature_bound=float(cfg.get("feature_bound", 1.0)),
        clip=bool(cfg.get("clip", False)),
    )
    sample, _, handle = generate_tasks(synth, seed)
    model = train_frank_wolfe(sample, fam, max_iters=int(cfg.get("iters", 1000)), tol=float(cfg.get("tol", 1e-6)))
    report = risk_report(model, handle, train_sample=sample, seed=seed)
    report.update(iterations=model.iterations, converged=model.converged,
                  final_gap=model.duality_gap_trace[-1])
    if weights_path:
        Path(weights_path).write_text(to_csv([f"task_{t}" for t in range(T)], model.W.tolist()))
    return ("quantity", "value"), sorted(report.items()), {}


def _sweep_table(table):
    rows = [("point",) + tuple(r) for r in table.rows]
    rows += [("slope", table.rows[0][0], None, name, s) for name, s in table.slopes.items()]
    return ("kind", "parameter", "grid_value", "bound", "value"), rows


def cmd_sweep(cfg, seed):
    table = run_sweep(SweepConfig.from_dict(cfg))
    cols, rows = _sweep_table(table)
    return cols, rows, {"slopes": table.slopes}


def cmd_compare_trace(cfg, seed):
    table = run_comparison_trace(TraceComparisonConfig.from_dict(cfg))
    return table.columns, table.rows, {"slopes": table.slopes, **table.meta}


def cmd_compare_graph(cfg, seed):
    out = run_comparison_graph(GraphComparisonConfig.from_dict(cfg))
    n_tab, T_tab = out["n_sweep"], out["T_sweep"]
    rows = [("n", r[0], r[1], r[2], r[3], None, None) for r in n_tab.rows]
    rows += [("T", r[0], r[1], None, r[2], r[3], r[4]) for r in T_tab.rows]
    cols = ("sweep", "grid_value", "global", "global_direct", "local", "global_gap", "local_gap")
    meta = {"n_slopes": n_tab.slopes, "T_slopes": T_tab.slopes, "graph": out["graph"], **T_tab.meta}
    return cols, rows, meta


def cmd_talagrand(cfg, seed):
    fam = _family(cfg, int(cfg.get("T", 3))) if "family" in cfg else None
    tc = TalagrandConfig.random(M=int(cfg.get("M", 50)), T=int(cfg.get("T", 3)), n=int(cfg.get("n", 20)),
                                p=int(cfg.get("p", 4)), x=float(cfg.get("x", 1.0)), family=fam,
                                b=float(cfg.get("b", 1.0)), redraws=int(cfg.get("redraws", 10_000)), seed=seed,
                                rademacher_draws=int(cfg.get("rademacher_draws", 4000)))
    res = talagrand_experiment(tc).as_dict()
    return ("quantity", "value"), sorted(res.items()), {}


COMMANDS = {
    "bound": cmd_bound,
    "fixed-point": cmd_fixed_point,
    "empirical": cmd_empirical,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "compare-trace": cmd_compare_trace,
    "compare-graph": cmd_compare_graph,
    "talagrand": cmd_talagrand,
}


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="write output here instead of stdout")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    parser = argparse.ArgumentParser(prog="mtlrc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "train":
            sp.add_argument("--weights", help="also write the trained weight matrix as CSV")
    val = sub.add_parser("validate", parents=[common], help="run the acceptance suite")
    val.add_argument("--only", type=int, nargs="*", help="criterion numbers to run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if args.command == "validate":
            return _validate(args)
        fn = COMMANDS[args.command]
        if args.command == "train":
            cols, rows, meta = fn(cfg, args.seed, args.weights)
        else:
            cols, rows, meta = fn(cfg, args.seed)
    except (InvalidInput, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"mtlrc {args.command}: {exc}", file=sys.stderr)
        return 2
    if args.format == "json":
        doc = {"command": args.command, "seed": args.seed, "config_sha256": config_hash(cfg, args.seed),
               "columns": list(cols), "rows": [list(r) for r in rows], **meta}
        _emit(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", args.out)
    else:
        _emit(to_csv(cols, rows), args.out)
    return 0


def _validate(args) -> int:
    from .acceptance import validate_all

    results = validate_all(args.seed, only=args.only, echo=lambda line: print(line, file=sys.stderr))
    # timings go to stderr only, so stdout stays byte-identical across runs
    rows = [(r.number, r.title, r.passed) for r in results]
    if args.format == "json":
        doc = {"seed": args.seed, "results": [
            {"number": r.number, "title": r.title, "passed": r.passed, "details": r.details}
            for r in results]}
        _emit(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", args.out)
    else:
        _emit(to_csv(("criterion", "title", "passed"), rows), args.out)
    failed = [r.number for r in results if not r.passed]
    if failed:
        print(f"failed criteria: {failed}", file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
