"""
Batch command line front end.

Every subcommand reads one JSON config (``--config``), writes CSV and JSON
files into ``--out`` and exits with 0 on success, 1 on a usage or config
error and 2 on numerical non-convergence. The JSON summaries echo the fully
resolved config, defaults included.

CSV schemas (header row, '.' decimal, 17 significant digits)::

    dataset.csv       y,x1..xd,residual        residual = y - <x, theta0>
    coefficients.csv  index,value
    resolvent.csv     n,probe,distance
    statistics.csv    replication,statistic
    hessian.csv       row,col,estimate,closed_form
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import convex, estimation, inference, mosco
from .exceptions import MoscoError
from .hilbert import SymOp
from .samples import SampleSet
from .sets import Ball, HalfSpace, WholeSpace

SCHEMA_VERSION = "1"


class ConfigError(Exception):
    pass


# -- config handling ------------------------------------------------------------------

MODEL_DEFAULTS = {"theta0": None, "noise": None, "n": None, "design": None, "decay": None}
NOISE_DEFAULTS = {
    "laplace": {"kind": "laplace", "scale": 1.0},
    "gaussian": {"kind": "gaussian", "sigma": 1.0},
    "student_t": {"kind": "student_t", "df": 3.0, "scale": 1.0},
}

COMMAND_DEFAULTS = {
    "simulate": {"model": None, "seed": None},
    "fit": {
        "data": None, "model": None, "seed": None, "penalty_weight": 0.0, "penalty_form": "norm",
        "constraint": None, "tol": 1e-8, "max_iter": 200_000,
    },
    "mosco": {
        "dim": None, "fixture": None, "sequence": None, "limit": None, "lam": 1.0, "probes": None,
        "probe_count": 32, "seed": None, "family": None,
    },
    "lan": {
        "model": None, "probe": None, "replications": None, "seed": None, "penalty_c": 0.0,
        "penalty_form": "norm", "tol": 1e-8, "max_iter": 200_000,
    },
    "lr": {
        "model": None, "hypothesis": None, "replications": None, "seed": None, "penalty_c": 0.0,
        "penalty_form": "norm", "tol": 1e-8, "max_iter": 200_000, "limit_draws": 20_000,
    },
    "hessian": {"model": None, "seed": None, "oracle": "smoothed", "bandwidth": None, "steps": None},
}
REQUIRED = {
    "simulate": ("model", "seed"),
    "fit": (),
    "mosco": ("dim",),
    "lan": ("model", "probe", "replications", "seed"),
    "lr": ("model", "hypothesis", "replications", "seed"),
    "hessian": ("model", "seed"),
}
FAMILY_DEFAULTS = {"kind": "default", "K": mosco.DEFAULT_FAMILY_SIZE, "lam0": 1.0, "seed": 0}
HYPOTHESIS_DEFAULTS = {"full_set": None, "null_set": None, "theta0": None, "t": None}


def _merge(block, defaults, where):
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = sorted(set(block) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(unknown)}")
    out = dict(defaults)
    out.update(block)
    return out


def _require(cfg, keys, where):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required field(s) in {where}: {', '.join(missing)}")


def resolve_model(block):
    cfg = _merge(block, MODEL_DEFAULTS, "model")
    _require(cfg, ("theta0", "n"), "model")
    noise = cfg["noise"] or {"kind": "laplace"}
    if not isinstance(noise, dict) or noise.get("kind") not in NOISE_DEFAULTS:
        raise ConfigError(f"model.noise.kind must be one of {sorted(NOISE_DEFAULTS)}")
    cfg["noise"] = _merge(noise, NOISE_DEFAULTS[noise["kind"]], "model.noise")
    dim = len(cfg["theta0"])
    if cfg["decay"] is None:
        cfg["decay"] = estimation.harmonic_decay(dim).tolist()
    if cfg["design"] is None:
        cfg["design"] = np.eye(dim).tolist()
    return cfg


def build_model(cfg):
    noise = dict(cfg["noise"])
    kind = noise.pop("kind")
    law = estimation.NOISE_KINDS[kind](**noise)
    return estimation.ModelSpec(
        np.asarray(cfg["theta0"], dtype=float), law, int(cfg["n"]), SymOp(cfg["design"]),
        np.asarray(cfg["decay"], dtype=float),
    )


SET_FIELDS = {"whole": {"kind", "dim"}, "ball": {"kind", "radius", "center"}, "halfspace": {"kind", "normal", "offset"}}


def build_set(block, dim):
    if block is None:
        return WholeSpace(dim)
    kind = block.get("kind") if isinstance(block, dict) else None
    if kind not in SET_FIELDS:
        raise ConfigError(f"set kind must be one of {sorted(SET_FIELDS)}")
    unknown = sorted(set(block) - SET_FIELDS[kind])
    if unknown:
        raise ConfigError(f"unknown field(s) in {kind} set: {', '.join(unknown)}")
    if kind == "whole":
        return WholeSpace(dim)
    if kind == "ball":
        return Ball(block["radius"], block.get("center", [0.0] * dim))
    return HalfSpace(block["normal"], block.get("offset", 0.0))


FUNCTIONAL_FIELDS = {
    "zero": {"kind"},
    "quadratic": {"kind", "op", "center"},
    "norm_penalty": {"kind", "weight", "form"},
    "abs_residual": {"kind", "y", "x"},
    "indicator": {"kind", "set"},
    "sum": {"kind", "terms"},
}


def build_functional(block, dim):
    kind = block.get("kind") if isinstance(block, dict) else None
    if kind not in FUNCTIONAL_FIELDS:
        raise ConfigError(f"functional kind must be one of {sorted(FUNCTIONAL_FIELDS)}")
    unknown = sorted(set(block) - FUNCTIONAL_FIELDS[kind])
    if unknown:
        raise ConfigError(f"unknown field(s) in {kind} functional: {', '.join(unknown)}")
    if kind == "zero":
        return convex.zero_functional(dim)
    if kind == "quadratic":
        return convex.Quadratic(SymOp(block["op"]), block.get("center"))
    if kind == "norm_penalty":
        return convex.NormPenalty(block["weight"], dim, block.get("form", "norm"))
    if kind == "abs_residual":
        return convex.AbsResidual(block["y"], block["x"])
    if kind == "indicator":
        return convex.Indicator(build_set(block["set"], dim))
    return convex.ScaledSum([(c, build_functional(f, dim)) for c, f in block["terms"]])


# -- output -------------------------------------------------------------------------------


def fmt(x):
    return format(float(x), ".17g")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, (int, np.integer, str)) else fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


def write_json(path, payload):
    payload = dict(payload)
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(path):
    try:
        raw = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    names = raw.dtype.names or ()
    xs = [c for c in names if c.startswith("x")]
    if "y" not in names or not xs:
        raise ConfigError(f"dataset {path} needs columns y,x1..xd")
    raw = np.atleast_1d(raw)
    if raw.size == 0:
        raise ConfigError(f"dataset {path} is empty")
    X = np.column_stack([raw[c] for c in sorted(xs, key=lambda c: int(c[1:]))])
    return SampleSet(raw["y"], X)


# -- commands -----------------------------------------------------------------------------


def cmd_simulate(cfg, out, log, threads):
    cfg["model"] = resolve_model(cfg["model"])
    spec = build_model(cfg["model"])
    data = estimation.simulate_dataset(spec, cfg["seed"])
    res = data.residuals(spec.theta0)
    d = spec.dim
    header = ["y"] + [f"x{k + 1}" for k in range(d)] + ["residual"]
    rows = ([y, *x, r] for y, x, r in zip(data.y, data.X, res))
    write_csv(os.path.join(out, "dataset.csv"), header, rows)
    log(f"wrote {data.n} rows")
    return 0


def cmd_fit(cfg, out, log, threads):
    if cfg["data"] is not None:
        data = read_dataset(cfg["data"])
    elif cfg["model"] is not None:
        _require(cfg, ("seed",), "fit")
        cfg["model"] = resolve_model(cfg["model"])
        data = estimation.simulate_dataset(build_model(cfg["model"]), cfg["seed"])
    else:
        raise ConfigError("fit needs either 'data' (CSV path) or 'model' with 'seed'")
    constraint = build_set(cfg["constraint"], data.dim)
    res = estimation.fit(data, cfg["penalty_weight"], cfg["penalty_form"], constraint, cfg["tol"], cfg["max_iter"])
    write_csv(os.path.join(out, "coefficients.csv"), ["index", "value"], enumerate(res.theta))
    report = {
        "command": "fit", "config": cfg, "theta": res.theta, "objective": res.objective_value,
        "optimality_residual": res.optimality_residual, "converged": res.converged,
        "iterations": res.iterations, "feasible": constraint.contains(res.theta), "n": data.n,
    }
    write_json(os.path.join(out, "fit.json"), report)
    log(f"objective {res.objective_value:.10g}, residual {res.optimality_residual:.3e}, converged {res.converged}")
    return 0 if res.converged else 2


def cmd_mosco(cfg, out, log, threads):
    d = int(cfg["dim"])
    if cfg["fixture"] == "projection":
        seq, limit = mosco.projection_family(d)
    elif cfg["fixture"] is None:
        _require(cfg, ("sequence", "limit"), "mosco")
        seq = [build_functional(f, d) for f in cfg["sequence"]]
        limit = build_functional(cfg["limit"], d)
    else:
        raise ConfigError("mosco.fixture must be 'projection' or null")
    if cfg["probes"] is not None:
        probes = np.asarray(cfg["probes"], dtype=float).reshape(-1, d)
    else:
        _require(cfg, ("seed",), "mosco")
        rng = np.random.default_rng(cfg["seed"])
        first = 0.5 ** np.arange(d)
        probes = np.vstack([first, rng.standard_normal((int(cfg["probe_count"]) - 1, d))])
    fam_cfg = _merge(cfg["family"] or {}, FAMILY_DEFAULTS, "mosco.family")
    cfg["family"] = fam_cfg
    if fam_cfg["kind"] == "basis":
        fam = mosco.basis_family(d, int(fam_cfg["K"]), fam_cfg["lam0"])
    elif fam_cfg["kind"] == "default":
        fam = mosco.default_family(d, int(fam_cfg["K"]), fam_cfg["lam0"], fam_cfg["seed"])
    else:
        raise ConfigError("mosco.family.kind must be 'default' or 'basis'")
    table = mosco.resolvent_convergence_probe(seq, limit, probes, cfg["lam"])
    rows = ((i + 1, j, table[i, j]) for i in range(table.shape[0]) for j in range(table.shape[1]))
    write_csv(os.path.join(out, "resolvent.csv"), ["n", "probe", "distance"], rows)
    dists = [mosco.mosco_distance(f, limit, fam).value for f in seq]
    report = {
        "command": "mosco", "config": cfg, "graph_distance": dists, "tail_bound": fam.tail_bound, "K": fam.K,
        "max_distance": float(table.max()) if table.size else 0.0,
    }
    write_json(os.path.join(out, "mosco.json"), report)
    log(f"d_G to the limit: {', '.join(f'{v:.6g}' for v in dists)} (tail bound {fam.tail_bound:.3g})")
    return 0


def _write_mc(out, name, report, cfg):
    write_csv(os.path.join(out, "statistics.csv"), ["replication", "statistic"], enumerate(report.statistics))
    payload = {
        "command": name, "config": cfg, "replications": report.replications, "summary": report.summary,
        "ks_distance": report.ks_distance, "seed": report.seed, "failures": report.failures,
        "aborted": report.aborted, "experiment": report.config,
    }
    payload.update(report.extra)
    write_json(os.path.join(out, "summary.json"), payload)


def cmd_lan(cfg, out, log, threads):
    cfg["model"] = resolve_model(cfg["model"])
    spec = build_model(cfg["model"])
    report = inference.monte_carlo_lan(
        spec, np.asarray(cfg["probe"], dtype=float), int(cfg["replications"]), cfg["seed"], cfg["penalty_c"],
        cfg["penalty_form"], cfg["tol"], int(cfg["max_iter"]), threads,
    )
    _write_mc(out, "lan", report, cfg)
    log(f"variance ratio {report.summary['variance_ratio']:.4g}, KS {report.ks_distance:.4g}, "
        f"failures {report.failures}")
    return 2 if report.aborted else 0


def cmd_lr(cfg, out, log, threads):
    cfg["model"] = resolve_model(cfg["model"])
    spec = build_model(cfg["model"])
    hyp_cfg = _merge(cfg["hypothesis"], HYPOTHESIS_DEFAULTS, "hypothesis")
    d = spec.dim
    if hyp_cfg["theta0"] is None:
        hyp_cfg["theta0"] = list(cfg["model"]["theta0"])
    if hyp_cfg["t"] is None:
        hyp_cfg["t"] = [0.0] * d
    cfg["hypothesis"] = hyp_cfg
    hyp = inference.HypothesisSpec(
        build_set(hyp_cfg["full_set"], d), build_set(hyp_cfg["null_set"], d), hyp_cfg["theta0"], hyp_cfg["t"]
    )
    report = inference.monte_carlo_lr(
        spec, hyp, int(cfg["replications"]), cfg["seed"], cfg["penalty_c"], cfg["penalty_form"], cfg["tol"],
        int(cfg["max_iter"]), int(cfg["limit_draws"]), threads,
    )
    _write_mc(out, "lr", report, cfg)
    log(f"mass at zero {report.extra['mass_at_zero']:.3f}, KS {report.ks_distance:.4g}, failures {report.failures}")
    return 2 if report.aborted else 0


def cmd_hessian(cfg, out, log, threads):
    cfg["model"] = resolve_model(cfg["model"])
    spec = build_model(cfg["model"])
    steps = None if cfg["steps"] is None else np.asarray(cfg["steps"], dtype=float)
    if cfg["oracle"] == "smoothed":
        data = estimation.simulate_dataset(spec, cfg["seed"])
        res = estimation.fit(data)
        if not res.converged:
            log("fit did not converge")
            return 2
        F = estimation.smoothed_subgradient(data, res.theta, cfg["bandwidth"])
        cfg["bandwidth"] = F.bandwidth
        center = res.theta
    elif cfg["oracle"] == "population":
        def F(theta):
            return estimation.population_subgradient(spec, theta)
        center = np.array(spec.theta0)
    else:
        raise ConfigError("hessian.oracle must be 'smoothed' or 'population'")
    est = mosco.estimate_generalized_hessian(F, center, steps)
    V = spec.hessian().entries
    Vh = est.op.entries
    d = spec.dim
    rows = ((i, j, Vh[i, j], V[i, j]) for i in range(d) for j in range(d))
    write_csv(os.path.join(out, "hessian.csv"), ["row", "col", "estimate", "closed_form"], rows)
    err = float(np.linalg.norm(Vh - V, 2) / np.linalg.norm(V, 2))
    report = {
        "command": "hessian", "config": cfg, "relative_error": err, "asymmetry": est.asymmetry,
        "clipped": est.clipped, "estimate": Vh, "closed_form": V,
    }
    write_json(os.path.join(out, "hessian.json"), report)
    log(f"relative operator-norm error {err:.4g}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "mosco": cmd_mosco, "lan": cmd_lan, "lr": cmd_lr,
    "hessian": cmd_hessian,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="moscolan", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
        p.add_argument("--quiet", action="store_true")
    return parser


def load_config(command, path, seed):
    try:
        with open(path) as fh:
            block = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = _merge(block, COMMAND_DEFAULTS[command], command)
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg["seed"] = seed
    _require(cfg, REQUIRED[command], command)
    return cfg


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0

    def log(msg):
        if not args.quiet:
            print(msg)

    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.command, args.config, args.seed)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out, log, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MoscoError, ValueError, TypeError, KeyError) as exc:
        if isinstance(exc, MoscoError) and not isinstance(exc, ValueError):
            print(f"numerical error: {exc}", file=sys.stderr)
            return 2
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
