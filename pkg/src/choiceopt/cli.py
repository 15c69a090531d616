"""Command-line entry point.

Subcommands: ``estimate``, ``generate``, ``benchmark``, ``profile``, ``sweep``.
Exit codes: 0 success/converged, 1 non-convergence, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import statistics
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import benchmark as bm
from .amabs import AmabsConfig
from .data_io import (SyntheticSpec, format_model_spec, generate_synthetic, load_csv,
                      load_synthetic_spec, make_problem, parse_model_spec, write_csv)
from .model import ChoiceModel, EvaluationError
from .optimizers import (ALGORITHM_NAMES, OptimizationError, OptimizerConfig,
                         UnknownAlgorithm, get_algorithm, run, standard_errors)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("choiceopt")

# sweepable option -> (OptimizerConfig / AmabsConfig field, default, caster)
SWEEPABLE = {
    "window": ("amabs.window", 10, int),
    "threshold": ("amabs.threshold", 0.01, float),
    "count": ("amabs.count", 2, int),
    "factor": ("amabs.factor", 2.0, float),
    "batch0": ("amabs.initial_batch", 1000, int),
    "hybrid-threshold": ("hybrid_threshold", 0.30, float),
    "epsilon": ("epsilon", 1e-6, float),
}


class UsageError(Exception):
    pass


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(command, options, inputs=()):
    return {
        "command": command,
        "options": options,
        "inputs": {str(p): _digest(p) for p in inputs},
        "version": _version(),
    }


def manifest_lines(man):
    return ["manifest " + json.dumps(man, sort_keys=True, default=_jsonable)]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return str(x)


# -- option plumbing -----------------------------------------------------------

def _add_algorithm_options(p, algorithm_default="HAMABS"):
    p.add_argument("--algorithm", default=algorithm_default,
                   help="one of: " + ", ".join(ALGORITHM_NAMES))
    p.add_argument("--epsilon", type=float, default=1e-6, help="relative-gradient threshold")
    p.add_argument("--max-epochs", type=float, default=1000)
    p.add_argument("--window", type=int, default=10, help="AMABS moving-average window W")
    p.add_argument("--threshold", type=float, default=0.01,
                   help="AMABS improvement threshold (fraction, 0.01 = 1%%)")
    p.add_argument("--count", type=int, default=2,
                   help="AMABS lack-of-progress count C before growth")
    p.add_argument("--factor", type=float, default=2.0, help="AMABS batch expansion factor")
    p.add_argument("--batch0", type=int, default=1000, help="initial batch size")
    p.add_argument("--hybrid-threshold", type=float, default=0.30,
                   help="batch fraction above which hybrids use the quasi-Newton step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta0", default="zeros",
                   help="'zeros', comma-separated values, or a JSON file {name: value}")
    p.add_argument("--backend", choices=("compiled", "python"), default=None)


def _build_config(args, algorithm=None, theta0=None, **replace):
    try:
        algo = get_algorithm(algorithm or args.algorithm)
    except UnknownAlgorithm as exc:
        raise UsageError(str(exc)) from None
    amabs_kw = dict(window=args.window, threshold=args.threshold, count=args.count,
                    factor=args.factor, initial_batch=args.batch0)
    kw = dict(epsilon=args.epsilon, max_epochs=args.max_epochs, seed=args.seed,
              theta0=theta0, hybrid_threshold=args.hybrid_threshold)
    for key, value in replace.items():
        if key.startswith("amabs."):
            amabs_kw[key.split(".", 1)[1]] = value
        else:
            kw[key] = value
    if not algo.hybrid:
        kw["hybrid_threshold"] = None
    try:
        kw["amabs"] = AmabsConfig(**amabs_kw) if algo.amabs else None
        return OptimizerConfig(algo.name, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_options(cfg: OptimizerConfig):
    out = {"algorithm": cfg.algorithm, "epsilon": cfg.epsilon, "max_epochs": cfg.max_epochs,
           "seed": cfg.seed, "hybrid_threshold": cfg.hybrid_threshold,
           "theta0": None if cfg.theta0 is None else list(map(float, cfg.theta0))}
    if cfg.amabs is not None:
        a = cfg.amabs
        out.update(window=a.window, threshold=a.threshold, count=a.count, factor=a.factor,
                   batch0=a.initial_batch)
    return out


def _parse_theta0(text, names):
    if text is None or text == "zeros":
        return None, []
    path = Path(text)
    if path.suffix == ".json" and path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
        unknown = set(data) - set(names)
        if unknown:
            raise UsageError(f"--theta0: unknown parameters {sorted(unknown)}")
        return np.array([float(data.get(n, 0.0)) for n in names]), [path]
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--theta0: cannot parse {text!r}") from None
    if len(values) != len(names):
        raise UsageError(f"--theta0: expected {len(names)} values, got {len(values)}")
    return np.array(values), []


def _load_problem(data=None, model=None, synthetic=None, backend=None, base=Path(".")):
    """Return ``(ChoiceModel, input_paths)`` from a CSV+spec pair or a synthetic spec."""
    if synthetic is not None:
        if isinstance(synthetic, (str, Path)):
            path = base / synthetic
            spec = load_synthetic_spec(path)
            inputs = [path]
        else:
            spec = SyntheticSpec.from_dict(synthetic)
            inputs = []
        ds, _ = generate_synthetic(spec)
        return ChoiceModel(spec.model, ds, backend=backend), inputs
    if data is None or model is None:
        raise UsageError("need --data and --model (or a synthetic spec)")
    mpath, dpath = base / model, base / data
    spec = parse_model_spec(mpath)
    return ChoiceModel(spec, load_csv(dpath, spec), backend=backend), [dpath, mpath]


# -- subcommands ---------------------------------------------------------------

def cmd_estimate(args):
    model, inputs = _load_problem(args.data, args.model, args.synthetic, args.backend)
    theta0, extra = _parse_theta0(args.theta0, model.parameter_names)
    cfg = _build_config(args, theta0=theta0)
    man = manifest("estimate", _config_options(cfg), inputs + extra)
    res = run(model, cfg)
    try:
        se = standard_errors(model, res.theta).tolist()
    except (np.linalg.LinAlgError, ValueError):
        se = [math.nan] * model.K
    report = {
        "manifest": man,
        "algorithm": res.algorithm,
        "converged": res.converged,
        "message": res.message,
        "log_likelihood": res.log_likelihood,
        "relative_gradient": res.relative_gradient,
        "epochs": res.epochs,
        "iterations": res.iterations,
        "wall_time_s": res.wall_time,
        "parameters": {n: {"estimate": float(v), "std_error": float(s)}
                       for n, v, s in zip(model.parameter_names, res.theta, se)},
    }
    if args.output:
        Path(args.output).write_text(json.dumps(report, indent=2, default=_jsonable) + "\n",
                                     encoding="utf-8")
    if args.trace:
        with open(args.trace, "w", newline="", encoding="utf-8") as fh:
            for line in manifest_lines(man):
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "batch_size", "order_used", "value", "rel_grad", "step",
                        "step_kind", "epochs", "event"])
            for r in res.trace:
                w.writerow([r.k, r.batch_size, r.order_used, repr(r.value), repr(r.rel_grad),
                            repr(r.step), r.step_kind, repr(r.epochs), r.event])
    out = sys.stdout
    out.write(f"algorithm        {res.algorithm}\n")
    out.write(f"converged        {res.converged} ({res.message})\n")
    out.write(f"log likelihood   {res.log_likelihood:.10g}\n")
    out.write(f"relative grad    {res.relative_gradient:.3e}\n")
    out.write(f"epochs           {res.epochs:.4g}\n")
    out.write(f"iterations       {res.iterations}\n")
    out.write(f"wall time        {res.wall_time:.3f} s\n")
    out.write(f"{'parameter':<20} {'estimate':>14} {'std.err':>12}\n")
    for n, v, s in zip(model.parameter_names, res.theta, se):
        out.write(f"{n:<20} {v:>14.6g} {s:>12.4g}\n")
    if not res.converged:
        print(f"error: {res.algorithm} did not converge: {res.message} "
              f"(relative gradient {res.relative_gradient:.3e} after {res.epochs:.4g} epochs)",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_generate(args):
    inputs = []
    if args.config:
        spec = load_synthetic_spec(args.config)
        inputs.append(Path(args.config))
    else:
        try:
            spec = make_problem(args.alternatives, args.parameters, args.n, args.seed,
                                scale_spread=args.scale_spread,
                                availability=args.availability)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    ds, theta = generate_synthetic(spec)
    man = manifest("generate", spec.to_dict(), inputs)
    write_csv(args.output, ds, spec.model, manifest_lines(man))
    if args.model_out:
        Path(args.model_out).write_text(format_model_spec(spec.model), encoding="utf-8")
    if args.theta_out:
        Path(args.theta_out).write_text(json.dumps(
            dict(zip(spec.model.parameter_names, map(float, theta))), indent=2) + "\n",
            encoding="utf-8")
    print(f"wrote {ds.N} observations, {spec.model.J} alternatives, "
          f"{spec.model.K} parameters to {args.output}")
    return EXIT_OK


SUITE_KEYS = {"problems", "algorithms", "repetitions", "time_budget", "base_seed", "workers",
              "epsilon", "max_epochs", "deterministic_repetitions", "backend"}


def _read_suite(path):
    path = Path(path)
    try:
        suite = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    unknown = set(suite) - SUITE_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("problems", "algorithms"):
        if not suite.get(key):
            raise UsageError(f"{path}: '{key}' must be a non-empty list")
    for i, prob in enumerate(suite["problems"]):
        if "id" not in prob:
            raise UsageError(f"{path}: problems[{i}] lacks an 'id'")
        if not ("synthetic" in prob or ("data" in prob and "model" in prob)):
            raise UsageError(f"{path}: problems[{i}] needs 'synthetic' or 'data'+'model'")
    for a in suite["algorithms"]:
        try:
            get_algorithm(a)
        except UnknownAlgorithm as exc:
            raise UsageError(f"{path}: {exc}") from None
    return suite


def cmd_benchmark(args):
    suite = _read_suite(args.config)
    base = Path(args.config).parent
    backend = suite.get("backend")
    problems = {}
    for prob in suite["problems"]:
        def factory(prob=prob):
            return _load_problem(prob.get("data"), prob.get("model"), prob.get("synthetic"),
                                 backend, base)[0]
        problems[str(prob["id"])] = factory
    reps = args.reps if args.reps is not None else int(suite.get("repetitions", 1))
    workers = args.workers if args.workers is not None else int(suite.get("workers", 1))
    budget = float(suite.get("time_budget", math.inf)) if args.budget is None else args.budget
    overrides = {"epsilon": float(suite.get("epsilon", 1e-6)),
                 "max_epochs": float(suite.get("max_epochs", 1000))}
    results = bm.run_suite(problems, suite["algorithms"], reps, budget,
                           int(suite.get("base_seed", 0)), workers, overrides,
                           suite.get("deterministic_repetitions"))
    opts = dict(suite, repetitions=reps, workers=workers, time_budget=budget)
    man = manifest("benchmark", opts, [Path(args.config)])
    with _open_out(args.output) as fh:
        bm.write_results(results, fh, manifest_lines(man), timing=not args.no_timing)
    for row in bm.summarize(results, overrides["epsilon"], overrides["max_epochs"]):
        print(f"{row['problem']:<16} {row['algorithm']:<12} conv={int(row['converged'])} "
              f"time={row['time_mean']:.3f}±{row['time_sd']:.3f}s "
              f"epochs={row['epochs_mean']:.2f}±{row['epochs_sd']:.2f}", file=sys.stderr)
    return EXIT_OK


def cmd_profile(args):
    try:
        with open(args.results, encoding="utf-8") as fh:
            results = bm.read_results(fh)
    except ValueError as exc:
        raise UsageError(f"{args.results}: {exc}") from None
    curves = bm.profile_from_results(results, args.measure, args.epsilon, args.max_epochs)
    man = manifest("profile", {"measure": args.measure, "epsilon": args.epsilon,
                               "max_epochs": args.max_epochs}, [Path(args.results)])
    with _open_out(args.output) as fh:
        bm.write_profile(curves, fh, manifest_lines(man))
    return EXIT_OK


def cmd_sweep(args):
    if args.parameter not in SWEEPABLE:
        raise UsageError(f"--parameter must be one of {', '.join(SWEEPABLE)}")
    field, default, cast = SWEEPABLE[args.parameter]
    try:
        values = [cast(v) for v in args.values.split(",")]
    except ValueError:
        raise UsageError(f"--values: cannot parse {args.values!r}") from None
    model, inputs = _load_problem(args.data, args.model, args.synthetic, args.backend)
    theta0, extra = _parse_theta0(args.theta0, model.parameter_names)
    base_value = cast(getattr(args, args.parameter.replace("-", "_")))
    grid = list(dict.fromkeys(values))
    run_values = grid if base_value in grid else grid + [base_value]
    rows = {}
    for v in run_values:
        times, epochs, conv = [], [], []
        for rep in range(args.reps):
            cfg = _build_config(args, theta0=theta0, seed=args.seed + rep, **{field: v})
            res = run(model, cfg)
            times.append(res.wall_time)
            epochs.append(res.epochs)
            conv.append(res.converged)
        rows[v] = dict(time_mean=statistics.fmean(times), epochs_mean=statistics.fmean(epochs),
                       time_sd=statistics.stdev(times) if len(times) > 1 else 0.0,
                       epochs_sd=statistics.stdev(epochs) if len(epochs) > 1 else 0.0,
                       converged=sum(conv))
    ref = rows[base_value]["time_mean"]
    opts = {"parameter": args.parameter, "values": grid, "reference": base_value,
            "reps": args.reps, **_config_options(_build_config(args, theta0=theta0))}
    man = manifest("sweep", opts, inputs + extra)
    with _open_out(args.output) as fh:
        for line in manifest_lines(man):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "value", "reps", "converged", "time_mean", "time_sd",
                    "epochs_mean", "epochs_sd", "relative_time", "reference"])
        for v in run_values:
            r = rows[v]
            w.writerow([args.parameter, repr(v), args.reps, r["converged"], repr(r["time_mean"]),
                        repr(r["time_sd"]), repr(r["epochs_mean"]), repr(r["epochs_sd"]),
                        repr(r["time_mean"] / ref), int(v == base_value)])
    return EXIT_OK


class _open_out:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path in (None, "-"):
            self.fh = None
            return sys.stdout
        self.fh = open(self.path, "w", newline="", encoding="utf-8")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not None:
            self.fh.close()


def build_parser():
    parser = argparse.ArgumentParser(prog="choiceopt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a model from CSV data")
    p.add_argument("--data", help="CSV file")
    p.add_argument("--model", help="model specification file")
    p.add_argument("--synthetic", help="synthetic spec JSON (instead of --data/--model)")
    _add_algorithm_options(p)
    p.add_argument("--output", help="write a JSON report here")
    p.add_argument("--trace", help="write the iteration trace (CSV) here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("generate", help="generate synthetic choice data")
    p.add_argument("--config", help="synthetic spec JSON")
    p.add_argument("--alternatives", type=int, default=4)
    p.add_argument("--parameters", type=int, default=12)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale-spread", type=float, default=0.0)
    p.add_argument("--availability", action="store_true")
    p.add_argument("--output", required=True)
    p.add_argument("--model-out")
    p.add_argument("--theta-out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("benchmark", help="run an algorithm x problem suite")
    p.add_argument("--config", required=True, help="suite JSON")
    p.add_argument("--output", default="-")
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--budget", type=float, help="suite wall-clock budget in seconds")
    p.add_argument("--no-timing", action="store_true", help="omit the time_s column")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("profile", help="performance profiles from a results table")
    p.add_argument("--results", required=True)
    p.add_argument("--measure", choices=bm.MEASURES, default="time")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-epochs", type=float, default=1000)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="re-run one model over a grid of one parameter")
    p.add_argument("--parameter", required=True, choices=tuple(SWEEPABLE))
    p.add_argument("--values", required=True, help="comma-separated grid")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--synthetic")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--output", default="-")
    _add_algorithm_options(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:  # includes ChoiceModelError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OptimizationError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
