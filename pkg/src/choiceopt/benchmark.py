"""Algorithm x problem suites and Dolan-More performance profiles."""
from __future__ import annotations

import csv
import io
import logging
import math
import statistics
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from .model import ChoiceModel
from .optimizers import OptimizerConfig, get_algorithm, run

log = logging.getLogger(__name__)

OK = "ok"
BUDGET = "budget"
ERROR = "error"

RESULT_FIELDS = ("problem", "algorithm", "rep", "seed", "status", "time_s", "epochs",
                 "converged", "final_L", "rel_grad")
MEASURES = ("time", "epochs")


@dataclass
class BenchmarkResult:
    problem: str
    algorithm: str
    rep: int
    seed: int
    time_s: float = math.nan
    epochs: float = math.nan
    converged: bool = False
    final_L: float = math.nan
    rel_grad: float = math.nan
    status: str = OK
    message: str = ""

    def measure(self, name: str) -> float:
        if name == "time":
            return self.time_s
        if name == "epochs":
            return self.epochs
        raise ValueError(f"unknown measure {name!r}; use one of {MEASURES}")


def convergence_test(result: BenchmarkResult, epsilon: float = 1e-6,
                     max_epochs: float = 1000) -> bool:
    """Relative gradient below epsilon on the full data within the epoch budget."""
    if result.status != OK:
        return False
    return bool(result.rel_grad < epsilon and result.epochs <= max_epochs)


def performance_ratios(measures: Mapping, convergence: Mapping) -> Dict:
    """Ratio of each (problem, algorithm) measure to the best converged one.

    Failed pairs get ``math.inf``. Problems on which nothing converged are
    dropped with a warning.
    """
    if not measures:
        raise ValueError("no measures given")
    problems = sorted({p for p, _ in measures})
    ratios = {}
    for p in problems:
        cells = {a: t for (q, a), t in measures.items() if q == p}
        solved = [t for a, t in cells.items() if convergence.get((p, a), False)]
        if not solved:
            warnings.warn(f"problem {p!r}: no algorithm converged; dropped from the profile")
            continue
        best = min(solved)
        if not best > 0:
            raise ValueError(f"problem {p!r}: performance measures must be positive")
        for a, t in cells.items():
            ratios[(p, a)] = t / best if convergence.get((p, a), False) else math.inf
    return ratios


@dataclass
class ProfileCurve:
    algorithm: str
    points: List[tuple]  # (pi, rho) pairs, pi increasing
    R: float

    def rho(self, pi: float) -> float:
        value = 0.0
        for x, r in self.points:
            if x <= pi:
                value = r
            else:
                break
        return value


def default_pi_grid(ratios: Mapping) -> List[float]:
    finite = sorted({r for r in ratios.values() if math.isfinite(r)})
    R = finite[-1] if finite else 1.0
    grid = set(finite) | {float(i) for i in range(1, int(math.ceil(R)) + 1)}
    return sorted(x for x in grid if x <= R) or [1.0]


def performance_profile(ratios: Mapping, pi_grid: Optional[Sequence[float]] = None
                        ) -> Dict[str, ProfileCurve]:
    """Fraction of problems each algorithm solves within a factor pi of the best."""
    problems = sorted({p for p, _ in ratios})
    algorithms = sorted({a for _, a in ratios})
    finite = [r for r in ratios.values() if math.isfinite(r)]
    R = max(finite) if finite else 1.0
    grid = sorted(set(pi_grid)) if pi_grid is not None else default_pi_grid(ratios)
    n = len(problems)
    curves = {}
    for a in algorithms:
        rs = [ratios.get((p, a), math.inf) for p in problems]
        points = [(float(pi), sum(r <= pi for r in rs) / n) for pi in grid]
        curves[a] = ProfileCurve(a, points, R)
    return curves


def aggregate(results: Iterable[BenchmarkResult], measure: str, epsilon: float = 1e-6,
              max_epochs: float = 1000):
    """Collapse repetitions into one measure and one convergence flag per cell.

    The measure is the mean over converged repetitions; a cell fails if any
    completed repetition fails. Budget-skipped and errored repetitions are
    ignored unless nothing else completed (then the cell fails).
    """
    cells: Dict[tuple, List[BenchmarkResult]] = {}
    for r in results:
        cells.setdefault((r.problem, r.algorithm), []).append(r)
    measures, convergence = {}, {}
    for key, reps in cells.items():
        done = [r for r in reps if r.status == OK]
        flags = [convergence_test(r, epsilon, max_epochs) for r in done]
        ok = bool(done) and all(flags)
        convergence[key] = ok
        values = [r.measure(measure) for r in done]
        measures[key] = statistics.fmean(values) if values else math.inf
    return measures, convergence


def summarize(results: Iterable[BenchmarkResult], epsilon=1e-6, max_epochs=1000) -> List[dict]:
    """Mean and standard deviation of time and epochs per (problem, algorithm)."""
    cells: Dict[tuple, List[BenchmarkResult]] = {}
    for r in results:
        cells.setdefault((r.problem, r.algorithm), []).append(r)
    rows = []
    for (p, a), reps in sorted(cells.items()):
        done = [r for r in reps if r.status == OK]
        row = {"problem": p, "algorithm": a, "reps": len(done)}
        for name in MEASURES:
            vals = [r.measure(name) for r in done]
            row[f"{name}_mean"] = statistics.fmean(vals) if vals else math.nan
            row[f"{name}_sd"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
        row["converged"] = bool(done) and all(convergence_test(r, epsilon, max_epochs)
                                              for r in done)
        rows.append(row)
    return rows


Problem = Union[ChoiceModel, Callable[[], ChoiceModel]]


def run_suite(problems: Mapping[str, Problem], algorithms: Sequence[str], repetitions: int = 1,
              time_budget: float = math.inf, base_seed: int = 0, workers: int = 1,
              config_overrides: Optional[Mapping] = None,
              deterministic_repetitions: Optional[int] = None) -> List[BenchmarkResult]:
    """Run every algorithm on every problem ``repetitions`` times.

    Repetition ``r`` uses seed ``base_seed + r``. Once ``time_budget``
    seconds of wall clock have elapsed, remaining repetitions are recorded
    with status ``"budget"``. ``deterministic_repetitions`` optionally caps
    the repetitions of non-stochastic algorithms.
    """
    if not time_budget > 0:
        raise ValueError("time budget must be positive")
    overrides = dict(config_overrides or {})
    names = [get_algorithm(a).name for a in algorithms]
    start = time.monotonic()
    models: Dict[str, Optional[ChoiceModel]] = {}
    setup_errors: Dict[str, str] = {}
    for pid, prob in problems.items():
        try:
            models[pid] = prob if isinstance(prob, ChoiceModel) else prob()
        except Exception as exc:  # recorded, the suite goes on
            log.warning("problem %s: setup failed: %s", pid, exc)
            setup_errors[pid] = f"{type(exc).__name__}: {exc}"
            models[pid] = None

    jobs = []
    for pid in problems:
        for a in names:
            reps = repetitions
            if deterministic_repetitions is not None and not get_algorithm(a).stochastic:
                reps = min(reps, deterministic_repetitions)
            for rep in range(reps):
                jobs.append((pid, a, rep, base_seed + rep))

    def work(job):
        pid, a, rep, seed = job
        res = BenchmarkResult(pid, a, rep, seed)
        if pid in setup_errors:
            res.status, res.message = ERROR, setup_errors[pid]
            return res
        if time.monotonic() - start > time_budget:
            res.status, res.message = BUDGET, "suite time budget exhausted"
            return res
        try:
            cfg = OptimizerConfig(a, seed=seed, **_overrides_for(a, overrides))
            out = run(models[pid], cfg)
        except Exception as exc:
            res.status, res.message = ERROR, f"{type(exc).__name__}: {exc}"
            return res
        res.time_s = max(out.wall_time, 1e-9)
        res.epochs = out.epochs
        res.converged = out.converged
        res.final_L = out.log_likelihood
        res.rel_grad = out.relative_gradient
        res.message = out.message
        return res

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    results.sort(key=lambda r: (r.problem, r.algorithm, r.rep))
    return results


def _overrides_for(algorithm, overrides):
    algo = get_algorithm(algorithm)
    out = dict(overrides)
    if not algo.amabs:
        out.pop("amabs", None)
    if not algo.hybrid:
        out.pop("hybrid_threshold", None)
    return out


# -- delimited tables ----------------------------------------------------------

def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(results: Sequence[BenchmarkResult], fh, header_lines=(), timing=True):
    for line in header_lines:
        fh.write(f"# {line}\n")
    fields = [f for f in RESULT_FIELDS if timing or f != "time_s"]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(fields)
    for r in results:
        d = asdict(r)
        w.writerow([_fmt(d[f]) for f in fields])


def read_results(fh) -> List[BenchmarkResult]:
    reader = csv.DictReader(line for line in fh if not line.startswith("#"))
    missing = set(RESULT_FIELDS) - set(reader.fieldnames or ())
    if missing:
        raise ValueError(f"results table lacks columns: {sorted(missing)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        try:
            out.append(BenchmarkResult(
                problem=row["problem"], algorithm=row["algorithm"], rep=int(row["rep"]),
                seed=int(row["seed"]), time_s=float(row["time_s"]),
                epochs=float(row["epochs"]), converged=row["converged"] in ("1", "True", "true"),
                final_L=float(row["final_L"]), rel_grad=float(row["rel_grad"]),
                status=row["status"]))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"results table line {lineno}: {exc}") from None
    return out


def write_profile(curves: Mapping[str, ProfileCurve], fh, header_lines=()):
    for line in header_lines:
        fh.write(f"# {line}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["algorithm", "pi", "rho"])
    for a in sorted(curves):
        for pi, rho in curves[a].points:
            w.writerow([a, repr(float(pi)), repr(float(rho))])


def profile_from_results(results: Sequence[BenchmarkResult], measure: str, epsilon=1e-6,
                         max_epochs=1000, pi_grid=None) -> Dict[str, ProfileCurve]:
    measures, convergence = aggregate(results, measure, epsilon, max_epochs)
    return performance_profile(performance_ratios(measures, convergence), pi_grid)
