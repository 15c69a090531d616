"""The optimizer catalog: deterministic, adaptive-batch and hybrid variants.

Every algorithm minimizes the mean negative log likelihood of the current
batch, ``f(theta) = -L_batch(theta) / N'``. Scaling by the batch size keeps
quasi-Newton matrices, trust radii and moving averages comparable when the
batch grows; the minimizer is unchanged. Convergence is always judged on the
full-data log likelihood with :func:`relative_gradient_norm`.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from scipy import linalg

from .amabs import AmabsConfig, AmabsState, sample_batch
from .model import Batch, ChoiceModel, EvaluationError, Evaluation
from .steps import (LineSearchConfig, LineSearchError, TrustRegionState, model_value,
                    solve_tr_subproblem, tr_ratio, tr_update, wolfe_line_search)

FIRST = "first"
SECOND = "second"

LINE_SEARCH_METHODS = ("gd", "bfgs", "bfgs_inv", "newton")
TRUST_REGION_METHODS = ("tr", "tr_bfgs")


@dataclass(frozen=True)
class Algorithm:
    name: str
    first: Optional[str]
    second: Optional[str]
    amabs: bool
    description: str

    @property
    def hybrid(self) -> bool:
        return self.first is not None and self.second is not None

    @property
    def order(self) -> str:
        if self.hybrid:
            return "hybrid"
        return SECOND if self.second else FIRST

    @property
    def stochastic(self) -> bool:
        return self.amabs


def _catalog():
    base = [
        ("GD", "gd", None, "steepest descent"),
        ("BFGS", "bfgs", None, "BFGS on the Hessian approximation"),
        ("BFGS-1", "bfgs_inv", None, "BFGS on the inverse Hessian approximation"),
        ("TR-BFGS", "tr_bfgs", None, "quasi-Newton trust region with BFGS"),
        ("NM", None, "newton", "Newton's method"),
        ("TR", None, "tr", "trust region with the exact Hessian"),
    ]
    algos = [Algorithm(n, f, s, False, d) for n, f, s, d in base]
    algos += [Algorithm(n + "-ABS", f, s, True, d + " with adaptive batch size")
              for n, f, s, d in base]
    algos += [
        Algorithm("H-NM-ABS", "bfgs", "newton", True, "hybrid: Newton then BFGS"),
        Algorithm("H-TR-ABS", "tr_bfgs", "tr", True, "hybrid: trust region then TR-BFGS"),
        Algorithm("HAMABS", "bfgs_inv", "newton", True, "hybrid: Newton then BFGS-1"),
    ]
    return {a.name: a for a in algos}


ALGORITHMS = _catalog()
ALGORITHM_NAMES = tuple(ALGORITHMS)

_ALIASES = {"BFGS^-1": "BFGS-1", "BFGSINV": "BFGS-1", "BFGS-INV": "BFGS-1",
            "BFGS^-1-ABS": "BFGS-1-ABS", "BFGS-INV-ABS": "BFGS-1-ABS"}


class UnknownAlgorithm(ValueError):
    pass


class OptimizationError(RuntimeError):
    pass


def get_algorithm(name: str) -> Algorithm:
    key = name.strip().upper().replace("⁻¹", "^-1")
    key = _ALIASES.get(key, key)
    if key not in ALGORITHMS:
        raise UnknownAlgorithm(f"unknown algorithm {name!r}; choose one of: "
                               + ", ".join(ALGORITHM_NAMES))
    return ALGORITHMS[key]


@dataclass(frozen=True)
class OptimizerConfig:
    """Run configuration.

    ``amabs`` defaults to :class:`AmabsConfig` for adaptive-batch algorithms
    and must be None otherwise; ``hybrid_threshold`` defaults to 0.30 for
    hybrid algorithms and must be None otherwise.
    """

    algorithm: str = "NM"
    epsilon: float = 1e-6
    max_epochs: float = 1000
    amabs: Optional[AmabsConfig] = None
    hybrid_threshold: Optional[float] = None
    seed: int = 0
    theta0: Optional[np.ndarray] = None
    line_search: LineSearchConfig = LineSearchConfig()
    trust_region: TrustRegionState = TrustRegionState()
    max_rejections: int = 50

    def __post_init__(self):
        algo = get_algorithm(self.algorithm)
        object.__setattr__(self, "algorithm", algo.name)
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.max_epochs >= 1:
            raise ValueError("max_epochs must be >= 1")
        if algo.amabs and self.amabs is None:
            object.__setattr__(self, "amabs", AmabsConfig())
        elif not algo.amabs and self.amabs is not None:
            raise ValueError(f"{algo.name} does not use adaptive batch sizes")
        if algo.hybrid:
            if self.hybrid_threshold is None:
                object.__setattr__(self, "hybrid_threshold", 0.30)
            if not 0.0 <= self.hybrid_threshold <= 1.0:
                raise ValueError("hybrid_threshold must lie in [0, 1]")
        elif self.hybrid_threshold is not None:
            raise ValueError(f"{algo.name} is not a hybrid algorithm")

    @property
    def spec(self) -> Algorithm:
        return ALGORITHMS[self.algorithm]


@dataclass
class IterationRecord:
    k: int
    batch_size: int
    order_used: str
    value: float  # log likelihood at theta_k, scaled to the full data
    rel_grad: float
    step: float  # alpha for line searches, radius for trust regions
    step_kind: str
    epochs: float
    event: str = ""


@dataclass
class OptimizationResult:
    algorithm: str
    theta: np.ndarray
    evaluation: Evaluation
    trace: List[IterationRecord]
    converged: bool
    wall_time: float
    epochs: float
    relative_gradient: float
    message: str
    seed: int = 0

    @property
    def log_likelihood(self) -> float:
        return self.evaluation.value

    @property
    def iterations(self) -> int:
        return len(self.trace)


# -- directions and quasi-Newton algebra -------------------------------------

def direction_steepest(g) -> np.ndarray:
    return -np.asarray(g, dtype=float)


@dataclass
class NewtonDirection:
    direction: np.ndarray
    matrix: Optional[np.ndarray]  # the positive definite matrix actually used
    shift: float
    fallback: bool


def pd_repair(H, max_ratio=1e8):
    """Return ``(H + lam I, cho_factor, lam)`` with the smallest tried lam.

    lam starts at zero, then at 1e-6 times the mean absolute diagonal and
    doubles. Returns None when lam would exceed ``max_ratio * ||H||``.
    """
    H = np.asarray(H, dtype=float)
    K = H.shape[0]
    lam = 0.0
    base = 1e-6 * float(np.mean(np.abs(np.diag(H))))
    cap = max_ratio * float(np.linalg.norm(H))
    while True:
        M = H + lam * np.eye(K) if lam else H
        try:
            return M, linalg.cho_factor(M), lam
        except linalg.LinAlgError:
            pass
        lam = base if lam == 0.0 else 2.0 * lam
        if lam == 0.0 or lam > cap:
            return None


def direction_newton(g, H) -> NewtonDirection:
    """Newton direction on the positive definite repair of ``H``.

    ``H`` is the Hessian of the minimization objective. Falls back to
    steepest descent when the repair gives up.
    """
    g = np.asarray(g, dtype=float)
    rep = pd_repair(H)
    if rep is None:
        return NewtonDirection(-g, None, math.inf, True)
    M, factor, lam = rep
    return NewtonDirection(-linalg.cho_solve(factor, g), M, lam, False)


def _curvature_ok(s, y) -> bool:
    sy = float(s @ y)
    return sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y))


def bfgs_update(B, s, y):
    """Hessian-approximation update. Returns ``(B_new, updated)``.

    Skipped (``B`` returned unchanged) when s'y fails the curvature guard.
    """
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if not _curvature_ok(s, y):
        return B, False
    Bs = B @ s
    B_new = B + np.outer(y, y) / (y @ s) - np.outer(Bs, Bs) / (s @ Bs)
    return 0.5 * (B_new + B_new.T), True


def bfgs_inv_update(Binv, s, y):
    """Inverse-Hessian-approximation update. Returns ``(Binv_new, updated)``."""
    s = np.asarray(s, dtype=float)
    y = np.asarray(y, dtype=float)
    if not _curvature_ok(s, y):
        return Binv, False
    sy = float(s @ y)
    Hy = Binv @ y
    B_new = (Binv + (sy + y @ Hy) * np.outer(s, s) / sy ** 2
             - (np.outer(Hy, s) + np.outer(s, Hy)) / sy)
    return 0.5 * (B_new + B_new.T), True


def relative_gradient_norm(theta, value, g) -> float:
    """max_i |g_i| * max(|theta_i|, 1) / max(|value|, 1)."""
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    if g.size == 0:
        return 0.0
    return float(np.max(np.abs(g) * np.maximum(np.abs(theta), 1.0)) / max(abs(value), 1.0))


def hybrid_select(batch_size, n, delta_h) -> str:
    """First-order step when the batch exceeds the fraction ``delta_h`` of the data."""
    if not 0 < batch_size <= n:
        raise ValueError("batch size must lie in (0, N]")
    return FIRST if batch_size / n > delta_h else SECOND


# -- objective restricted to a batch ------------------------------------------

@dataclass
class Point:
    """Mean negative log likelihood of a batch and its derivatives."""

    theta: np.ndarray
    f: float
    g: Optional[np.ndarray]
    H: Optional[np.ndarray]
    evaluation: Evaluation


class BatchObjective:
    def __init__(self, model: ChoiceModel, batch: Batch):
        self.model = model
        self.batch = batch
        self.scale = 1.0 / batch.size
        self.calls = 0

    def __call__(self, theta, order="gradient") -> Point:
        self.calls += 1
        ev = self.model.evaluate(theta, self.batch, order)
        s = self.scale
        g = None if ev.gradient is None else -s * ev.gradient
        H = None if ev.hessian is None else -s * ev.hessian
        return Point(np.array(theta, dtype=float), -s * ev.value, g, H, ev)


# -- one step ----------------------------------------------------------------

@dataclass
class OptimizerState:
    theta: np.ndarray
    trust: TrustRegionState
    qn_mode: Optional[str] = None  # "direct" or "inverse"
    qn: Optional[np.ndarray] = None
    last_hessian: Optional[np.ndarray] = None
    gd_memory: Optional[tuple] = None  # (alpha, slope) of the previous GD step
    qn_skips: int = 0
    newton_fallbacks: int = 0


@dataclass
class Candidate:
    theta: np.ndarray
    moved: bool
    step: float
    step_kind: str
    point: Optional[Point] = None  # evaluation at the new theta, same batch
    note: str = ""


def _ensure_qn(state: OptimizerState, mode: str):
    if state.qn is not None and state.qn_mode == mode:
        return
    K = state.theta.size
    seed = state.last_hessian
    if seed is None:
        state.qn = np.eye(K)
    elif mode == "direct":
        state.qn = seed.copy()
    else:
        state.qn = linalg.cho_solve(linalg.cho_factor(seed), np.eye(K))
        state.qn = 0.5 * (state.qn + state.qn.T)
    state.qn_mode = mode


def _qn_update(state: OptimizerState, s, y):
    if state.qn_mode == "direct":
        state.qn, ok = bfgs_update(state.qn, s, y)
    else:
        state.qn, ok = bfgs_inv_update(state.qn, s, y)
    if not ok:
        state.qn_skips += 1


def generate_candidate(state: OptimizerState, objective: BatchObjective, point: Point,
                       method: str, ls_config: LineSearchConfig = LineSearchConfig(),
                       max_rejections: int = 50) -> Candidate:
    """Propose the next iterate from ``point`` (evaluated at ``state.theta``).

    Line-search methods return ``theta + alpha d``; trust-region methods
    return ``theta + d`` after accept/reject with radius updates, re-solving
    the subproblem at the shrunk radius without new derivatives.
    """
    theta, g = point.theta, point.g
    if not np.any(g):
        return Candidate(theta, False, 0.0, "none", point, "zero gradient")
    if method in TRUST_REGION_METHODS:
        return _trust_region_step(state, objective, point, method, max_rejections)
    if method not in LINE_SEARCH_METHODS:
        raise ValueError(f"unknown step method {method!r}")

    alpha0 = None
    if method == "gd":
        d = direction_steepest(g)
    elif method == "newton":
        nd = direction_newton(g, point.H)
        d = nd.direction
        if nd.fallback:
            state.newton_fallbacks += 1
        else:
            state.last_hessian = nd.matrix
        # next quasi-Newton phase re-seeds from the latest Hessian
        state.qn = None
    else:
        mode = "direct" if method == "bfgs" else "inverse"
        _ensure_qn(state, mode)
        if mode == "direct":
            try:
                d = -linalg.cho_solve(linalg.cho_factor(state.qn), g)
            except linalg.LinAlgError:
                state.qn = np.eye(g.size)
                d = -g
        else:
            d = -state.qn @ g
    slope = float(g @ d)
    if not slope < 0.0:
        # broken preconditioner: restart from steepest descent
        if state.qn is not None:
            state.qn = np.eye(g.size)
        d = -g
        slope = float(g @ d)
    if method == "gd" and state.gd_memory is not None:
        a_prev, s_prev = state.gd_memory
        alpha0 = min(max(a_prev * s_prev / slope, 1e-12), 1e12)

    def phi(alpha):
        try:
            p = objective(theta + alpha * d, "gradient")
        except EvaluationError:
            return math.inf, math.inf, None
        return p.f, float(p.g @ d), p

    ls = wolfe_line_search(phi, point.f, slope, ls_config, alpha_init=alpha0)
    if method == "gd":
        state.gd_memory = (ls.alpha if ls.alpha > 0 else 1.0, slope)
    if not ls.decreased:
        return Candidate(theta, False, 0.0, "alpha", None, "no decrease")
    new = ls.payload
    if method in ("bfgs", "bfgs_inv"):
        _qn_update(state, ls.alpha * d, new.g - g)
    return Candidate(new.theta, True, ls.alpha, "alpha", new,
                     "" if ls.wolfe else "wolfe not met")


def _trust_region_step(state, objective, point, method, max_rejections) -> Candidate:
    theta, g = point.theta, point.g
    if method == "tr":
        B = point.H
        rep = pd_repair(B)
        if rep is not None:
            state.last_hessian = rep[0]
        state.qn = None
        trial_order = "value"
    else:
        _ensure_qn(state, "direct")
        B = state.qn
        trial_order = "gradient"
    for _ in range(max_rejections):
        d = solve_tr_subproblem(g, B, state.trust.radius)
        change = model_value(g, B, d)
        try:
            trial = objective(theta + d, trial_order)
            f_new = trial.f
        except EvaluationError:
            trial, f_new = None, math.inf
        rho = tr_ratio(point.f, f_new, point.f, point.f + change)
        radius = state.trust.radius
        if method == "tr_bfgs" and trial is not None:
            _qn_update(state, d, trial.g - g)
            B = state.qn
        state.trust, accepted = tr_update(rho, state.trust)
        if accepted:
            return Candidate(trial.theta, True, radius, "radius",
                             trial if trial_order == "gradient" else None)
    return Candidate(theta, False, state.trust.radius, "radius", None, "no decrease")


# -- driver ------------------------------------------------------------------

def _order_for(algo: Algorithm, batch_size, n, delta_h) -> str:
    if algo.hybrid:
        return hybrid_select(batch_size, n, delta_h)
    return SECOND if algo.second else FIRST


def run(model: ChoiceModel, config: OptimizerConfig,
        callback: Optional[Callable[[IterationRecord], None]] = None) -> OptimizationResult:
    """Estimate ``model`` with the configured algorithm.

    Iterates until the relative gradient of the full-data log likelihood is
    below ``epsilon`` or ``max_epochs`` is spent. One iteration on a batch of
    N' rows costs N'/N epochs; line-search and trust-region trials are not
    charged. Adaptive-batch variants whose criterion fires on a partial batch
    are promoted to the full data before convergence is declared.
    """
    algo = config.spec
    N = model.N
    theta = (np.zeros(model.K) if config.theta0 is None
             else np.array(config.theta0, dtype=float))
    if theta.shape != (model.K,):
        raise ValueError(f"theta0 must have {model.K} entries")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    amabs = AmabsState(config.amabs, N) if algo.amabs else None
    batch_size = amabs.batch_size if amabs else N
    state = OptimizerState(theta, config.trust_region)
    full = model.full_batch
    full_objective = BatchObjective(model, full)
    trace: List[IterationRecord] = []
    epochs = 0.0
    k = 0
    cached: Optional[Point] = None
    converged = False
    message = "maximum number of epochs reached"
    stalls = 0
    t0 = time.perf_counter()
    rel = math.inf
    point = None
    while epochs < config.max_epochs:
        order = _order_for(algo, batch_size, N, config.hybrid_threshold)
        need = "hessian" if order == SECOND else "gradient"
        if batch_size >= N:
            batch, objective = full, full_objective
        else:
            batch = sample_batch(N, batch_size, rng)
            objective = BatchObjective(model, batch)
        try:
            if (cached is not None and batch is full and cached.evaluation.satisfies(need)
                    and np.array_equal(cached.theta, theta)):
                point = cached
            else:
                point = objective(theta, need)
        except EvaluationError as exc:
            raise OptimizationError(f"{algo.name}: evaluation failed at iteration {k}: "
                                    f"{exc}") from exc
        epochs += batch.size / N
        ratio = N / batch.size
        value_hat = point.evaluation.value * ratio
        rel = relative_gradient_norm(theta, value_hat, point.evaluation.gradient * ratio)
        if not math.isfinite(value_hat):
            raise OptimizationError(f"{algo.name}: non-finite log likelihood at iteration {k}")
        if rel < config.epsilon:
            if batch.is_full:
                converged = epochs <= config.max_epochs
                message = "converged"
                _record(trace, callback, IterationRecord(k, batch.size, order, value_hat, rel,
                                                         0.0, "none", epochs, "converged"))
                break
            amabs.promote()
            batch_size = N
            cached = None
            _record(trace, callback, IterationRecord(k, batch.size, order, value_hat, rel,
                                                     0.0, "none", epochs, "promote"))
            k += 1
            continue
        method = algo.second if order == SECOND else algo.first
        try:
            cand = generate_candidate(state, objective, point, method, config.line_search,
                                      config.max_rejections)
        except LineSearchError as exc:
            raise OptimizationError(f"{algo.name}: line search failed at iteration {k}: "
                                    f"{exc}") from exc
        _record(trace, callback, IterationRecord(k, batch.size, order, value_hat, rel,
                                                 cand.step, cand.step_kind, epochs, cand.note))
        theta = cand.theta
        state.theta = theta
        if amabs is not None:
            batch_size = amabs.step(point.evaluation.value / batch.size)
        cached = cand.point if (batch.is_full and batch_size >= N) else None
        if not cand.moved and batch.is_full:
            stalls += 1
            if state.qn is not None and stalls == 1:
                state.qn = np.eye(model.K)
            elif stalls >= 2:
                message = "no further decrease possible at the current precision"
                break
        elif cand.moved:
            stalls = 0
        k += 1
    wall = time.perf_counter() - t0
    if converged:
        final = point.evaluation
    else:
        final = model.evaluate(theta, full, "gradient")
        rel = relative_gradient_norm(theta, final.value, final.gradient)
    return OptimizationResult(algo.name, theta, final, trace, converged, wall, epochs, rel,
                              message, config.seed)


def _record(trace, callback, rec):
    trace.append(rec)
    if callback is not None:
        callback(rec)


def standard_errors(model: ChoiceModel, theta) -> np.ndarray:
    """Asymptotic standard errors from the inverse of the observed information."""
    ev = model.evaluate(theta, order="hessian")
    cov = np.linalg.inv(-ev.hessian)
    return np.sqrt(np.diag(cov))
