"""Step-length and trust-region machinery shared by all optimizers.

Everything here works on the *minimization* objective f = -L (up to a
positive scale).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


class LineSearchError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LineSearchConfig:
    c1: float = 1e-4
    c2: float = 0.9
    alpha_init: float = 1.0
    max_trials: int = 50

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("Wolfe constants must satisfy 0 < c1 < c2 < 1")
        if not self.alpha_init > 0.0:
            raise ValueError("alpha_init must be positive")
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")


@dataclass
class LineSearchResult:
    alpha: float
    value: float
    slope: float
    trials: int
    wolfe: bool
    payload: object = None

    @property
    def decreased(self) -> bool:
        return self.alpha > 0.0


def wolfe_line_search(phi: Callable, phi0: float, dphi0: float,
                      config: LineSearchConfig = LineSearchConfig(),
                      alpha_init: Optional[float] = None) -> LineSearchResult:
    """Find a step satisfying the (weak) Wolfe conditions.

    Parameters
    ----------
    phi : callable
        ``phi(alpha) -> (value, slope, payload)`` where ``value`` is the
        objective along the search ray, ``slope`` its derivative in alpha
        and ``payload`` anything the caller wants back for the accepted
        trial (typically the evaluation at the new point).
    phi0, dphi0 : float
        Objective value and slope at ``alpha = 0``. ``dphi0`` must be negative.

    Returns
    -------
    LineSearchResult
        ``wolfe`` is False when ``max_trials`` was exhausted; the best
        sufficient-decrease trial is returned then, or ``alpha = 0`` if no
        trial decreased the objective.
    """
    if not math.isfinite(phi0):
        raise LineSearchError("objective is not finite at the current point")
    if not dphi0 < 0.0:
        raise LineSearchError("search direction is not a descent direction "
                              f"(directional derivative {dphi0:g})")
    c1, c2 = config.c1, config.c2
    alpha = config.alpha_init if alpha_init is None else alpha_init
    lo, hi = 0.0, math.inf
    f_lo, d_lo = phi0, dphi0
    best = None
    any_finite = False
    for trial in range(1, config.max_trials + 1):
        f, d, payload = phi(alpha)
        finite = math.isfinite(f) and math.isfinite(d)
        any_finite = any_finite or finite
        if finite and f <= phi0 + c1 * alpha * dphi0 and f < phi0:
            if best is None or f < best.value:
                best = LineSearchResult(alpha, f, d, trial, False, payload)
            if d >= c2 * dphi0:
                return LineSearchResult(alpha, f, d, trial, True, payload)
            lo, f_lo, d_lo = alpha, f, d
            if math.isinf(hi):
                alpha = 2.0 * alpha
                continue
        else:
            hi = alpha
            if finite and f > f_lo:
                # safeguarded quadratic interpolation on [lo, hi]
                width = hi - lo
                denom = 2.0 * (f - f_lo - d_lo * width)
                if denom > 0.0:
                    step = -d_lo * width * width / denom
                    alpha = lo + min(max(step, 0.1 * width), 0.5 * width)
                    continue
        alpha = 0.5 * (lo + hi)
    if not any_finite:
        raise LineSearchError("all line-search trials were non-finite")
    if best is not None:
        best.trials = config.max_trials
        return best
    return LineSearchResult(0.0, phi0, dphi0, config.max_trials, False, None)


def model_value(g, B, d) -> float:
    """Change of the quadratic model: g'd + d'Bd/2."""
    return float(g @ d + 0.5 * d @ (B @ d))


def _boundary_tau(z, d, radius):
    # positive root of ||z + tau d|| = radius
    a = d @ d
    b = 2.0 * (z @ d)
    c = z @ z - radius * radius
    disc = max(b * b - 4.0 * a * c, 0.0)
    return (-b + math.sqrt(disc)) / (2.0 * a)


def solve_tr_subproblem(g, B, radius, tol=None, max_iter=None) -> np.ndarray:
    """Steihaug truncated conjugate gradient for min g'd + d'Bd/2, ||d|| <= radius.

    ``tol`` defaults to ``min(0.1, sqrt(||g||)) * ||g||``. The first CG
    iterate is the Cauchy point, so the returned step never does worse than
    it; negative curvature sends the step to the boundary.
    """
    g = np.asarray(g, dtype=float)
    B = np.asarray(B, dtype=float)
    if not radius > 0.0:
        raise ValueError("radius must be positive")
    gnorm = float(np.linalg.norm(g))
    z = np.zeros_like(g)
    if gnorm == 0.0:
        return z
    if tol is None:
        tol = min(0.1, math.sqrt(gnorm)) * gnorm
    if max_iter is None:
        max_iter = 2 * g.size + 10
    r = g.copy()
    d = -r
    rr = float(r @ r)
    for _ in range(max_iter):
        Bd = B @ d
        dBd = float(d @ Bd)
        if dBd <= 0.0:
            return z + _boundary_tau(z, d, radius) * d
        alpha = rr / dBd
        z_next = z + alpha * d
        if np.linalg.norm(z_next) >= radius:
            return z + _boundary_tau(z, d, radius) * d
        r = r + alpha * Bd
        rr_next = float(r @ r)
        z = z_next
        if math.sqrt(rr_next) <= tol:
            break
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return z


def tr_ratio(actual_old, actual_new, model_old, model_new) -> float:
    """Actual over predicted reduction; ``-inf`` when nothing is predicted."""
    predicted = model_old - model_new
    if not predicted > 0.0 or not math.isfinite(actual_new):
        return -math.inf
    return (actual_old - actual_new) / predicted


@dataclass(frozen=True)
class TrustRegionState:
    radius: float = 1.0
    eta1: float = 0.01
    eta2: float = 0.9
    gamma1: float = 2.0
    gamma2: float = 0.5
    radius_max: float = 1e10

    def __post_init__(self):
        if not 0.0 < self.eta1 < self.eta2 < 1.0:
            raise ValueError("need 0 < eta1 < eta2 < 1")
        if not self.gamma1 > 1.0:
            raise ValueError("gamma1 must exceed 1")
        if not 0.0 < self.gamma2 < 1.0:
            raise ValueError("gamma2 must lie in (0, 1)")
        if not 0.0 < self.radius <= self.radius_max:
            raise ValueError("radius must lie in (0, radius_max]")


def tr_update(rho: float, state: TrustRegionState) -> tuple:
    """Three-case radius rule. Returns ``(new_state, accepted)``."""
    if rho >= state.eta2:
        radius = min(state.gamma1 * state.radius, state.radius_max)
    elif rho >= state.eta1:
        radius = state.radius
    else:
        # floor keeps the state valid after extreme numbers of rejections
        radius = max(state.gamma2 * state.radius, np.finfo(float).tiny)
    return replace(state, radius=radius), rho >= state.eta1
