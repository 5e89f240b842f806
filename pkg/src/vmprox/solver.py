"""Variable-metric linesearch proximal-gradient solver.

Each outer iteration picks a steplength and a diagonal scaling, computes a
(possibly inexact) scaled proximal point with a duality-gap certificate,
backtracks on the merit value of that point until an Armijo-type sufficient
decrease holds, and finally takes whichever of the proximal point and the
linesearch point has the smaller objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .strategies import (
    DiagonalMetric,
    make_metric_strategy,
    make_steplength_strategy,
)

__all__ = [
    "SolverConfig",
    "IterateState",
    "IterateRecord",
    "SolveResult",
    "SolverError",
    "LinesearchError",
    "eval_h_gamma",
    "proximal_target",
    "armijo_backtrack",
    "solver_step",
    "minimize",
]


class SolverError(RuntimeError):
    pass


class LinesearchError(SolverError):
    """Backtracking exhausted; finite termination is guaranteed in exact
    arithmetic, so this signals a gradient or prox implementation bug."""

    def __init__(self, message, probes):
        super().__init__(message)
        self.probes = probes


@dataclass(frozen=True)
class SolverConfig:
    """Scalar hyperparameters of the outer iteration.

    ``gamma`` switches the quadratic term of the linesearch merit on and
    off, ``tau`` controls the accepted proximal inexactness, ``delta`` and
    ``beta`` are the backtracking ratio and the sufficient-decrease
    fraction, and ``mu`` bounds the scaling's eigenvalues.
    """

    alpha_min: float = 1e-5
    alpha_max: float = 1e2
    mu: float = 1e10
    delta: float = 0.5
    beta: float = 1e-4
    gamma: float = 1.0
    tau: float = 1e6 - 1
    max_outer_iters: int = 500
    max_backtracks: int = 60
    stop_tol: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha_min <= self.alpha_max:
            raise ValueError("need 0 < alpha_min <= alpha_max")
        if self.mu < 1:
            raise ValueError("mu must be at least 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be nonnegative")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be nonnegative")


@dataclass
class IterateState:
    """Current iterate with cached objective pieces."""

    x: np.ndarray
    f_value: float
    f1_value: float
    grad_f0: np.ndarray
    alpha: float
    metric: DiagonalMetric
    k: int


@dataclass
class IterateRecord:
    """One trace row per outer iteration.

    ``f_value`` is the objective at the iterate the step started from;
    ``f_next`` the objective at the produced iterate.  ``flags`` is a
    bitmask with one bit per runtime audit (1 = satisfied), see
    :mod:`vmprox.diagnostics`.
    """

    k: int
    f_value: float
    alpha: float
    lam: float
    backtracks: int
    step_norm: float
    dist_tilde: float
    h_gamma: float
    epsilon_k: float
    inner_iters: int
    chose_tilde: bool
    f_tilde: float
    f_linesearch: float
    f_next: float
    flags: int
    y_tilde: np.ndarray | None = field(default=None, repr=False)


@dataclass
class SolveResult:
    x: np.ndarray
    trace: list

    def __iter__(self):
        return iter((self.x, self.trace))


def eval_h_gamma(x, state, problem, gamma):
    """Linesearch merit at ``x``: linearization of the smooth part plus a
    ``gamma``-weighted scaled quadratic plus the change in ``f1``.

    Vanishes at the current iterate; infeasible ``x`` raises.
    """
    f1_x = problem.f1(x)
    if not np.isfinite(f1_x):
        raise ValueError("h_gamma requested at an infeasible point")
    dx = x - state.x
    quad = 0.5 / state.alpha * state.metric.norm_sq(dx)
    return float(np.dot(state.grad_f0, dx)) + gamma * quad + f1_x - state.f1_value


def proximal_target(state):
    """Scaled gradient step ``z = x - alpha D^{-1} grad``."""
    return state.x - state.alpha * state.grad_f0 / state.metric.diag


def armijo_backtrack(state, y_tilde, h_gamma_tilde, problem, config):
    """Smallest ``i`` with ``f(x + delta^i d) <= f(x) + beta delta^i h_gamma``.

    Probes are convex combinations of the current iterate and the proximal
    point, hence feasible.  Returns ``(lam, f_new, backtracks, x_probe)``.
    """
    probes = []
    lam = 1.0
    for i in range(config.max_backtracks + 1):
        x_probe = (1.0 - lam) * state.x + lam * y_tilde
        f_probe = problem.f(x_probe)
        probes.append((lam, f_probe))
        if f_probe <= state.f_value + config.beta * lam * h_gamma_tilde:
            return lam, f_probe, i, x_probe
        lam *= config.delta
    raise LinesearchError(
        f"no sufficient decrease within {config.max_backtracks} backtracks "
        f"(h_gamma={h_gamma_tilde:.3e})",
        probes,
    )


def solver_step(state, problem, config, metric_strategy, steplength_strategy,
                retain_prox_points=False):
    """One outer iteration; returns the next state and its trace record."""
    metric = metric_strategy.metric(state.x, state.grad_f0, problem)
    alpha = float(
        np.clip(
            steplength_strategy.choose(state.x, state.grad_f0, metric, problem),
            config.alpha_min,
            config.alpha_max,
        )
    )
    steplength_strategy.update(state.x, state.grad_f0, metric, alpha, problem)
    state.alpha = alpha
    state.metric = metric

    cert = problem.prox.solve(
        state.x,
        state.grad_f0,
        state.f1_value,
        alpha,
        metric,
        config.gamma,
        config.tau,
    )
    if cert.h_gamma > 1e-10 * (1.0 + abs(state.f_value)):
        raise SolverError(
            f"prox certificate has positive merit value {cert.h_gamma:.3e}"
        )
    y_tilde = cert.y_tilde

    lam, f_ls, backtracks, x_ls = armijo_backtrack(
        state, y_tilde, cert.h_gamma, problem, config
    )

    f_tilde = problem.f(y_tilde)
    if f_tilde < f_ls:
        x_next, f_next, chose_tilde = y_tilde, f_tilde, True
    else:
        x_next, f_next, chose_tilde = x_ls, f_ls, False

    dist_tilde = float(np.linalg.norm(y_tilde - state.x))
    step_norm = float(np.linalg.norm(x_next - state.x))
    record = IterateRecord(
        k=state.k,
        f_value=state.f_value,
        alpha=alpha,
        lam=lam,
        backtracks=backtracks,
        step_norm=step_norm,
        dist_tilde=dist_tilde,
        h_gamma=cert.h_gamma,
        epsilon_k=cert.epsilon_k,
        inner_iters=cert.inner_iters,
        chose_tilde=chose_tilde,
        f_tilde=f_tilde,
        f_linesearch=f_ls,
        f_next=f_next,
        flags=0,
        y_tilde=np.array(y_tilde) if retain_prox_points else None,
    )
    record.flags = diagnostics.iteration_flags(record, config)

    next_state = IterateState(
        x=x_next,
        f_value=f_next,
        f1_value=problem.f1(x_next),
        grad_f0=problem.grad_f0(x_next),
        alpha=alpha,
        metric=metric,
        k=state.k + 1,
    )
    return next_state, record


def _initial_state(problem, config, x0):
    x0 = np.asarray(x0, dtype=float).copy()
    if not problem.in_domain(x0):
        raise ValueError("x0 is infeasible")
    f1_0 = problem.f1(x0)
    return IterateState(
        x=x0,
        f_value=problem.f0(x0) + f1_0,
        f1_value=f1_0,
        grad_f0=problem.grad_f0(x0),
        alpha=float(np.clip(1.0, config.alpha_min, config.alpha_max)),
        metric=DiagonalMetric.identity(x0.size, config.mu),
        k=0,
    )


def minimize(problem, config, x0, metric="identity", steplength="bb",
             ritz_window=3, retain_prox_points=False):
    """Run the outer loop from ``x0``.

    ``metric`` and ``steplength`` may be strategy names or strategy
    instances.  Stops after ``config.max_outer_iters`` iterations or when
    the relative step norm drops to ``config.stop_tol``.  Returns a
    :class:`SolveResult` whose trace has one record per iteration performed.
    """
    if isinstance(metric, str):
        metric = make_metric_strategy(metric, config.mu)
    if isinstance(steplength, str):
        steplength = make_steplength_strategy(
            steplength, config.alpha_min, config.alpha_max, window=ritz_window
        )
    if hasattr(problem.prox, "reset"):
        problem.prox.reset()

    state = _initial_state(problem, config, x0)
    trace = []
    for _ in range(config.max_outer_iters):
        x_prev_norm = float(np.linalg.norm(state.x))
        state, record = solver_step(
            state, problem, config, metric, steplength,
            retain_prox_points=retain_prox_points,
        )
        trace.append(record)
        if x_prev_norm > 0.0:
            rel_step = record.step_norm / x_prev_norm
        else:
            rel_step = record.step_norm
        if rel_step <= config.stop_tol:
            break
    return SolveResult(x=state.x, trace=trace)
