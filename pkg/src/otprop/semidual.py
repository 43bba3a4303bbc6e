"""Stochastic semi-dual estimation of the entropic Wasserstein cost.

The regularized cost ``W_eps(alpha, beta)`` is the maximum over ``u`` of
``E_{Y ~ beta}[g_eps(Y, u)]`` with

    g_eps(y_j, u) = <u, a> + u_c(y_j) - eps,
    u_c(y_j)      = eps * (log b_j - logsumexp((u - C[:, j]) / eps)).

``robbins_monro_ascent`` runs single-sample stochastic gradient ascent on
``u`` and keeps the running average of the sampled integrand, which is the
recursive estimator returned by :func:`w_hat`. ``dense_sinkhorn_oracle`` is
an independent log-domain Sinkhorn solver used to check it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .core import (
    CostSpec,
    DualPotential,
    NumericalAbort,
    SolverConfig,
    ValidationError,
    WeightedSample,
    _check_dims,
    cost_column,
)

SAMPLE_CHUNK = 1 << 16


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def smoothed_c_transform(u, cost_col, b_j: float, epsilon: float) -> float:
    """Soft c-transform of ``u`` at one target point."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon!r}")
    if not b_j > 0:
        raise ValidationError(f"target weight must be > 0, got {b_j!r}")
    z = (np.asarray(u, dtype=float) - np.asarray(cost_col, dtype=float)) / epsilon
    top = z.max()
    lse = top + math.log(np.exp(z - top).sum())
    return epsilon * (math.log(b_j) - lse)


def g_eps(u, a, cost_col, b_j: float, epsilon: float) -> float:
    """Semi-dual integrand at the target point whose cost column is given."""
    u = np.asarray(u, dtype=float)
    return float(u @ np.asarray(a, dtype=float)) + smoothed_c_transform(u, cost_col, b_j, epsilon) - epsilon


def g_eps_grad_u(u, a, cost_col, epsilon: float) -> np.ndarray:
    """Gradient of :func:`g_eps` with respect to ``u``: ``a - softmax((u - c) / eps)``."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon!r}")
    z = (np.asarray(u, dtype=float) - np.asarray(cost_col, dtype=float)) / epsilon
    return np.asarray(a, dtype=float) - _softmax(z)


@dataclass(frozen=True, eq=False)
class SemiDualState:
    """Snapshot of a Robbins-Monro run.

    ``running_cost_sum`` and ``compensation`` form a Neumaier-compensated
    sum of the sampled integrand values; ``rng_state`` lets a run resume
    with the same random stream.
    """

    potential: DualPotential
    iteration: int
    running_cost_sum: float
    compensation: float
    rng_state: dict

    def __post_init__(self):
        if self.iteration < 0:
            raise ValidationError("iteration must be >= 0")
        if not math.isfinite(self.running_cost_sum):
            raise ValidationError("running cost sum is not finite")

    @property
    def has_estimate(self) -> bool:
        return self.iteration >= 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def sample_indices(rng: np.random.Generator, weights: np.ndarray, n: int) -> np.ndarray:
    """Draw ``n`` indices by inverse CDF over cumulative ``weights``."""
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    return np.minimum(idx, weights.shape[0] - 1)


def kernel_cost_args(source: WeightedSample, target: WeightedSample, cost: Optional[CostSpec]):
    """Arguments ``(table, xs, ys)`` for the compiled kernels."""
    if cost is not None and cost.matrix is not None:
        if cost.matrix.shape != (target.size, source.size):
            raise ValidationError(f"cost matrix shape {cost.matrix.shape} does not match (J, I)=({target.size}, {source.size})")
        return cost.matrix, source.points, target.points
    return np.zeros((0, 0)), source.points, target.points


def _abort(u: np.ndarray, iteration: int, what: str = "potential"):
    bad = np.flatnonzero(~np.isfinite(u))
    index = int(bad[0]) if bad.size else None
    detail = f" entry {index} = {float(u[index])!r}" if index is not None else ""
    raise NumericalAbort(f"non-finite {what} at iteration {iteration}{detail}", iteration, index)


def _run_steps(table, xs, ys, a, log_b, rng, b, n_steps, step_scale, exponent, eps, u, start, acc):
    done = 0
    while done < n_steps:
        chunk = min(SAMPLE_CHUNK, n_steps - done)
        samples = sample_indices(rng, b, chunk)
        status = _kernels.semidual_steps(table, xs, ys, a, log_b, samples, step_scale, exponent,
                                         eps, u, start + done, acc)
        if status >= 0:
            _abort(u, start + done + status + 1)
        done += chunk


def robbins_monro_ascent(source: WeightedSample, target: WeightedSample, a, config: SolverConfig,
                         n_steps: int, *, cost: Optional[CostSpec] = None,
                         state: Optional[SemiDualState] = None) -> SemiDualState:
    """Stochastic ascent on the semi-dual with source weights ``a``.

    Starts from ``u = 0`` (or resumes ``state``) and takes ``n_steps``
    single-sample steps with step size ``gamma / n**c``. When
    ``config.plateau_window`` is set the run stops early once the averaged
    estimate changes by less than ``config.plateau_rtol`` (relative)
    between consecutive windows.
    """
    _check_dims(source, target)
    a = np.ascontiguousarray(a, dtype=float)
    if a.shape != (source.size,):
        raise ValidationError(f"{a.shape[0]} source weights for {source.size} points")
    if n_steps < 0:
        raise ValidationError("n_steps must be >= 0")
    if cost is None:
        cost = CostSpec.build(source, target, budget=config.cost_budget)
    table, xs, ys = kernel_cost_args(source, target, cost)
    b = target.weights
    with np.errstate(divide="ignore"):
        log_b = np.log(b)

    rng = make_rng(config.seed)
    if state is None:
        u = np.zeros(source.size)
        start = 0
        acc = np.zeros(2)
    else:
        u = np.array(state.potential.values, dtype=float)
        start = state.iteration
        acc = np.array([state.running_cost_sum, state.compensation])
        rng.bit_generator.state = state.rng_state

    step_scale = config.resolved_step_scale(target.size)
    window = config.plateau_window
    if window is None:
        _run_steps(table, xs, ys, a, log_b, rng, b, n_steps, step_scale, config.step_exponent,
                   config.epsilon, u, start, acc)
        taken = n_steps
    else:
        taken = 0
        previous = None
        while taken < n_steps:
            chunk = min(window, n_steps - taken)
            _run_steps(table, xs, ys, a, log_b, rng, b, chunk, step_scale, config.step_exponent,
                       config.epsilon, u, start + taken, acc)
            taken += chunk
            current = (acc[0] + acc[1]) / (start + taken)
            if previous is not None and abs(current - previous) <= config.plateau_rtol * abs(previous):
                break
            previous = current

    return SemiDualState(
        potential=DualPotential(u, centered=abs(u.sum()) <= 1e-9 * u.size),
        iteration=start + taken,
        running_cost_sum=float(acc[0]),
        compensation=float(acc[1]),
        rng_state=rng.bit_generator.state,
    )


def w_hat(state: SemiDualState) -> float:
    """Averaged estimate ``(1/n) * sum_k g_eps(Y_k, U_{k-1})``."""
    if state.iteration < 1:
        raise ValidationError("no ascent steps taken; the averaged estimate is undefined")
    return (state.running_cost_sum + state.compensation) / state.iteration


def evaluate_w(source: WeightedSample, target: WeightedSample, a, config: SolverConfig,
               n_steps: Optional[int] = None, cost: Optional[CostSpec] = None) -> float:
    """Fixed-budget estimate of ``W_eps`` between ``(source, a)`` and ``target``."""
    state = robbins_monro_ascent(source, target, a, config, config.n if n_steps is None else n_steps, cost=cost)
    return w_hat(state)


@dataclass(frozen=True, eq=False)
class TransportPlanColumn:
    j: int
    entries: np.ndarray


def plan_column(u, source: WeightedSample, target: WeightedSample, cost: Optional[CostSpec],
                epsilon: float, j: int) -> TransportPlanColumn:
    """Column ``j`` of the primal plan reconstructed from the potential ``u``.

    Computed as ``b_j * softmax((u - C[:, j]) / eps)``, which is the primal
    formula with the soft c-transform substituted; the column mass is
    ``b_j`` for any ``u``.
    """
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon!r}")
    values = u.values if isinstance(u, DualPotential) else np.asarray(u, dtype=float)
    col = cost_column(source, target, cost, j)
    b_j = target.weights[j]
    if b_j == 0:
        return TransportPlanColumn(j, np.zeros(source.size))
    z = (values - col) / epsilon
    return TransportPlanColumn(j, np.exp(math.log(b_j) + z - logsumexp(z)))


class OracleNotConverged(RuntimeError):
    def __init__(self, message: str, marginal_error: float):
        super().__init__(message)
        self.marginal_error = marginal_error


@dataclass(frozen=True, eq=False)
class OracleResult:
    plan: np.ndarray
    w_eps: float
    f: np.ndarray
    g: np.ndarray
    dual_value: float
    marginal_error: float
    iterations: int

    def __iter__(self):
        # allows ``plan, w = dense_sinkhorn_oracle(...)``
        return iter((self.plan, self.w_eps))


def dense_sinkhorn_oracle(source: WeightedSample, target: WeightedSample, a=None, b=None,
                          cost: Optional[CostSpec] = None, epsilon: float = 1.0,
                          max_iter: int = 100_000, tol: float = 1e-10) -> OracleResult:
    """Entropic transport by alternating log-domain scaling.

    Solves ``min <C, P> + eps * sum P (log P - 1)`` over couplings of ``a``
    and ``b``. Stops when the row-marginal violation (columns are exact after
    each sweep) is at most ``tol``.
    """
    _check_dims(source, target)
    a = source.weights if a is None else np.asarray(a, dtype=float)
    b = target.weights if b is None else np.asarray(b, dtype=float)
    if source.size * target.size > 1_000_000:
        raise ValidationError("dense oracle is limited to 10^6 cost entries")
    if cost is not None and cost.matrix is not None:
        C = np.asarray(cost.matrix).T
    else:
        C = CostSpec.build(source, target).matrix.T
    with np.errstate(divide="ignore"):
        log_a, log_b = np.log(a), np.log(b)
    f = np.zeros(a.shape[0])
    g = np.zeros(b.shape[0])
    err = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = epsilon * (log_a - logsumexp((g[None, :] - C) / epsilon, axis=1))
        g = epsilon * (log_b - logsumexp((f[:, None] - C) / epsilon, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - C) / epsilon)
        err = float(np.abs(plan.sum(axis=1) - a).max())
        if err <= tol:
            break
    else:
        raise OracleNotConverged(f"marginal error {err:.3e} after {max_iter} iterations", err)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(plan > 0, plan * (np.log(plan) - 1.0), 0.0).sum()
    w_eps = float((C * plan).sum() + epsilon * ent)
    fa = np.where(a > 0, f, 0.0)
    gb = np.where(b > 0, g, 0.0)
    dual = float(fa @ a + gb @ b - epsilon)
    return OracleResult(plan, w_eps, f, g, dual, err, it)
