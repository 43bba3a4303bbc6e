"""Class-proportion estimation by re-weighting a labelled source measure.

The estimate is the class-weight vector ``h`` on the simplex whose
re-weighted source ``a(h) = Gamma h`` is closest to the target in entropic
Wasserstein cost. Two stochastic procedures are provided:

* :func:`estimate_descent_ascent` re-parameterizes ``h = softmax(z)`` and
  alternates a short Robbins-Monro ascent on the dual potential with a
  gradient step on ``z``;
* :func:`estimate_minmax_swap` adds an entropy penalty on ``h``, which gives
  the inner minimizer ``h(u)`` in closed form and leaves a single ascent
  on ``u``.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .core import (
    ClassPartition,
    CostSpec,
    DualPotential,
    NumericalAbort,
    ProbabilityVector,
    SolverConfig,
    ValidationError,
    WeightedSample,
    _check_dims,
)
from .evaluation import kl_divergence
from .semidual import (
    SAMPLE_CHUNK,
    evaluate_w,
    kernel_cost_args,
    make_rng,
    sample_indices,
    smoothed_c_transform,
)

DESC_ASC = "desc-asc"
MINMAX = "minmax"


@dataclass(frozen=True, eq=False)
class GammaOperator:
    """The ``I x K`` map with ``Gamma[i, k] = 1/n_k`` if point ``i`` is in class ``k``.

    Never stored densely; only the partition's labels and sizes are used.
    """

    partition: ClassPartition

    @property
    def shape(self):
        return (self.partition.size, self.partition.n_classes)


def _values(x) -> np.ndarray:
    if isinstance(x, (ProbabilityVector, DualPotential)):
        return x.values
    return np.asarray(x, dtype=float)


def gamma_apply(gamma: GammaOperator, h) -> np.ndarray:
    """Per-point source weights ``h[label(i)] / n[label(i)]``."""
    h = _values(h)
    part = gamma.partition
    if h.shape != (part.n_classes,):
        raise ValidationError(f"proportion vector has length {h.shape[0]}, partition has K={part.n_classes}")
    return h[part.labels] / part.sizes[part.labels]


def gamma_transpose_apply(gamma: GammaOperator, u) -> np.ndarray:
    """Class means of ``u``."""
    u = _values(u)
    part = gamma.partition
    if u.shape != (part.size,):
        raise ValidationError(f"vector has length {u.shape[0]}, partition has I={part.size}")
    return np.bincount(part.labels, weights=u, minlength=part.n_classes) / part.sizes


def _softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax(z) -> ProbabilityVector:
    return ProbabilityVector(_softmax(z))


def softmax_jacobian(z) -> np.ndarray:
    s = _softmax(z)
    return np.diag(s) - np.outer(s, s)


def outer_gradient(gamma: GammaOperator, z, u) -> np.ndarray:
    """Chain-rule estimate ``(Gamma J_softmax(z))^T u`` of the gradient in the logits."""
    return softmax_jacobian(z).T @ gamma_transpose_apply(gamma, u)


def entropy_penalty(h) -> float:
    """``sum_k h_k log h_k`` with ``0 log 0 = 0``."""
    h = _values(h)
    nz = h[h > 0]
    return float(nz @ np.log(nz))


def h_of_u(gamma: GammaOperator, u, lam: float) -> ProbabilityVector:
    """Closed-form minimizer of ``h -> <u, Gamma h> + lam * sum h log h`` over the simplex."""
    if not lam > 0:
        raise ValidationError(f"lambda must be > 0, got {lam!r}")
    return ProbabilityVector(_softmax(-gamma_transpose_apply(gamma, u) / lam))


def f_eps_lambda(u, gamma: GammaOperator, cost_col, b_j: float, epsilon: float, lam: float) -> float:
    """Integrand of the penalized problem after swapping min and max."""
    if not lam > 0:
        raise ValidationError(f"lambda must be > 0, got {lam!r}")
    u = _values(u)
    penalty = -lam * logsumexp(-gamma_transpose_apply(gamma, u) / lam)
    return smoothed_c_transform(u, cost_col, b_j, epsilon) + float(penalty) - epsilon


def f_grad_u(u, gamma: GammaOperator, cost_col, epsilon: float, lam: float) -> np.ndarray:
    """Gradient of :func:`f_eps_lambda`: ``Gamma h(u) - softmax((u - c) / eps)``."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon!r}")
    u = _values(u)
    h = h_of_u(gamma, u, lam)
    return gamma_apply(gamma, h) - _softmax((u - np.asarray(cost_col, dtype=float)) / epsilon)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    proportions: tuple
    kl: Optional[float] = None


@dataclass(frozen=True, eq=False)
class ProportionEstimate:
    proportions: ProbabilityVector
    solver: str
    final_dual: Optional[DualPotential]
    trace: tuple = ()
    converged: bool = True
    class_names: Optional[tuple] = None

    def __post_init__(self):
        its = [t.iteration for t in self.trace]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValidationError("trace iterations must be strictly increasing")

    def as_dict(self) -> dict:
        names = self.class_names or tuple(str(k) for k in range(len(self.proportions)))
        return dict(zip(names, self.proportions.tolist()))


def _trace_entry(iteration: int, h: np.ndarray, benchmark: Optional[ProbabilityVector]) -> TraceEntry:
    kl = None if benchmark is None else kl_divergence(h, benchmark, warn=False)
    return TraceEntry(iteration, tuple(float(x) for x in h), kl)


def _check_problem(source, partition, target, benchmark):
    _check_dims(source, target)
    if partition.size != source.size:
        raise ValidationError(f"partition covers {partition.size} points, source has {source.size}")
    if benchmark is not None and len(benchmark) != partition.n_classes:
        raise ValidationError(f"benchmark has {len(benchmark)} classes, partition has {partition.n_classes}")


def _single_class(solver: str, partition: ClassPartition, source: WeightedSample) -> ProportionEstimate:
    return ProportionEstimate(ProbabilityVector([1.0]), solver, DualPotential.zeros(source.size),
                              (), True, partition.names)


def estimate_descent_ascent(source: WeightedSample, partition: ClassPartition, target: WeightedSample,
                            config: SolverConfig, benchmark: Optional[ProbabilityVector] = None,
                            *, cost: Optional[CostSpec] = None, trace_every: int = 1) -> ProportionEstimate:
    """Descent on softmax logits ``z``, ascent on the dual potential.

    Each outer iteration restarts the potential at zero, takes
    ``config.n_in`` Robbins-Monro steps with weights ``Gamma softmax(z)``
    and uses the final potential ``U`` in the gradient estimate
    ``(Gamma J_softmax(z))^T U``.
    """
    _check_problem(source, partition, target, benchmark)
    if partition.n_classes == 1:
        return _single_class(DESC_ASC, partition, source)
    if cost is None:
        cost = CostSpec.build(source, target, budget=config.cost_budget)
    table, xs, ys = kernel_cost_args(source, target, cost)
    gamma = GammaOperator(partition)
    b = target.weights
    with np.errstate(divide="ignore"):
        log_b = np.log(b)
    rng = make_rng(config.seed)
    step_scale = config.resolved_step_scale(target.size)
    n_in = config.n_in
    block = max(1, SAMPLE_CHUNK // n_in)

    z = np.ones(partition.n_classes)
    u = np.zeros(source.size)
    acc = np.zeros(2)
    trace = []
    samples = np.empty((0, n_in), dtype=np.int64)
    for outer in range(1, config.n_out + 1):
        row = (outer - 1) % block
        if row == 0:
            count = min(block, config.n_out - outer + 1)
            samples = sample_indices(rng, b, count * n_in).reshape(count, n_in)
        a = gamma_apply(gamma, _softmax(z))
        u[:] = 0.0
        acc[:] = 0.0
        status = _kernels.semidual_steps(table, xs, ys, a, log_b, samples[row], step_scale,
                                         config.step_exponent, config.epsilon, u, 0, acc)
        if status >= 0:
            bad = np.flatnonzero(~np.isfinite(u))
            raise NumericalAbort(f"non-finite potential at outer iteration {outer}, inner step {status + 1}",
                                 outer, int(bad[0]) if bad.size else None)
        omega = outer_gradient(gamma, z, u)
        z = z - config.eta * omega
        if not np.all(np.isfinite(z)):
            raise NumericalAbort(f"non-finite logits at outer iteration {outer}", outer,
                                 int(np.flatnonzero(~np.isfinite(z))[0]))
        if trace_every and (outer % trace_every == 0 or outer == config.n_out):
            trace.append(_trace_entry(outer, _softmax(z), benchmark))

    return ProportionEstimate(softmax(z), DESC_ASC, DualPotential(u), tuple(trace), True, partition.names)


def estimate_minmax_swap(source: WeightedSample, partition: ClassPartition, target: WeightedSample,
                         config: SolverConfig, benchmark: Optional[ProbabilityVector] = None,
                         *, cost: Optional[CostSpec] = None, n_iter: Optional[int] = None,
                         trace_every: int = 100) -> ProportionEstimate:
    """Single Robbins-Monro ascent on the entropy-penalized dual, then ``h(U)``.

    ``n_iter`` overrides ``config.n``; ``n_iter=0`` returns the uniform
    vector ``h(0)`` flagged as not converged.
    """
    _check_problem(source, partition, target, benchmark)
    if partition.n_classes == 1:
        return _single_class(MINMAX, partition, source)
    n_total = config.n if n_iter is None else int(n_iter)
    if n_total < 0:
        raise ValidationError("n_iter must be >= 0")
    gamma = GammaOperator(partition)
    u = np.zeros(source.size)
    if n_total == 0:
        h = h_of_u(gamma, u, config.lam)
        return ProportionEstimate(h, MINMAX, DualPotential.zeros(source.size), (), False, partition.names)
    if cost is None:
        cost = CostSpec.build(source, target, budget=config.cost_budget)
    table, xs, ys = kernel_cost_args(source, target, cost)
    b = target.weights
    with np.errstate(divide="ignore"):
        log_b = np.log(b)
    rng = make_rng(config.seed)
    sizes = partition.sizes.astype(float)
    labels = np.ascontiguousarray(partition.labels)
    every = max(int(trace_every), 0)
    trace = []
    done = 0
    while done < n_total:
        chunk = min(SAMPLE_CHUNK, n_total - done)
        samples = sample_indices(rng, b, chunk)
        rows = 0
        if every:
            rows = (done + chunk) // every - done // every
        buf = np.zeros((rows, partition.n_classes))
        status = _kernels.minmax_steps(table, xs, ys, labels, sizes, log_b, samples,
                                       float(config.resolved_step_scale(target.size)), config.step_exponent,
                                       config.epsilon, config.lam, u, done, every, buf)
        if status >= 0:
            it = done + status + 1
            bad = np.flatnonzero(~np.isfinite(u))
            raise NumericalAbort(f"non-finite potential at iteration {it}", it, int(bad[0]) if bad.size else None)
        first = (done // every + 1) * every if every else 0
        for r in range(rows):
            trace.append(_trace_entry(first + r * every, buf[r], benchmark))
        done += chunk

    h = h_of_u(gamma, u, config.lam)
    if not trace or trace[-1].iteration != n_total:
        trace.append(_trace_entry(n_total, h.values, benchmark))
    return ProportionEstimate(h, MINMAX, DualPotential(u, centered=abs(u.sum()) <= 1e-9 * u.size),
                              tuple(trace), True, partition.names)


def estimate(source: WeightedSample, partition: ClassPartition, target: WeightedSample,
             config: SolverConfig, solver: str = DESC_ASC,
             benchmark: Optional[ProbabilityVector] = None, **kwargs) -> ProportionEstimate:
    if solver == DESC_ASC:
        return estimate_descent_ascent(source, partition, target, config, benchmark, **kwargs)
    if solver == MINMAX:
        return estimate_minmax_swap(source, partition, target, config, benchmark, **kwargs)
    raise ValidationError(f"unknown solver {solver!r}; expected {DESC_ASC!r} or {MINMAX!r}")


def scoring_config(config: SolverConfig) -> SolverConfig:
    """Settings for the fixed-budget cost evaluation used to rank sources.

    Keeps ``epsilon``, ``n`` and the seed but always uses the semi-dual
    step policy ``gamma = J eps / 1.9``, ``c = 0.51``: the min-max preset
    steps are tuned for a different objective and barely move the
    potential within a short budget.
    """
    return config.replace(step_scale=None, step_exponent=0.51)


def _score_candidate(args):
    source, partition, target, config, solver = args
    est = estimate(source, partition, target, config, solver)
    a = gamma_apply(GammaOperator(partition), est.proportions)
    return est, evaluate_w(source, target, a, scoring_config(config))


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def select_best_source(candidates: Sequence[tuple], target: WeightedSample, config: SolverConfig,
                       solver: str = DESC_ASC, workers: int = 1):
    """Pick the labelled source whose re-weighted measure is closest to ``target``.

    Each candidate ``(source, partition)`` is fitted with ``solver``; the
    fitted re-weighting is then scored by a fixed-budget estimate of the
    entropic cost. Returns ``(index, estimate, scores)``; ties go to the
    lowest index.
    """
    if not candidates:
        raise ValidationError("no candidate sources given")
    for m, (source, partition) in enumerate(candidates):
        if source.dim != target.dim:
            raise ValidationError(f"candidate {m}: dimension mismatch, source has d={source.dim}, target has d={target.dim}")
    results = _map(_score_candidate, [(s, p, target, config, solver) for s, p in candidates], workers)
    scores = [w for _, w in results]
    best = int(np.argmin(scores))
    return best, results[best][0], scores


def _profile_point(args):
    source, partition, target, h1, config, cost = args
    a = gamma_apply(GammaOperator(partition), np.array([h1, 1.0 - h1]))
    return evaluate_w(source, target, a, config, cost=cost)


def profile_two_class(source: WeightedSample, partition: ClassPartition, target: WeightedSample,
                      grid, config: SolverConfig, *, cost: Optional[CostSpec] = None,
                      workers: int = 1) -> np.ndarray:
    """Estimated ``W_eps`` of the re-weighted source for each first-class weight in ``grid``.

    Every grid point uses the same seed, so the profiles share one random
    target stream.
    """
    _check_problem(source, partition, target, None)
    if partition.n_classes != 2:
        raise ValidationError(f"grid profiling needs exactly 2 classes, got K={partition.n_classes}")
    grid = np.asarray(grid, dtype=float).ravel()
    if np.any((grid < 0) | (grid > 1)):
        raise ValidationError("grid values must lie in [0, 1]")
    if cost is None and workers <= 1:
        cost = CostSpec.build(source, target, budget=config.cost_budget)
    items = [(source, partition, target, float(h1), config, cost) for h1 in grid]
    return np.array(_map(_profile_point, items, workers))
