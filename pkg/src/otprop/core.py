"""Domain types shared across the package.

Every container here is immutable after construction: numpy buffers are
copied and flagged read-only so that samples, partitions and potentials can
be shared between concurrent solver runs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional, Sequence

import numpy as np

WEIGHT_TOL = 1e-12
DEFAULT_COST_BUDGET = 50_000_000


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


class NumericalAbort(ArithmeticError):
    """A solver state became non-finite.

    Attributes
    ----------
    iteration : int
        Iteration index at which the problem was detected.
    index : int or None
        Offending entry of the state vector, when it can be located.
    """

    def __init__(self, message: str, iteration: int, index: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration
        self.index = index


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Discrete measure: ``N`` points in ``R^d`` with weights summing to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValidationError(f"points must be an N x d matrix with N, d >= 1, got shape {pts.shape}")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise ValidationError(f"{w.shape[0]} weights for {pts.shape[0]} points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("points contain non-finite values")
        if np.any(w < 0):
            i = int(np.argmax(w < 0))
            raise ValidationError(f"negative weight {float(w[i])!r} at index {i}")
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {float(total)!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, points) -> "WeightedSample":
        pts = np.asarray(points, dtype=float)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def with_weights(self, weights) -> "WeightedSample":
        return WeightedSample(self.points, weights)


@dataclass(frozen=True, eq=False)
class ClassPartition:
    """Assignment of source points to ``K`` classes.

    Empty classes are rejected: the re-weighting operator divides by the
    class sizes.
    """

    labels: np.ndarray
    n_classes: int
    names: Optional[tuple] = None
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size == 0:
            raise ValidationError("labels must be a non-empty 1-d array")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValidationError("labels must be integers")
        labels = labels.astype(np.int64)
        K = int(self.n_classes)
        if K < 1:
            raise ValidationError(f"need at least one class, got K={K}")
        if labels.min() < 0 or labels.max() >= K:
            raise ValidationError(f"labels must lie in 0..{K - 1}")
        sizes = np.bincount(labels, minlength=K)
        empty = np.flatnonzero(sizes == 0)
        if empty.size:
            raise ValidationError(f"classes {empty.tolist()} are empty; relabel before building a partition")
        names = self.names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != K:
                raise ValidationError(f"{len(names)} class names for K={K}")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "n_classes", K)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "sizes", _frozen(sizes))

    @classmethod
    def from_labels(cls, labels, names: Optional[Sequence[str]] = None) -> "ClassPartition":
        labels = np.asarray(labels)
        K = len(names) if names is not None else int(labels.max()) + 1
        return cls(labels, K, tuple(names) if names is not None else None)

    @property
    def size(self) -> int:
        return self.labels.shape[0]

    @property
    def class_names(self) -> tuple:
        if self.names is not None:
            return self.names
        return tuple(str(k) for k in range(self.n_classes))

    def proportions(self) -> "ProbabilityVector":
        return ProbabilityVector(self.sizes / self.size)


@dataclass(frozen=True, eq=False)
class ProbabilityVector:
    """Element of the probability simplex."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1:
            raise ValidationError("empty probability vector")
        if not np.all(np.isfinite(v)):
            raise ValidationError("probability vector contains non-finite entries")
        if np.any(v < 0):
            i = int(np.argmax(v < 0))
            raise ValidationError(f"negative entry {float(v[i])!r} at index {i}")
        if abs(v.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"entries sum to {float(v.sum())!r}, expected 1")
        object.__setattr__(self, "values", _frozen(v))

    def __len__(self):
        return self.values.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def tolist(self):
        return self.values.tolist()


def validate_simplex(values, tolerance: float = 1e-9) -> ProbabilityVector:
    """Project a nearly-valid vector onto the simplex or reject it.

    Entries down to ``-tolerance`` are clamped to zero and the vector is
    renormalized; anything further off raises :class:`ValidationError`.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 1:
        raise ValidationError("empty probability vector")
    if not np.all(np.isfinite(v)):
        raise ValidationError("probability vector contains non-finite entries")
    bad = np.flatnonzero(v < -tolerance)
    if bad.size:
        i = int(bad[0])
        raise ValidationError(f"entry {i} is {float(v[i])!r}, below -{tolerance}")
    total = v.sum()
    if abs(total - 1.0) > tolerance:
        raise ValidationError(f"entries sum to {float(total)!r}, more than {tolerance} away from 1")
    v = np.clip(v, 0.0, None)
    return ProbabilityVector(v / v.sum())


@dataclass(frozen=True, eq=False)
class DualPotential:
    """Semi-dual potential ``u`` on the source points."""

    values: np.ndarray
    centered: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if self.centered and abs(v.sum()) > 1e-9 * v.size:
            raise ValidationError(f"potential flagged centered but sums to {float(v.sum())!r}")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def zeros(cls, size: int) -> "DualPotential":
        return cls(np.zeros(size), centered=True)

    def center(self) -> "DualPotential":
        return DualPotential(self.values - self.values.mean(), centered=True)

    def __len__(self):
        return self.values.shape[0]


def _check_dims(source: WeightedSample, target: WeightedSample):
    if source.dim != target.dim:
        raise ValidationError(f"dimension mismatch: source has d={source.dim}, target has d={target.dim}")


def squared_distances(points: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances from every row of ``points`` to ``y``.

    Coordinates are accumulated left to right so the precomputed and
    on-demand paths (and the compiled kernels) agree bit for bit.
    """
    out = np.zeros(points.shape[0])
    for m in range(points.shape[1]):
        diff = points[:, m] - y[m]
        out += diff * diff
    return out


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Squared Euclidean cost, optionally precomputed.

    ``matrix`` is stored target-major, shape ``(J, I)``, so that the cost
    column for target ``j`` is a contiguous row.
    """

    matrix: Optional[np.ndarray] = None

    @classmethod
    def build(cls, source: WeightedSample, target: WeightedSample,
              budget: int = DEFAULT_COST_BUDGET, block: int = 512) -> "CostSpec":
        _check_dims(source, target)
        I, J = source.size, target.size
        if I * J > budget:
            return cls(None)
        table = np.zeros((J, I))
        X, Y = source.points, target.points
        for start in range(0, J, block):
            stop = min(start + block, J)
            acc = table[start:stop]
            for m in range(X.shape[1]):
                diff = X[None, :, m] - Y[start:stop, m, None]
                acc += diff * diff
        return cls(_frozen(table))

    @property
    def precomputed(self) -> bool:
        return self.matrix is not None


def cost_column(source: WeightedSample, target: WeightedSample, cost: Optional[CostSpec], j: int) -> np.ndarray:
    """Return ``(c(x_1, y_j), ..., c(x_I, y_j))``."""
    _check_dims(source, target)
    if not 0 <= j < target.size:
        raise ValidationError(f"target index {j} out of range 0..{target.size - 1}")
    if cost is not None and cost.matrix is not None:
        if cost.matrix.shape != (target.size, source.size):
            raise ValidationError(f"cost matrix shape {cost.matrix.shape} does not match (J, I)=({target.size}, {source.size})")
        return cost.matrix[j]
    return squared_distances(source.points, target.points[j])


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters for the stochastic solvers.

    ``step_scale=None`` means ``J * epsilon / 1.9`` with ``J`` the number of
    target points. The class-level defaults are the descent-ascent settings;
    :meth:`for_solver` returns the per-procedure presets.
    """

    epsilon: float = 5e-4
    lam: float = 1e-4
    step_scale: Optional[float] = None
    step_exponent: float = 0.51
    n_out: int = 10_000
    n_in: int = 10
    n: int = 10_000
    eta: float = 10.0
    seed: int = 0
    plateau_window: Optional[int] = None
    plateau_rtol: float = 1e-4
    cost_budget: int = DEFAULT_COST_BUDGET

    def __post_init__(self):
        for name in ("epsilon", "lam", "eta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValidationError(f"{name} must be > 0, got {val!r}")
        if self.step_scale is not None and not (np.isfinite(self.step_scale) and self.step_scale > 0):
            raise ValidationError(f"step_scale must be > 0, got {self.step_scale!r}")
        if not step_policy_valid(self.step_exponent):
            raise ValidationError(
                f"step_exponent must lie in (0.5, 1] so that sum(steps) diverges and sum(steps^2) converges, "
                f"got {self.step_exponent!r}")
        for name in ("n_out", "n_in", "n"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)!r}")
        if self.plateau_window is not None and self.plateau_window < 1:
            raise ValidationError("plateau_window must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")

    @classmethod
    def for_solver(cls, solver: str, **overrides) -> "SolverConfig":
        presets = {
            "desc-asc": dict(epsilon=5e-4, step_scale=None, step_exponent=0.51, n_out=10_000, n_in=10, eta=10.0),
            "minmax": dict(epsilon=1e-4, lam=1e-4, step_scale=5.0, step_exponent=0.99, n=10_000),
            # label transfer: not fixed by the method description, tuned for
            # unit-cube data at a few thousand points (see README)
            "transfer": dict(epsilon=1e-2, step_scale=None, step_exponent=0.51, n=20_000),
        }
        if solver not in presets:
            raise ValidationError(f"unknown solver {solver!r}; choose from {sorted(presets)}")
        return cls(**{**presets[solver], **overrides})

    def resolved_step_scale(self, n_target: int) -> float:
        if self.step_scale is not None:
            return float(self.step_scale)
        return n_target * self.epsilon / 1.9

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def step_policy_valid(exponent: float) -> bool:
    """Whether ``gamma / n**exponent`` has divergent sum and summable squares."""
    return bool(0.5 < exponent <= 1.0)
