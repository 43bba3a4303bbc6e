"""Label transfer from the labelled source to the target through the transport plan."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .core import (
    ClassPartition,
    CostSpec,
    DualPotential,
    ProbabilityVector,
    SolverConfig,
    ValidationError,
    WeightedSample,
    _check_dims,
    squared_distances,
)
from .proportions import GammaOperator, gamma_apply
from .semidual import robbins_monro_ascent


@dataclass(frozen=True, eq=False)
class SoftAssignment:
    """``J x K`` matrix of class-membership probabilities for the target points."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 2:
            raise ValidationError("soft assignment must be a J x K matrix")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("soft assignment rows must be probability vectors")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)


def soft_assign(u, source: WeightedSample, partition: ClassPartition, target: WeightedSample,
                epsilon: float, cost: Optional[CostSpec] = None, block: int = 256) -> SoftAssignment:
    """Per-class mass of each normalized plan column.

    Row ``j`` is ``(1/b_j) * sum_{i in class k} P[i, j]`` with ``P`` rebuilt
    from ``u``; since each column of ``P`` has mass ``b_j`` this is a
    softmax over the source points, summed by class. Target points are
    processed in blocks, so the ``I x J`` plan is never held in memory.
    """
    _check_dims(source, target)
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be > 0, got {epsilon!r}")
    values = u.values if isinstance(u, DualPotential) else np.asarray(u, dtype=float)
    if values.shape != (source.size,) or partition.size != source.size:
        raise ValidationError("potential, partition and source sizes disagree")
    members = [np.flatnonzero(partition.labels == k) for k in range(partition.n_classes)]
    table = cost.matrix if cost is not None and cost.matrix is not None else None
    out = np.empty((target.size, partition.n_classes))
    for start in range(0, target.size, block):
        stop = min(start + block, target.size)
        if table is not None:
            C = table[start:stop]
        else:
            C = np.stack([squared_distances(source.points, target.points[j]) for j in range(start, stop)])
        z = (values[None, :] - C) / epsilon
        prob = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        for k, idx in enumerate(members):
            out[start:stop, k] = prob[:, idx].sum(axis=1)
    return SoftAssignment(out)


def hard_assign(soft: SoftAssignment) -> np.ndarray:
    """Most probable class per target point; ties go to the lowest index."""
    return np.argmax(soft.probabilities, axis=1)


def transfer_labels(source: WeightedSample, partition: ClassPartition, target: WeightedSample,
                    config: SolverConfig, proportions: Optional[ProbabilityVector] = None,
                    cost: Optional[CostSpec] = None):
    """Fit a potential for the (optionally re-weighted) source and transfer labels.

    With ``proportions`` the source weights are ``Gamma proportions``;
    without, the source keeps its own weights. Returns
    ``(soft_assignment, hard_labels, potential)``.
    """
    if cost is None:
        cost = CostSpec.build(source, target, budget=config.cost_budget)
    if proportions is None:
        a = source.weights
    else:
        a = gamma_apply(GammaOperator(partition), proportions)
    state = robbins_monro_ascent(source, target, a, config, config.n, cost=cost)
    soft = soft_assign(state.potential, source, partition, target, config.epsilon, cost)
    return soft, hard_assign(soft), state.potential
