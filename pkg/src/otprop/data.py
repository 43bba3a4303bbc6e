"""CSV ingestion, preprocessing, and the synthetic mixture benchmark."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .core import ClassPartition, ProbabilityVector, ValidationError, WeightedSample


# ---------------------------------------------------------------------------
# CSV input/output
# ---------------------------------------------------------------------------

def load_csv(path, label_column: Optional[str] = None):
    """Read a marker table with an optional text label column.

    Returns ``(sample, partition, markers)``. The sample has uniform
    weights; class indices follow first appearance in the file and the
    class names are kept on the partition.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: header but no data rows")
    if label_column is not None and label_column not in header:
        raise ValidationError(f"{path}: label column {label_column!r} not found in header {header}")
    label_idx = header.index(label_column) if label_column is not None else None
    marker_idx = [c for c in range(len(header)) if c != label_idx]
    if not marker_idx:
        raise ValidationError(f"{path}: no marker columns")
    markers = [header[c] for c in marker_idx]

    points = np.empty((len(rows), len(marker_idx)))
    raw_labels = []
    for r, row in enumerate(rows):
        line = r + 2
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        for out_c, c in enumerate(marker_idx):
            cell = row[c].strip()
            try:
                val = float(cell)
            except ValueError:
                raise ValidationError(f"{path}:{line}: column {header[c]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(val):
                raise ValidationError(f"{path}:{line}: column {header[c]!r}: non-finite value {cell!r}")
            points[r, out_c] = val
        if label_idx is not None:
            raw_labels.append(row[label_idx].strip())

    sample = WeightedSample.uniform(points)
    partition = None
    if label_idx is not None:
        names: dict = {}
        labels = np.array([names.setdefault(lab, len(names)) for lab in raw_labels], dtype=np.int64)
        partition = ClassPartition(labels, len(names), tuple(names))
    return sample, partition, markers


def load_labels(path, column: str = "label", names: Optional[Sequence[str]] = None):
    """Read a label column and map it onto ``names`` (or first-appearance order).

    Returns ``(labels, names)``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValidationError(f"{path}: label column {column!r} not found")
        raw = [row[column].strip() for row in reader]
    if not raw:
        raise ValidationError(f"{path}: no labels")
    if names is None:
        order: dict = {}
        for lab in raw:
            order.setdefault(lab, len(order))
        names = tuple(order)
    lookup = {n: k for k, n in enumerate(names)}
    unknown = sorted(set(raw) - set(lookup))
    if unknown:
        raise ValidationError(f"{path}: labels {unknown} are not among the classes {list(names)}")
    return np.array([lookup[lab] for lab in raw], dtype=np.int64), tuple(names)


def label_proportions(labels, n_classes: int) -> ProbabilityVector:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes)
    return ProbabilityVector(counts / counts.sum())


def write_csv(path, points: np.ndarray, markers: Sequence[str], labels=None,
              names: Optional[Sequence[str]] = None, label_column: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(markers) + ([label_column] if labels is not None else []))
        for r in range(points.shape[0]):
            row = [repr(float(x)) for x in points[r]]
            if labels is not None:
                row.append(names[labels[r]] if names is not None else str(labels[r]))
            writer.writerow(row)


def write_labels(path, labels, names: Sequence[str], column: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([column])
        for lab in labels:
            writer.writerow([names[lab]])


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingRecord:
    """Per-marker divisors; a divisor of 0 means the marker was all zero and left as is."""

    divisors: tuple

    def as_dict(self, markers: Optional[Sequence[str]] = None) -> dict:
        keys = markers if markers is not None else [str(m) for m in range(len(self.divisors))]
        return dict(zip(keys, self.divisors))


def _scale(points: np.ndarray, divisors: np.ndarray) -> np.ndarray:
    safe = np.where(divisors > 0, divisors, 1.0)
    return points / safe


def preprocess(sample: WeightedSample) -> Tuple[WeightedSample, ScalingRecord]:
    """Clamp negative intensities at zero, then divide each marker by its maximum."""
    clamped = np.maximum(sample.points, 0.0)
    divisors = clamped.max(axis=0)
    out = WeightedSample(_scale(clamped, divisors), sample.weights)
    return out, ScalingRecord(tuple(float(x) for x in divisors))


def preprocess_pair(source: WeightedSample, target: WeightedSample, joint: bool = False):
    """Preprocess both samples, each with its own divisors unless ``joint``.

    Returns ``(source, target, source_record, target_record)``.
    """
    if not joint:
        s, rs = preprocess(source)
        t, rt = preprocess(target)
        return s, t, rs, rt
    cs, ct = np.maximum(source.points, 0.0), np.maximum(target.points, 0.0)
    divisors = np.maximum(cs.max(axis=0), ct.max(axis=0))
    rec = ScalingRecord(tuple(float(x) for x in divisors))
    return (WeightedSample(_scale(cs, divisors), source.weights),
            WeightedSample(_scale(ct, divisors), target.weights), rec, rec)


# ---------------------------------------------------------------------------
# synthetic benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ShiftMap:
    """Component-wise ``x -> scale * x + translation + quad * x**2``.

    Construction checks that every component is increasing on ``domain``.
    """

    translation: np.ndarray
    diag_scale: np.ndarray
    quad_coeff: np.ndarray
    domain: Tuple[float, float] = (-1.0, 2.0)

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.translation, dtype=float))
        s = np.atleast_1d(np.asarray(self.diag_scale, dtype=float))
        q = np.atleast_1d(np.asarray(self.quad_coeff, dtype=float))
        if not (t.shape == s.shape == q.shape) or t.ndim != 1:
            raise ValidationError("translation, scale and quadratic coefficients must have equal length")
        if np.any(s <= 0):
            raise ValidationError("diagonal scale must be positive")
        lo, hi = self.domain
        slope = np.minimum(s + 2 * q * lo, s + 2 * q * hi)
        if np.any(slope <= 0):
            m = int(np.argmax(slope <= 0))
            raise ValidationError(f"component {m} is not increasing on [{lo}, {hi}]")
        for name, arr in (("translation", t), ("diag_scale", s), ("quad_coeff", q)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def default(cls, dim: int) -> "ShiftMap":
        return cls(np.full(dim, 0.2), np.full(dim, 0.9), np.full(dim, 0.15))

    @classmethod
    def identity(cls, dim: int) -> "ShiftMap":
        return cls(np.zeros(dim), np.ones(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.translation.shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.diag_scale * x + self.translation + self.quad_coeff * x * x

    def as_dict(self) -> dict:
        return {"translation": self.translation.tolist(), "diag_scale": self.diag_scale.tolist(),
                "quad_coeff": self.quad_coeff.tolist(), "domain": list(self.domain)}


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Gaussian mixture with diagonal covariances."""

    means: np.ndarray
    variances: np.ndarray
    proportions: ProbabilityVector
    names: Optional[tuple] = None

    def __post_init__(self):
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        var = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if mu.shape != var.shape:
            raise ValidationError(f"means {mu.shape} and variances {var.shape} differ in shape")
        if np.any(var <= 0):
            raise ValidationError("variances must be strictly positive")
        props = self.proportions
        if not isinstance(props, ProbabilityVector):
            props = ProbabilityVector(props)
        if len(props) != mu.shape[0]:
            raise ValidationError(f"{len(props)} proportions for {mu.shape[0]} components")
        names = tuple(self.names) if self.names is not None else tuple(f"c{k}" for k in range(mu.shape[0]))
        if len(names) != mu.shape[0]:
            raise ValidationError("one name per component required")
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "proportions", props)
        object.__setattr__(self, "names", names)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def as_dict(self) -> dict:
        return {"means": self.means.tolist(), "variances": self.variances.tolist(),
                "proportions": self.proportions.tolist(), "names": list(self.names)}


def _spread_proportions(rng: np.random.Generator, K: int) -> np.ndarray:
    # floor every class at 0.2/K so no class is vanishingly rare
    return 0.8 * rng.dirichlet(np.ones(K)) + 0.2 / K


def random_mixture(n_components: int, dim: int, seed: int):
    """Random well-separated mixture on roughly the unit cube.

    Returns ``(source_spec, target_proportions)`` with independently drawn
    source and target class proportions.
    """
    if n_components < 1 or dim < 1:
        raise ValidationError("need at least one component and one dimension")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5eed]))
    means = rng.uniform(0.15, 0.85, size=(n_components, dim))
    sd = rng.uniform(0.03, 0.06, size=(n_components, dim))
    rho = _spread_proportions(rng, n_components)
    pi = _spread_proportions(rng, n_components)
    rho, pi = rho / rho.sum(), pi / pi.sum()
    return MixtureSpec(means, sd ** 2, ProbabilityVector(rho)), ProbabilityVector(pi)


def two_class_mixture():
    """Two elongated clusters in the plane, with source/target proportions
    (0.451, 0.549) and (0.739, 0.261)."""
    means = np.array([[0.70, 0.20], [0.25, 0.65]])
    sd = np.array([[0.06, 0.05], [0.05, 0.07]])
    return MixtureSpec(means, sd ** 2, ProbabilityVector([0.451, 0.549])), ProbabilityVector([0.739, 0.261])


@dataclass(frozen=True, eq=False)
class SimulatedPair:
    source: WeightedSample
    partition: ClassPartition
    target: WeightedSample
    target_labels: np.ndarray
    source_counts: np.ndarray
    target_counts: np.ndarray
    source_scaling: Optional[ScalingRecord] = None
    target_scaling: Optional[ScalingRecord] = None
    names: tuple = field(default=())

    @property
    def target_proportions(self) -> ProbabilityVector:
        return ProbabilityVector(self.target_counts / self.target_counts.sum())


def _draw(rng, spec: MixtureSpec, counts: np.ndarray):
    labels = rng.permutation(np.repeat(np.arange(spec.n_components), counts))
    noise = rng.standard_normal((labels.shape[0], spec.dim))
    return spec.means[labels] + np.sqrt(spec.variances[labels]) * noise, labels


def simulate_pair(source_spec: MixtureSpec, target_proportions, shift: ShiftMap,
                  I: int, J: int, seed: int, preprocess_data: bool = True,
                  joint_scaling: bool = False) -> SimulatedPair:
    """Source from the mixture, target from the re-proportioned mixture pushed through ``shift``.

    Class counts are drawn first (source multinomial, then target
    multinomial), then the source coordinates, then the target coordinates.
    """
    pi = target_proportions if isinstance(target_proportions, ProbabilityVector) else ProbabilityVector(target_proportions)
    K = source_spec.n_components
    if len(pi) != K:
        raise ValidationError(f"{len(pi)} target proportions for {K} components")
    if shift.dim != source_spec.dim:
        raise ValidationError(f"shift map has dimension {shift.dim}, mixture has {source_spec.dim}")
    if I < K or J < K:
        raise ValidationError(f"need I, J >= K={K}, got I={I}, J={J}")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    src_counts = rng.multinomial(I, source_spec.proportions.values)
    tgt_counts = rng.multinomial(J, pi.values)
    if np.any(src_counts == 0):
        raise ValidationError(f"source draw left classes {np.flatnonzero(src_counts == 0).tolist()} empty; increase I")
    xs, ls = _draw(rng, source_spec, src_counts)
    xt, lt = _draw(rng, source_spec, tgt_counts)
    xt = shift(xt)
    source = WeightedSample.uniform(xs)
    target = WeightedSample.uniform(xt)
    rs = rt = None
    if preprocess_data:
        source, target, rs, rt = preprocess_pair(source, target, joint=joint_scaling)
    partition = ClassPartition(ls, K, source_spec.names)
    lt.setflags(write=False)
    return SimulatedPair(source, partition, target, lt, src_counts, tgt_counts, rs, rt, source_spec.names)


PRESETS = {
    "hipc-sim": dict(k=10, d=10, i=115_783, j=68_981),
    "two-class": dict(k=2, d=2, i=5000, j=5000),
}
