"""Agreement measures between estimated and benchmark class proportions."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .core import ProbabilityVector, ValidationError

BLAND_ALTMAN_HEADER = ("dataset", "class", "mean", "diff")


def _values(p) -> np.ndarray:
    return p.values if isinstance(p, ProbabilityVector) else np.asarray(p, dtype=float)


def kl_divergence(p_hat, p, warn: bool = True) -> float:
    """``sum_k p_hat_k log(p_hat_k / p_k)``, skipping terms with ``p_hat_k = 0``.

    Returns ``inf`` (with a warning) when ``p_hat`` puts mass where ``p``
    has none.
    """
    q, r = _values(p_hat), _values(p)
    if q.shape != r.shape:
        raise ValidationError(f"dimension mismatch: {q.shape[0]} vs {r.shape[0]} classes")
    support = q > 0
    if np.any(support & (r <= 0)):
        k = int(np.flatnonzero(support & (r <= 0))[0])
        if warn:
            warnings.warn(f"KL divergence is infinite: class {k} has estimate {float(q[k])!r} but benchmark 0",
                          RuntimeWarning, stacklevel=2)
        return math.inf
    terms = q[support] * np.log(q[support] / r[support])
    return max(float(terms.sum()), 0.0)


@dataclass(frozen=True)
class BlandAltmanPoint:
    dataset: str
    class_index: int
    class_name: str
    mean: float
    diff: float


def bland_altman_points(p_hat, p, dataset_tag: str,
                        class_names: Optional[Sequence[str]] = None) -> List[BlandAltmanPoint]:
    q, r = _values(p_hat), _values(p)
    if q.shape != r.shape:
        raise ValidationError(f"dimension mismatch: {q.shape[0]} vs {r.shape[0]} classes")
    names = list(class_names) if class_names is not None else [str(k) for k in range(q.shape[0])]
    return [BlandAltmanPoint(dataset_tag, k, names[k], float((q[k] + r[k]) / 2), float(q[k] - r[k]))
            for k in range(q.shape[0])]


def error_summary(points: Iterable[BlandAltmanPoint]) -> dict:
    diffs = np.abs(np.array([pt.diff for pt in points], dtype=float))
    if diffs.size == 0:
        raise ValidationError("cannot summarize an empty Bland-Altman collection")
    # small slack so that a difference of exactly 0.05 computed in floating
    # point (e.g. 0.55 - 0.5) still counts as within 5%
    slack = 1e-12
    return {
        "frac_within_5pct": float(np.mean(diffs <= 0.05 + slack)),
        "frac_within_10pct": float(np.mean(diffs <= 0.10 + slack)),
        "max_abs": float(diffs.max()),
        "median_abs": float(np.median(diffs)),
    }


def write_bland_altman_csv(points: Iterable[BlandAltmanPoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BLAND_ALTMAN_HEADER)
        for pt in points:
            writer.writerow([pt.dataset, pt.class_name, repr(pt.mean), repr(pt.diff)])


def read_bland_altman_csv(path) -> List[BlandAltmanPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != BLAND_ALTMAN_HEADER:
            raise ValidationError(f"unexpected header {header}")
        rows = list(reader)
    seen = {}
    out = []
    for ds, name, mean, diff in rows:
        classes = seen.setdefault(ds, {})
        k = classes.setdefault(name, len(classes))
        out.append(BlandAltmanPoint(ds, k, name, float(mean), float(diff)))
    return out


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def bland_altman_svg(points: Sequence[BlandAltmanPoint], width: int = 480, height: int = 320) -> str:
    """Bare scatter of difference against mean, one colour per class."""
    pad = 40
    means = [pt.mean for pt in points]
    diffs = [pt.diff for pt in points]
    span = max([abs(d) for d in diffs] + [0.05])
    x_max = max(means + [1e-9])

    def sx(x):
        return pad + (width - 2 * pad) * x / x_max

    def sy(y):
        return height / 2 - (height / 2 - pad) * y / span

    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<line x1="{pad}" y1="{sy(0):.2f}" x2="{width - pad}" y2="{sy(0):.2f}" stroke="black"/>']
    for pt in points:
        colour = palette[pt.class_index % len(palette)]
        parts.append(f'<circle cx="{sx(pt.mean):.2f}" cy="{sy(pt.diff):.2f}" r="3" fill="{colour}">'
                     f'<title>{pt.dataset} {pt.class_name}</title></circle>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def points_as_dicts(points: Iterable[BlandAltmanPoint]) -> list:
    return [asdict(pt) for pt in points]
