"""Precision-recall curves, average precision and boxplot summaries.

Anomalies are the positive class and a sample is flagged when its score is
``>= threshold``.  Samples sharing a score always flip together.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

INTEGRATION_RULE = "average-precision step sum over ascending recall"


@dataclass(frozen=True)
class PRCurve:
    """Operating points sorted by descending threshold."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    prevalence: float

    def __len__(self):
        return len(self.thresholds)

    def triples(self):
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in self.triples():
                w.writerow([repr(t), repr(p), repr(r)])


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) != len(labels):
        raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("need at least one positive and one negative label")
    return scores, labels.astype(np.int64)


def pr_curve(scores, labels) -> PRCurve:
    """Precision and recall at every distinct score used as threshold."""
    scores, labels = _validate(scores, labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    flagged = ends + 1
    tp = tp[ends]
    n_pos = labels.sum()
    return PRCurve(thresholds=s[ends], precision=tp / flagged, recall=tp / n_pos,
                   prevalence=float(n_pos / len(labels)))


def auprc(curve: PRCurve) -> float:
    """Step-wise area: ``sum (r_i - r_{i-1}) * p_i`` with ``r_0 = 0``.

    The terms are added with ``math.fsum`` so the result is correctly
    rounded and does not depend on summation order.
    """
    r = np.r_[0.0, curve.recall]
    return math.fsum((np.diff(r) * curve.precision).tolist())


def average_precision(scores, labels) -> float:
    return auprc(pr_curve(scores, labels))


@dataclass(frozen=True)
class BoxplotStats:
    min: float
    q1: float
    median: float
    q3: float
    max: float
    n: int

    def row(self):
        return [self.min, self.q1, self.median, self.q3, self.max]


def five_number(values) -> BoxplotStats:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("empty group")
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0], method="linear")
    return BoxplotStats(*map(float, q), n=int(v.size))


def boxplot_stats(scores, labels) -> dict[str, BoxplotStats]:
    """Five-number summaries of the normal (label 0) and abnormal (label 1) groups."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    return {"normal": five_number(scores[labels == 0]),
            "abnormal": five_number(scores[labels == 1])}


def boxplot_csv(stats: dict[str, BoxplotStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "n", "min", "q1", "median", "q3", "max"])
        for group, s in stats.items():
            w.writerow([group, s.n] + [repr(v) for v in s.row()])


def pr_curve_svg(curve: PRCurve, path, title: str = "Precision-recall", width: int = 480,
                 height: int = 360) -> None:
    """Static SVG line plot of precision against recall."""
    pad = 50
    pw, ph = width - 2 * pad, height - 2 * pad
    r = np.r_[0.0, curve.recall]
    p = np.r_[curve.precision[0], curve.precision]
    # step plot: horizontal at each precision level between consecutive recalls
    xs, ys = [r[0]], [p[0]]
    for i in range(1, len(r)):
        xs += [r[i], r[i]]
        ys += [ys[-1], p[i]]
    pts = " ".join(f"{pad + x * pw:.2f},{pad + (1 - y) * ph:.2f}" for x, y in zip(xs, ys))
    base_y = pad + (1 - curve.prevalence) * ph
    ticks = []
    for t in np.linspace(0, 1, 6):
        x = pad + t * pw
        y = pad + (1 - t) * ph
        ticks.append(f'<text x="{x:.1f}" y="{pad + ph + 18}" font-size="11" '
                     f'text-anchor="middle">{t:.1f}</text>')
        ticks.append(f'<text x="{pad - 8}" y="{y + 4:.1f}" font-size="11" '
                     f'text-anchor="end">{t:.1f}</text>')
    svg = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
<rect width="100%" height="100%" fill="white"/>
<rect x="{pad}" y="{pad}" width="{pw}" height="{ph}" fill="none" stroke="black"/>
<line x1="{pad}" y1="{base_y:.2f}" x2="{pad + pw}" y2="{base_y:.2f}" stroke="gray" stroke-dasharray="4 4"/>
<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="2"/>
{chr(10).join(ticks)}
<text x="{width / 2}" y="{height - 8}" font-size="13" text-anchor="middle">recall</text>
<text x="14" y="{height / 2}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {height / 2})">precision</text>
<text x="{width / 2}" y="{pad - 16}" font-size="14" text-anchor="middle">{_escape(title)} (AP = {auprc(curve):.3f})</text>
</svg>
"""
    with open(path, "w") as fh:
        fh.write(svg)


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
