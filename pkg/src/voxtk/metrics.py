"""Segmentation evaluation: per-label overlap (DSC), surface distance (ASD),
and median-with-CI aggregation.

DSC is ``2 |G intersect P| / (|G| + |P|)``; ASD is the symmetric mean of
nearest-neighbor distances between the two boundary-voxel surfaces, in mm.
A label missing from the prediction scores (0, NaN); a label absent from
both volumes scores (1, 0) and is flagged. Aggregation reports the median of
the finite values with a seeded percentile-bootstrap 95% confidence interval.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .volume import LabelVolume, require_same_geometry

__all__ = [
    "DEFAULT_EVAL_LABELS",
    "MetricRecord",
    "AggregateSummary",
    "dsc",
    "extract_surface",
    "asd",
    "evaluate",
    "aggregate",
]

# All structure labels except WM-hypointensities (35); the extra-cerebral
# label (36) is never part of predictions.
DEFAULT_EVAL_LABELS = tuple(range(1, 35))


def dsc(g: np.ndarray, p: np.ndarray) -> float:
    """Overlap of two voxel sets; 1.0 is perfect, both-empty counts as 1.0."""
    g = np.asarray(g, dtype=bool)
    p = np.asarray(p, dtype=bool)
    size = int(g.sum()) + int(p.sum())
    if size == 0:
        return 1.0
    return 2.0 * int((g & p).sum()) / size


def extract_surface(segment: np.ndarray, spacing) -> np.ndarray:
    """Boundary voxel centers of a segment, in mm.

    A voxel is on the surface when at least one of its 6 face neighbors is
    outside the segment; out-of-grid counts as outside. Returns an (N, 3)
    array of coordinates scaled by the voxel spacing.
    """
    seg = np.asarray(segment, dtype=bool)
    if not seg.any():
        return np.empty((0, 3), dtype=float)
    padded = np.pad(seg, 1, constant_values=False)
    core = (padded[2:, 1:-1, 1:-1] & padded[:-2, 1:-1, 1:-1]
            & padded[1:-1, 2:, 1:-1] & padded[1:-1, :-2, 1:-1]
            & padded[1:-1, 1:-1, 2:] & padded[1:-1, 1:-1, :-2])
    boundary = seg & ~core
    return np.argwhere(boundary).astype(float) * np.asarray(spacing, dtype=float)


def asd(g: np.ndarray, p: np.ndarray, spacing) -> float:
    """Symmetric average surface distance in mm; NaN when a segment is empty."""
    gs = extract_surface(g, spacing)
    ps = extract_surface(p, spacing)
    if len(gs) == 0 or len(ps) == 0:
        return float("nan")
    d_gp = cKDTree(ps).query(gs)[0]
    d_pg = cKDTree(gs).query(ps)[0]
    return float((d_gp.sum() + d_pg.sum()) / (len(gs) + len(ps)))


@dataclass(frozen=True)
class MetricRecord:
    """Per-label evaluation result; ``both_absent`` flags labels missing from
    ground truth and prediction alike (scored as perfect)."""

    label: int
    dsc: float
    asd_mm: float
    both_absent: bool = False


def evaluate(gt: LabelVolume, pred: LabelVolume,
             labels: Optional[Iterable[int]] = None) -> List[MetricRecord]:
    """Per-label DSC/ASD records for a (ground truth, prediction) pair.

    The default label set covers every structure except WM-hypointensities.
    Missing-label scoring: absent in prediction (or ground truth) only ->
    (0, NaN); absent in both -> (1, 0) with the ``both_absent`` flag.
    """
    require_same_geometry(gt, pred, "ground truth and prediction")
    label_list = DEFAULT_EVAL_LABELS if labels is None else tuple(int(l) for l in labels)
    spacing = gt.spacing
    records = []
    for label in label_list:
        g = gt.data == label
        p = pred.data == label
        in_g = bool(g.any())
        in_p = bool(p.any())
        if not in_g and not in_p:
            records.append(MetricRecord(label, 1.0, 0.0, both_absent=True))
            continue
        records.append(MetricRecord(label, dsc(g, p), asd(g, p, spacing)))
    return records


@dataclass(frozen=True)
class AggregateSummary:
    median: float
    ci_low: float
    ci_high: float

    def __post_init__(self):
        if not (self.ci_low <= self.median <= self.ci_high):
            raise DataError("confidence interval must bracket the median")


def aggregate(values: Sequence[float], n_boot: int = 10_000,
              seed: int = 0, alpha: float = 0.05) -> AggregateSummary:
    """Median with a percentile-bootstrap confidence interval.

    NaNs are excluded before aggregation; an all-NaN input is an error. The
    bootstrap is seeded, so summaries are reproducible.
    """
    arr = np.asarray(list(values), dtype=float)
    finite = arr[np.isfinite(arr)]
    if finite.size == 0:
        raise DataError("cannot aggregate: all values are NaN")
    med = float(np.median(finite))

    rng = np.random.default_rng(seed)
    n = finite.size
    meds = np.empty(n_boot, dtype=float)
    done = 0
    while done < n_boot:
        batch = min(2000, n_boot - done)
        idx = rng.integers(0, n, size=(batch, n))
        meds[done:done + batch] = np.median(finite[idx], axis=1)
        done += batch
    lo, hi = np.percentile(meds, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    # guard the bracket invariant against degenerate resampling
    lo = min(float(lo), med)
    hi = max(float(hi), med)
    return AggregateSummary(med, lo, hi)
