"""Embedding targets for an object: centroid, geometric median and medoid."""
from __future__ import annotations

import enum

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyObjectError

GM_EPS = 1e-9
# relative slack under which two mean distances count as tied
TIE_RTOL = 1e-12


class CenterKind(str, enum.Enum):
    CENTROID = "centroid"
    GEOMETRIC_MEDIAN = "geometric_median"
    MEDOID = "medoid"


def _points(pixels) -> np.ndarray:
    pts = np.asarray(pixels, dtype=np.float64)
    if pts.size == 0:
        raise EmptyObjectError()
    if pts.ndim == 1:
        pts = pts[None, :]
    return pts


def centroid(pixels) -> np.ndarray:
    return _points(pixels).mean(axis=0)


def sum_of_distances(pixels, y) -> float:
    pts = _points(pixels)
    return float(np.sqrt(((pts - np.asarray(y, dtype=np.float64)) ** 2).sum(axis=1)).sum())


def geometric_median(pixels, tol: float = 1e-7, max_iter: int = 10_000) -> np.ndarray:
    """Weiszfeld iteration started from the centroid.

    Distances are floored at ``GM_EPS`` so an iterate landing on a data point
    stays finite. Stops once a step moves less than ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    pts = _points(pixels)
    y = pts.mean(axis=0)
    if len(pts) == 1:
        return y
    for _ in range(max_iter):
        d = np.maximum(np.sqrt(((pts - y) ** 2).sum(axis=1)), GM_EPS)
        w = 1.0 / d
        y_new = (w[:, None] * pts).sum(axis=0) / w.sum()
        step = float(np.sqrt(((y_new - y) ** 2).sum()))
        y = y_new
        if step < tol:
            break
    return y


def _lexsort_order(pts: np.ndarray) -> np.ndarray:
    # row-major linear index order == lexicographic coordinate order
    return np.lexsort(pts.T[::-1])


def medoid(pixels, max_candidates: int | None = None, chunk: int = 2048, seed: int = 0) -> np.ndarray:
    """Member pixel with the smallest mean Euclidean distance to all members.

    Exact O(n^2) by default. With ``max_candidates`` set and more pixels than
    that, only a seeded random subset of members is scored (every member still
    contributes to each candidate's mean). Ties go to the smallest linear index.
    """
    raw = np.asarray(pixels)
    pts = _points(pixels)
    order = _lexsort_order(pts)
    pts = pts[order]
    n = len(pts)
    cand = np.arange(n)
    if max_candidates is not None and n > max_candidates:
        rng = np.random.default_rng(seed)
        cand = np.sort(rng.choice(n, size=max_candidates, replace=False))
    sums = np.empty(len(cand))
    for start in range(0, len(cand), chunk):
        sel = cand[start:start + chunk]
        sums[start:start + chunk] = cdist(pts[sel], pts).sum(axis=1)
    best = sums.min()
    tied = np.flatnonzero(sums <= best + TIE_RTOL * max(best, 1.0))
    winner = pts[cand[tied[0]]]
    if np.issubdtype(raw.dtype, np.integer):
        return winner.astype(raw.dtype)
    return winner


def center_of(pixels, kind: CenterKind | str = CenterKind.MEDOID, **kwargs) -> np.ndarray:
    kind = CenterKind(kind)
    if kind is CenterKind.CENTROID:
        return centroid(pixels)
    if kind is CenterKind.GEOMETRIC_MEDIAN:
        return geometric_median(pixels, **kwargs)
    return medoid(pixels, **kwargs)
