"""Instance matching and the AP_dsb score TP / (TP + FP + FN)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeMismatchError

THRESHOLDS_2D = tuple(np.round(np.arange(0.5, 0.9001, 0.05), 2))
THRESHOLDS_3D = tuple(np.round(np.arange(0.1, 0.9001, 0.1), 1))


def default_thresholds(ndim: int) -> tuple[float, ...]:
    return THRESHOLDS_3D if ndim == 3 else THRESHOLDS_2D


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    unmatched_gt: list[int]
    unmatched_pred: list[int]
    threshold: float

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_pred)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gt)


@dataclass
class ApCurve:
    thresholds: np.ndarray
    scores: np.ndarray
    std: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.thresholds.shape != self.scores.shape:
            raise ShapeMismatchError("thresholds and scores differ in length")

    @property
    def mean(self) -> float:
        return float(self.scores.mean())

    def at(self, threshold: float) -> float:
        i = int(np.argmin(np.abs(self.thresholds - threshold)))
        if not np.isclose(self.thresholds[i], threshold):
            raise KeyError(f"threshold {threshold} not on the curve")
        return float(self.scores[i])


class IouMatrix(dict):
    """Sparse IoU table ``{(gt_label, pred_label): iou}`` plus the label sets of both sides."""

    def __init__(self, data=(), gt_labels=None, pred_labels=None):
        super().__init__(data)
        self.gt_labels = sorted(set(gt_labels if gt_labels is not None else (g for g, _ in self)))
        self.pred_labels = sorted(set(pred_labels if pred_labels is not None else (p for _, p in self)))


def pairwise_iou(gt: np.ndarray, pred: np.ndarray) -> IouMatrix:
    """IoU of every overlapping (gt, pred) label pair; background (0) excluded."""
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ShapeMismatchError(f"gt {gt.shape} and prediction {pred.shape} differ in shape")
    g = gt.ravel().astype(np.int64)
    p = pred.ravel().astype(np.int64)
    g_ids, g_counts = np.unique(g, return_counts=True)
    p_ids, p_counts = np.unique(p, return_counts=True)
    g_size = dict(zip(g_ids.tolist(), g_counts.tolist()))
    p_size = dict(zip(p_ids.tolist(), p_counts.tolist()))
    both = (g > 0) & (p > 0)
    pairs, inter = np.unique(np.stack([g[both], p[both]]), axis=1, return_counts=True)
    out = IouMatrix(gt_labels=[k for k in g_size if k > 0], pred_labels=[k for k in p_size if k > 0])
    for (a, b), n in zip(pairs.T.tolist(), inter.tolist()):
        out[(a, b)] = n / (g_size[a] + p_size[b] - n)
    return out


def match_at(iou: IouMatrix, threshold: float) -> MatchResult:
    """One-to-one matching maximising the number of pairs with IoU > threshold.

    At thresholds >= 0.5 every object has at most one eligible partner, so a
    greedy pass in order of descending IoU is optimal. Lower thresholds use a
    linear assignment (pair count first, total IoU as tie-break).
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    gt_labels = list(getattr(iou, "gt_labels", sorted({g for g, _ in iou})))
    pred_labels = list(getattr(iou, "pred_labels", sorted({p for _, p in iou})))
    cand = sorted(((v, g, p) for (g, p), v in iou.items() if v > threshold),
                  key=lambda t: (-t[0], t[1], t[2]))
    pairs: list[tuple[int, int, float]] = []
    if threshold >= 0.5:
        used_g, used_p = set(), set()
        for v, g, p in cand:
            if g in used_g or p in used_p:
                continue
            used_g.add(g)
            used_p.add(p)
            pairs.append((g, p, v))
    elif cand:
        gi = {g: i for i, g in enumerate(gt_labels)}
        pi = {p: j for j, p in enumerate(pred_labels)}
        scale = min(len(gt_labels), len(pred_labels)) + 1
        cost = np.zeros((len(gt_labels), len(pred_labels)))
        for v, g, p in cand:
            cost[gi[g], pi[p]] = -(1.0 + v / scale)
        rows, cols = linear_sum_assignment(cost)
        for r, c in zip(rows, cols):
            if cost[r, c] < 0:
                g, p = gt_labels[r], pred_labels[c]
                pairs.append((g, p, iou[(g, p)]))
    pairs.sort(key=lambda t: (t[0], t[1]))
    matched_g = {g for g, _, _ in pairs}
    matched_p = {p for _, p, _ in pairs}
    return MatchResult(
        pairs,
        [g for g in gt_labels if g not in matched_g],
        [p for p in pred_labels if p not in matched_p],
        threshold,
    )


def score_match(m: MatchResult) -> float:
    denom = m.tp + m.fp + m.fn
    # nothing to find and nothing predicted counts as perfect
    return 1.0 if denom == 0 else m.tp / denom


def ap_dsb(gt: np.ndarray, pred: np.ndarray, thresholds=None) -> ApCurve:
    gt = np.asarray(gt)
    if thresholds is None:
        thresholds = default_thresholds(gt.ndim)
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("at least one threshold is required")
    iou = pairwise_iou(gt, pred)
    return ApCurve(thresholds, [score_match(match_at(iou, t)) for t in thresholds])


def average_runs(curves) -> ApCurve:
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to average")
    ref = curves[0].thresholds
    for c in curves[1:]:
        if c.thresholds.shape != ref.shape or not np.allclose(c.thresholds, ref):
            raise ShapeMismatchError("threshold grids differ between runs")
    scores = np.stack([c.scores for c in curves])
    return ApCurve(ref.copy(), scores.mean(axis=0), scores.std(axis=0))
