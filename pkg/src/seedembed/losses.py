"""Training objective with analytic gradients.

Three terms are combined::

    total = w_seed * seed_term + w_iou * iou_term + w_var * var_term

``iou_term`` is the Lovasz hinge of the Jaccard loss on each object's Gaussian
membership map, averaged over objects. ``seed_term`` regresses seediness onto
that membership (and onto 0 in the background). ``var_term`` pulls every
voxel's sigma towards its object mean.

Gradients are returned with respect to the raw FieldStack channels (offsets,
sigmas, seeds). The per-object bandwidth is a differentiable mean inside
``iou_term`` but a constant inside ``seed_term`` and ``var_term``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .centers import CenterKind
from .embedding import embed_all, object_centers
from .errors import DegenerateDatasetError, EmptyObjectError, ShapeMismatchError
from .grid import FieldStack, check_labels


@dataclass(frozen=True)
class LossWeights:
    w_seed: float = 1.0
    w_iou: float = 1.0
    w_var: float = 10.0
    w_fg: float = 10.0
    w_bg: float = 1.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if not v >= 0:
                raise ValueError(f"{name} must be non-negative, got {v}")


@dataclass
class Gradients:
    offsets: np.ndarray
    sigmas: np.ndarray
    seeds: np.ndarray

    @classmethod
    def zeros_like(cls, fs: FieldStack) -> "Gradients":
        return cls(np.zeros_like(fs.offsets), np.zeros_like(fs.sigmas), np.zeros_like(fs.seeds))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.offsets, self.sigmas, self.seeds[None]], axis=0)


@dataclass
class LossReport:
    total: float
    seed_term: float
    iou_term: float
    var_term: float
    gradients: Gradients

    def summary(self) -> dict:
        return {"total": self.total, "seed": self.seed_term, "iou": self.iou_term, "var": self.var_term}


def _check_shapes(fs: FieldStack, labels: np.ndarray):
    if labels.shape != fs.shape:
        raise ShapeMismatchError(f"label volume {labels.shape} does not match fields {fs.shape}")


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Jaccard-loss increments along a descending error ordering."""
    gt_sorted = np.asarray(gt_sorted, dtype=np.float64)
    n_gt = gt_sorted.sum()
    intersection = n_gt - np.cumsum(gt_sorted)
    union = n_gt + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1].copy()
    return jaccard


def lovasz_jaccard_loss(phi_values, gt_mask) -> tuple[float, np.ndarray]:
    """Lovasz extension of the Jaccard loss for one binary object.

    Errors are ``1 - phi`` on ground-truth voxels and ``phi`` elsewhere. At
    binary ``phi`` the value equals ``1 - IoU(phi > 0.5, gt)``.

    Returns
    -------
    loss : float
    grad : ndarray
        d loss / d phi, same shape as ``phi_values``.
    """
    phi = np.asarray(phi_values, dtype=np.float64)
    gt = np.asarray(gt_mask, dtype=bool)
    if phi.shape != gt.shape:
        raise ShapeMismatchError(f"phi {phi.shape} and mask {gt.shape} differ")
    if not gt.any():
        raise EmptyObjectError()
    p = phi.ravel()
    g = gt.ravel()
    errors = np.where(g, 1.0 - p, p)
    order = np.argsort(-errors, kind="stable")
    weights = lovasz_grad(g[order])
    loss = float(errors[order] @ weights)
    grad_err = np.empty_like(p)
    grad_err[order] = weights
    grad = np.where(g, -grad_err, grad_err)
    return loss, grad.reshape(phi.shape)


def _object_masks(labels: np.ndarray, centers: dict) -> list[tuple[int, np.ndarray, np.ndarray]]:
    flat = labels.ravel()
    out = []
    for k, c in centers.items():
        m = flat == k
        if not m.any():
            raise EmptyObjectError(f"empty object: label {k} has no voxels")
        out.append((k, m, np.asarray(c, dtype=np.float64)))
    return out


def iou_loss(fs: FieldStack, labels: np.ndarray, centers: dict) -> tuple[float, Gradients]:
    """Object-averaged Lovasz loss of the Gaussian membership maps over the whole grid."""
    labels = check_labels(labels)
    _check_shapes(fs, labels)
    d = fs.ndim
    emb = embed_all(fs).reshape(d, -1)
    sig = fs.sigmas.reshape(d, -1)
    grads = Gradients.zeros_like(fs)
    g_off = grads.offsets.reshape(d, -1)
    g_sig = grads.sigmas.reshape(d, -1)
    objs = _object_masks(labels, centers)
    if not objs:
        return 0.0, grads
    total = 0.0
    for _, m, c in objs:
        n_k = int(m.sum())
        sk = sig[:, m].mean(axis=1)
        diff = emb - c[:, None]
        phi = np.exp(-0.5 * ((diff / sk[:, None]) ** 2).sum(axis=0))
        value, g_phi = lovasz_jaccard_loss(phi, m)
        total += value
        w = g_phi * phi
        g_off -= w * diff / (sk[:, None] ** 2)
        g_sk = (w * diff ** 2).sum(axis=1) / sk ** 3
        g_sig[:, m] += (g_sk / n_k)[:, None]
    K = len(objs)
    grads.offsets /= K
    grads.sigmas /= K
    return total / K, grads


def seed_loss(fs: FieldStack, labels: np.ndarray, centers: dict, sigma_k: dict,
              weights: LossWeights = LossWeights(), through_phi: bool = False) -> tuple[float, Gradients]:
    """Mean squared seediness error over all N voxels.

    Object voxels regress onto phi_k(e_i) with weight ``w_fg``; background
    voxels onto 0 with weight ``w_bg``. ``centers`` and ``sigma_k`` are held
    constant. With ``through_phi`` the target also passes gradient into the
    offsets; otherwise it is treated as a fixed regression target.
    """
    labels = check_labels(labels)
    _check_shapes(fs, labels)
    d = fs.ndim
    n = fs.seeds.size
    s = fs.seeds.ravel()
    emb = embed_all(fs).reshape(d, -1)
    target = np.zeros(n)
    w = np.full(n, weights.w_bg)
    grads = Gradients.zeros_like(fs)
    parts = []
    for k, m, c in _object_masks(labels, centers):
        sk = np.asarray(sigma_k[k], dtype=np.float64)
        diff = emb[:, m] - c[:, None]
        phi = np.exp(-0.5 * ((diff / sk[:, None]) ** 2).sum(axis=0))
        target[m] = phi
        w[m] = weights.w_fg
        parts.append((m, phi, diff, sk))
    r = s - target
    value = float((w * r * r).sum() / n)
    grads.seeds[...] = (2.0 * w * r / n).reshape(fs.shape)
    if through_phi:
        g_off = grads.offsets.reshape(d, -1)
        for m, phi, diff, sk in parts:
            # d/de of -(2 w r / n) * phi
            g_off[:, m] += (2.0 * weights.w_fg * r[m] / n) * phi * diff / (sk[:, None] ** 2)
    return value, grads


def variance_loss(fs: FieldStack, labels: np.ndarray) -> tuple[float, Gradients]:
    """Object-averaged mean squared deviation of sigma from the object mean."""
    labels = check_labels(labels)
    _check_shapes(fs, labels)
    d = fs.ndim
    sig = fs.sigmas.reshape(d, -1)
    flat = labels.ravel()
    grads = Gradients.zeros_like(fs)
    g_sig = grads.sigmas.reshape(d, -1)
    ks = np.unique(flat)
    ks = ks[ks > 0]
    if ks.size == 0:
        return 0.0, grads
    total = 0.0
    for k in ks:
        m = flat == k
        n_k = int(m.sum())
        dev = sig[:, m] - sig[:, m].mean(axis=1, keepdims=True)
        total += float((dev ** 2).sum() / n_k)
        # the mean is detached; its own derivative would sum to zero anyway
        g_sig[:, m] = 2.0 * dev / n_k
    grads.sigmas /= ks.size
    return total / ks.size, grads


def total_loss(fs: FieldStack, labels: np.ndarray, kind: CenterKind | str = CenterKind.MEDOID,
               weights: LossWeights = LossWeights(), centers: dict | None = None,
               seed_through_phi: bool = False) -> LossReport:
    labels = check_labels(labels)
    _check_shapes(fs, labels)
    if centers is None:
        centers = object_centers(labels, kind)
    d = fs.ndim
    flat = labels.ravel()
    sig = fs.sigmas.reshape(d, -1)
    sigma_k = {k: sig[:, flat == k].mean(axis=1) for k in centers}

    s_val, s_g = seed_loss(fs, labels, centers, sigma_k, weights, through_phi=seed_through_phi)
    i_val, i_g = iou_loss(fs, labels, centers)
    v_val, v_g = variance_loss(fs, labels)

    grads = Gradients(
        weights.w_seed * s_g.offsets + weights.w_iou * i_g.offsets,
        weights.w_seed * s_g.sigmas + weights.w_iou * i_g.sigmas + weights.w_var * v_g.sigmas,
        weights.w_seed * s_g.seeds,
    )
    total = weights.w_seed * s_val + weights.w_iou * i_val + weights.w_var * v_val
    return LossReport(total, s_val, i_val, v_val, grads)


def w_fg_from_data(label_volumes) -> float:
    """Background-to-foreground voxel ratio across a dataset."""
    fg = bg = 0
    for lv in label_volumes:
        lv = np.asarray(lv)
        n_fg = int(np.count_nonzero(lv))
        fg += n_fg
        bg += lv.size - n_fg
    if fg == 0:
        raise DegenerateDatasetError("degenerate dataset: no foreground voxels")
    return bg / fg
