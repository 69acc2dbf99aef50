"""Gaussian embedding model and seed-driven clustering inference."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .centers import CenterKind, center_of
from .errors import EmptyObjectError, InvalidBandwidthError
from .grid import FieldStack, check_labels, coords_of_label, object_labels, object_size, voxel_grid


@dataclass(frozen=True)
class ClusteringParams:
    s_fg: float = 0.5
    s_min: float = 0.9
    phi_threshold: float = 0.5
    min_object_size: int = 0
    size_measure: str = "total"

    def __post_init__(self):
        for name in ("s_fg", "s_min", "phi_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.s_min < self.s_fg:
            raise ValueError(f"s_min ({self.s_min}) must be >= s_fg ({self.s_fg})")
        if self.min_object_size < 0:
            raise ValueError("min_object_size must be non-negative")
        if self.size_measure not in ("total", "interior"):
            raise ValueError(f"unknown size measure {self.size_measure!r}")


@dataclass
class Instance:
    label: int
    pixels: np.ndarray  # (n, D) integer coordinates, linear-index order
    center: np.ndarray  # embedding of the seed pixel
    sigma_k: np.ndarray  # mean predicted sigma over the instance
    seed_score: float
    seed_pixel: np.ndarray = field(default=None)


def gaussian_phi(e, center, sigma) -> np.ndarray | float:
    """exp(-sum_d (e_d - C_d)^2 / (2 sigma_d^2)) over the last axis.

    ``e`` may hold many embeddings as (..., D); ``center`` and ``sigma``
    broadcast against it.
    """
    e = np.asarray(e, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise InvalidBandwidthError()
    q = (((e - center) / sigma) ** 2).sum(axis=-1)
    out = np.exp(-0.5 * q)
    return float(out) if out.ndim == 0 else out


def aggregate_sigma(fs: FieldStack, pixels) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.intp)
    if pixels.size == 0:
        raise EmptyObjectError()
    pixels = pixels.reshape(-1, fs.ndim)
    return fs.sigmas[(slice(None),) + tuple(pixels.T)].mean(axis=1)


def embed_all(fs: FieldStack) -> np.ndarray:
    """Embeddings x + o as a channels-first (D, *shape) field; not clamped to the grid."""
    return voxel_grid(fs.shape) + fs.offsets


def cluster(fs: FieldStack, params: ClusteringParams = ClusteringParams(),
            return_trace: bool = False):
    """Greedy seed clustering.

    1. foreground = voxels with seed > s_fg
    2. pick the unclaimed foreground voxel with the highest seed (ties: lowest
       linear index); stop unless its seed > s_min
    3. claim every unclaimed foreground voxel whose embedding scores
       phi > phi_threshold under the seed's own embedding and sigma
    4. repeat

    Instances smaller than ``min_object_size`` are dropped after extraction
    (their voxels stay claimed). Labels are 1, 2, ... in extraction order.
    With ``return_trace`` also returns the per-seed acceptance masks,
    including those of dropped instances.
    """
    d = fs.ndim
    shape = fs.shape
    seeds = fs.seeds.ravel()
    emb = embed_all(fs).reshape(d, -1).T
    sig = fs.sigmas.reshape(d, -1).T

    fg = np.flatnonzero(seeds > params.s_fg)
    # stable sort on -seed keeps ascending linear index among equal seeds
    order = fg[np.argsort(-seeds[fg], kind="stable")]
    unclaimed = np.zeros(seeds.size, dtype=bool)
    unclaimed[fg] = True

    instances: list[Instance] = []
    trace: list[np.ndarray] = []
    pos = 0
    while True:
        while pos < len(order) and not unclaimed[order[pos]]:
            pos += 1
        if pos >= len(order):
            break
        seed_idx = order[pos]
        if not seeds[seed_idx] > params.s_min:
            break
        cand = np.flatnonzero(unclaimed)
        phi = gaussian_phi(emb[cand], emb[seed_idx], sig[seed_idx])
        members = cand[phi > params.phi_threshold]
        # the seed always scores phi = 1 against itself
        unclaimed[members] = False
        mask = np.zeros(seeds.size, dtype=bool)
        mask[members] = True
        mask = mask.reshape(shape)
        if return_trace:
            trace.append(mask)
        if params.min_object_size and object_size(mask, params.size_measure) < params.min_object_size:
            continue
        coords = np.stack(np.unravel_index(members, shape), axis=-1)
        instances.append(Instance(
            label=len(instances) + 1,
            pixels=coords,
            center=emb[seed_idx].copy(),
            sigma_k=sig[members].mean(axis=0),
            seed_score=float(seeds[seed_idx]),
            seed_pixel=np.array(np.unravel_index(seed_idx, shape)),
        ))
    if return_trace:
        return instances, trace
    return instances


def instances_to_labels(instances, shape, dtype=np.int32) -> np.ndarray:
    out = np.zeros(shape, dtype=dtype)
    for inst in instances:
        out[tuple(inst.pixels.T)] = inst.label
    return out


def object_centers(labels: np.ndarray, kind: CenterKind | str = CenterKind.MEDOID) -> dict[int, np.ndarray]:
    """Center of every ground-truth object, keyed by label."""
    labels = check_labels(labels)
    return {int(k): np.asarray(center_of(coords_of_label(labels, k), kind), dtype=np.float64)
            for k in object_labels(labels)}


def ideal_fieldstack(labels: np.ndarray, kind: CenterKind | str = CenterKind.MEDOID,
                     sigma_factor: float = 1.0) -> FieldStack:
    """Prediction maps a perfect model would emit for ``labels``.

    Object voxels point exactly at their object's center and carry seed
    phi(center) = 1; background keeps zero offset and seed 0. Sigma is
    ``sigma_factor`` everywhere.
    """
    labels = check_labels(labels)
    if sigma_factor <= 0:
        raise InvalidBandwidthError()
    d = labels.ndim
    offsets = np.zeros((d,) + labels.shape)
    seeds = np.zeros(labels.shape)
    sigma = np.full(d, float(sigma_factor))
    grid = voxel_grid(labels.shape)
    for k, c in object_centers(labels, kind).items():
        m = labels == k
        offsets[:, m] = c[:, None] - grid[:, m]
        emb = (grid[:, m] + offsets[:, m]).T
        seeds[m] = gaussian_phi(emb, c, sigma)
    return FieldStack(offsets, np.full((d,) + labels.shape, float(sigma_factor)), seeds)
