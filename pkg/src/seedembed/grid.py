"""Grid containers and voxel-set utilities.

Coordinates are ordered (y, x) in 2D and (z, y, x) in 3D, all arrays are
row-major, and distances are isotropic voxel units. A label volume is a plain
integer ``ndarray`` (0 = background); :class:`FieldStack` bundles the per-voxel
prediction maps.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage as ndi

from .errors import LabelAbsentError, ShapeMismatchError


@dataclass(frozen=True)
class GridShape:
    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"only 2D and 3D grids are supported, got {len(dims)}D")
        if any(d < 1 for d in dims):
            raise ValueError(f"grid extents must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def linear_index(self, coords) -> np.ndarray:
        """Row-major linear index of integer coordinates with shape (n, D)."""
        coords = np.asarray(coords, dtype=np.intp).reshape(-1, self.ndim)
        return np.ravel_multi_index(tuple(coords.T), self.dims)

    def coords(self, index) -> np.ndarray:
        index = np.asarray(index, dtype=np.intp).ravel()
        return np.stack(np.unravel_index(index, self.dims), axis=-1)


def check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim not in (2, 3):
        raise ValueError(f"label volume must be 2D or 3D, got {labels.ndim}D")
    if not np.issubdtype(labels.dtype, np.integer):
        raise TypeError(f"label volume must be integer typed, got {labels.dtype}")
    if labels.size and labels.min() < 0:
        raise ValueError("labels must be non-negative")
    return labels


def object_labels(labels: np.ndarray) -> np.ndarray:
    """Sorted positive labels present in ``labels``."""
    u = np.unique(labels)
    return u[u > 0]


def coords_of_label(labels: np.ndarray, k: int) -> np.ndarray:
    """Integer coordinates (n, D) of voxels with label ``k`` in ascending linear-index order."""
    labels = check_labels(labels)
    idx = np.flatnonzero(labels.ravel() == k)
    if k <= 0 or idx.size == 0:
        raise LabelAbsentError(k)
    return np.stack(np.unravel_index(idx, labels.shape), axis=-1)


def face_structure(ndim: int) -> np.ndarray:
    return ndi.generate_binary_structure(ndim, 1)


def interior_mask(mask: np.ndarray) -> np.ndarray:
    """Voxels of a boolean mask whose face-adjacent neighbours are all in the mask.

    Voxels on the grid border are never interior.
    """
    mask = np.asarray(mask, dtype=bool)
    return ndi.binary_erosion(mask, structure=face_structure(mask.ndim), border_value=0)


def interior_voxel_count(labels: np.ndarray, k: int) -> int:
    labels = check_labels(labels)
    mask = labels == k
    if k <= 0 or not mask.any():
        raise LabelAbsentError(k)
    return int(interior_mask(mask).sum())


def voxel_count(labels: np.ndarray, k: int) -> int:
    labels = check_labels(labels)
    n = int(np.count_nonzero(labels == k))
    if k <= 0 or n == 0:
        raise LabelAbsentError(k)
    return n


def object_size(mask: np.ndarray, measure: str = "total") -> int:
    if measure == "total":
        return int(np.count_nonzero(mask))
    if measure == "interior":
        return int(interior_mask(mask).sum())
    raise ValueError(f"unknown size measure {measure!r} (expected 'total' or 'interior')")


def voxel_grid(shape: Sequence[int]) -> np.ndarray:
    """Coordinate channels (D, *shape) as float64; channel d holds the d-th index."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in shape], indexing="ij"))


@dataclass(frozen=True, eq=False)
class FieldStack:
    """Per-voxel prediction maps.

    Attributes
    ----------
    offsets : ndarray, shape (D, *shape)
        Offset vectors in voxel units; the embedding of voxel x is x + offset.
    sigmas : ndarray, shape (D, *shape)
        Strictly positive bandwidths in voxel units.
    seeds : ndarray, shape (*shape)
        Seediness in [0, 1]; values outside are clamped on construction.
    """

    offsets: np.ndarray
    sigmas: np.ndarray
    seeds: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        sigmas = np.asarray(self.sigmas, dtype=np.float64)
        seeds = np.clip(np.asarray(self.seeds, dtype=np.float64), 0.0, 1.0)
        ndim = seeds.ndim
        if ndim not in (2, 3):
            raise ValueError(f"fields must be 2D or 3D, got {ndim}D")
        expected = (ndim,) + seeds.shape
        if offsets.shape != expected or sigmas.shape != expected:
            raise ShapeMismatchError(
                f"offset/sigma channels must have shape {expected}, "
                f"got {offsets.shape} and {sigmas.shape}"
            )
        if not np.all(sigmas > 0):
            raise ValueError("sigmas must be strictly positive at every voxel")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "seeds", seeds)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.seeds.shape

    @property
    def ndim(self) -> int:
        return self.seeds.ndim

    def to_array(self) -> np.ndarray:
        """Channels-first stack (2D+1, *shape): offsets, sigmas, seeds."""
        return np.concatenate([self.offsets, self.sigmas, self.seeds[None]], axis=0)

    @classmethod
    def from_array(cls, arr) -> "FieldStack":
        arr = np.asarray(arr, dtype=np.float64)
        d = arr.ndim - 1
        if d not in (2, 3) or arr.shape[0] != 2 * d + 1:
            raise ShapeMismatchError(
                f"a {d}D field stack needs {2 * d + 1} leading channels, got shape {arr.shape}"
            )
        return cls(arr[:d], arr[d:2 * d], arr[2 * d])

    @classmethod
    def constant(cls, shape, offset=0.0, sigma=2.0, seed=0.01) -> "FieldStack":
        shape = tuple(shape)
        d = len(shape)
        return cls(
            np.full((d,) + shape, offset, dtype=np.float64),
            np.full((d,) + shape, sigma, dtype=np.float64),
            np.full(shape, seed, dtype=np.float64),
        )
