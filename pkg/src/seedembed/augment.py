"""Test-time augmentation over axis-aligned rotations and flips.

A group element acts on voxel coordinates as ``y[d] = x[perm[d]]`` followed by
``y[d] -> n[d] - 1 - y[d]`` on flipped axes, i.e. as a signed permutation
matrix plus a shift. Offsets are vectors, so they pick up the same signed
permutation; sigmas are per-axis magnitudes and are only permuted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeMismatchError, ShapeNotInvariantError
from .grid import FieldStack


@dataclass(frozen=True)
class GroupElement:
    id: int
    permutation: tuple[int, ...]
    flips: tuple[bool, ...]
    name: str = ""

    @property
    def ndim(self) -> int:
        return len(self.permutation)

    def matrix(self) -> np.ndarray:
        d = self.ndim
        m = np.zeros((d, d), dtype=int)
        for row, (src, flip) in enumerate(zip(self.permutation, self.flips)):
            m[row, src] = -1 if flip else 1
        return m

    @classmethod
    def from_matrix(cls, m, id: int = -1, name: str = "") -> "GroupElement":
        m = np.asarray(m)
        perm = tuple(int(np.flatnonzero(row)[0]) for row in m)
        flips = tuple(bool(m[r, c] < 0) for r, c in enumerate(perm))
        return cls(id, perm, flips, name)

    def key(self) -> tuple:
        return self.permutation, self.flips

    def apply_to_coords(self, coords, shape) -> np.ndarray:
        """Map real coordinates (..., D) of a grid with ``shape`` into the transformed grid."""
        coords = np.asarray(coords, dtype=np.float64)
        out = coords[..., list(self.permutation)]
        new_shape = [shape[p] for p in self.permutation]
        for d, flip in enumerate(self.flips):
            if flip:
                out[..., d] = (new_shape[d] - 1) - out[..., d]
        return out


def compose(g: GroupElement, h: GroupElement) -> GroupElement:
    """The element acting as ``g`` after ``h``."""
    return GroupElement.from_matrix(g.matrix() @ h.matrix())


def inverse(g: GroupElement) -> GroupElement:
    return GroupElement.from_matrix(g.matrix().T)


def _lookup(group: Sequence[GroupElement], g: GroupElement) -> GroupElement:
    for e in group:
        if e.key() == g.key():
            return e
    raise KeyError("element not in group")


def _dihedral_matrices() -> list[tuple[str, np.ndarray]]:
    # rot: y0 = n-1-x1, y1 = x0 (same as np.rot90); mirror: x-flip
    rot = np.array([[0, -1], [1, 0]])
    mirror = np.array([[1, 0], [0, -1]])
    out = []
    r = np.eye(2, dtype=int)
    for k in range(4):
        out.append((f"rot{90 * k}", r.copy()))
        r = rot @ r
    r = np.eye(2, dtype=int)
    for k in range(4):
        out.append((f"rot{90 * k}_flipx", r @ mirror))
        r = rot @ r
    return out


def group_2d() -> list[GroupElement]:
    """The 8 symmetries of the square acting on (y, x); element 0 is the identity."""
    return [GroupElement.from_matrix(m, i, name) for i, (name, m) in enumerate(_dihedral_matrices())]


def group_3d() -> list[GroupElement]:
    """In-plane (y, x) square symmetries times an optional z flip: 16 elements, z stays z."""
    out = []
    for zflip in (False, True):
        for name, m2 in _dihedral_matrices():
            m = np.zeros((3, 3), dtype=int)
            m[0, 0] = -1 if zflip else 1
            m[1:, 1:] = m2
            out.append(GroupElement.from_matrix(m, len(out), name + ("_flipz" if zflip else "")))
    return out


def group_for(ndim: int) -> list[GroupElement]:
    if ndim == 2:
        return group_2d()
    if ndim == 3:
        return group_3d()
    raise ValueError(f"no augmentation group for {ndim}D")


def _check_invariant(shape, g: GroupElement):
    if len(shape) != g.ndim:
        raise ShapeMismatchError(f"{g.ndim}D group element applied to {len(shape)}D field")
    if tuple(shape[p] for p in g.permutation) != tuple(shape):
        raise ShapeNotInvariantError(
            f"shape not invariant: {tuple(shape)} under axis permutation {g.permutation}")


def transform_scalar(field: np.ndarray, g: GroupElement) -> np.ndarray:
    field = np.asarray(field)
    _check_invariant(field.shape, g)
    out = np.transpose(field, g.permutation)
    flip_axes = tuple(d for d, f in enumerate(g.flips) if f)
    if flip_axes:
        out = np.flip(out, axis=flip_axes)
    return np.ascontiguousarray(out)


def transform_fieldstack(fs: FieldStack, g: GroupElement) -> FieldStack:
    _check_invariant(fs.shape, g)
    offsets = np.stack([
        (-1.0 if flip else 1.0) * transform_scalar(fs.offsets[src], g)
        for src, flip in zip(g.permutation, g.flips)
    ])
    sigmas = np.stack([transform_scalar(fs.sigmas[src], g) for src in g.permutation])
    return FieldStack(offsets, sigmas, transform_scalar(fs.seeds, g))


def tta_average(stacks: Sequence[FieldStack]) -> FieldStack:
    stacks = list(stacks)
    if not stacks:
        raise ValueError("nothing to average")
    shape = stacks[0].shape
    if any(s.shape != shape for s in stacks):
        raise ShapeMismatchError("field stacks differ in shape")
    n = len(stacks)
    off = np.zeros_like(stacks[0].offsets)
    sig = np.zeros_like(stacks[0].sigmas)
    seeds = np.zeros_like(stacks[0].seeds)
    for s in stacks:
        off += s.offsets
        sig += s.sigmas
        seeds += s.seeds
    return FieldStack(off / n, sig / n, seeds / n)


def back_transform_and_average(stacks: Sequence[FieldStack], group: Sequence[GroupElement]) -> FieldStack:
    """Average predictions made on ``g(image)`` for each ``g`` after mapping them back."""
    stacks = list(stacks)
    group = list(group)
    if len(stacks) != len(group):
        raise ShapeMismatchError(f"expected {len(group)} field stacks, got {len(stacks)}")
    return tta_average([transform_fieldstack(s, inverse(g)) for s, g in zip(stacks, group)])


def tta_predict(predict: Callable[[np.ndarray], FieldStack], image: np.ndarray,
                group: Sequence[GroupElement] | None = None) -> FieldStack:
    """Run ``predict`` on every transformed copy of ``image`` and average in the reference frame."""
    image = np.asarray(image)
    group = group_for(image.ndim) if group is None else list(group)
    preds = [predict(transform_scalar(image, g)) for g in group]
    return back_transform_and_average(preds, group)
