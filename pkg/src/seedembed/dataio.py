"""Tensor/TIFF persistence, object-centred crops and synthetic ground truth.

ESEG layout (all integers little-endian)::

    offset  size      field
    0       4         magic b"ESEG"
    4       1         version (1)
    5       1         dtype code (1 = uint16 labels, 2 = float32)
    6       1         ndim
    7       4*ndim    dims, uint32 each
    ...     payload   row-major values
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import tifffile
from scipy import ndimage as ndi

from .centers import CenterKind, center_of
from .errors import CropError, DegenerateDatasetError, FormatError, PackingError
from .grid import check_labels, coords_of_label, interior_mask, object_labels

ESEG_MAGIC = b"ESEG"
ESEG_VERSION = 1
DTYPE_CODES = {1: np.dtype("<u2"), 2: np.dtype("<f4")}
CODE_OF = {np.dtype("<u2"): 1, np.dtype("<f4"): 2}


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        if arr.size and (arr.min() < 0 or arr.max() > 0xFFFF):
            raise FormatError("integer tensors must fit in uint16")
        arr = arr.astype("<u2")
    elif np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype("<f4")
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = ESEG_MAGIC + struct.pack("<BBB", ESEG_VERSION, CODE_OF[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != ESEG_MAGIC:
        raise FormatError("not an ESEG file")
    if len(buf) < 7:
        raise FormatError("unexpected end of file")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != ESEG_VERSION:
        raise FormatError(f"unsupported ESEG version {version}")
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}")
    pos = 7 + 4 * ndim
    if len(buf) < pos:
        raise FormatError("unexpected end of file")
    dims = struct.unpack_from(f"<{ndim}I", buf, 7)
    dtype = DTYPE_CODES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError("unexpected end of file")
    if len(buf) > pos + nbytes:
        raise FormatError(f"trailing data: {len(buf) - pos - nbytes} bytes after payload")
    return np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(dims).copy()


def write_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    """Read an ESEG tensor: uint16 for labels, float32 for field channels."""
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


_TIFF_COMPRESSIONS = {1: None, 8: "adobe_deflate", 32946: "deflate"}


def read_tiff_labels(path) -> np.ndarray:
    """Grayscale integer TIFF (single page or Z-stack) to a label volume.

    Page k becomes Z slice k; a single page yields a 2D volume.
    """
    with tifffile.TiffFile(path) as tif:
        pages = list(tif.pages)
        if not pages:
            raise FormatError("TIFF contains no pages")
        planes = []
        for page in pages:
            photometric = int(page.photometric)
            if photometric != 1 or page.samplesperpixel != 1:
                raise FormatError(
                    f"unsupported photometric interpretation (PhotometricInterpretation={photometric}, "
                    f"SamplesPerPixel={page.samplesperpixel})")
            if int(page.compression) not in _TIFF_COMPRESSIONS:
                raise FormatError(f"unsupported compression (Compression={int(page.compression)})")
            dt = np.dtype(page.dtype)
            if dt.kind not in "ui" or dt.itemsize not in (1, 2, 4):
                raise FormatError(f"unsupported sample format (BitsPerSample={page.bitspersample}, dtype={dt})")
            planes.append(page.asarray())
    if any(p.shape != planes[0].shape for p in planes):
        raise FormatError("TIFF pages differ in size")
    if len(planes) == 1:
        return planes[0]
    return np.stack(planes)


def write_tiff_labels(path, labels, compress: bool = False) -> None:
    """Write a 2D image or a (Z, Y, X) stack as uncompressed or deflate TIFF pages."""
    labels = np.asarray(labels)
    if labels.ndim not in (2, 3):
        raise FormatError("TIFF output supports 2D images and 3D stacks only")
    if not np.issubdtype(labels.dtype, np.integer) or labels.dtype.itemsize > 4:
        raise FormatError(f"TIFF labels must be 8/16/32-bit integers, got {labels.dtype}")
    compression = "zlib" if compress else None
    with tifffile.TiffWriter(path) as tw:
        planes = labels if labels.ndim == 3 else labels[None]
        for plane in planes:
            tw.write(plane, photometric="minisblack", compression=compression, metadata=None)


def read_labels(path) -> np.ndarray:
    """Dispatch on extension: ``.tif``/``.tiff`` or ESEG."""
    ext = os.path.splitext(str(path))[1].lower()
    arr = read_tiff_labels(path) if ext in (".tif", ".tiff") else read_tensor(path)
    if not np.issubdtype(arr.dtype, np.integer):
        raise FormatError(f"{path}: label files must hold integers, got {arr.dtype}")
    return check_labels(arr)


def write_labels(path, labels) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext in (".tif", ".tiff"):
        labels = np.asarray(labels)
        write_tiff_labels(path, labels.astype(np.uint16) if labels.max(initial=0) <= 0xFFFF else labels.astype(np.uint32))
    else:
        write_tensor(path, labels)


@dataclass(frozen=True)
class CropSpec:
    crop_dims: tuple[int, ...]
    center_kind: CenterKind = CenterKind.MEDOID


class Crop(NamedTuple):
    label: int
    start: tuple[int, ...]
    stop: tuple[int, ...]
    labels: np.ndarray
    raw: np.ndarray | None

    @property
    def window(self) -> tuple[slice, ...]:
        return tuple(slice(a, b) for a, b in zip(self.start, self.stop))


def crop_window(center, crop_dims, dims) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Window of size ``crop_dims`` centred on ``center``, shifted inward to stay inside ``dims``."""
    start, stop = [], []
    for c, n, size in zip(center, dims, crop_dims):
        s = int(np.floor(c + 0.5)) - size // 2
        s = min(max(s, 0), n - size)
        start.append(s)
        stop.append(s + size)
    return tuple(start), tuple(stop)


def object_centered_crops(labels: np.ndarray, spec: CropSpec, raw: np.ndarray | None = None) -> list[Crop]:
    labels = check_labels(labels)
    dims = labels.shape
    crop_dims = tuple(int(c) for c in spec.crop_dims)
    if len(crop_dims) != labels.ndim:
        raise CropError(f"crop has {len(crop_dims)} dims, volume has {labels.ndim}")
    if any(c < 1 or c > n for c, n in zip(crop_dims, dims)):
        raise CropError(f"crop exceeds volume: crop {crop_dims} vs volume {dims}")
    if raw is not None and np.shape(raw)[:labels.ndim] != dims:
        raise CropError("raw raster does not match the label volume")
    crops = []
    for k in object_labels(labels):
        c = center_of(coords_of_label(labels, k), spec.center_kind)
        start, stop = crop_window(c, crop_dims, dims)
        win = tuple(slice(a, b) for a, b in zip(start, stop))
        crops.append(Crop(int(k), start, stop, labels[win].copy(),
                          None if raw is None else np.asarray(raw)[win].copy()))
    return crops


def min_object_size_from(label_volumes: Sequence[np.ndarray], measure: str = "interior") -> int:
    """Smallest object size over a dataset, by total or interior voxel count."""
    if measure not in ("total", "interior"):
        raise ValueError(f"unknown size measure {measure!r}")
    best = None
    for lv in label_volumes:
        lv = check_labels(lv)
        for k in object_labels(lv):
            m = lv == k
            size = int(m.sum()) if measure == "total" else int(interior_mask(m).sum())
            best = size if best is None else min(best, size)
    if best is None:
        raise DegenerateDatasetError("degenerate dataset: no objects")
    return best


def synth_blobs(shape: Sequence[int], n_objects: int, radius_range=(4.0, 8.0), min_separation: float = 0.0,
                seed: int = 0, max_attempts: int = 10_000, gap: int = 1) -> np.ndarray:
    """Axis-aligned ellipsoidal blobs at integer centres.

    Each blob draws its semi-axes from ``radius_range`` and must lie fully in
    the grid. Centres are at least ``min_separation`` apart and every blob
    keeps ``gap`` background voxels from the others, so blobs are disjoint and
    never touch. Labels are 1..n_objects in placement order.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (2, 3):
        raise ValueError("shape must be 2D or 3D")
    rng = np.random.default_rng(seed)
    labels = np.zeros(shape, dtype=np.uint16)
    if n_objects <= 0:
        return labels
    lo, hi = float(radius_range[0]), float(radius_range[1])
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    centres: list[np.ndarray] = []
    attempts = 0
    while len(centres) < n_objects:
        attempts += 1
        if attempts > max_attempts:
            raise PackingError(
                f"packing failed: placed {len(centres)} of {n_objects} blobs in {max_attempts} attempts")
        radii = rng.uniform(lo, hi, size=len(shape))
        r_int = np.floor(radii).astype(int)
        if np.any(2 * r_int + 1 > np.array(shape)):
            continue
        c = np.array([rng.integers(r, n - r) for r, n in zip(r_int, shape)])
        if any(np.linalg.norm(c - o) < min_separation for o in centres):
            continue
        blob = sum(((g - ci) / ri) ** 2 for g, ci, ri in zip(grids, c, radii)) <= 1.0
        reach = blob
        if gap > 0:
            reach = ndi.binary_dilation(blob, structure=np.ones((3,) * len(shape), bool), iterations=gap)
        if np.any(labels[reach]):
            continue
        centres.append(c)
        labels[blob] = len(centres)
    return labels
