"""Tiling of channel stacks into fixed-size patches, stitching back,
and label-preserving geometric augmentation.

Tensors are C x H x W; masks are H x W.  Edge patches are zero-padded
to full size and remember their valid sub-extent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import BadStride, CoverageGap

DEFAULT_PATCH_SIZE = 128


@dataclass
class Patch:
    data: np.ndarray                 # C x size x size
    mask: Optional[np.ndarray]       # size x size or None
    row0: int
    col0: int
    valid_rows: int                  # rows of real data before zero padding
    valid_cols: int

    @property
    def size(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True)
class AugmentOp:
    """One geometric transform; kinds: hflip, vflip, rot90, rot180,
    rot270, translate (dx, dy in cells), croppad (crop size)."""

    kind: str
    dx: int = 0
    dy: int = 0
    crop: int = 0

    KINDS = ("hflip", "vflip", "rot90", "rot180", "rot270", "translate", "croppad")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown augment kind {self.kind!r}")


def tile_origins(extent: int, size: int, stride: int):
    """Patch origins along one axis: multiples of stride, last clipped
    so the final patch abuts the border."""
    if extent <= size:
        return [0]
    origins = list(range(0, extent - size + 1, stride))
    if origins[-1] != extent - size:
        origins.append(extent - size)
    return origins


def tile(tensor: np.ndarray, mask: Optional[np.ndarray], size: int, stride: int):
    """Row-major list of patches covering every cell of the input."""
    if size < 1:
        raise BadStride(f"size {size} must be >= 1")
    if not (1 <= stride <= size):
        raise BadStride(f"stride {stride} outside [1, {size}]")
    h, w = tensor.shape[-2:]
    out = []
    for r0 in tile_origins(h, size, stride):
        for c0 in tile_origins(w, size, stride):
            vr = min(size, h - r0)
            vc = min(size, w - c0)
            data = np.zeros(tensor.shape[:-2] + (size, size), dtype=tensor.dtype)
            data[..., :vr, :vc] = tensor[..., r0:r0 + vr, c0:c0 + vc]
            m = None
            if mask is not None:
                m = np.zeros((size, size), dtype=mask.dtype)
                m[:vr, :vc] = mask[r0:r0 + vr, c0:c0 + vc]
            out.append(Patch(data, m, r0, c0, vr, vc))
    return out


def stitch(patches, shape, channels: Optional[int] = None) -> np.ndarray:
    """Reassemble patch data into a (C x) H x W tensor.

    Overlapping cells take the arithmetic mean of contributing patches
    (valid extents only).  stitch(tile(x, stride=size)) == x exactly.
    """
    h, w = shape
    if channels is None:
        channels = patches[0].data.shape[0] if patches[0].data.ndim == 3 else 0
    full_shape = (channels, h, w) if channels else (h, w)
    acc = np.zeros(full_shape, dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.int64)
    for p in patches:
        vr, vc = p.valid_rows, p.valid_cols
        sl = (..., slice(p.row0, p.row0 + vr), slice(p.col0, p.col0 + vc))
        acc[sl] += p.data[..., :vr, :vc]
        cnt[p.row0:p.row0 + vr, p.col0:p.col0 + vc] += 1
    if (cnt == 0).any():
        raise CoverageGap("patches do not cover the grid")
    return acc / cnt


def _transform(arr: np.ndarray, op: AugmentOp) -> np.ndarray:
    """Apply op to the trailing two axes."""
    if op.kind == "hflip":
        return arr[..., :, ::-1].copy()
    if op.kind == "vflip":
        return arr[..., ::-1, :].copy()
    if op.kind == "rot90":
        return np.rot90(arr, 1, axes=(-2, -1)).copy()
    if op.kind == "rot180":
        return np.rot90(arr, 2, axes=(-2, -1)).copy()
    if op.kind == "rot270":
        return np.rot90(arr, 3, axes=(-2, -1)).copy()
    if op.kind == "translate":
        # content at (r, c) moves to (r - dy, c + dx); zeros flow in
        out = np.zeros_like(arr)
        size_r, size_c = arr.shape[-2:]
        dr, dc = -op.dy, op.dx
        src_r = slice(max(0, -dr), min(size_r, size_r - dr))
        src_c = slice(max(0, -dc), min(size_c, size_c - dc))
        dst_r = slice(max(0, dr), min(size_r, size_r + dr))
        dst_c = slice(max(0, dc), min(size_c, size_c + dc))
        out[..., dst_r, dst_c] = arr[..., src_r, src_c]
        return out
    if op.kind == "croppad":
        # central crop to op.crop, zero-padded back at the top-left
        size = arr.shape[-1]
        k = op.crop
        off = (size - k) // 2
        out = np.zeros_like(arr)
        out[..., :k, :k] = arr[..., off:off + k, off:off + k]
        return out
    raise ValueError(op.kind)


def augment(patch: Patch, op: AugmentOp) -> Patch:
    """Apply the identical geometric transform to data and mask."""
    data = _transform(patch.data, op)
    mask = None if patch.mask is None else _transform(patch.mask, op)
    return replace(patch, data=data, mask=mask)


def sample_augments(rng: np.random.Generator, max_shift: int = 8,
                    crop_range=(96, 128)):
    """Draw this patch's augmentation list: each kind applied with p=0.5."""
    ops = []
    for kind in AugmentOp.KINDS:
        if rng.random() >= 0.5:
            continue
        if kind == "translate":
            ops.append(AugmentOp(kind, dx=int(rng.integers(-max_shift, max_shift + 1)),
                                 dy=int(rng.integers(-max_shift, max_shift + 1))))
        elif kind == "croppad":
            ops.append(AugmentOp(kind, crop=int(rng.integers(crop_range[0], crop_range[1] + 1))))
        else:
            ops.append(AugmentOp(kind))
    return ops
