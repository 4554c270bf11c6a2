"""2D surface rasters from 3D point clouds.

A point cloud is projected onto a regular grid; each cell keeps the
attributes of its highest point (ties broken by lowest point index).
Small holes in the nodata mask can be filled from the nearest valid
cell, and channel stacks are extracted for the segmentation networks.

Grid convention: cell (col c, row r) covers
[origin_x + c*s, origin_x + (c+1)*s) x [origin_y + r*s, origin_y + (r+1)*s),
arrays are indexed [row, col] with row 0 at the southern edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud_io import PointCloud
from .errors import NoValidData, SpecMismatch

NODATA_FLOAT = -9999.0


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    width: int
    height: int
    crs_tag: str = ""

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")

    @property
    def shape(self):
        return (self.height, self.width)

    def same_geometry(self, other: "GridSpec") -> bool:
        return (self.origin_x == other.origin_x and self.origin_y == other.origin_y
                and self.cell_size == other.cell_size
                and self.width == other.width and self.height == other.height)

    def require_same(self, other: "GridSpec") -> None:
        if not self.same_geometry(other):
            raise SpecMismatch(f"grid specs differ: {self} vs {other}")


@dataclass
class SurfaceRaster:
    """Per-cell surface attributes; invalid cells carry sentinel values."""

    spec: GridSpec
    z: np.ndarray            # float64, meters; NODATA_FLOAT where invalid
    intensity: np.ndarray    # float64 in [0, 65535]; NODATA_FLOAT where invalid
    num_returns: np.ndarray  # float64 count; NODATA_FLOAT where invalid
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    valid: np.ndarray        # bool

    CHANNELS = ("z", "intensity", "num_returns", "r", "g", "b")

    def copy(self) -> "SurfaceRaster":
        return SurfaceRaster(self.spec, *(getattr(self, c).copy() for c in self.CHANNELS),
                             self.valid.copy())


@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max used for (v - min) / (max - min) scaling."""

    mins: tuple
    maxs: tuple

    def __post_init__(self):
        if len(self.mins) != len(self.maxs):
            raise ValueError("mins/maxs length mismatch")
        if any(hi < lo for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError("max < min in NormStats")

    def apply(self, channels, valid) -> np.ndarray:
        """Stack channels into C x H x W and scale each to unit range.

        Constant channels (max == min) and invalid cells map to 0.
        """
        out = np.zeros((len(channels),) + channels[0].shape, dtype=np.float64)
        for i, (ch, lo, hi) in enumerate(zip(channels, self.mins, self.maxs)):
            if hi > lo:
                out[i] = np.where(valid, (ch - lo) / (hi - lo), 0.0)
        return out


def grid_for_cloud(cloud: PointCloud, cell_size: float, crs_tag: str = "") -> GridSpec:
    """Smallest grid covering all points, with the origin snapped down to
    the cell-size lattice so clouds over the same area share a grid."""
    (x0, y0, _), (x1, y1, _) = cloud.bounds
    ox = np.floor(x0 / cell_size) * cell_size
    oy = np.floor(y0 / cell_size) * cell_size
    width = max(1, int(np.floor((x1 - ox) / cell_size)) + 1)
    height = max(1, int(np.floor((y1 - oy) / cell_size)) + 1)
    return GridSpec(ox, oy, cell_size, width, height, crs_tag)


def _empty_raster(spec: GridSpec) -> SurfaceRaster:
    full = np.full(spec.shape, NODATA_FLOAT, dtype=np.float64)
    return SurfaceRaster(spec, full.copy(), full.copy(), full.copy(),
                         full.copy(), full.copy(), full.copy(),
                         np.zeros(spec.shape, dtype=bool))


def surface_extract(cloud: PointCloud, spec: GridSpec, workers: int = 1) -> SurfaceRaster:
    """Keep, per cell, the attributes of the max-z point (tie: lowest index).

    Points outside the grid are ignored.  ``workers`` > 1 partitions the
    points and merges per-chunk winners; the result is identical to the
    sequential outcome by construction of the (z, -index) reduction.
    """
    out = _empty_raster(spec)
    if cloud.is_empty:
        return out

    s = spec.cell_size
    col = np.floor((cloud.x - spec.origin_x) / s).astype(np.int64)
    row = np.floor((cloud.y - spec.origin_y) / s).astype(np.int64)
    inside = (col >= 0) & (col < spec.width) & (row >= 0) & (row < spec.height)
    idx = np.nonzero(inside)[0]
    if idx.size == 0:
        return out
    cell = row[idx] * spec.width + col[idx]

    if workers > 1:
        winners = []
        for chunk in np.array_split(np.arange(idx.size), workers):
            if chunk.size:
                winners.append(_reduce_max(cell[chunk], cloud.z[idx[chunk]], idx[chunk]))
        cells = np.concatenate([w[0] for w in winners])
        zs = np.concatenate([w[1] for w in winners])
        pts = np.concatenate([w[2] for w in winners])
        cells, zs, pts = _reduce_max(cells, zs, pts)
    else:
        cells, zs, pts = _reduce_max(cell, cloud.z[idx], idx)

    rows, cols = np.divmod(cells, spec.width)
    out.valid[rows, cols] = True
    out.z[rows, cols] = cloud.z[pts]
    out.intensity[rows, cols] = cloud.intensity[pts]
    out.num_returns[rows, cols] = cloud.num_returns[pts]
    out.r[rows, cols] = cloud.r[pts]
    out.g[rows, cols] = cloud.g[pts]
    out.b[rows, cols] = cloud.b[pts]
    return out


def _reduce_max(cell, z, point_idx):
    """Per-cell argmax over (z, -point_idx) lexicographic order."""
    # sort by cell, then z ascending, then index descending; the last
    # entry of each cell run is the winner under the tie rule
    order = np.lexsort((-point_idx, z, cell))
    cell = cell[order]
    last = np.nonzero(np.diff(cell) != 0)[0]
    ends = np.concatenate([last, [cell.size - 1]])
    return cell[ends], z[order][ends], point_idx[order][ends]


def fill_holes(raster: SurfaceRaster, max_radius: int) -> SurfaceRaster:
    """Fill invalid cells from the nearest valid cell within max_radius.

    Distance is Euclidean in cell units; ties resolve to the smallest
    row-major index.  Single pass: fills never cascade.
    """
    if max_radius < 0:
        raise ValueError("max_radius must be >= 0")
    out = raster.copy()
    if max_radius == 0 or raster.valid.all() or not raster.valid.any():
        return out

    # candidate offsets sorted by (distance, row-major index offset order)
    r = int(np.ceil(max_radius))
    offs = []
    for dr in range(-r, r + 1):
        for dc in range(-r, r + 1):
            if dr == 0 and dc == 0:
                continue
            d2 = dr * dr + dc * dc
            if d2 <= max_radius * max_radius:
                offs.append((d2, dr, dc))
    offs.sort(key=lambda t: (t[0], t[1], t[2]))

    h, w = raster.spec.shape
    src_valid = raster.valid
    invalid_rows, invalid_cols = np.nonzero(~src_valid)
    unfilled = np.ones(invalid_rows.size, dtype=bool)
    src_row = np.zeros(invalid_rows.size, dtype=np.int64)
    src_col = np.zeros(invalid_cols.size, dtype=np.int64)

    for _, dr, dc in offs:
        if not unfilled.any():
            break
        rr = invalid_rows + dr
        cc = invalid_cols + dc
        ok = unfilled & (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        if not ok.any():
            continue
        hit = np.zeros_like(ok)
        hit[ok] = src_valid[rr[ok], cc[ok]]
        src_row[hit] = rr[hit]
        src_col[hit] = cc[hit]
        unfilled &= ~hit

    filled = ~unfilled
    dst = (invalid_rows[filled], invalid_cols[filled])
    src = (src_row[filled], src_col[filled])
    for name in SurfaceRaster.CHANNELS:
        getattr(out, name)[dst] = getattr(raster, name)[src]
    out.valid[dst] = True
    return out


def zin_stats(raster: SurfaceRaster) -> NormStats:
    """Min/max of the (Z, I, N) channels over valid cells."""
    if not raster.valid.any():
        raise NoValidData("raster has no valid cells")
    mins, maxs = [], []
    for name in ("z", "intensity", "num_returns"):
        vals = getattr(raster, name)[raster.valid]
        mins.append(float(vals.min()))
        maxs.append(float(vals.max()))
    return NormStats(tuple(mins), tuple(maxs))


def normalize_zin(raster: SurfaceRaster, stats: NormStats | None = None):
    """3 x H x W unit-range (Z, I, N) stack plus the stats used.

    With ``stats`` given (inference), the stored ranges are reused.
    """
    if stats is None:
        stats = zin_stats(raster)
    channels = (raster.z, raster.intensity, raster.num_returns)
    return stats.apply(channels, raster.valid), stats


RGB_STATS = NormStats((0.0, 0.0, 0.0), (65535.0, 65535.0, 65535.0))


def extract_rgb(raster: SurfaceRaster) -> np.ndarray:
    """3 x H x W unit-range (R, G, B) stack; invalid cells map to 0."""
    return RGB_STATS.apply((raster.r, raster.g, raster.b), raster.valid)
