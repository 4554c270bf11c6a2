"""Two-epoch change classification with morphological refinement.

From each epoch we take the binary building map and the raw surface
elevation masked to predicted buildings.  Differencing yields a
footprint change (-1/0/+1) and an elevation change (meters, where both
epochs agree on building).  Per-class candidate masks are cleaned by
closing then opening with a 3x3 square structuring element, small
blobs are dropped, and the result is merged into a five-value label
grid plus a signed magnitude grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import SpecMismatch
from .raster import GridSpec, SurfaceRaster

LABEL_NOCHANGE = 0
LABEL_NEWLY_BUILT = 1
LABEL_DEMOLISHED = 2
LABEL_TALLER = 3
LABEL_SHORTER = 4
LABEL_NODATA = 255

LABEL_NAMES = {
    LABEL_NOCHANGE: "nochange",
    LABEL_NEWLY_BUILT: "newly_built",
    LABEL_DEMOLISHED: "demolished",
    LABEL_TALLER: "taller",
    LABEL_SHORTER: "shorter",
    LABEL_NODATA: "nodata",
}

CHANGE_LABELS = (LABEL_NEWLY_BUILT, LABEL_DEMOLISHED, LABEL_TALLER, LABEL_SHORTER)

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ChangeParams:
    kernel: int = 3              # structuring element width (square)
    z_threshold: float = 2.5     # meters; about one storey
    min_blob_area: float = 20.0  # m^2
    connectivity: int = 8

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be odd and >= 1")
        if self.z_threshold <= 0:
            raise ValueError("z_threshold must be positive")
        if self.min_blob_area < 0:
            raise ValueError("min_blob_area must be >= 0")


@dataclass
class ChangeInput:
    """Per-epoch 2-channel stack: building mask + masked elevation."""

    building: np.ndarray   # H x W bool
    z_masked: np.ndarray   # H x W float, 0 where building is 0
    spec: GridSpec
    valid: np.ndarray = None  # H x W bool; None means all valid

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.building.shape, dtype=bool)


@dataclass
class ChangeMap:
    spec: GridSpec
    label: np.ndarray      # H x W uint8
    magnitude: np.ndarray  # H x W float, signed delta-z in meters


@dataclass
class ChangeBlob:
    label: int
    cell_count: int
    area_m2: float
    mean_dz: float
    bbox: tuple            # (row_min, col_min, row_max, col_max), inclusive
    centroid_xy: tuple     # world coordinates (meters)


# ---------------------------------------------------------------------------
# morphology (binary, 3x3 square by default, outside treated as 0)

def _structure(kernel: int) -> np.ndarray:
    return np.ones((kernel, kernel), dtype=bool)


def erode(mask: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Cell stays 1 iff every cell under the structuring element is 1."""
    return ndimage.binary_erosion(mask.astype(bool), structure=_structure(kernel),
                                  border_value=0)


def dilate(mask: np.ndarray, kernel: int = 3) -> np.ndarray:
    """Cell becomes 1 iff any cell under the structuring element is 1."""
    return ndimage.binary_dilation(mask.astype(bool), structure=_structure(kernel),
                                   border_value=0)


def opening(mask: np.ndarray, kernel: int = 3) -> np.ndarray:
    return dilate(erode(mask, kernel), kernel)


def closing(mask: np.ndarray, kernel: int = 3) -> np.ndarray:
    return erode(dilate(mask, kernel), kernel)


def remove_small_blobs(mask: np.ndarray, min_cells: int) -> np.ndarray:
    """Drop 8-connected components with fewer than min_cells cells."""
    if min_cells <= 1 or not mask.any():
        return mask.astype(bool)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    counts = np.bincount(labels.ravel())
    keep = counts >= min_cells
    keep[0] = False
    return keep[labels]


# ---------------------------------------------------------------------------
# pipeline steps

def build_change_input(building: np.ndarray, surface: SurfaceRaster) -> ChangeInput:
    """Mask the raw elevation channel (meters) to predicted buildings."""
    if building.shape != surface.spec.shape:
        raise SpecMismatch("segmentation map does not match the surface raster grid")
    b = building.astype(bool)
    z = np.where(b & surface.valid, surface.z, 0.0)
    return ChangeInput(b, z, surface.spec, surface.valid.copy())


def diff_channels(t1: ChangeInput, t2: ChangeInput):
    """(footprint_diff in {-1,0,+1}, z_diff meters, nodata mask).

    z_diff is nonzero only where both epochs are building; cells
    invalid in either epoch are flagged nodata.
    """
    t1.spec.require_same(t2.spec)
    footprint = t2.building.astype(np.int8) - t1.building.astype(np.int8)
    both = t1.building & t2.building
    z_diff = np.where(both, t2.z_masked - t1.z_masked, 0.0)
    nodata = ~(t1.valid & t2.valid)
    footprint[nodata] = 0
    z_diff[nodata] = 0.0
    return footprint, z_diff, nodata


def _refine(mask: np.ndarray, params: ChangeParams, cell_size: float) -> np.ndarray:
    # paper's listed order: closing first, then opening
    m = closing(mask, params.kernel)
    m = opening(m, params.kernel)
    min_cells = int(np.ceil(params.min_blob_area / (cell_size * cell_size)))
    return remove_small_blobs(m, min_cells)


def classify_changes(footprint_diff, z_diff, spec: GridSpec,
                     params: ChangeParams = ChangeParams(),
                     nodata=None, raw_dz=None) -> ChangeMap:
    """Refined five-class change map.

    Candidates: newly built where footprint_diff=+1, demolished where
    -1, taller/shorter where footprint is stable and |z_diff| exceeds
    the threshold.  Each candidate mask is refined independently;
    footprint classes take precedence over elevation classes on any
    residual overlap.  ``raw_dz`` (z2_masked - z1_masked) supplies the
    magnitude on footprint-change cells when given.
    """
    if footprint_diff.shape != spec.shape:
        raise SpecMismatch("footprint_diff does not match the grid spec")
    if z_diff.shape != footprint_diff.shape:
        raise SpecMismatch("z_diff shape differs from footprint_diff")
    nodata = np.zeros(spec.shape, dtype=bool) if nodata is None else nodata.astype(bool)

    candidates = {
        LABEL_NEWLY_BUILT: footprint_diff == 1,
        LABEL_DEMOLISHED: footprint_diff == -1,
        LABEL_TALLER: (footprint_diff == 0) & (z_diff > params.z_threshold),
        LABEL_SHORTER: (footprint_diff == 0) & (z_diff < -params.z_threshold),
    }
    refined = {}
    for lab, mask in candidates.items():
        refined[lab] = _refine(mask & ~nodata, params, spec.cell_size)

    label = np.full(spec.shape, LABEL_NOCHANGE, dtype=np.uint8)
    # elevation classes first so footprint classes overwrite any overlap
    for lab in (LABEL_TALLER, LABEL_SHORTER, LABEL_NEWLY_BUILT, LABEL_DEMOLISHED):
        label[refined[lab]] = lab
    label[nodata] = LABEL_NODATA

    magnitude = np.zeros(spec.shape, dtype=np.float64)
    elev = (label == LABEL_TALLER) | (label == LABEL_SHORTER)
    magnitude[elev] = z_diff[elev]
    if raw_dz is not None:
        foot = (label == LABEL_NEWLY_BUILT) | (label == LABEL_DEMOLISHED)
        magnitude[foot] = raw_dz[foot]
    return ChangeMap(spec, label, magnitude)


def detect_changes(t1: ChangeInput, t2: ChangeInput,
                   params: ChangeParams = ChangeParams()) -> ChangeMap:
    """diff_channels + classify_changes in one call."""
    footprint, z_diff, nodata = diff_channels(t1, t2)
    raw_dz = t2.z_masked - t1.z_masked
    return classify_changes(footprint, z_diff, t1.spec, params,
                            nodata=nodata, raw_dz=raw_dz)


def blob_stats(cmap: ChangeMap) -> list:
    """8-connected components per label, in row-major discovery order."""
    out = []
    spec = cmap.spec
    found = []
    for lab in CHANGE_LABELS:
        mask = cmap.label == lab
        if not mask.any():
            continue
        labels, n = ndimage.label(mask, structure=_EIGHT)
        for comp in range(1, n + 1):
            rows, cols = np.nonzero(labels == comp)
            count = rows.size
            cy = spec.origin_y + (rows.mean() + 0.5) * spec.cell_size
            cx = spec.origin_x + (cols.mean() + 0.5) * spec.cell_size
            blob = ChangeBlob(
                label=lab,
                cell_count=int(count),
                area_m2=float(count) * spec.cell_size ** 2,
                mean_dz=float(cmap.magnitude[rows, cols].mean()),
                bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
                centroid_xy=(float(cx), float(cy)),
            )
            # row-major discovery: first cell in row-major order
            first = int(rows[0]) * spec.width + int(cols[0])
            found.append((first, blob))
    found.sort(key=lambda t: t[0])
    return [b for _, b in found]


def blob_table(blobs) -> str:
    """CSV: label, area_m2, mean_dz_m, centroid_x, centroid_y."""
    lines = ["label,area_m2,mean_dz_m,centroid_x,centroid_y"]
    for b in blobs:
        lines.append(f"{LABEL_NAMES[b.label]},{b.area_m2:.4f},{b.mean_dz:.4f},"
                     f"{b.centroid_xy[0]:.4f},{b.centroid_xy[1]:.4f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# rendering

COLOR_BACKGROUND = (0, 0, 0)
COLOR_BUILDING = (0, 0, 255)
COLOR_FOOTPRINT_CHANGE = (255, 0, 0)
COLOR_ELEVATION_CHANGE = (240, 240, 230)


def overlay_render(cmap: ChangeMap, footprint2019: np.ndarray) -> np.ndarray:
    """H x W x 3 uint8 image; row 0 is the northernmost grid row."""
    if footprint2019.shape != cmap.spec.shape:
        raise SpecMismatch("footprint mask does not match the change map grid")
    img = np.zeros(cmap.spec.shape + (3,), dtype=np.uint8)
    img[footprint2019.astype(bool)] = COLOR_BUILDING
    foot = (cmap.label == LABEL_NEWLY_BUILT) | (cmap.label == LABEL_DEMOLISHED)
    elev = (cmap.label == LABEL_TALLER) | (cmap.label == LABEL_SHORTER)
    img[elev] = COLOR_ELEVATION_CHANGE
    img[foot] = COLOR_FOOTPRINT_CHANGE
    # grid row 0 is the southern edge; images put north on top
    return img[::-1].copy()
