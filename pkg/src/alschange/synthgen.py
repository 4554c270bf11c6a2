"""Parametric urban scenes and paired synthetic LiDAR clouds.

Scenes are flat ground plus flat-roofed axis-aligned buildings and
tree-canopy disks.  A scripted edit list (add / remove / raise /
lower) turns an epoch-1 scene into its epoch-2 counterpart, and the
analytic surfaces give exact ground-truth masks and change labels.
Sampling is fully determined by (scene, config, seed).

Attribute ranges (intensity per material, canopy return counts, base
colors) are invented constants chosen only for separability.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cloud_io import PointCloud
from .errors import OverlapError, PlacementFailure, UnknownTarget
from .raster import GridSpec

# material attribute ranges (16-bit scale)
INTENSITY_RANGE = {"ground": (20000, 40000), "roof": (40000, 60000),
                   "canopy": (5000, 20000)}
GROUND_RGB = (20000, 19000, 18000)
CANOPY_RGB = (8000, 30000, 10000)
ROOF_PALETTE = (
    (45000, 15000, 15000),
    (35000, 35000, 38000),
    (50000, 40000, 20000),
    (25000, 25000, 45000),
)
RGB_NOISE_SIGMA = 1500.0

MIN_BUILDING_AREA = 60.0      # m^2
MAX_BUILDING_AREA = 1700.0
BUILDING_GAP = 3.0            # m between footprints
MIN_HEIGHT, MAX_HEIGHT = 4.0, 25.0


@dataclass(frozen=True)
class BuildingSpec:
    id: int
    x0: float
    y0: float
    x1: float
    y1: float
    height: float
    roof_rgb: tuple

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x, y):
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)

    def overlaps(self, other: "BuildingSpec", gap: float = 0.0) -> bool:
        return not (self.x1 + gap <= other.x0 or other.x1 + gap <= self.x0
                    or self.y1 + gap <= other.y0 or other.y1 + gap <= self.y0)


@dataclass(frozen=True)
class Tree:
    x: float
    y: float
    radius: float
    height: float


@dataclass(frozen=True)
class SceneConfig:
    extent: tuple = (100.0, 100.0)   # meters (x, y)
    ground_z: float = 0.0
    point_density: float = 12.0      # points per m^2
    dropout_rate: float = 0.05
    z_noise_sigma: float = 0.05      # meters
    n_buildings: int = 5
    tree_count: int = 8
    seed: int = 0
    roof_hole_count: int = 2         # square holes per roof
    roof_hole_size: tuple = (0.5, 1.5)  # meters

    def __post_init__(self):
        if self.point_density <= 0:
            raise ValueError("point_density must be positive")
        if not (0 <= self.dropout_rate < 1):
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class SceneModel:
    extent: tuple
    ground_z: float
    buildings: list          # of BuildingSpec
    trees: list              # of Tree
    next_id: int = 0

    def building(self, bid: int) -> BuildingSpec:
        for b in self.buildings:
            if b.id == bid:
                return b
        raise UnknownTarget(f"no building with id {bid}")


@dataclass(frozen=True)
class Edit:
    """kind: add | remove | raise | lower."""

    kind: str
    target: int | None = None
    dz: float = 0.0
    building: BuildingSpec | None = None

    def __post_init__(self):
        if self.kind not in ("add", "remove", "raise", "lower"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.kind in ("raise", "lower") and self.dz <= 0:
            raise ValueError("dz must be positive for raise/lower")


@dataclass
class ScenePair:
    scene_t1: SceneModel
    scene_t2: SceneModel
    cloud_t1: PointCloud
    cloud_t2: PointCloud
    truth_mask_t1: np.ndarray
    truth_mask_t2: np.ndarray
    truth_change: "object"   # change.ChangeMap
    spec: GridSpec


# ---------------------------------------------------------------------------
# scene construction

def _sample_building(rng, extent, bid) -> BuildingSpec:
    ex, ey = extent
    max_area = min(MAX_BUILDING_AREA, 0.25 * ex * ey)
    area = rng.uniform(MIN_BUILDING_AREA, max(MIN_BUILDING_AREA + 1, max_area))
    aspect = rng.uniform(0.5, 2.0)
    w = min(np.sqrt(area * aspect), ex - 2 * BUILDING_GAP)
    h = min(area / w, ey - 2 * BUILDING_GAP)
    x0 = rng.uniform(BUILDING_GAP, ex - w - BUILDING_GAP)
    y0 = rng.uniform(BUILDING_GAP, ey - h - BUILDING_GAP)
    rgb = ROOF_PALETTE[int(rng.integers(len(ROOF_PALETTE)))]
    height = rng.uniform(MIN_HEIGHT, MAX_HEIGHT)
    return BuildingSpec(bid, x0, y0, x0 + w, y0 + h, height, rgb)


def build_scene(config: SceneConfig) -> SceneModel:
    """Deterministic for a given config; buildings pairwise disjoint."""
    rng = np.random.default_rng(config.seed)
    ex, ey = config.extent
    buildings = []
    attempts = 0
    max_attempts = 200 * max(1, config.n_buildings)
    while len(buildings) < config.n_buildings:
        if attempts >= max_attempts:
            raise PlacementFailure(
                f"placed {len(buildings)}/{config.n_buildings} buildings "
                f"in {attempts} attempts")
        attempts += 1
        cand = _sample_building(rng, config.extent, len(buildings))
        if cand.area < MIN_BUILDING_AREA:
            continue
        if any(cand.overlaps(b, gap=BUILDING_GAP) for b in buildings):
            continue
        buildings.append(cand)
    trees = [Tree(rng.uniform(0, ex), rng.uniform(0, ey),
                  rng.uniform(1.5, 4.0), rng.uniform(6.0, 15.0))
             for _ in range(config.tree_count)]
    return SceneModel(config.extent, config.ground_z, buildings, trees,
                      next_id=config.n_buildings)


def apply_edits(scene: SceneModel, edits) -> SceneModel:
    """Epoch-2 scene after scripted building edits."""
    buildings = list(scene.buildings)
    next_id = scene.next_id
    for e in edits:
        if e.kind == "add":
            if e.building is None:
                raise ValueError("add edit requires a BuildingSpec")
            nb = e.building
            if nb.id < 0:
                nb = replace(nb, id=next_id)
            if any(nb.overlaps(b) for b in buildings):
                raise OverlapError(f"new building {nb.id} overlaps an existing one")
            buildings.append(nb)
            next_id = max(next_id, nb.id + 1)
        else:
            idx = next((i for i, b in enumerate(buildings) if b.id == e.target), None)
            if idx is None:
                raise UnknownTarget(f"no building with id {e.target}")
            if e.kind == "remove":
                buildings.pop(idx)
            elif e.kind == "raise":
                buildings[idx] = replace(buildings[idx],
                                         height=buildings[idx].height + e.dz)
            else:  # lower
                new_h = buildings[idx].height - e.dz
                if new_h <= 0:
                    raise ValueError(f"lowering building {e.target} below ground")
                buildings[idx] = replace(buildings[idx], height=new_h)
    return SceneModel(scene.extent, scene.ground_z, buildings, list(scene.trees),
                      next_id=next_id)


# ---------------------------------------------------------------------------
# analytic surfaces and truth

def building_surface(scene: SceneModel, x, y):
    """(z of ground/buildings only, building mask) at query points."""
    z = np.full(np.shape(x), scene.ground_z, dtype=np.float64)
    mask = np.zeros(np.shape(x), dtype=bool)
    for b in scene.buildings:
        inside = b.contains(x, y)
        z[inside] = scene.ground_z + b.height
        mask |= inside
    return z, mask


def full_surface(scene: SceneModel, x, y):
    """(surface z including canopy, material code) at query points.

    Materials: 0 ground, 1 roof, 2 canopy.
    """
    z, bmask = building_surface(scene, x, y)
    material = bmask.astype(np.int8)
    for t in scene.trees:
        inside = (x - t.x) ** 2 + (y - t.y) ** 2 <= t.radius ** 2
        canopy_z = scene.ground_z + t.height
        covered = inside & (canopy_z > z)
        z[covered] = canopy_z
        material[covered] = 2
    return z, material


def rasterize_truth_mask(scene: SceneModel, spec: GridSpec) -> np.ndarray:
    """Binary building raster: cell centers inside any footprint."""
    cols = spec.origin_x + (np.arange(spec.width) + 0.5) * spec.cell_size
    rows = spec.origin_y + (np.arange(spec.height) + 0.5) * spec.cell_size
    xx, yy = np.meshgrid(cols, rows)
    _, mask = building_surface(scene, xx, yy)
    return mask


def truth_change_map(scene1: SceneModel, scene2: SceneModel, spec: GridSpec,
                     z_threshold: float = 2.5):
    """Analytic change labels from the true building surfaces (no noise,
    no morphology); the independent oracle for the detection pipeline."""
    from . import change as change_mod

    cols = spec.origin_x + (np.arange(spec.width) + 0.5) * spec.cell_size
    rows = spec.origin_y + (np.arange(spec.height) + 0.5) * spec.cell_size
    xx, yy = np.meshgrid(cols, rows)
    z1, b1 = building_surface(scene1, xx, yy)
    z2, b2 = building_surface(scene2, xx, yy)

    label = np.full(spec.shape, change_mod.LABEL_NOCHANGE, dtype=np.uint8)
    magnitude = np.zeros(spec.shape, dtype=np.float64)
    label[b2 & ~b1] = change_mod.LABEL_NEWLY_BUILT
    label[b1 & ~b2] = change_mod.LABEL_DEMOLISHED
    both = b1 & b2
    dz = z2 - z1
    taller = both & (dz > z_threshold)
    shorter = both & (dz < -z_threshold)
    label[taller] = change_mod.LABEL_TALLER
    label[shorter] = change_mod.LABEL_SHORTER
    magnitude[taller | shorter] = dz[taller | shorter]
    magnitude[b2 & ~b1] = (z2 - z1)[b2 & ~b1]
    magnitude[b1 & ~b2] = (z2 - z1)[b1 & ~b2]
    return change_mod.ChangeMap(spec, label, magnitude)


# ---------------------------------------------------------------------------
# point sampling

def sample_cloud(scene: SceneModel, config: SceneConfig, seed: int) -> PointCloud:
    """Uniform spatial sampling at the configured density with Gaussian
    z noise, dropout, roof holes, and per-material attributes."""
    rng = np.random.default_rng(seed)
    ex, ey = scene.extent
    n = int(rng.poisson(config.point_density * ex * ey))
    if n == 0:
        return PointCloud.empty()
    x = rng.uniform(0, ex, n)
    y = rng.uniform(0, ey, n)
    z, material = full_surface(scene, x, y)
    if config.z_noise_sigma > 0:
        z = z + rng.normal(0, config.z_noise_sigma, n)

    keep = np.ones(n, dtype=bool)
    if config.dropout_rate > 0:
        keep &= rng.random(n) >= config.dropout_rate
    # square data holes on roofs
    for b in scene.buildings:
        for _ in range(config.roof_hole_count):
            side = rng.uniform(*config.roof_hole_size)
            hx = rng.uniform(b.x0, max(b.x0, b.x1 - side))
            hy = rng.uniform(b.y0, max(b.y0, b.y1 - side))
            in_hole = (x >= hx) & (x < hx + side) & (y >= hy) & (y < hy + side)
            keep &= ~in_hole

    intensity = np.empty(n, dtype=np.float64)
    r = np.empty(n, dtype=np.float64)
    g = np.empty(n, dtype=np.float64)
    b_ = np.empty(n, dtype=np.float64)
    num_returns = np.ones(n, dtype=np.int64)

    for code, name in ((0, "ground"), (2, "canopy")):
        sel = material == code
        lo, hi = INTENSITY_RANGE[name]
        intensity[sel] = rng.uniform(lo, hi, int(sel.sum()))
        base = GROUND_RGB if code == 0 else CANOPY_RGB
        for arr, c in zip((r, g, b_), base):
            arr[sel] = c
    roof = material == 1
    lo, hi = INTENSITY_RANGE["roof"]
    intensity[roof] = rng.uniform(lo, hi, int(roof.sum()))
    for b in scene.buildings:
        sel = roof & b.contains(x, y)
        for arr, c in zip((r, g, b_), b.roof_rgb):
            arr[sel] = c
    canopy = material == 2
    num_returns[canopy] = rng.integers(2, 5, int(canopy.sum()))

    noise = rng.normal(0, RGB_NOISE_SIGMA, (3, n))
    r = np.clip(r + noise[0], 0, 65535)
    g = np.clip(g + noise[1], 0, 65535)
    b_ = np.clip(b_ + noise[2], 0, 65535)
    intensity = np.clip(intensity, 0, 65535)

    k = keep
    return PointCloud.from_columns(
        x[k], y[k], z[k],
        np.round(r[k]), np.round(g[k]), np.round(b_[k]),
        np.round(intensity[k]), num_returns[k])


# ---------------------------------------------------------------------------
# paired scene convenience

def grid_for_scene(scene: SceneModel, cell_size: float = 0.5) -> GridSpec:
    ex, ey = scene.extent
    return GridSpec(0.0, 0.0, cell_size,
                    int(round(ex / cell_size)), int(round(ey / cell_size)))


def random_edits(scene: SceneModel, rng, dz: float = 3.0):
    """One edit of each kind where the scene allows it."""
    edits = []
    ids = [b.id for b in scene.buildings]
    picks = list(rng.permutation(ids)) if ids else []
    if picks:
        edits.append(Edit("remove", target=int(picks.pop())))
    if picks:
        edits.append(Edit("raise", target=int(picks.pop()), dz=dz))
    if picks:
        edits.append(Edit("lower", target=int(picks.pop()), dz=dz))
    # place a new building, tolerating a few rejections; keep it clear of
    # every footprint in either epoch so the change classes stay distinct
    base = apply_edits(scene, edits)
    avoid = list(base.buildings) + list(scene.buildings)
    for _ in range(200):
        cand = _sample_building(rng, scene.extent, scene.next_id)
        if cand.area < MIN_BUILDING_AREA:
            continue
        if any(cand.overlaps(b, gap=1.0) for b in avoid):
            continue
        edits.append(Edit("add", building=cand))
        break
    return edits


def generate_scene_pair(config: SceneConfig, edits=None, cell_size: float = 0.5,
                        z_threshold: float = 2.5) -> ScenePair:
    scene1 = build_scene(config)
    rng = np.random.default_rng((config.seed, 1))
    if edits is None:
        edits = random_edits(scene1, rng, dz=3.0)
    scene2 = apply_edits(scene1, edits)
    spec = grid_for_scene(scene1, cell_size)
    cloud1 = sample_cloud(scene1, config, seed=config.seed * 2 + 1)
    cloud2 = sample_cloud(scene2, config, seed=config.seed * 2 + 2)
    return ScenePair(
        scene1, scene2, cloud1, cloud2,
        rasterize_truth_mask(scene1, spec),
        rasterize_truth_mask(scene2, spec),
        truth_change_map(scene1, scene2, spec, z_threshold),
        spec,
    )
