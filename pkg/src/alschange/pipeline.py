"""Glue between clouds, rasters, model inputs, and on-disk layouts.

A "raster dir" holds one ESRI ASCII grid per surface channel plus a
world file; a "scene dir" (from the synthetic generator) holds two
XYZ clouds, two truth masks, and a truth change grid.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import cloud_io, grids, raster as raster_mod, segnet
from .change import ChangeMap
from .errors import IoError, SpecMismatch
from .raster import GridSpec, NODATA_FLOAT, NormStats, SurfaceRaster

RASTER_FILES = {
    "z": "z.asc", "intensity": "intensity.asc", "num_returns": "returns.asc",
    "r": "r.asc", "g": "g.asc", "b": "b.asc",
}
VALID_FILE = "valid.asc"
WORLD_FILE = "world.wld"

SCENE_CLOUDS = ("cloud_t1.xyz", "cloud_t2.xyz")
SCENE_MASKS = ("mask_t1.asc", "mask_t2.asc")
SCENE_CHANGE = "change_truth.asc"


def rasterize_cloud(cloud, spec: GridSpec, fill_radius: int = 3) -> SurfaceRaster:
    surf = raster_mod.surface_extract(cloud, spec)
    if fill_radius > 0:
        surf = raster_mod.fill_holes(surf, fill_radius)
    return surf


def write_raster_dir(out_dir, surf: SurfaceRaster) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for channel, fname in RASTER_FILES.items():
        grids.write_ascii_grid(os.path.join(out_dir, fname),
                               getattr(surf, channel), surf.spec, NODATA_FLOAT)
    grids.write_ascii_grid(os.path.join(out_dir, VALID_FILE),
                           surf.valid.astype(np.int64), surf.spec, 255, integer=True)
    grids.write_world_file(os.path.join(out_dir, WORLD_FILE), surf.spec)


def read_raster_dir(path) -> SurfaceRaster:
    channels = {}
    spec = None
    for channel, fname in RASTER_FILES.items():
        full = os.path.join(path, fname)
        if not os.path.exists(full):
            raise IoError(f"missing raster channel file {full}")
        vals, s, _ = grids.read_ascii_grid(full)
        if spec is None:
            spec = s
        elif not spec.same_geometry(s):
            raise SpecMismatch(f"channel {fname} grid differs from the others")
        channels[channel] = vals
    valid, s, _ = grids.read_ascii_grid(os.path.join(path, VALID_FILE), integer=True)
    if not spec.same_geometry(s):
        raise SpecMismatch("validity grid differs from the channel grids")
    return SurfaceRaster(spec, channels["z"], channels["intensity"],
                         channels["num_returns"], channels["r"], channels["g"],
                         channels["b"], valid.astype(bool))


def model_inputs(surf: SurfaceRaster, config: segnet.ModelConfig,
                 norm_stats=None):
    """(stacked input channels, per-stream NormStats list).

    Stream 0 is ZIN; stream 1 (dual models) is RGB.
    """
    if norm_stats:
        zin, zstats = raster_mod.normalize_zin(surf, norm_stats[0])
    else:
        zin, zstats = raster_mod.normalize_zin(surf)
    stats = [zstats]
    parts = [zin]
    if config.streams == 2:
        parts.append(raster_mod.extract_rgb(surf))
        stats.append(raster_mod.RGB_STATS)
    return np.concatenate(parts, axis=0), stats


def global_zin_stats(rasters) -> NormStats:
    """Componentwise min/max union of per-raster ZIN stats."""
    per = [raster_mod.zin_stats(r) for r in rasters]
    mins = tuple(min(s.mins[i] for s in per) for i in range(3))
    maxs = tuple(max(s.maxs[i] for s in per) for i in range(3))
    return NormStats(mins, maxs)


def scene_dirs(dataset_dir):
    """Sorted scene subdirectories; a dir holding clouds itself counts
    as a single scene."""
    if os.path.exists(os.path.join(dataset_dir, SCENE_CLOUDS[0])):
        return [dataset_dir]
    subs = sorted(
        os.path.join(dataset_dir, d) for d in os.listdir(dataset_dir)
        if os.path.isdir(os.path.join(dataset_dir, d))
        and os.path.exists(os.path.join(dataset_dir, d, SCENE_CLOUDS[0])))
    if not subs:
        raise IoError(f"no scene directories under {dataset_dir}")
    return subs


@dataclass
class SceneData:
    surf: SurfaceRaster
    mask: np.ndarray      # truth building mask for the same epoch


def load_scene_epochs(scene_dir, fill_radius: int = 3):
    """Both epochs of one scene dir as (SurfaceRaster, truth mask) pairs."""
    out = []
    for cloud_name, mask_name in zip(SCENE_CLOUDS, SCENE_MASKS):
        mask, spec, _ = grids.read_ascii_grid(
            os.path.join(scene_dir, mask_name), integer=True)
        cloud = cloud_io.read_xyz_file(os.path.join(scene_dir, cloud_name))
        surf = rasterize_cloud(cloud, spec, fill_radius)
        out.append(SceneData(surf, mask.astype(bool)))
    return out


def read_change_map(path_label, path_mag=None) -> ChangeMap:
    label, spec, _ = grids.read_ascii_grid(path_label, integer=True)
    if path_mag is not None and os.path.exists(path_mag):
        mag, s, _ = grids.read_ascii_grid(path_mag)
        spec.require_same(s)
    else:
        mag = np.zeros(spec.shape)
    return ChangeMap(spec, label.astype(np.uint8), mag)
