"""Command-line front door: synth, rasterize, train, segment, detect,
evaluate.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 data or
shape error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import change as change_mod
from . import cloud_io, grids, metrics, patches, pipeline, segnet, synthgen
from .config import load_config
from .errors import ConfigError, DataError, IoError
from .grids import NODATA_LABEL
from .raster import NODATA_FLOAT


def _common_overrides(args):
    ov = {}
    if getattr(args, "seed", None) is not None:
        ov["synth.seed"] = args.seed
        ov["model.seed"] = args.seed
    if getattr(args, "cell_size", None) is not None:
        ov["grid.cell_size"] = args.cell_size
    if getattr(args, "stride", None) is not None:
        ov["training.stride"] = args.stride
    if getattr(args, "z_threshold", None) is not None:
        ov["change.z_threshold"] = args.z_threshold
    if getattr(args, "min_blob_area", None) is not None:
        ov["change.min_blob_area"] = args.min_blob_area
    return ov


def _load(args):
    return load_config(getattr(args, "config", None), _common_overrides(args))


# ---------------------------------------------------------------------------
# commands

def _write_scene(out_dir, pair: synthgen.ScenePair):
    os.makedirs(out_dir, exist_ok=True)
    cloud_io.write_xyz_file(pair.cloud_t1, os.path.join(out_dir, "cloud_t1.xyz"))
    cloud_io.write_xyz_file(pair.cloud_t2, os.path.join(out_dir, "cloud_t2.xyz"))
    grids.write_ascii_grid(os.path.join(out_dir, "mask_t1.asc"),
                           pair.truth_mask_t1.astype(np.int64), pair.spec,
                           NODATA_LABEL, integer=True)
    grids.write_ascii_grid(os.path.join(out_dir, "mask_t2.asc"),
                           pair.truth_mask_t2.astype(np.int64), pair.spec,
                           NODATA_LABEL, integer=True)
    grids.write_ascii_grid(os.path.join(out_dir, "change_truth.asc"),
                           pair.truth_change.label.astype(np.int64), pair.spec,
                           NODATA_LABEL, integer=True)


def cmd_synth(args) -> int:
    cfg = _load(args)
    if cfg.synth.extent[0] <= 0 or cfg.synth.extent[1] <= 0:
        raise ConfigError("[synth] extent must be positive")
    n = cfg.scenes
    for i in range(n):
        scene_cfg = synthgen.SceneConfig(
            extent=cfg.synth.extent, ground_z=cfg.synth.ground_z,
            point_density=cfg.synth.point_density,
            dropout_rate=cfg.synth.dropout_rate,
            z_noise_sigma=cfg.synth.z_noise_sigma,
            n_buildings=cfg.synth.n_buildings, tree_count=cfg.synth.tree_count,
            seed=cfg.synth.seed + i)
        pair = synthgen.generate_scene_pair(
            scene_cfg, cell_size=cfg.cell_size,
            z_threshold=cfg.change.z_threshold)
        out = args.out if n == 1 else os.path.join(args.out, f"scene_{i:03d}")
        _write_scene(out, pair)
        print(f"wrote scene {out}: {len(pair.cloud_t1)} + {len(pair.cloud_t2)} points")
    return 0


def cmd_rasterize(args) -> int:
    cfg = _load(args)
    if not os.path.exists(args.cloud):
        raise IoError(f"input cloud not found: {args.cloud}")
    cloud = cloud_io.read_cloud(args.cloud)
    if cloud.is_empty:
        raise DataError("cannot rasterize an empty cloud")
    from .raster import grid_for_cloud
    spec = grid_for_cloud(cloud, cfg.cell_size)
    surf = pipeline.rasterize_cloud(cloud, spec, cfg.fill_radius)
    pipeline.write_raster_dir(args.out, surf)
    print(f"wrote {len(pipeline.RASTER_FILES) + 1} grids to {args.out} "
          f"({spec.width}x{spec.height} cells)")
    return 0


def _build_patch_sets(cfg, dataset_dir):
    """(train list, val list, norm stats) of (data, mask) patch pairs."""
    dirs = pipeline.scene_dirs(dataset_dir)
    n_val = max(1, int(round(len(dirs) * cfg.val_fraction))) if len(dirs) > 1 else 0
    val_dirs = set(dirs[len(dirs) - n_val:])

    scenes = {d: pipeline.load_scene_epochs(d, cfg.fill_radius) for d in dirs}
    stats = pipeline.global_zin_stats(
        [sd.surf for d in dirs for sd in scenes[d] if d not in val_dirs]
        or [sd.surf for d in dirs for sd in scenes[d]])

    def tile_scene(sd):
        inputs, _ = pipeline.model_inputs(sd.surf, cfg.model, [stats])
        size = cfg.model.patch_size
        tiles = patches.tile(inputs, sd.mask.astype(np.float64), size, cfg.stride)
        return [(p.data, p.mask) for p in tiles]

    train_set, val_set = [], []
    for d in dirs:
        for sd in scenes[d]:
            (val_set if d in val_dirs else train_set).extend(tile_scene(sd))
    return train_set, val_set, stats


def cmd_train(args) -> int:
    cfg = _load(args)
    train_set, val_set, stats = _build_patch_sets(cfg, args.dataset)
    model = segnet.build_model(cfg.model, dtype=cfg.dtype)
    model.norm_stats = [stats] + ([] if cfg.model.streams == 1 else [None])
    if cfg.model.streams == 2:
        from .raster import RGB_STATS
        model.norm_stats[1] = RGB_STATS

    def log(st):
        print(f"epoch {st.epoch}, train_loss {st.train_loss:.6f}, "
              f"val_loss {st.val_loss:.6f}, val_iou {st.val_iou:.4f}, lr {st.lr:g}")

    trained, history = segnet.train(
        model, train_set, val_set or train_set, cfg.training,
        seed=cfg.model.seed, stop_iou=cfg.stop_iou, augment=cfg.augment, log=log)
    segnet.save_weights(trained, args.out)
    with open(args.out + ".history.txt", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,val_iou,lr\n")
        for st in history:
            fh.write(f"{st.epoch},{st.train_loss:.6f},{st.val_loss:.6f},"
                     f"{st.val_iou:.6f},{st.lr:g}\n")
    best = max((st.val_iou for st in history), default=float("nan"))
    print(f"saved weights to {args.out} (best val IOU {best:.4f})")
    return 0


def _segment_dir(model, raster_dir, stride):
    surf = pipeline.read_raster_dir(raster_dir)
    inputs, _ = pipeline.model_inputs(surf, model.config, model.norm_stats)
    seg = segnet.segment_raster(model, inputs, valid=surf.valid, stride=stride)
    return surf, seg


def cmd_segment(args) -> int:
    cfg = _load(args)
    if not os.path.exists(args.weights):
        raise IoError(f"weights file not found: {args.weights}")
    model = segnet.load_weights(args.weights, dtype=cfg.dtype)
    surf, seg = _segment_dir(model, args.rasters, cfg.stride)
    os.makedirs(args.out, exist_ok=True)
    grids.write_ascii_grid(os.path.join(args.out, "prob.asc"),
                           seg.prob, surf.spec, NODATA_FLOAT)
    grids.write_ascii_grid(os.path.join(args.out, "binary.asc"),
                           seg.binary.astype(np.int64), surf.spec,
                           NODATA_LABEL, integer=True)
    grids.write_world_file(os.path.join(args.out, "world.wld"), surf.spec)
    if args.truth:
        truth, tspec, _ = grids.read_ascii_grid(args.truth, integer=True)
        surf.spec.require_same(tspec)
        score = metrics.mask_iou(seg.binary, truth.astype(bool))
        print(f"iou={score:.6f}")
    print(f"wrote segmentation grids to {args.out}")
    return 0


def cmd_detect(args) -> int:
    cfg = _load(args)
    surf1 = pipeline.read_raster_dir(args.epoch1)
    surf2 = pipeline.read_raster_dir(args.epoch2)
    surf1.spec.require_same(surf2.spec)

    if args.mask1 and args.mask2:
        m1, s1, _ = grids.read_ascii_grid(args.mask1, integer=True)
        m2, s2, _ = grids.read_ascii_grid(args.mask2, integer=True)
        surf1.spec.require_same(s1)
        surf1.spec.require_same(s2)
        b1, b2 = m1.astype(bool), m2.astype(bool)
    else:
        if not args.weights:
            raise ConfigError("either --weights or both --mask1/--mask2 are required")
        model = segnet.load_weights(args.weights, dtype=cfg.dtype)
        _, seg1 = _segment_dir(model, args.epoch1, cfg.stride)
        _, seg2 = _segment_dir(model, args.epoch2, cfg.stride)
        b1, b2 = seg1.binary, seg2.binary

    t1 = change_mod.build_change_input(b1, surf1)
    t2 = change_mod.build_change_input(b2, surf2)
    cmap = change_mod.detect_changes(t1, t2, cfg.change)
    blobs = change_mod.blob_stats(cmap)

    os.makedirs(args.out, exist_ok=True)
    grids.write_ascii_grid(os.path.join(args.out, "change_label.asc"),
                           cmap.label.astype(np.int64), cmap.spec,
                           NODATA_LABEL, integer=True)
    grids.write_ascii_grid(os.path.join(args.out, "change_mag.asc"),
                           cmap.magnitude, cmap.spec, NODATA_FLOAT)
    grids.write_world_file(os.path.join(args.out, "world.wld"), cmap.spec)
    grids.write_png(os.path.join(args.out, "overlay.png"),
                    change_mod.overlay_render(cmap, b2))
    with open(os.path.join(args.out, "blobs.csv"), "w", encoding="utf-8") as fh:
        fh.write(change_mod.blob_table(blobs))
    print(f"wrote change maps with {len(blobs)} blobs to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    if args.weights:
        # three-way style comparison: score each weights file on a dataset
        if not args.dataset:
            raise ConfigError("--weights evaluation requires --dataset")
        print("weights,iou")
        for wpath in args.weights:
            model = segnet.load_weights(wpath, dtype=cfg.dtype)
            tp = fp = fn = 0
            for d in pipeline.scene_dirs(args.dataset):
                for sd in pipeline.load_scene_epochs(d, cfg.fill_radius):
                    inputs, _ = pipeline.model_inputs(sd.surf, model.config,
                                                      model.norm_stats)
                    seg = segnet.segment_raster(model, inputs, valid=sd.surf.valid,
                                                stride=cfg.stride)
                    c = metrics.confusion(seg.binary, sd.mask)
                    tp += c.tp; fp += c.fp; fn += c.fn
            score = 1.0 if tp + fp + fn == 0 else tp / (tp + fp + fn)
            print(f"{wpath},{score:.6f}")
        return 0

    pred_label = os.path.join(args.pred, "change_label.asc")
    truth_label = os.path.join(args.truth_dir, "change_truth.asc")
    if not os.path.exists(truth_label):
        truth_label = os.path.join(args.truth_dir, "change_label.asc")
    pred = pipeline.read_change_map(pred_label, os.path.join(args.pred, "change_mag.asc"))
    truth = pipeline.read_change_map(truth_label,
                                     os.path.join(args.truth_dir, "change_mag.asc"))
    report = metrics.evaluation_report(pred, truth)
    print(report, end="")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="alschange",
        description="Building change detection from multi-temporal airborne "
                    "LiDAR point clouds")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--cell-size", dest="cell_size", type=float, default=None)
        p.add_argument("--stride", type=int, default=None)
        p.add_argument("--z-threshold", dest="z_threshold", type=float, default=None)
        p.add_argument("--min-blob-area", dest="min_blob_area", type=float, default=None)

    p = sub.add_parser("synth", help="generate a synthetic scene pair benchmark")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rasterize", help="project a point cloud onto surface grids")
    common(p)
    p.add_argument("cloud")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("train", help="train a segmentation model")
    common(p)
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="weights file path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment a rasterized scene")
    common(p)
    p.add_argument("rasters")
    p.add_argument("--weights", required=True)
    p.add_argument("--truth", default=None, help="truth mask grid for IOU report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("detect", help="two-epoch change detection")
    common(p)
    p.add_argument("epoch1")
    p.add_argument("epoch2")
    p.add_argument("--weights", default=None)
    p.add_argument("--mask1", default=None, help="use this building mask for epoch 1")
    p.add_argument("--mask2", default=None, help="use this building mask for epoch 2")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score predictions against truth")
    common(p)
    p.add_argument("pred", nargs="?", default=None)
    p.add_argument("truth_dir", nargs="?", default=None)
    p.add_argument("--weights", nargs="*", default=None,
                   help="weight files to compare on --dataset")
    p.add_argument("--dataset", default=None)
    p.set_defaults(func=cmd_evaluate)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (IoError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
