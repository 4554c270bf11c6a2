"""Building change detection from multi-temporal airborne LiDAR.

Pipeline: point clouds -> max-elevation surface rasters -> U-Net
building segmentation -> two-epoch differencing -> morphologically
refined four-class change maps (newly built, demolished, taller,
shorter).
"""

from .cloud_io import PointCloud, PointRecord, parse_las, parse_xyz_text, write_xyz_text
from .raster import (GridSpec, NormStats, SurfaceRaster, extract_rgb, fill_holes,
                     normalize_zin, surface_extract)
from .patches import AugmentOp, Patch, augment, stitch, tile
from .segnet import Model, ModelConfig, build_model, forward, load_weights, save_weights, train
from .tensor_nn import AdamState, Hyperparams, adam_step, bce_loss, grad_check
from .change import (ChangeInput, ChangeMap, ChangeParams, blob_stats, classify_changes,
                     closing, detect_changes, diff_channels, dilate, erode, opening,
                     overlay_render)
from .metrics import ConfusionCounts, blob_pr, confusion, iou
from .synthgen import BuildingSpec, Edit, SceneConfig, ScenePair, apply_edits, build_scene, sample_cloud

__version__ = "0.1.0"
