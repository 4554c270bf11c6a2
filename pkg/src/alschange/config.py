"""Pipeline configuration: INI-style key=value file with sections,
all defaults resolvable from an empty file, flags override file values.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .change import ChangeParams
from .errors import ConfigError
from .segnet import ModelConfig
from .synthgen import SceneConfig
from .tensor_nn import Hyperparams

DEFAULTS = {
    "grid": {"cell_size": "0.5", "fill_radius": "3"},
    "model": {"streams": "1", "in_channels": "3", "encoder_widths": "16,32,64",
              "bottleneck_width": "128", "patch_size": "128", "seed": "0"},
    "training": {"lr": "0.001", "batch_size": "4", "epochs": "150",
                 "plateau_patience": "20", "lr_decay": "0.1",
                 "precision": "f32", "augment": "true", "stop_iou": "",
                 "stride": "128", "val_fraction": "0.2"},
    "change": {"kernel": "3", "z_threshold": "2.5", "min_blob_area": "20"},
    "synth": {"extent": "100,100", "ground_z": "0", "point_density": "12",
              "dropout_rate": "0.05", "z_noise_sigma": "0.05",
              "n_buildings": "5", "tree_count": "8", "seed": "0",
              "scenes": "1", "edit_dz": "3.0"},
}


@dataclass
class PipelineConfig:
    cell_size: float = 0.5
    fill_radius: int = 3
    model: ModelConfig = field(default_factory=ModelConfig)
    training: Hyperparams = field(default_factory=Hyperparams)
    change: ChangeParams = field(default_factory=ChangeParams)
    synth: SceneConfig = field(default_factory=SceneConfig)
    precision: str = "f32"
    augment: bool = True
    stop_iou: float | None = None
    stride: int = 128
    val_fraction: float = 0.2
    scenes: int = 1
    edit_dz: float = 3.0

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


def _get(cp, section, key, cast):
    raw = cp.get(section, key, fallback=DEFAULTS[section][key])
    try:
        return cast(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def _int_tuple(raw):
    return tuple(int(v) for v in raw.split(","))


def _float_pair(raw):
    parts = [float(v) for v in raw.split(",")]
    if len(parts) != 2:
        raise ValueError("expected two comma-separated numbers")
    return tuple(parts)


def _bool(raw):
    return str(raw).strip().lower() in ("1", "true", "yes", "on")


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Parse a config file (optional) and apply CLI overrides.

    overrides: flat dict like {"grid.cell_size": 0.25}; None values
    are ignored.
    """
    cp = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
    for section, key, value in (
            (k.split(".", 1)[0], k.split(".", 1)[1], v)
            for k, v in (overrides or {}).items() if v is not None):
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))

    cell_size = _get(cp, "grid", "cell_size", float)
    if cell_size <= 0:
        raise ConfigError("[grid] cell_size must be positive")
    extent = _get(cp, "synth", "extent", _float_pair)
    if extent[0] <= 0 or extent[1] <= 0:
        raise ConfigError("[synth] extent must be positive in both axes")

    stop_raw = cp.get("training", "stop_iou", fallback="").strip()

    try:
        model = ModelConfig(
            streams=_get(cp, "model", "streams", int),
            in_channels=_get(cp, "model", "in_channels", int),
            encoder_widths=_get(cp, "model", "encoder_widths", _int_tuple),
            bottleneck_width=_get(cp, "model", "bottleneck_width", int),
            patch_size=_get(cp, "model", "patch_size", int),
            seed=_get(cp, "model", "seed", int),
        )
        change = ChangeParams(
            kernel=_get(cp, "change", "kernel", int),
            z_threshold=_get(cp, "change", "z_threshold", float),
            min_blob_area=_get(cp, "change", "min_blob_area", float),
        )
        synth = SceneConfig(
            extent=extent,
            ground_z=_get(cp, "synth", "ground_z", float),
            point_density=_get(cp, "synth", "point_density", float),
            dropout_rate=_get(cp, "synth", "dropout_rate", float),
            z_noise_sigma=_get(cp, "synth", "z_noise_sigma", float),
            n_buildings=_get(cp, "synth", "n_buildings", int),
            tree_count=_get(cp, "synth", "tree_count", int),
            seed=_get(cp, "synth", "seed", int),
        )
    except (ValueError, ConfigError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc

    return PipelineConfig(
        cell_size=cell_size,
        fill_radius=_get(cp, "grid", "fill_radius", int),
        model=model,
        training=Hyperparams(
            lr=_get(cp, "training", "lr", float),
            batch_size=_get(cp, "training", "batch_size", int),
            epochs=_get(cp, "training", "epochs", int),
            plateau_patience=_get(cp, "training", "plateau_patience", int),
            lr_decay=_get(cp, "training", "lr_decay", float),
        ),
        change=change,
        synth=synth,
        precision=cp.get("training", "precision", fallback="f32"),
        augment=_get(cp, "training", "augment", _bool),
        stop_iou=float(stop_raw) if stop_raw else None,
        stride=_get(cp, "training", "stride", int),
        val_fraction=_get(cp, "training", "val_fraction", float),
        scenes=_get(cp, "synth", "scenes", int),
        edit_dz=_get(cp, "synth", "edit_dz", float),
    )
