"""ESRI ASCII grid and world-file serialization.

Header lines: ncols, nrows, xllcorner, yllcorner, cellsize,
NODATA_value; then row-major values with the top (northernmost) row
first.  Internal arrays keep row 0 at the southern edge, so writers
and readers flip vertically.  Float values are stored with %.10g;
write(read(write(g))) is byte-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import IoError
from .raster import GridSpec, NODATA_FLOAT

NODATA_LABEL = 255


def write_ascii_grid(path, values: np.ndarray, spec: GridSpec,
                     nodata, integer: bool = False) -> None:
    h, w = values.shape
    if (h, w) != spec.shape:
        raise IoError(f"array shape {values.shape} does not match spec {spec.shape}")
    fmt = "%d" if integer else "%.10g"
    lines = [
        f"ncols {spec.width}",
        f"nrows {spec.height}",
        f"xllcorner {spec.origin_x:.10g}",
        f"yllcorner {spec.origin_y:.10g}",
        f"cellsize {spec.cell_size:.10g}",
        f"NODATA_value {fmt % nodata}",
    ]
    flipped = values[::-1]
    for row in flipped:
        lines.append(" ".join(fmt % v for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ascii_grid(path, integer: bool = False):
    """Returns (values, spec, nodata)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    header = {}
    i = 0
    while i < len(lines) and lines[i].split()[0].lower() in (
            "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"):
        k, v = lines[i].split(maxsplit=1)
        header[k.lower()] = v
        i += 1
    try:
        w = int(header["ncols"])
        h = int(header["nrows"])
        spec = GridSpec(float(header["xllcorner"]), float(header["yllcorner"]),
                        float(header["cellsize"]), w, h)
        nodata = float(header.get("nodata_value", NODATA_FLOAT))
    except KeyError as exc:
        raise IoError(f"missing ESRI grid header field {exc}") from exc
    vals = np.array([line.split() for line in lines[i:i + h]], dtype=np.float64)
    if integer:
        vals = vals.astype(np.int64)
    if vals.shape != (h, w):
        raise IoError(f"grid body is {vals.shape}, header says {(h, w)}")
    return vals[::-1].copy(), spec, (int(nodata) if integer else nodata)


def write_world_file(path, spec: GridSpec) -> None:
    """Six-line sidecar: pixel sizes and center of the upper-left cell."""
    s = spec.cell_size
    top_center_y = spec.origin_y + (spec.height - 0.5) * s
    lines = [
        f"{s:.10g}", "0", "0", f"{-s:.10g}",
        f"{spec.origin_x + 0.5 * s:.10g}",
        f"{top_center_y:.10g}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_png(path, image: np.ndarray) -> None:
    """8-bit RGB PNG, no alpha."""
    from PIL import Image

    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise IoError("expected an H x W x 3 uint8 image")
    Image.fromarray(image, mode="RGB").save(path, format="PNG")
