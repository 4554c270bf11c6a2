"""Point cloud parsing and serialization.

Two formats are supported: a minimal LAS 1.2 subset (point formats 0-3,
uncompressed, little-endian) and a plain-text XYZ exchange format with
8 whitespace-separated columns:

    x y z r g b intensity num_returns

Lines starting with '#' are comments.  The text format is the canonical
fixture format; write_xyz_text/parse_xyz_text round-trip exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, MalformedLine, RangeError, TruncatedStream, UnsupportedFormat

LAS_SIGNATURE = b"LASF"
LAS_HEADER_SIZE = 227

# point record length per LAS 1.2 point data format
_RECORD_LEN = {0: 20, 1: 28, 2: 26, 3: 34}
_HAS_RGB = {0: False, 1: False, 2: True, 3: True}
# byte offset of the u16 r,g,b triple within a record, per format
_RGB_OFFSET = {2: 20, 3: 28}


@dataclass(frozen=True)
class PointRecord:
    """One LiDAR return: coordinates plus the six attributes the pipeline uses."""

    x: float
    y: float
    z: float
    r: int = 0
    g: int = 0
    b: int = 0
    intensity: int = 0
    num_returns: int = 1


@dataclass
class PointCloud:
    """Column-oriented point cloud.

    Arrays share one length; ``has_rgb=False`` implies the color columns
    are all zero.  ``bounds`` is derived and undefined for empty clouds.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray
    intensity: np.ndarray
    num_returns: np.ndarray
    has_rgb: bool = True
    crs_tag: str = ""

    def __len__(self) -> int:
        return len(self.x)

    @property
    def is_empty(self) -> bool:
        return len(self.x) == 0

    @property
    def bounds(self):
        """((min_x, min_y, min_z), (max_x, max_y, max_z)); None if empty."""
        if self.is_empty:
            return None
        lo = (float(self.x.min()), float(self.y.min()), float(self.z.min()))
        hi = (float(self.x.max()), float(self.y.max()), float(self.z.max()))
        return lo, hi

    def point(self, i: int) -> PointRecord:
        return PointRecord(
            float(self.x[i]), float(self.y[i]), float(self.z[i]),
            int(self.r[i]), int(self.g[i]), int(self.b[i]),
            int(self.intensity[i]), int(self.num_returns[i]),
        )

    @classmethod
    def empty(cls, has_rgb: bool = True, crs_tag: str = "") -> "PointCloud":
        f = np.empty(0, dtype=np.float64)
        u = np.empty(0, dtype=np.uint16)
        return cls(f, f.copy(), f.copy(), u, u.copy(), u.copy(), u.copy(),
                   np.empty(0, dtype=np.uint8), has_rgb=has_rgb, crs_tag=crs_tag)

    @classmethod
    def from_columns(cls, x, y, z, r=None, g=None, b=None, intensity=None,
                     num_returns=None, has_rgb=True, crs_tag=""):
        x = np.asarray(x, dtype=np.float64)
        n = len(x)

        def u16(a):
            return np.zeros(n, np.uint16) if a is None else np.asarray(a, np.uint16)

        nr = np.ones(n, np.uint8) if num_returns is None else np.asarray(num_returns, np.uint8)
        return cls(x, np.asarray(y, np.float64), np.asarray(z, np.float64),
                   u16(r), u16(g), u16(b), u16(intensity), nr,
                   has_rgb=has_rgb, crs_tag=crs_tag)

    def equals(self, other: "PointCloud") -> bool:
        if len(self) != len(other) or self.has_rgb != other.has_rgb:
            return False
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("x", "y", "z", "r", "g", "b", "intensity", "num_returns")
        )


def parse_las(stream) -> PointCloud:
    """Parse an uncompressed LAS 1.2 file (point formats 0-3).

    Accepts bytes or a binary file-like object.  Formats 0/1 parse with
    ``has_rgb=False``; formats above 3 raise UnsupportedFormat.
    """
    if isinstance(stream, (bytes, bytearray)):
        data = bytes(stream)
    else:
        data = stream.read()

    if data[:4] != LAS_SIGNATURE:
        raise BadMagic(f"expected 'LASF', got {data[:4]!r}")
    if len(data) < LAS_HEADER_SIZE:
        raise TruncatedStream("header shorter than 227 bytes")

    point_format = data[104]
    if point_format > 3:
        raise UnsupportedFormat(f"point data format {point_format} not supported")
    record_len = struct.unpack_from("<H", data, 105)[0]
    count = struct.unpack_from("<I", data, 107)[0]
    offset = struct.unpack_from("<I", data, 96)[0]
    sx, sy, sz, ox, oy, oz = struct.unpack_from("<6d", data, 131)

    expected_len = _RECORD_LEN[point_format]
    if record_len < expected_len:
        raise UnsupportedFormat(
            f"record length {record_len} too short for format {point_format}")

    if len(data) < offset + count * record_len:
        raise TruncatedStream(
            f"need {count} records of {record_len} bytes, stream too short")

    body = np.frombuffer(data, dtype=np.uint8,
                         count=count * record_len, offset=offset)
    body = body.reshape(count, record_len)

    def col(dtype, at):
        raw = np.ascontiguousarray(body[:, at:at + np.dtype(dtype).itemsize])
        return raw.view(dtype).ravel()

    xi = col(np.int32, 0).astype(np.float64)
    yi = col(np.int32, 4).astype(np.float64)
    zi = col(np.int32, 8).astype(np.float64)
    intensity = col(np.uint16, 12).copy()
    return_byte = body[:, 14]
    num_returns = ((return_byte >> 3) & 0x07).astype(np.uint8)
    # a zero bit field would violate the >=1 invariant; clamp up
    np.maximum(num_returns, 1, out=num_returns)

    has_rgb = _HAS_RGB[point_format]
    if has_rgb:
        at = _RGB_OFFSET[point_format]
        r = col(np.uint16, at).copy()
        g = col(np.uint16, at + 2).copy()
        b = col(np.uint16, at + 4).copy()
    else:
        r = g = b = np.zeros(count, np.uint16)

    return PointCloud(
        x=xi * sx + ox, y=yi * sy + oy, z=zi * sz + oz,
        r=r, g=g.copy(), b=b.copy(), intensity=intensity,
        num_returns=num_returns, has_rgb=has_rgb,
    )


def parse_xyz_text(text) -> PointCloud:
    """Parse the 8-column XYZ text format. Accepts a string or text stream."""
    if hasattr(text, "read"):
        text = text.read()

    xs, ys, zs, rs, gs, bs, iis, nrs = [], [], [], [], [], [], [], []
    for line_no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.split()
        if len(fields) != 8:
            raise MalformedLine(line_no, f"expected 8 fields, got {len(fields)}")
        try:
            x, y, z = float(fields[0]), float(fields[1]), float(fields[2])
            r, g, b = int(fields[3]), int(fields[4]), int(fields[5])
            inten = int(fields[6])
            nr = int(fields[7])
        except ValueError as exc:
            raise MalformedLine(line_no, str(exc)) from exc
        if not (1 <= nr <= 15):
            raise RangeError(f"line {line_no}: num_returns {nr} outside [1, 15]")
        xs.append(x); ys.append(y); zs.append(z)
        rs.append(r); gs.append(g); bs.append(b)
        iis.append(inten); nrs.append(nr)

    if not xs:
        return PointCloud.empty()
    return PointCloud.from_columns(xs, ys, zs, rs, gs, bs, iis, nrs)


def write_xyz_text(cloud: PointCloud) -> str:
    """Serialize a cloud; parse_xyz_text(write_xyz_text(c)) == c exactly."""
    lines = ["# x y z r g b intensity num_returns"]
    # %.17g round-trips any float64 exactly
    fmt = "%.17g %.17g %.17g %d %d %d %d %d"
    lines.extend(
        fmt % t for t in zip(cloud.x, cloud.y, cloud.z, cloud.r, cloud.g,
                             cloud.b, cloud.intensity, cloud.num_returns)
    )
    return "\n".join(lines) + "\n"


def read_xyz_file(path) -> PointCloud:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_xyz_text(fh)


def write_xyz_file(cloud: PointCloud, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(write_xyz_text(cloud))


def read_cloud(path) -> PointCloud:
    """Dispatch on extension: .las binary, anything else XYZ text."""
    path = str(path)
    if path.lower().endswith(".las"):
        with open(path, "rb") as fh:
            return parse_las(fh)
    return read_xyz_file(path)
