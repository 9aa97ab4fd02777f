"""Readers and writers for the files the pipeline exchanges.

Formats: binary PPM (P6) for RGB frames, PFM for scalar maps, ASCII PLY for
point clouds, and CSV/JSON for report tables. Every writer goes through
``_atomic_write`` so a crashed run never leaves a half-written artifact.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

UNIT_TAGS = ("mm", "dimensionless-slope", "radians", "disparity-px")
INVALID_DEPTH = -1e30


class FormatError(ValueError):
    """Raised when a file does not follow the format it claims to be."""


@dataclass
class ImageRGB8:
    """8-bit RGB frame, stored as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        self.pixels = np.ascontiguousarray(px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_float(cls, rgb: np.ndarray) -> "ImageRGB8":
        """Quantize a float image in [0, 1] (values outside are clipped)."""
        q = np.clip(np.rint(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255)
        return cls(q.astype(np.uint8))

    def to_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    def __eq__(self, other):
        if not isinstance(other, ImageRGB8):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)


@dataclass
class FloatMap:
    """Scalar map with a unit tag and an optional invalid-pixel sentinel."""

    values: np.ndarray
    unit: str = "mm"
    sentinel: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D map, got shape {v.shape}")
        if self.unit not in UNIT_TAGS:
            raise ValueError(f"unknown unit tag {self.unit!r}; expected one of {UNIT_TAGS}")
        if self.sentinel is not None:
            self.sentinel = float(np.float32(self.sentinel))
        self.values = np.ascontiguousarray(v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """Boolean mask of pixels that carry a real value."""
        ok = np.isfinite(self.values)
        if self.sentinel is not None:
            ok &= self.values != np.float32(self.sentinel)
        return ok

    def masked(self) -> np.ndarray:
        """Float64 copy with invalid pixels set to NaN."""
        out = self.values.astype(np.float64)
        out[~self.valid] = np.nan
        return out

    @classmethod
    def from_masked(cls, values: np.ndarray, unit: str = "mm",
                    sentinel: float = INVALID_DEPTH) -> "FloatMap":
        """Build a map from an array that marks invalid pixels with NaN."""
        v = np.array(values, dtype=np.float32)
        bad = ~np.isfinite(v)
        if bad.any():
            v[bad] = np.float32(sentinel)
            return cls(v, unit, sentinel)
        return cls(v, unit, None)


@dataclass
class PointCloud3D:
    """Points in millimetres, optional uint8 colours and source pixel indices."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None
    pixels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(pts):
                raise ValueError("colour count does not match point count")
        if self.pixels is not None:
            self.pixels = np.asarray(self.pixels, dtype=np.int64).reshape(-1, 2)
            if len(self.pixels) != len(pts):
                raise ValueError("pixel index count does not match point count")

    def __len__(self):
        return len(self.points)

    def subset(self, keep: np.ndarray) -> "PointCloud3D":
        return PointCloud3D(
            self.points[keep],
            None if self.colors is None else self.colors[keep],
            None if self.pixels is None else self.pixels[keep],
        )


@dataclass
class Cell:
    value: float
    unit: str
    spread: Optional[float] = None


@dataclass
class ReportTable:
    """Rectangular table of united cells; ``None`` marks a gap."""

    row_labels: list
    column_labels: list
    cells: list
    title: str = ""
    row_header: str = "row"

    def __post_init__(self):
        if len(self.cells) != len(self.row_labels):
            raise ValueError("cell rows do not match row labels")
        for row in self.cells:
            if len(row) != len(self.column_labels):
                raise ValueError("table is not rectangular")
            for c in row:
                if c is not None and c.unit not in ("%", "mm", "lux"):
                    raise ValueError(f"unsupported cell unit {c.unit!r}")

    def __eq__(self, other):
        if not isinstance(other, ReportTable):
            return NotImplemented
        return (
            [str(r) for r in self.row_labels] == [str(r) for r in other.row_labels]
            and list(self.column_labels) == list(other.column_labels)
            and self.cells == other.cells
            and self.title == other.title
            and self.row_header == other.row_header
        )


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_tokens(buf: bytes, count: int):
    """Split ``count`` whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset of the single whitespace byte that
    terminates the last token.
    """
    tokens = []
    i, n = 0, len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i >= n:
            raise FormatError("malformed header: unexpected end of file")
        if buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace():
            i += 1
        tokens.append(buf[start:i])
    if i >= n:
        raise FormatError("malformed header: missing whitespace after header")
    return tokens, i


def read_image(path) -> ImageRGB8:
    """Read a binary P6 PPM with maxval 255."""
    buf = Path(path).read_bytes()
    if len(buf) < 2:
        raise FormatError("malformed header: file too short")
    if buf[:2] != b"P6":
        raise FormatError(f"unsupported magic {buf[:2]!r}")
    tokens, end = _header_tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"malformed header: non-integer field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise FormatError(f"malformed header: bad size {width}x{height}")
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    start = 2 + end + 1
    need = width * height * 3
    payload = buf[start:start + need]
    if len(payload) < need:
        raise FormatError(f"truncated payload: expected {need} bytes, got {len(payload)}")
    px = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return ImageRGB8(px.copy())


def write_image(image: ImageRGB8, path) -> None:
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    _atomic_write(path, header + image.pixels.tobytes())


_PFM_COMMENT = re.compile(r"unit=(\S+)(?:\s+sentinel=(\S+))?")


def read_floatmap(path) -> FloatMap:
    """Read a grayscale little-endian PFM written by :func:`write_floatmap`.

    The scale line carries ``# unit=<tag> [sentinel=<value>]``; files without
    the comment are read as millimetres with no sentinel.
    """
    buf = Path(path).read_bytes()
    lines = []
    pos = 0
    for _ in range(3):
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise FormatError("malformed header: expected three header lines")
        lines.append(buf[pos:nl].decode("ascii", errors="replace").strip())
        pos = nl + 1
    if lines[0] != "Pf":
        raise FormatError(f"unsupported magic {lines[0][:2]!r}")
    try:
        width, height = (int(t) for t in lines[1].split())
    except ValueError:
        raise FormatError(f"malformed header: bad size line {lines[1]!r}") from None
    scale_part, _, comment = lines[2].partition("#")
    try:
        scale = float(scale_part)
    except ValueError:
        raise FormatError(f"malformed header: bad scale line {lines[2]!r}") from None
    if scale >= 0:
        raise FormatError("unsupported byte order: only little-endian PFM is supported")
    unit, sentinel = "mm", None
    m = _PFM_COMMENT.search(comment)
    if m:
        unit = m.group(1)
        if m.group(2) is not None:
            sentinel = float(m.group(2))
    need = width * height * 4
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise FormatError(f"truncated payload: expected {need} bytes, got {len(payload)}")
    if len(buf) - pos != need:
        raise FormatError(f"size mismatch: header says {width}x{height}, "
                          f"payload has {len(buf) - pos} bytes")
    vals = np.frombuffer(payload, dtype="<f4").reshape(height, width)[::-1].astype(np.float32)
    if np.isnan(vals).any() and sentinel is None:
        raise FormatError("NaN encountered without a sentinel declaration")
    return FloatMap(vals, unit, sentinel)


def write_floatmap(fmap: FloatMap, path) -> None:
    vals = fmap.values
    if np.isnan(vals).any():
        raise FormatError("NaN encountered without a sentinel declaration; "
                          "use FloatMap.from_masked to mark invalid pixels")
    comment = f"unit={fmap.unit}"
    if fmap.sentinel is not None:
        comment += f" sentinel={fmap.sentinel!r}"
    header = f"Pf\n{fmap.width} {fmap.height}\n-1.0 # {comment}\n".encode("ascii")
    payload = np.ascontiguousarray(vals[::-1]).astype("<f4").tobytes()
    _atomic_write(path, header + payload)


def write_pointcloud(cloud: PointCloud3D, path) -> None:
    n = len(cloud)
    if n == 0:
        raise ValueError("nothing to write")
    out = io.StringIO()
    out.write("ply\nformat ascii 1.0\n")
    out.write(f"element vertex {n}\n")
    out.write("property float x\nproperty float y\nproperty float z\n")
    if cloud.colors is not None:
        out.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
    out.write("end_header\n")
    pts = cloud.points
    if cloud.colors is None:
        for x, y, z in pts:
            out.write(f"{x:.9g} {y:.9g} {z:.9g}\n")
    else:
        for (x, y, z), (r, g, b) in zip(pts, cloud.colors):
            out.write(f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}\n")
    _atomic_write(path, out.getvalue().encode("ascii"))


def read_pointcloud(path) -> PointCloud3D:
    """Read back an ASCII PLY written by :func:`write_pointcloud`."""
    text = Path(path).read_text(encoding="ascii")
    head, sep, body = text.partition("end_header\n")
    if not sep or not head.startswith("ply"):
        raise FormatError("malformed header: not an ASCII PLY")
    m = re.search(r"element vertex (\d+)", head)
    if not m:
        raise FormatError("malformed header: missing vertex element")
    n = int(m.group(1))
    rows = [ln.split() for ln in body.splitlines() if ln.strip()]
    if len(rows) < n:
        raise FormatError(f"truncated payload: expected {n} vertices, got {len(rows)}")
    arr = np.array(rows[:n], dtype=np.float64)
    colors = arr[:, 3:6].astype(np.uint8) if arr.shape[1] >= 6 else None
    return PointCloud3D(arr[:, :3], colors)


def _cell_text(c: Optional[Cell]) -> str:
    if c is None:
        return ""
    s = repr(float(c.value))
    if c.spread is not None:
        s += f" : {float(c.spread)!r}"
    return f"{s} {c.unit}"


def _parse_cell(text: str) -> Optional[Cell]:
    text = text.strip()
    if not text:
        return None
    body, _, unit = text.rpartition(" ")
    value, _, spread = body.partition(" : ")
    return Cell(float(value), unit, float(spread) if spread else None)


def write_report(table: ReportTable, path, format: str = "csv") -> None:
    """Serialize a report; cells are written as ``value [: spread] unit``."""
    if format == "csv":
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow([table.row_header, *table.column_labels])
        for label, row in zip(table.row_labels, table.cells):
            w.writerow([label, *(_cell_text(c) for c in row)])
        data = out.getvalue()
    elif format == "json":
        doc = {
            "title": table.title,
            "row_header": table.row_header,
            "columns": list(table.column_labels),
            "rows": [
                {
                    "label": label,
                    "cells": [
                        None if c is None else
                        {"value": float(c.value), "spread": c.spread, "unit": c.unit}
                        for c in row
                    ],
                }
                for label, row in zip(table.row_labels, table.cells)
            ],
        }
        data = json.dumps(doc, indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    _atomic_write(path, data.encode("utf-8"))


def read_report(path, format: Optional[str] = None) -> ReportTable:
    path = Path(path)
    format = format or path.suffix.lstrip(".")
    text = path.read_text(encoding="utf-8")
    if format == "json":
        doc = json.loads(text)
        cells = [
            [None if c is None else Cell(c["value"], c["unit"], c["spread"]) for c in r["cells"]]
            for r in doc["rows"]
        ]
        return ReportTable([r["label"] for r in doc["rows"]], doc["columns"], cells,
                           doc.get("title", ""), doc.get("row_header", "row"))
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    return ReportTable([r[0] for r in body], header[1:],
                       [[_parse_cell(t) for t in r[1:]] for r in body],
                       row_header=header[0])


def format_mean_std(mean: float, std: float, digits: int = 2) -> str:
    """Render a ``[mu : sigma]`` pair the way the depth tables print them."""
    if not (math.isfinite(mean) and math.isfinite(std)):
        return ""
    return f"{mean:.{digits}f} : {std:.{digits}f}"


def write_json(doc, path) -> None:
    """Deterministic JSON (sorted keys) written atomically."""
    _atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))

