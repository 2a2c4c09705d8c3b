"""Labeled point-cloud ingestion and facade class mapping.

The scan format is a plain ASCII file (.lpc): sensor origins first, then
points carrying a facade class code and the index of the origin they were
measured from. Per-point origins are all the visibility analysis needs; a
full trajectory is deliberately not modeled.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, UnknownOriginIndex


class FacadeClass(enum.Enum):
    """Facade element classes recognized on point clouds and rasters."""

    GroundSurface = "groundsurface"
    RoofSurface = "roofsurface"
    Wall = "wall"
    Window = "window"
    Door = "door"
    Underpass = "underpass"
    Balcony = "balcony"
    Molding = "molding"
    Deco = "deco"
    Column = "column"
    Arch = "arch"
    Drainpipe = "drainpipe"
    Stairs = "stairs"
    Blinds = "blinds"
    Other = "other"


#: All classes in declaration order; index into this list is the channel index.
FACADE_CLASSES = tuple(FacadeClass)
CLASS_INDEX = {c: i for i, c in enumerate(FACADE_CLASSES)}

_CLASS_BY_NAME = {c.value: c for c in FacadeClass}
# Also accept the CamelCase spellings and "ground surface"-style names.
for _c in FacadeClass:
    _CLASS_BY_NAME[_c.name.lower()] = _c
_CLASS_BY_NAME["ground surface"] = FacadeClass.GroundSurface
_CLASS_BY_NAME["roof surface"] = FacadeClass.RoofSurface

#: Default label table: codes 1..14 in the order the classes are documented.
DEFAULT_LABEL_MAP = {i + 1: c for i, c in enumerate(list(FacadeClass)[:-1])}


def map_label(code: int, mapping: dict | None = None) -> FacadeClass:
    """Map a dataset label code to a facade class; unmapped codes -> Other."""
    table = DEFAULT_LABEL_MAP if mapping is None else mapping
    return table.get(int(code), FacadeClass.Other)


def class_code(c: FacadeClass, mapping: dict | None = None) -> int:
    """Inverse of map_label for writable classes (first matching code)."""
    table = DEFAULT_LABEL_MAP if mapping is None else mapping
    for code, cls in table.items():
        if cls is c:
            return code
    return 0


def parse_class_name(name: str) -> FacadeClass:
    key = name.strip().lower()
    if key not in _CLASS_BY_NAME:
        raise FormatError(f"unknown facade class name {name!r}")
    return _CLASS_BY_NAME[key]


def load_label_map(data: bytes | str) -> dict:
    """Parse a "code,class_name" CSV into a label table."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    table = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError("expected 'code,class_name'", line=lineno)
        try:
            code = int(parts[0])
        except ValueError:
            raise FormatError(f"bad label code {parts[0]!r}", line=lineno) from None
        table[code] = parse_class_name(parts[1])
    return table


@dataclass(frozen=True)
class UncertaintyParams:
    """Positioning accuracy of model surfaces and scan points (meters).

    sigma_model reflects cadastre-derived wall accuracy, sigma_point the
    scanner accuracy. Nonzero biases shift the expected distances.
    """

    sigma_model: float = 0.3
    sigma_point: float = 0.05
    mu_model: float = 0.0
    mu_point: float = 0.0

    def __post_init__(self):
        if self.sigma_model <= 0 or self.sigma_point <= 0:
            raise ValueError("sigmas must be positive")


@dataclass(frozen=True)
class LabeledPointCloud:
    """Scan points with facade classes and per-point sensor origins."""

    xyz: np.ndarray           # (N, 3) float64
    labels: np.ndarray        # (N,) object array of FacadeClass
    origin_index: np.ndarray  # (N,) int indices into origins
    origins: np.ndarray       # (M, 3) float64 sensor positions

    def __post_init__(self):
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float64)
        origins = np.ascontiguousarray(self.origins, dtype=np.float64)
        labels = np.asarray(self.labels)
        oidx = np.asarray(self.origin_index, dtype=np.int64)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "origins", origins)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "origin_index", oidx)
        if not (np.all(np.isfinite(xyz)) and np.all(np.isfinite(origins))):
            raise ValueError("non-finite coordinates")
        if len(xyz) != len(labels) or len(xyz) != len(oidx):
            raise ValueError("per-point arrays must have equal length")
        if len(oidx) and (oidx.min() < 0 or oidx.max() >= len(origins)):
            raise ValueError("origin index out of range")

    def __len__(self) -> int:
        return len(self.xyz)

    def label_indices(self) -> np.ndarray:
        """Per-point channel index into FACADE_CLASSES, as int64."""
        return np.fromiter((CLASS_INDEX[c] for c in self.labels),
                           dtype=np.int64, count=len(self.labels))


def parse_point_cloud(data: bytes | str, mapping: dict | None = None) -> LabeledPointCloud:
    """Parse an .lpc scan file.

    Layout: "ORIGINS <n>" header, n origin lines "x y z", "POINTS <m>"
    header, m point lines "x y z label_code origin_index". '#' lines and
    blank lines are ignored. Label codes map through `mapping`
    (DEFAULT_LABEL_MAP when omitted); unmapped codes become Other.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = text.splitlines()

    def content(start):
        for idx in range(start, len(lines)):
            stripped = lines[idx].strip()
            if stripped and not stripped.startswith("#"):
                yield idx, stripped

    stream = content(0)

    def next_line(what):
        try:
            return next(stream)
        except StopIteration:
            raise FormatError(f"unexpected end of file, expected {what}",
                              line=len(lines)) from None

    def count_of(parts, keyword, lineno):
        if len(parts) != 2 or parts[0] != keyword or not parts[1].isdigit():
            raise FormatError(f"expected '{keyword} <n>'", line=lineno + 1)
        return int(parts[1])

    lineno, header = next_line("ORIGINS header")
    n_origins = count_of(header.split(), "ORIGINS", lineno)

    origins = np.empty((n_origins, 3), dtype=np.float64)
    for i in range(n_origins):
        lineno, line = next_line("origin coordinates")
        parts = line.split()
        if len(parts) != 3:
            raise FormatError("origin line must be 'x y z'", line=lineno + 1)
        try:
            origins[i] = [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"bad origin coordinates {line!r}", line=lineno + 1) from None

    lineno, header = next_line("POINTS header")
    n_points = count_of(header.split(), "POINTS", lineno)

    xyz = np.empty((n_points, 3), dtype=np.float64)
    labels = np.empty(n_points, dtype=object)
    oidx = np.empty(n_points, dtype=np.int64)
    for i in range(n_points):
        lineno, line = next_line("point record")
        parts = line.split()
        if len(parts) != 5:
            raise FormatError("point line must be 'x y z label_code origin_index'",
                              line=lineno + 1)
        try:
            xyz[i] = [float(p) for p in parts[:3]]
            code = int(parts[3])
            k = int(parts[4])
        except ValueError:
            raise FormatError(f"bad point record {line!r}", line=lineno + 1) from None
        if not (0 <= k < n_origins):
            raise UnknownOriginIndex(
                f"origin index {k} out of range (have {n_origins})", line=lineno + 1)
        labels[i] = map_label(code, mapping)
        oidx[i] = k
    return LabeledPointCloud(xyz=xyz, labels=labels, origin_index=oidx, origins=origins)


def load_point_cloud(path, mapping: dict | None = None) -> LabeledPointCloud:
    """Parse a labeled point cloud from a file path."""
    with open(path, "rb") as f:
        return parse_point_cloud(f.read(), mapping)


def write_point_cloud(cloud: LabeledPointCloud, mapping: dict | None = None) -> bytes:
    """Serialize a cloud back to the .lpc layout (round-trips with parse)."""
    buf = io.StringIO()
    buf.write(f"ORIGINS {len(cloud.origins)}\n")
    for o in cloud.origins:
        buf.write(f"{o[0]:.9g} {o[1]:.9g} {o[2]:.9g}\n")
    buf.write(f"POINTS {len(cloud)}\n")
    for p, c, k in zip(cloud.xyz, cloud.labels, cloud.origin_index):
        buf.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g} {class_code(c, mapping)} {k}\n")
    return buf.getvalue().encode("utf-8")
