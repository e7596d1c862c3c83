"""Core 3D grid types, disk I/O, coordinate transforms, and interpolation.

Conventions used everywhere in this package:

* Grids are axis-aligned.  Voxel index ``(i, j, k)`` has its center at
  ``origin_mm + (i, j, k) * spacing_mm`` in physical space.
* In memory, intensity data is float32 with shape ``(nx, ny, nz)``.
* On disk a grid is a two-file pair: a UTF-8 text header (``key = value``
  lines) plus a raw little-endian binary with the FIRST index fastest
  (Fortran order).  Probability grids append the class axis as the slowest
  index.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from mpseg.errors import DataError

DISK_DTYPES = {"u8": np.uint8, "i16": np.int16, "f32": np.float32}


@dataclass(frozen=True)
class VolumeGeometry:
    """Axis-aligned voxel lattice: counts, spacing and physical origin."""

    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing_mm", tuple(float(s) for s in self.spacing_mm))
        object.__setattr__(self, "origin_mm", tuple(float(o) for o in self.origin_mm))
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise DataError(f"dims must be three positive integers, got {self.dims}")
        if len(self.spacing_mm) != 3 or any(s <= 0 for s in self.spacing_mm):
            raise DataError(f"spacing_mm must be three positive reals, got {self.spacing_mm}")
        if len(self.origin_mm) != 3:
            raise DataError(f"origin_mm must be a real triple, got {self.origin_mm}")

    @property
    def voxel_count(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """Physical side lengths, counting one full voxel per sample."""
        return tuple(d * s for d, s in zip(self.dims, self.spacing_mm))

    @property
    def center_mm(self) -> tuple[float, float, float]:
        """Physical center of the voxel-center bounding box."""
        return tuple(o + (d - 1) / 2.0 * s
                     for o, d, s in zip(self.origin_mm, self.dims, self.spacing_mm))

    def index_to_physical(self, idx) -> np.ndarray:
        """Map fractional index coordinates (..., 3) to physical mm."""
        idx = np.asarray(idx, dtype=np.float64)
        return np.asarray(self.origin_mm) + idx * np.asarray(self.spacing_mm)

    def physical_to_index(self, points_mm) -> np.ndarray:
        """Map physical mm points (..., 3) to fractional index coordinates."""
        pts = np.asarray(points_mm, dtype=np.float64)
        return (pts - np.asarray(self.origin_mm)) / np.asarray(self.spacing_mm)


def _as_geometry_match(a: VolumeGeometry, b: VolumeGeometry, what: str) -> None:
    if a != b:
        raise DataError(f"{what}: geometry mismatch ({a} vs {b})")


@dataclass(eq=False)
class Volume:
    """Scalar intensity grid; data is float32, shape (nx, ny, nz)."""

    geometry: VolumeGeometry
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32).reshape(self.geometry.dims)
        if not np.all(np.isfinite(self.data)):
            raise DataError("intensity volume contains non-finite values")


@dataclass(eq=False)
class LabelVolume:
    """Integer class grid with class 0 reserved for background."""

    geometry: VolumeGeometry
    labels: np.ndarray
    num_classes: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.num_classes = int(self.num_classes)
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.num_classes > 32767:
            raise DataError("num_classes above 32767 is not representable on disk")
        labels = np.asarray(self.labels)
        if not np.issubdtype(labels.dtype, np.integer):
            raise DataError(f"labels must be integers, got dtype {labels.dtype}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(
                f"label values must lie in [0, {self.num_classes}), "
                f"found range [{labels.min()}, {labels.max()}]")
        dtype = np.uint8 if self.num_classes <= 256 else np.int16
        self.labels = np.ascontiguousarray(labels, dtype=dtype).reshape(self.geometry.dims)

    def class_mask(self, c: int) -> np.ndarray:
        return self.labels == c

    def foreground_classes(self) -> list[int]:
        """Class ids >= 1 actually present in the grid."""
        present = np.unique(self.labels)
        return [int(c) for c in present if c != 0]


@dataclass(eq=False)
class ProbabilityVolume:
    """Per-voxel K-class probability grid, shape (nx, ny, nz, K).

    Fused (summed-over-views) grids are stored with ``normalized=False``;
    per-voxel sums are only checked when the flag is set.
    """

    geometry: VolumeGeometry
    probs: np.ndarray
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        if probs.ndim != 4:
            raise DataError(f"probs must have shape (nx, ny, nz, K), got {probs.shape}")
        if probs.shape[:3] != self.geometry.dims:
            raise DataError(f"probs shape {probs.shape[:3]} does not match dims {self.geometry.dims}")
        if not np.all(np.isfinite(probs)):
            raise DataError("probability volume contains non-finite values")
        if probs.size and probs.min() < 0:
            raise DataError("probability volume contains negative entries")
        if self.normalized and probs.size:
            sums = probs.sum(axis=-1, dtype=np.float64)
            if np.abs(sums - 1.0).max() > 1e-4:
                raise DataError("normalized probability volume has per-voxel sums outside 1 +/- 1e-4")
        self.probs = probs

    @property
    def num_classes(self) -> int:
        return self.probs.shape[3]


# ---------------------------------------------------------------------------
# disk I/O


def _format_triple(t) -> str:
    return " ".join(repr(float(x)) for x in t)


def _write_header(path: str, fields: dict) -> None:
    lines = [f"{k} = {v}" for k, v in fields.items()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(path: str) -> dict:
    if not os.path.isfile(path):
        raise DataError(f"header file not found: {path}")
    fields = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    return fields


def write_volume(v: Volume | LabelVolume | ProbabilityVolume, header_path: str) -> None:
    """Write a grid as a header + raw pair that read_volume inverts bit-exactly."""
    header_path = os.fspath(header_path)
    stem = os.path.splitext(os.path.basename(header_path))[0]
    raw_name = stem + ".raw"
    raw_path = os.path.join(os.path.dirname(header_path) or ".", raw_name)
    g = v.geometry
    fields = {
        "dims": " ".join(str(d) for d in g.dims),
        "spacing_mm": _format_triple(g.spacing_mm),
        "origin_mm": _format_triple(g.origin_mm),
    }
    if isinstance(v, Volume):
        fields["dtype"] = "f32"
        payload = v.data
    elif isinstance(v, LabelVolume):
        fields["dtype"] = "u8" if v.labels.dtype == np.uint8 else "i16"
        fields["num_classes"] = str(v.num_classes)
        payload = v.labels
    elif isinstance(v, ProbabilityVolume):
        fields["dtype"] = "f32"
        fields["num_classes"] = str(v.num_classes)
        fields["normalized"] = "true" if v.normalized else "false"
        payload = v.probs
    else:
        raise DataError(f"cannot write object of type {type(v).__name__}")
    fields["data_file"] = raw_name
    try:
        _write_header(header_path, fields)
        with open(raw_path, "wb") as fh:
            fh.write(np.asarray(payload, dtype=payload.dtype.newbyteorder("<")).tobytes(order="F"))
    except OSError as exc:
        raise DataError(f"failed to write volume pair at {header_path}: {exc}") from exc


def read_volume(header_path: str) -> Volume | LabelVolume | ProbabilityVolume:
    """Read a header + raw pair written by write_volume.

    The grid kind is inferred from the header: ``num_classes`` with an
    integer dtype gives a LabelVolume, with f32 a ProbabilityVolume,
    otherwise a plain intensity Volume (converted to float32 in memory).
    """
    header_path = os.fspath(header_path)
    fields = _parse_header(header_path)
    for key in ("dims", "spacing_mm", "origin_mm", "dtype", "data_file"):
        if key not in fields:
            raise DataError(f"{header_path}: missing required header key {key!r}")
    try:
        dims = tuple(int(x) for x in fields["dims"].split())
        spacing = tuple(float(x) for x in fields["spacing_mm"].split())
        origin = tuple(float(x) for x in fields["origin_mm"].split())
    except ValueError as exc:
        raise DataError(f"{header_path}: malformed numeric header field: {exc}") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise DataError(f"{header_path}: dims/spacing_mm/origin_mm must be triples")
    geometry = VolumeGeometry(dims, spacing, origin)
    dtype_name = fields["dtype"]
    if dtype_name not in DISK_DTYPES:
        raise DataError(f"{header_path}: unsupported dtype {dtype_name!r}")
    dtype = np.dtype(DISK_DTYPES[dtype_name]).newbyteorder("<")

    raw_path = os.path.join(os.path.dirname(header_path) or ".", fields["data_file"])
    if not os.path.isfile(raw_path):
        raise DataError(f"raw data file not found: {raw_path}")
    raw = np.fromfile(raw_path, dtype=dtype)

    num_classes = fields.get("num_classes")
    if num_classes is not None:
        try:
            k = int(num_classes)
        except ValueError as exc:
            raise DataError(f"{header_path}: malformed num_classes: {exc}") from exc
        if k < 1:
            raise DataError(f"{header_path}: num_classes must be >= 1, got {k}")
        if dtype_name == "f32":
            expected = geometry.voxel_count * k
            if raw.size != expected:
                raise DataError(
                    f"{raw_path}: declared size {expected} elements "
                    f"({geometry.voxel_count} voxels x {k} classes), file has {raw.size}")
            probs = raw.reshape(dims + (k,), order="F")
            normalized = fields.get("normalized", "false") == "true"
            return ProbabilityVolume(geometry, probs, normalized=normalized)
        expected = geometry.voxel_count
        if raw.size != expected:
            raise DataError(f"{raw_path}: declared size {expected} voxels, file has {raw.size}")
        return LabelVolume(geometry, raw.reshape(dims, order="F"), num_classes=k)

    expected = geometry.voxel_count
    if raw.size != expected:
        raise DataError(f"{raw_path}: declared size {expected} voxels, file has {raw.size}")
    return Volume(geometry, raw.reshape(dims, order="F"))


# ---------------------------------------------------------------------------
# interpolation


def trilinear_field(field: np.ndarray, idx: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Trilinear interpolation of ``field`` at fractional index coords.

    field may be (nx, ny, nz) or channel-last (nx, ny, nz, C); idx has shape
    (..., 3).  Points outside the voxel-center hull [0, n-1] per axis get
    ``fill`` on every channel.
    """
    idx = np.asarray(idx, dtype=np.float64)
    pts = idx.reshape(-1, 3)
    dims = np.asarray(field.shape[:3])
    inside = np.all((pts >= 0.0) & (pts <= dims - 1), axis=1)

    base = np.clip(np.floor(pts), 0, np.maximum(dims - 2, 0)).astype(np.intp)
    frac = pts - base
    i0, j0, k0 = base[:, 0], base[:, 1], base[:, 2]
    i1 = np.minimum(i0 + 1, dims[0] - 1)
    j1 = np.minimum(j0 + 1, dims[1] - 1)
    k1 = np.minimum(k0 + 1, dims[2] - 1)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]

    has_channels = field.ndim == 4
    def w(a):
        return a[:, None] if has_channels else a

    out = (field[i0, j0, k0] * w((1 - fx) * (1 - fy) * (1 - fz))
           + field[i1, j0, k0] * w(fx * (1 - fy) * (1 - fz))
           + field[i0, j1, k0] * w((1 - fx) * fy * (1 - fz))
           + field[i0, j0, k1] * w((1 - fx) * (1 - fy) * fz)
           + field[i1, j1, k0] * w(fx * fy * (1 - fz))
           + field[i1, j0, k1] * w(fx * (1 - fy) * fz)
           + field[i0, j1, k1] * w((1 - fx) * fy * fz)
           + field[i1, j1, k1] * w(fx * fy * fz))
    out = np.asarray(out, dtype=np.float64)
    out[~inside] = fill
    shape = idx.shape[:-1] + ((field.shape[3],) if has_channels else ())
    return out.reshape(shape)


def sample_trilinear(v: Volume, point_mm, fill: float = 0.0):
    """Trilinearly sample intensities at physical points (..., 3).

    Returns a scalar for a single point.  Outside the interpolatable
    region (the voxel-center hull) the fill value is returned.
    """
    idx = v.geometry.physical_to_index(point_mm)
    out = trilinear_field(v.data, idx, fill=fill)
    if np.asarray(point_mm).ndim == 1:
        return float(out)
    return out


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def nearest_field(field: np.ndarray, idx: np.ndarray, fill) -> np.ndarray:
    """Nearest-voxel lookup at fractional index coords (..., 3).

    Index coordinates round half away from zero; points whose rounded
    index falls off the grid get ``fill``.
    """
    idx = np.asarray(idx, dtype=np.float64)
    pts = idx.reshape(-1, 3)
    dims = np.asarray(field.shape[:3])
    nearest = _round_half_away(pts)
    inside = np.all((nearest >= 0) & (nearest <= dims - 1), axis=1)
    nearest = np.clip(nearest, 0, dims - 1).astype(np.intp)
    out = field[nearest[:, 0], nearest[:, 1], nearest[:, 2]].copy()
    out[~inside] = fill
    return out.reshape(idx.shape[:-1])


def sample_nearest(v: LabelVolume | Volume, point_mm, fill=None):
    """Nearest-voxel sample at physical points (..., 3).

    Fill defaults to 0 (background class for labels, zero intensity).
    Returns a scalar for a single point.
    """
    if fill is None:
        fill = 0
    grid = v.labels if isinstance(v, LabelVolume) else v.data
    idx = v.geometry.physical_to_index(point_mm)
    out = nearest_field(grid, idx, fill)
    if np.asarray(point_mm).ndim == 1:
        return out.reshape(()).item()
    return out
