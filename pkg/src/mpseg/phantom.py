"""Deterministic synthetic joint phantoms with known labels and controlled gaps.

Shapes are rasterized on the integer voxel lattice (a voxel belongs to a
shape iff its center does), mirror partners are exact grid reflections,
and intensity noise comes from numpy's Philox counter-based generator
(Philox4x64-10, key = seed, counter starting at 0) so a spec plus seed
reproduces the same volume byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from mpseg.distance import squared_edt
from mpseg.errors import DataError
from mpseg.volume import LabelVolume, Volume, VolumeGeometry


@dataclass(frozen=True)
class PhantomShape:
    label: int
    kind: str  # sphere | ellipsoid | capsule
    center_mm: tuple[float, float, float]
    radii_mm: tuple[float, ...]
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)  # capsule only
    half_length_mm: float = 0.0  # capsule only

    def __post_init__(self):
        if self.kind not in ("sphere", "ellipsoid", "capsule"):
            raise DataError(f"unknown shape kind {self.kind!r}")
        if self.label < 1:
            raise DataError(f"shape labels must be foreground (>= 1), got {self.label}")
        if any(r <= 0 for r in self.radii_mm):
            raise DataError(f"shape radii must be positive, got {self.radii_mm}")
        if self.kind == "ellipsoid" and len(self.radii_mm) != 3:
            raise DataError("ellipsoid needs three radii")
        if self.kind == "capsule" and self.half_length_mm < 0:
            raise DataError("capsule half_length_mm must be >= 0")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    shapes: tuple[PhantomShape, ...]
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gap_vox: float = 0.0
    mirror_axis: int | None = None
    mirror_pairs: tuple[tuple[int, int], ...] = ()
    bone_value: float = 1000.0
    background_value: float = 0.0
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.gap_vox < 0:
            raise DataError(f"gap_vox must be >= 0, got {self.gap_vox}")
        if self.mirror_pairs and self.mirror_axis is None:
            raise DataError("mirror_pairs given without mirror_axis")
        if self.mirror_axis is not None and self.mirror_axis not in (0, 1, 2):
            raise DataError(f"mirror_axis must be 0, 1 or 2, got {self.mirror_axis}")
        mirrored_targets = {b for _, b in self.mirror_pairs}
        for a, b in self.mirror_pairs:
            if a == b:
                raise DataError(f"mirror pair ({a}, {b}) must pair distinct classes")
        for s in self.shapes:
            if s.label in mirrored_targets:
                raise DataError(
                    f"class {s.label} is a mirror target; it is generated by "
                    "reflection and must not have its own shapes")

    @property
    def num_classes(self) -> int:
        labels = [s.label for s in self.shapes]
        labels += [b for _, b in self.mirror_pairs]
        return max(labels) + 1 if labels else 1

    @property
    def geometry(self) -> VolumeGeometry:
        return VolumeGeometry(self.dims, self.spacing_mm, self.origin_mm)

    def to_json(self) -> str:
        doc = {
            "dims": list(self.dims),
            "spacing_mm": list(self.spacing_mm),
            "origin_mm": list(self.origin_mm),
            "shapes": [
                {"label": s.label, "kind": s.kind, "center_mm": list(s.center_mm),
                 "radii_mm": list(s.radii_mm), "axis": list(s.axis),
                 "half_length_mm": s.half_length_mm}
                for s in self.shapes
            ],
            "gap_vox": self.gap_vox,
            "mirror_axis": self.mirror_axis,
            "mirror_pairs": [list(p) for p in self.mirror_pairs],
            "intensity": {"bone_value": self.bone_value,
                          "background_value": self.background_value,
                          "noise_sd": self.noise_sd},
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"malformed phantom spec: {exc}") from exc
        try:
            shapes = tuple(
                PhantomShape(
                    label=int(s["label"]), kind=s["kind"],
                    center_mm=tuple(s["center_mm"]), radii_mm=tuple(s["radii_mm"]),
                    axis=tuple(s.get("axis", (0.0, 0.0, 1.0))),
                    half_length_mm=float(s.get("half_length_mm", 0.0)))
                for s in doc["shapes"])
            intensity = doc.get("intensity", {})
            return cls(
                dims=tuple(doc["dims"]),
                shapes=shapes,
                spacing_mm=tuple(doc.get("spacing_mm", (1.0, 1.0, 1.0))),
                origin_mm=tuple(doc.get("origin_mm", (0.0, 0.0, 0.0))),
                gap_vox=float(doc.get("gap_vox", 0.0)),
                mirror_axis=doc.get("mirror_axis"),
                mirror_pairs=tuple(tuple(p) for p in doc.get("mirror_pairs", [])),
                bone_value=float(intensity.get("bone_value", 1000.0)),
                background_value=float(intensity.get("background_value", 0.0)),
                noise_sd=float(intensity.get("noise_sd", 0.0)),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed phantom spec: {exc}") from exc


def _voxel_centers(geometry: VolumeGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    axes = [o + np.arange(d) * s
            for o, d, s in zip(geometry.origin_mm, geometry.dims, geometry.spacing_mm)]
    return np.meshgrid(*axes, indexing="ij")


def _rasterize(shape: PhantomShape, geometry: VolumeGeometry) -> np.ndarray:
    x, y, z = _voxel_centers(geometry)
    cx, cy, cz = shape.center_mm
    if shape.kind == "sphere":
        r = shape.radii_mm[0]
        return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r
    if shape.kind == "ellipsoid":
        rx, ry, rz = shape.radii_mm
        return (((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 + ((z - cz) / rz) ** 2) <= 1.0
    # capsule: within radius of the axis segment [center - h*axis, center + h*axis]
    axis = np.asarray(shape.axis, dtype=np.float64)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise DataError("capsule axis must be nonzero")
    axis = axis / norm
    px, py, pz = x - cx, y - cy, z - cz
    t = np.clip(px * axis[0] + py * axis[1] + pz * axis[2],
                -shape.half_length_mm, shape.half_length_mm)
    dx, dy, dz = px - t * axis[0], py - t * axis[1], pz - t * axis[2]
    r = shape.radii_mm[0]
    return dx * dx + dy * dy + dz * dz <= r * r


def _check_fits(shape: PhantomShape, geometry: VolumeGeometry) -> None:
    lo = np.asarray(geometry.origin_mm)
    hi = lo + (np.asarray(geometry.dims) - 1) * np.asarray(geometry.spacing_mm)
    if shape.kind == "ellipsoid":
        reach = np.asarray(shape.radii_mm)
    elif shape.kind == "capsule":
        axis = np.abs(np.asarray(shape.axis, dtype=np.float64))
        axis /= max(np.linalg.norm(axis), 1e-12)
        reach = shape.radii_mm[0] + shape.half_length_mm * axis
    else:
        reach = np.full(3, shape.radii_mm[0])
    c = np.asarray(shape.center_mm)
    if np.any(c - reach < lo - 1e-9) or np.any(c + reach > hi + 1e-9):
        raise DataError(f"shape with label {shape.label} does not fit inside the volume")


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, LabelVolume]:
    """Rasterize a phantom spec into an intensity volume and its ground truth.

    Later-listed shapes win overlaps; mirror targets are grid reflections
    of their source class; then each class (in first-appearance order) is
    trimmed until it clears all earlier classes by at least gap_vox.
    """
    geometry = spec.geometry
    labels = np.zeros(spec.dims, dtype=np.int32)
    order: list[int] = []
    for shape in spec.shapes:
        _check_fits(shape, geometry)
        labels[_rasterize(shape, geometry)] = shape.label
        if shape.label not in order:
            order.append(shape.label)
    for a, b in spec.mirror_pairs:
        if a not in order:
            raise DataError(f"mirror pair source class {a} has no shapes")
        mirrored = np.flip(labels == a, axis=spec.mirror_axis)
        labels[mirrored] = b
        if b not in order:
            order.append(b)

    if spec.gap_vox > 0:
        gap_sq = float(spec.gap_vox) ** 2
        for i, c in enumerate(order[1:], start=1):
            earlier = np.isin(labels, order[:i])
            if not earlier.any():
                continue
            dist_sq = squared_edt(earlier)
            violating = (labels == c) & (dist_sq < gap_sq)
            labels[violating] = 0
            if not (labels == c).any():
                raise DataError(
                    f"gap enforcement of {spec.gap_vox} voxels emptied class {c}")

    intensity = np.full(spec.dims, spec.background_value, dtype=np.float64)
    fg = labels > 0
    intensity[fg] = spec.bone_value
    if spec.noise_sd > 0:
        rng = np.random.Generator(np.random.Philox(key=spec.seed))
        noise = rng.standard_normal(spec.dims) * spec.noise_sd
        intensity[fg] += noise[fg]

    vol = Volume(geometry, intensity)
    lab = LabelVolume(geometry, labels, num_classes=spec.num_classes)
    return vol, lab


def two_sphere_spec(dims: tuple[int, int, int] = (64, 64, 64),
                    radius_mm: float = 12.0,
                    surface_gap_mm: float = 3.0,
                    gap_vox: float = 3.0,
                    noise_sd: float = 0.0,
                    seed: int = 0) -> PhantomSpec:
    """Mirrored two-sphere joint: classes 1 and 2 facing across an x gap.

    The default layout leaves a clean inter-class clearance well above
    gap_vox, so mirror symmetry survives gap enforcement untouched.
    """
    n = dims[0]
    mid = (n - 1) / 2.0
    half_sep = radius_mm + surface_gap_mm / 2.0
    sphere = PhantomShape(label=1, kind="sphere",
                          center_mm=(mid - half_sep, (dims[1] - 1) / 2.0, (dims[2] - 1) / 2.0),
                          radii_mm=(radius_mm,))
    return PhantomSpec(dims=dims, shapes=(sphere,), gap_vox=gap_vox,
                       mirror_axis=0, mirror_pairs=((1, 2),),
                       noise_sd=noise_sd, seed=seed)
