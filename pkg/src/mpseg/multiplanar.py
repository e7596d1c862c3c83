"""View generation, oriented slice sampling, per-view reconstruction, fusion.

A view is a unit plane normal; its sampling lattice is an isotropic
d x d x d grid of side m mm centered on the target volume, pixel spacing
m/d.  Slices are stacked along the normal.  Per-view probability maps are
reconstructed back onto the voxel grid by trilinear interpolation and
fused by a plain sum followed by argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpseg.errors import DataError
from mpseg.volume import (
    LabelVolume,
    ProbabilityVolume,
    Volume,
    VolumeGeometry,
    nearest_field,
    trilinear_field,
)

_MAX_VIEW_ATTEMPTS = 100_000
_CANONICAL_AXES = np.eye(3)


@dataclass(frozen=True)
class ViewSet:
    """A reproducible set of plane normals with a pairwise-angle guarantee."""

    views: np.ndarray  # (n, 3) unit vectors
    seed: int
    min_pairwise_angle_deg: float = 60.0
    canonical: bool = False

    def __post_init__(self):
        views = np.asarray(self.views, dtype=np.float64).reshape(-1, 3)
        norms = np.linalg.norm(views, axis=1)
        if np.abs(norms - 1.0).max() > 1e-9:
            raise DataError("view normals must be unit vectors")
        object.__setattr__(self, "views", views)

    def __len__(self) -> int:
        return len(self.views)

    def to_text(self) -> str:
        lines = [f"seed = {self.seed}",
                 f"min_angle_deg = {self.min_pairwise_angle_deg!r}",
                 f"canonical = {'true' if self.canonical else 'false'}"]
        for v in self.views:
            lines.append(f"view = {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ViewSet":
        seed, min_angle, canonical = 0, 60.0, False
        views = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "seed":
                seed = int(value)
            elif key == "min_angle_deg":
                min_angle = float(value)
            elif key == "canonical":
                canonical = value == "true"
            elif key == "view":
                views.append([float(x) for x in value.split()])
        if not views:
            raise DataError("view file contains no views")
        return cls(np.asarray(views), seed=seed,
                   min_pairwise_angle_deg=min_angle, canonical=canonical)


def pairwise_view_angles_deg(views: np.ndarray) -> np.ndarray:
    """Angles between all view pairs, folding v and -v together."""
    views = np.asarray(views, dtype=np.float64)
    n = len(views)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            c = min(abs(float(views[i] @ views[j])), 1.0)
            out.append(np.degrees(np.arccos(c)))
    return np.asarray(out)


def _hemisphere_sample(rng) -> np.ndarray:
    z = rng.uniform(0.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    r = np.sqrt(max(1.0 - z * z, 0.0))
    cand = np.array([r * np.cos(phi), r * np.sin(phi), z])
    return cand / np.linalg.norm(cand)


def _repulse(views: np.ndarray, cos_min: float, rounds: int,
             step: float = 0.5) -> tuple[np.ndarray, bool, int]:
    """Push view directions apart until all pairs clear the angle bound.

    Deterministic gradient descent on a hinge energy over |v_i . v_j|,
    aiming slightly past the bound so the result clears it strictly.
    Returns (views, satisfied, rounds used).
    """
    v = views.copy()
    target = max(cos_min - 0.02, 0.0)
    for used in range(1, rounds + 1):
        dots = v @ v.T
        np.fill_diagonal(dots, 0.0)
        excess = np.maximum(np.abs(dots) - target, 0.0)
        if excess.max() == 0.0:
            return v, True, used
        v = v - step * ((excess * np.sign(dots)) @ v)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        v[v[:, 2] < 0] *= -1.0
    dots = v @ v.T
    np.fill_diagonal(dots, 0.0)
    return v, bool(np.abs(dots).max() <= cos_min), rounds


def generate_views(n: int, seed: int = 0, min_angle_deg: float = 60.0,
                   canonical: bool = False) -> ViewSet:
    """Sample n unit normals on the hemisphere, all pairs at least
    min_angle_deg apart (v and -v count as the same view).

    Deterministic per seed.  canonical=True returns the first n grid axes
    instead (n <= 3).  Easy constraints are met by plain rejection
    sampling; tight ones (rejection alone cannot reliably place 6 views
    at 60 degrees) fall back to seeded uniform starts refined by a
    deterministic repulsion that spreads the directions apart.  Raises
    when the attempt budget is exhausted (infeasible constraint).
    """
    if n < 1:
        raise DataError(f"need at least one view, got n={n}")
    if canonical:
        if n > 3:
            raise DataError(f"canonical mode supports at most 3 views, got {n}")
        return ViewSet(_CANONICAL_AXES[:n].copy(), seed=seed,
                       min_pairwise_angle_deg=min_angle_deg, canonical=True)
    rng = np.random.default_rng(seed)
    cos_min = np.cos(np.radians(min_angle_deg))

    accepted: list[np.ndarray] = []
    attempts = 0
    rejects_in_a_row = 0
    while len(accepted) < n and attempts < min(2000, _MAX_VIEW_ATTEMPTS):
        attempts += 1
        cand = _hemisphere_sample(rng)
        if all(abs(float(cand @ v)) <= cos_min for v in accepted):
            accepted.append(cand)
            rejects_in_a_row = 0
        else:
            rejects_in_a_row += 1
            if rejects_in_a_row >= 40:
                accepted.clear()
                rejects_in_a_row = 0
    if len(accepted) == n:
        return ViewSet(np.asarray(accepted), seed=seed,
                       min_pairwise_angle_deg=min_angle_deg, canonical=False)

    while attempts < _MAX_VIEW_ATTEMPTS:
        start = np.stack([_hemisphere_sample(rng) for _ in range(n)])
        attempts += n
        views, ok, used = _repulse(start, cos_min, rounds=500)
        attempts += used
        if ok:
            return ViewSet(views, seed=seed,
                           min_pairwise_angle_deg=min_angle_deg, canonical=False)
    raise DataError(
        f"could not place {n} views with pairwise angle >= {min_angle_deg} deg "
        f"within {_MAX_VIEW_ATTEMPTS} attempts")


def _round_up_even(x: float) -> int:
    d = int(np.ceil(x))
    return d if d % 2 == 0 else d + 1


def fit_grid(geometries: list[VolumeGeometry], mode: str = "infer") -> tuple[int, float]:
    """Choose the slice pixel count d and physical side m from a dataset.

    Pools per-axis voxel counts and physical extents over all images and
    axes; training uses the 75th percentile of each pool (efficient
    training), inference the maximum (complete coverage).  d is rounded
    up to the next even integer.
    """
    if not geometries:
        raise DataError("fit_grid needs at least one geometry")
    counts = np.asarray([d for g in geometries for d in g.dims], dtype=np.float64)
    extents = np.asarray([e for g in geometries for e in g.extent_mm], dtype=np.float64)
    if mode == "train":
        d = _round_up_even(float(np.quantile(counts, 0.75, method="linear")))
        m = float(np.quantile(extents, 0.75, method="linear"))
    elif mode == "infer":
        d = _round_up_even(float(counts.max()))
        m = float(extents.max())
    else:
        raise DataError(f"unknown fit mode {mode!r}")
    return d, m


def view_basis(normal) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic right-handed orthonormal (u, v, n) triple for a normal.

    u = normalize(n x e) with e the canonical axis least aligned with n
    (ties to the lowest axis index), v = n x u.
    """
    n = np.asarray(normal, dtype=np.float64)
    norm = np.linalg.norm(n)
    if norm < 1e-12:
        raise DataError("view normal must be nonzero")
    n = n / norm
    e = _CANONICAL_AXES[int(np.argmin(np.abs(n)))]
    u = np.cross(n, e)
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return u, v, n


@dataclass(frozen=True)
class ViewGrid:
    """Oriented isotropic sampling lattice for one view.

    Grid point (a, b, k) sits at
    center + (a - (d-1)/2) s u + (b - (d-1)/2) s v + (k - (d-1)/2) s n
    with s = side_mm / pixels_per_side; a indexes rows along basis_u,
    b columns along basis_v, k slices along the normal.
    """

    normal: tuple[float, float, float]
    basis_u: tuple[float, float, float]
    basis_v: tuple[float, float, float]
    center_mm: tuple[float, float, float]
    side_mm: float
    pixels_per_side: int

    def __post_init__(self):
        for name in ("normal", "basis_u", "basis_v", "center_mm"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if self.pixels_per_side < 2:
            raise DataError(f"pixels_per_side must be >= 2, got {self.pixels_per_side}")
        if self.side_mm <= 0:
            raise DataError(f"side_mm must be positive, got {self.side_mm}")
        u, v, n = (np.asarray(self.basis_u), np.asarray(self.basis_v),
                   np.asarray(self.normal))
        for vec, name in ((u, "basis_u"), (v, "basis_v"), (n, "normal")):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-9:
                raise DataError(f"{name} must be a unit vector")
        if max(abs(u @ v), abs(u @ n), abs(v @ n)) > 1e-9:
            raise DataError("basis vectors must be mutually orthogonal")

    @classmethod
    def from_normal(cls, normal, center_mm, side_mm: float,
                    pixels_per_side: int) -> "ViewGrid":
        u, v, n = view_basis(normal)
        return cls(normal=tuple(n), basis_u=tuple(u), basis_v=tuple(v),
                   center_mm=tuple(np.asarray(center_mm, dtype=np.float64)),
                   side_mm=float(side_mm), pixels_per_side=int(pixels_per_side))

    @property
    def pixel_spacing(self) -> float:
        return self.side_mm / self.pixels_per_side

    def grid_to_physical(self, abk) -> np.ndarray:
        """Map fractional grid coords (..., 3) = (a, b, k) to physical mm."""
        abk = np.asarray(abk, dtype=np.float64)
        s = self.pixel_spacing
        half = (self.pixels_per_side - 1) / 2.0
        offset = (abk - half) * s
        basis = np.stack([self.basis_u, self.basis_v, self.normal])  # (3, 3)
        return np.asarray(self.center_mm) + offset @ basis

    def physical_to_grid(self, points_mm) -> np.ndarray:
        """Inverse of grid_to_physical."""
        pts = np.asarray(points_mm, dtype=np.float64) - np.asarray(self.center_mm)
        basis = np.stack([self.basis_u, self.basis_v, self.normal])
        s = self.pixel_spacing
        half = (self.pixels_per_side - 1) / 2.0
        return pts @ basis.T / s + half


@dataclass(eq=False)
class SliceBatch:
    """All d slices of one view: image plus optional label/weight channels.

    Arrays have shape (d, d, d) indexed (slice k, row a, col b); channels
    share the grid mapping pixel for pixel.
    """

    grid: ViewGrid
    images: np.ndarray
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None
    num_classes: int | None = None

    def __post_init__(self):
        d = self.grid.pixels_per_side
        expected = (d, d, d)
        for name in ("images", "labels", "weights"):
            arr = getattr(self, name)
            if arr is not None and arr.shape != expected:
                raise DataError(f"{name} must have shape {expected}, got {arr.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def slice_range(self) -> range:
        return range(self.images.shape[0])


def diagonal_grid(geometries: list[VolumeGeometry], d: int, m: float) -> tuple[int, float]:
    """Swap the cube side for the largest volume diagonal, keeping the
    pixel spacing: guarantees full coverage under any rotation."""
    diag = max(float(np.linalg.norm(g.extent_mm)) for g in geometries)
    pixel = m / d
    return _round_up_even(diag / pixel), diag


def extract_slices(image: Volume, view, d: int, m: float,
                   center_mm=None,
                   labels: LabelVolume | None = None,
                   weights: Volume | None = None) -> SliceBatch:
    """Sample d parallel d x d slices of the volume along a view normal.

    Intensities and weights are trilinear (fill 0 and 1), labels nearest
    (fill background).  The sampling cube is centered on the volume's
    physical center unless center_mm overrides it.
    """
    if d < 2:
        raise DataError(f"pixel count d must be >= 2, got {d}")
    if m <= 0:
        raise DataError(f"side length m must be positive, got {m}")
    if center_mm is None:
        center_mm = image.geometry.center_mm
    grid = ViewGrid.from_normal(view, center_mm, m, d)

    coords = np.stack(np.meshgrid(np.arange(d), np.arange(d), np.arange(d),
                                  indexing="ij"), axis=-1)  # (k, a, b, 3) of (a, b, k)?
    # meshgrid above yields (k, a, b) index order; reorder last axis to (a, b, k)
    abk = coords[..., [1, 2, 0]].astype(np.float64)
    points = grid.grid_to_physical(abk.reshape(-1, 3))

    img = trilinear_field(image.data, image.geometry.physical_to_index(points),
                          fill=0.0).reshape(d, d, d).astype(np.float32)
    lab = wgt = None
    num_classes = None
    if labels is not None:
        lab = nearest_field(labels.labels, labels.geometry.physical_to_index(points),
                            fill=0).reshape(d, d, d)
        num_classes = labels.num_classes
    if weights is not None:
        wgt = trilinear_field(weights.data, weights.geometry.physical_to_index(points),
                              fill=1.0).reshape(d, d, d).astype(np.float32)
    return SliceBatch(grid=grid, images=img, labels=lab, weights=wgt,
                      num_classes=num_classes)


def reconstruct_view(pred_slices: np.ndarray, grid: ViewGrid,
                     target: VolumeGeometry) -> ProbabilityVolume:
    """Resample per-slice class probabilities back onto the voxel grid.

    pred_slices has shape (d, d, d, K) indexed (slice, row, col, class).
    Each target voxel center is mapped into grid coordinates and every
    channel interpolated trilinearly; voxels outside the sampled cube get
    all-zero probabilities.  The result is not normalized.
    """
    pred = np.asarray(pred_slices)
    d = grid.pixels_per_side
    if pred.ndim != 4 or pred.shape[:3] != (d, d, d):
        raise DataError(f"prediction tensor must be ({d}, {d}, {d}, K), got {pred.shape}")

    nx, ny, nz = target.dims
    ijk = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                               indexing="ij"), axis=-1).reshape(-1, 3)
    centers = target.index_to_physical(ijk)
    abk = grid.physical_to_grid(centers)
    # tensor axes are (k, a, b, class); interpolate in that axis order
    kab = abk[:, [2, 0, 1]]
    probs = trilinear_field(pred, kab, fill=0.0)
    probs = probs.reshape(nx, ny, nz, pred.shape[3]).astype(np.float32)
    return ProbabilityVolume(target, probs, normalized=False)


def fuse(views: list[ProbabilityVolume]) -> LabelVolume:
    """Sum per-view probability maps in view order, then per-voxel argmax.

    Ties break toward the lower class index, which also sends all-zero
    (never covered) voxels to background.
    """
    if not views:
        raise DataError("fuse needs at least one probability volume")
    geometry = views[0].geometry
    k = views[0].num_classes
    for pv in views[1:]:
        if pv.geometry != geometry:
            raise DataError("fuse: geometry mismatch between views")
        if pv.num_classes != k:
            raise DataError("fuse: class count mismatch between views")
    total = np.zeros(views[0].probs.shape, dtype=np.float32)
    for pv in views:
        total += pv.probs
    labels = np.argmax(total, axis=-1)
    return LabelVolume(geometry, labels, num_classes=k)
