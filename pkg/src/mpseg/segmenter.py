"""File-based slice-segmenter plugin protocol plus built-in oracle segmenters.

The host writes a batch of slices (manifest.json + one raw image file per
slice) into a work directory and invokes the plugin as

    <command> --input <manifest path> --output <dir>

The plugin writes ``probs_<id>.bin`` per entry (float32 little-endian,
row-major, channel-last, width*height*K values), then an empty ``done``
marker, and exits 0.  Built-in oracles short-circuit in process but can
also be run as a standalone plugin via ``python -m mpseg.segmenter``,
which exercises the external path end to end.

Manifest entries carry the physical placement of each slice (origin of
pixel (0,0) plus per-row/per-column step vectors) so oracle plugins can
look up ground truth, and optional label/weight channels for training
consumers.  Hosts only require id, width, height and image_path.
"""

from __future__ import annotations

import json
import os
import shlex
import subprocess
import sys
import tempfile
from dataclasses import dataclass

import numpy as np

from mpseg.distance import _erode_mask, class_distances, squared_edt
from mpseg.errors import DataError, ProtocolError
from mpseg.multiplanar import SliceBatch
from mpseg.postprocess import SymmetryPairs
from mpseg.volume import LabelVolume, nearest_field, read_volume

PROTOCOL_VERSION = 1
DONE_MARKER = "done"


@dataclass(frozen=True)
class SliceEntry:
    id: str
    width: int
    height: int
    image_path: str
    label_path: str | None = None
    weight_path: str | None = None
    origin_mm: tuple[float, float, float] | None = None
    step_row_mm: tuple[float, float, float] | None = None
    step_col_mm: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class SliceManifest:
    protocol_version: int
    num_classes: int
    entries: tuple[SliceEntry, ...]

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ProtocolError("manifest entry ids must be unique")

    def to_json(self) -> str:
        doc = {
            "protocol_version": self.protocol_version,
            "num_classes": self.num_classes,
            "entries": [],
        }
        for e in self.entries:
            entry = {"id": e.id, "width": e.width, "height": e.height,
                     "image_path": e.image_path}
            if e.label_path is not None:
                entry["label_path"] = e.label_path
            if e.weight_path is not None:
                entry["weight_path"] = e.weight_path
            if e.origin_mm is not None:
                entry["origin_mm"] = list(e.origin_mm)
                entry["step_row_mm"] = list(e.step_row_mm)
                entry["step_col_mm"] = list(e.step_col_mm)
            doc["entries"].append(entry)
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SliceManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed manifest: {exc}") from exc
        version = doc.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {version!r}")
        try:
            entries = tuple(
                SliceEntry(
                    id=str(e["id"]), width=int(e["width"]), height=int(e["height"]),
                    image_path=str(e["image_path"]),
                    label_path=e.get("label_path"), weight_path=e.get("weight_path"),
                    origin_mm=tuple(e["origin_mm"]) if "origin_mm" in e else None,
                    step_row_mm=tuple(e["step_row_mm"]) if "step_row_mm" in e else None,
                    step_col_mm=tuple(e["step_col_mm"]) if "step_col_mm" in e else None,
                ) for e in doc["entries"])
            return cls(protocol_version=version, num_classes=int(doc["num_classes"]),
                       entries=entries)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed manifest: {exc}") from exc


def write_slice_batch(batch: SliceBatch, work_dir: str, num_classes: int,
                      prefix: str = "slice") -> str:
    """Write a slice batch to disk in protocol layout; returns the manifest path."""
    os.makedirs(work_dir, exist_ok=True)
    grid = batch.grid
    d = grid.pixels_per_side
    s = grid.pixel_spacing
    u = np.asarray(grid.basis_u)
    v = np.asarray(grid.basis_v)
    entries = []
    for k in range(len(batch)):
        sid = f"{prefix}_{k:03d}"
        image_name = f"image_{sid}.bin"
        origin = grid.grid_to_physical(np.array([0.0, 0.0, float(k)]))
        with open(os.path.join(work_dir, image_name), "wb") as fh:
            fh.write(batch.images[k].astype("<f4").tobytes(order="C"))
        label_name = weight_name = None
        if batch.labels is not None:
            label_name = f"labels_{sid}.bin"
            with open(os.path.join(work_dir, label_name), "wb") as fh:
                fh.write(batch.labels[k].astype(np.uint8).tobytes(order="C"))
        if batch.weights is not None:
            weight_name = f"weights_{sid}.bin"
            with open(os.path.join(work_dir, weight_name), "wb") as fh:
                fh.write(batch.weights[k].astype("<f4").tobytes(order="C"))
        entries.append(SliceEntry(
            id=sid, width=d, height=d, image_path=image_name,
            label_path=label_name, weight_path=weight_name,
            origin_mm=tuple(origin), step_row_mm=tuple(s * u), step_col_mm=tuple(s * v)))
    manifest = SliceManifest(PROTOCOL_VERSION, num_classes, tuple(entries))
    manifest_path = os.path.join(work_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(manifest.to_json())
    return manifest_path


def read_manifest(manifest_path: str) -> SliceManifest:
    if not os.path.isfile(manifest_path):
        raise ProtocolError(f"manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        return SliceManifest.from_json(fh.read())


def read_slice_batch(manifest_path: str) -> tuple[SliceManifest, np.ndarray,
                                                  np.ndarray | None, np.ndarray | None]:
    """Load manifest plus image (and any label/weight) channels as arrays."""
    manifest = read_manifest(manifest_path)
    base = os.path.dirname(manifest_path)
    images, labels, weights = [], [], []
    for e in manifest.entries:
        images.append(_read_raw(os.path.join(base, e.image_path), "<f4",
                                (e.height, e.width), e.id))
        if e.label_path is not None:
            labels.append(_read_raw(os.path.join(base, e.label_path), np.uint8,
                                    (e.height, e.width), e.id))
        if e.weight_path is not None:
            weights.append(_read_raw(os.path.join(base, e.weight_path), "<f4",
                                     (e.height, e.width), e.id))
    return (manifest, np.stack(images),
            np.stack(labels) if labels else None,
            np.stack(weights) if weights else None)


def _read_raw(path: str, dtype, shape: tuple[int, ...], entry_id: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise ProtocolError(f"entry {entry_id}: file missing: {path}")
    raw = np.fromfile(path, dtype=dtype)
    expected = int(np.prod(shape))
    if raw.size != expected:
        raise ProtocolError(
            f"entry {entry_id}: {path} has {raw.size} elements, expected {expected}")
    return raw.reshape(shape)


def validate_plugin_outputs(manifest: SliceManifest, output_dir: str) -> np.ndarray:
    """Check a plugin's output directory against the protocol contract.

    Requires the done marker, one complete probability file per entry,
    and finite nonnegative values.  Returns the stacked probabilities
    with shape (n_slices, height, width, K).
    """
    if not os.path.isfile(os.path.join(output_dir, DONE_MARKER)):
        raise ProtocolError("plugin did not write the done marker")
    out = []
    k = manifest.num_classes
    for e in manifest.entries:
        path = os.path.join(output_dir, f"probs_{e.id}.bin")
        probs = _read_raw(path, "<f4", (e.height, e.width, k), e.id)
        if not np.all(np.isfinite(probs)):
            raise ProtocolError(f"entry {e.id}: probabilities contain non-finite values")
        if probs.min() < 0:
            raise ProtocolError(f"entry {e.id}: probabilities contain negative values")
        out.append(probs)
    return np.stack(out)


# ---------------------------------------------------------------------------
# corruption of reference labels (simulated failure modes)


@dataclass(frozen=True)
class CorruptionConfig:
    """Deterministic corruption of reference labels for oracle testing.

    swap_fraction of each paired class's outer boundary band flips to the
    partner class; dilate_vox closes inter-class gaps; floaters injects
    disconnected blobs into the background.
    """

    swap_fraction: float = 0.0
    swap_pairs: tuple[tuple[int, int], ...] = ()
    band_vox: int = 1
    dilate_vox: int = 0
    floater_count: int = 0
    floater_radius_vox: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.swap_fraction <= 1.0:
            raise DataError(f"swap_fraction must be in [0, 1], got {self.swap_fraction}")
        if self.swap_fraction > 0 and not self.swap_pairs:
            raise DataError("swap_fraction > 0 requires swap_pairs")
        if self.dilate_vox < 0 or self.floater_count < 0 or self.floater_radius_vox <= 0:
            raise DataError("corruption sizes must be nonnegative (radius positive)")

    @property
    def is_identity(self) -> bool:
        return (self.swap_fraction == 0.0 and self.dilate_vox == 0
                and self.floater_count == 0)


def dilate_labels(y: LabelVolume, radius_vox: int) -> LabelVolume:
    """Grow every foreground class by a Euclidean ball; contested voxels
    go to the nearest class, ties to the lower class id."""
    if radius_vox <= 0:
        return y
    cdf = class_distances(y)
    out = y.labels.astype(np.int32)
    grow = (out == 0) & (cdf.d1 <= radius_vox)
    out[grow] = cdf.nearest_class[grow]
    return LabelVolume(y.geometry, out, num_classes=y.num_classes)


def swap_symmetric_bands(y: LabelVolume, pairs: tuple[tuple[int, int], ...],
                         fraction: float, band_vox: int, rng) -> LabelVolume:
    """Flip a seeded fraction of each paired class's boundary band to the
    partner class.  Bands come from the input labels for both directions."""
    out = y.labels.astype(np.int32)
    for a, b in pairs:
        for src, dst in ((a, b), (b, a)):
            mask = y.labels == src
            band = mask & ~_erode_mask(mask, band_vox)
            idx = np.argwhere(band)
            n_pick = int(round(fraction * len(idx)))
            if n_pick == 0:
                continue
            pick = rng.choice(len(idx), size=n_pick, replace=False)
            sel = idx[pick]
            out[sel[:, 0], sel[:, 1], sel[:, 2]] = dst
    return LabelVolume(y.geometry, out, num_classes=y.num_classes)


def add_floaters(y: LabelVolume, count: int, radius_vox: float, rng,
                 classes: tuple[int, ...] = ()) -> LabelVolume:
    """Inject small disconnected spheres into the background.

    Each floater keeps a clearance of 2 voxels beyond its radius from all
    existing foreground so it stays a separate connected component.
    """
    if count == 0:
        return y
    labels = y.labels.astype(np.int32)
    if not classes:
        classes = tuple(y.foreground_classes()) or (1,)
    dims = np.asarray(y.geometry.dims)
    grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    clearance = radius_vox + 2.0
    for i in range(count):
        dist_sq = squared_edt(labels > 0)
        candidates = dist_sq > clearance * clearance
        margin = int(np.ceil(radius_vox)) + 1
        for ax, g in enumerate(grids):
            candidates &= (g >= margin) & (g <= dims[ax] - 1 - margin)
        idx = np.argwhere(candidates)
        if len(idx) == 0:
            raise DataError(f"no room left for floater {i + 1} of {count}")
        center = idx[rng.choice(len(idx))]
        ball = ((grids[0] - center[0]) ** 2 + (grids[1] - center[1]) ** 2
                + (grids[2] - center[2]) ** 2) <= radius_vox ** 2
        labels[ball] = classes[i % len(classes)]
    return LabelVolume(y.geometry, labels, num_classes=y.num_classes)


def corrupt_labels(y: LabelVolume, cfg: CorruptionConfig) -> LabelVolume:
    """Apply the configured corruption steps (swaps, dilation, floaters)
    in a fixed order with a counter-based generator keyed on cfg.seed."""
    if cfg.is_identity:
        return y
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    out = y
    if cfg.swap_fraction > 0:
        out = swap_symmetric_bands(out, cfg.swap_pairs, cfg.swap_fraction,
                                   cfg.band_vox, rng)
    if cfg.dilate_vox > 0:
        out = dilate_labels(out, cfg.dilate_vox)
    if cfg.floater_count > 0:
        pair_classes = tuple(c for p in cfg.swap_pairs for c in p)
        out = add_floaters(out, cfg.floater_count, cfg.floater_radius_vox, rng,
                           classes=pair_classes)
    return out


# ---------------------------------------------------------------------------
# segmenter handles


@dataclass(frozen=True)
class SegmenterHandle:
    """Something that can turn a slice batch into per-pixel probabilities.

    kind "oracle" answers in process from a reference label volume;
    kind "external" shells out to a plugin command line.
    """

    kind: str
    command: str | None = None
    num_classes: int | None = None
    reference: LabelVolume | None = None

    def __post_init__(self):
        if self.kind == "external":
            if not self.command or not self.num_classes:
                raise DataError("external segmenter needs a command and num_classes")
        elif self.kind == "oracle":
            if self.reference is None:
                raise DataError("oracle segmenter needs a reference label volume")
            object.__setattr__(self, "num_classes", self.reference.num_classes)
        else:
            raise DataError(f"unknown segmenter kind {self.kind!r}")


def oracle_perfect(reference: LabelVolume) -> SegmenterHandle:
    """Oracle that emits one-hot probabilities of the nearest reference label."""
    return SegmenterHandle(kind="oracle", reference=reference)


def oracle_corrupted(reference: LabelVolume, cfg: CorruptionConfig) -> SegmenterHandle:
    """Perfect oracle over a deterministically corrupted copy of the reference."""
    return SegmenterHandle(kind="oracle", reference=corrupt_labels(reference, cfg))


def external_segmenter(command: str, num_classes: int) -> SegmenterHandle:
    """Handle for a plugin command line following the manifest protocol."""
    return SegmenterHandle(kind="external", command=command, num_classes=int(num_classes))


def _oracle_probabilities(reference: LabelVolume, batch: SliceBatch) -> np.ndarray:
    d = batch.grid.pixels_per_side
    kab = np.stack(np.meshgrid(np.arange(d), np.arange(d), np.arange(d),
                               indexing="ij"), axis=-1)
    abk = kab[..., [1, 2, 0]].astype(np.float64).reshape(-1, 3)
    points = batch.grid.grid_to_physical(abk)
    idx = reference.geometry.physical_to_index(points)
    labels = nearest_field(reference.labels, idx, fill=0).astype(np.intp)
    k = reference.num_classes
    probs = np.eye(k, dtype=np.float32)[labels]
    return probs.reshape(d, d, d, k)


def run_segmenter(handle: SegmenterHandle, batch: SliceBatch,
                  work_dir: str | None = None,
                  timeout_s: float = 600.0) -> np.ndarray:
    """Produce (d, d, d, K) probabilities for a slice batch.

    Oracles answer in process.  External plugins get a work directory
    with the protocol files, are invoked with --input/--output, and their
    outputs are validated (done marker, sizes, finite nonnegative values).
    """
    if handle.kind == "oracle":
        return _oracle_probabilities(handle.reference, batch)

    owns_dir = work_dir is None
    if owns_dir:
        work_dir = tempfile.mkdtemp(prefix="mpseg_plugin_")
    os.makedirs(work_dir, exist_ok=True)
    out_dir = os.path.join(work_dir, "out")
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = write_slice_batch(batch, work_dir, handle.num_classes)
    manifest = read_manifest(manifest_path)
    cmd = shlex.split(handle.command) + ["--input", manifest_path, "--output", out_dir]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout_s)
    except subprocess.TimeoutExpired as exc:
        raise ProtocolError(f"plugin timed out after {timeout_s}s: {handle.command}") from exc
    except OSError as exc:
        raise ProtocolError(f"could not launch plugin {handle.command!r}: {exc}") from exc
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-10:]
        raise ProtocolError(
            f"plugin exited with code {proc.returncode}: " + " | ".join(tail))
    stacked = validate_plugin_outputs(manifest, out_dir)
    d = batch.grid.pixels_per_side
    return stacked.reshape(d, d, d, handle.num_classes)


# ---------------------------------------------------------------------------
# standalone oracle plugin (exercises the external protocol path)


def _serve_oracle(args) -> int:
    reference = read_volume(args.reference)
    if not isinstance(reference, LabelVolume):
        print(f"reference {args.reference} is not a label volume", file=sys.stderr)
        return 2
    pairs = SymmetryPairs.parse(args.swap_pairs).pairs if args.swap_pairs else ()
    cfg = CorruptionConfig(
        swap_fraction=args.swap_fraction, swap_pairs=pairs, band_vox=args.band,
        dilate_vox=args.dilate, floater_count=args.floaters,
        floater_radius_vox=args.floater_radius, seed=args.seed)
    reference = corrupt_labels(reference, cfg)

    manifest = read_manifest(args.input)
    os.makedirs(args.output, exist_ok=True)
    k = manifest.num_classes
    eye = np.eye(k, dtype=np.float32)
    for e in manifest.entries:
        if e.origin_mm is None:
            print(f"entry {e.id} lacks slice geometry; oracle cannot place it",
                  file=sys.stderr)
            return 3
        rows = np.arange(e.height)[:, None, None]
        cols = np.arange(e.width)[None, :, None]
        points = (np.asarray(e.origin_mm) + rows * np.asarray(e.step_row_mm)
                  + cols * np.asarray(e.step_col_mm))
        idx = reference.geometry.physical_to_index(points.reshape(-1, 3))
        labels = nearest_field(reference.labels, idx, fill=0).astype(np.intp)
        probs = eye[labels].reshape(e.height, e.width, k)
        with open(os.path.join(args.output, f"probs_{e.id}.bin"), "wb") as fh:
            fh.write(probs.astype("<f4").tobytes(order="C"))
    with open(os.path.join(args.output, DONE_MARKER), "w") as fh:
        fh.write("")
    return 0


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="python -m mpseg.segmenter",
        description="Oracle slice segmenter speaking the plugin protocol.")
    parser.add_argument("--input", required=True, help="manifest path")
    parser.add_argument("--output", required=True, help="output directory")
    parser.add_argument("--reference", required=True, help="reference label volume header")
    parser.add_argument("--swap-fraction", type=float, default=0.0, dest="swap_fraction")
    parser.add_argument("--swap-pairs", default="", dest="swap_pairs",
                        help="a:b[,c:d...] pairs for boundary swaps")
    parser.add_argument("--band", type=int, default=1)
    parser.add_argument("--dilate", type=int, default=0)
    parser.add_argument("--floaters", type=int, default=0)
    parser.add_argument("--floater-radius", type=float, default=2.0, dest="floater_radius")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        return _serve_oracle(args)
    except (DataError, ProtocolError) as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
