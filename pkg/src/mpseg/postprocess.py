"""Connected-component cleanup for symmetric class pairs plus floater removal.

Multiplanar models see symmetric structures from many orientations and
occasionally swap left/right labels near the boundaries.  Stage 1 keeps
each paired class's largest component and hands every other component to
its symmetric partner; stage 2 keeps only the largest component per
foreground class, sending the rest to background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from mpseg.errors import DataError
from mpseg.volume import LabelVolume

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True)
class SymmetryPairs:
    """Unordered foreground class pairs that mirror each other anatomically."""

    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        pairs = tuple((int(a), int(b)) for a, b in self.pairs)
        seen = set()
        for a, b in pairs:
            if a == b or a == 0 or b == 0:
                raise DataError(f"invalid symmetry pair ({a}, {b}): needs two distinct foreground classes")
            for c in (a, b):
                if c in seen:
                    raise DataError(f"class {c} appears in more than one symmetry pair")
                seen.add(c)
        object.__setattr__(self, "pairs", pairs)

    def validate_for(self, num_classes: int) -> None:
        for a, b in self.pairs:
            if a >= num_classes or b >= num_classes:
                raise DataError(f"symmetry pair ({a}, {b}) exceeds num_classes={num_classes}")

    @classmethod
    def parse(cls, text: str) -> "SymmetryPairs":
        """Parse 'a:b[,c:d...]' as used on the command line."""
        pairs = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            a, sep, b = chunk.partition(":")
            if not sep:
                raise DataError(f"malformed pair {chunk!r}, expected a:b")
            pairs.append((int(a), int(b)))
        return cls(tuple(pairs))


@dataclass
class ComponentStats:
    """Audit trail of what the symmetric filter did.

    stage1_components / stage2_components map class ids to the (id, size)
    lists seen before each stage consumed them; relabeled holds
    (component id, from class, to class) and removed
    (component id, class, size).
    """

    stage1_components: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    stage2_components: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    relabeled: list[tuple[int, int, int]] = field(default_factory=list)
    removed: list[tuple[int, int, int]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        for cls_id in sorted(self.stage1_components):
            for comp_id, size in self.stage1_components[cls_id]:
                lines.append(f"stage1_component = {cls_id} {comp_id} {size}")
        for cls_id in sorted(self.stage2_components):
            for comp_id, size in self.stage2_components[cls_id]:
                lines.append(f"stage2_component = {cls_id} {comp_id} {size}")
        for comp_id, src, dst in self.relabeled:
            lines.append(f"relabeled = {comp_id} {src} {dst}")
        for comp_id, cls_id, size in self.removed:
            lines.append(f"removed = {comp_id} {cls_id} {size}")
        return "\n".join(lines) + ("\n" if lines else "")


def connected_components(mask: np.ndarray, connectivity: int = 26) -> tuple[np.ndarray, list[int]]:
    """Label maximal connected regions of a boolean grid.

    Component ids run 1..n ordered by descending voxel count, ties broken
    by the smallest linear voxel index (first index fastest).  Returns the
    id grid and the per-id sizes.
    """
    if connectivity not in _STRUCTURES:
        raise DataError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    raw, n = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    if n == 0:
        return np.zeros(mask.shape, dtype=np.int32), []
    flat = raw.ravel(order="F")
    sizes = np.bincount(flat, minlength=n + 1)[1:]
    first_seen = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    # first occurrence in F-order scan = smallest linear index per raw id
    np.minimum.at(first_seen, flat[nz], nz)
    order = sorted(range(1, n + 1), key=lambda i: (-sizes[i - 1], first_seen[i]))
    remap = np.zeros(n + 1, dtype=np.int32)
    for new_id, raw_id in enumerate(order, start=1):
        remap[raw_id] = new_id
    return remap[raw], [int(sizes[raw_id - 1]) for raw_id in order]


def symmetric_cc_filter(y: LabelVolume, pairs: SymmetryPairs,
                        connectivity: int = 26) -> tuple[LabelVolume, ComponentStats]:
    """Fix symmetric-class confusions, then drop per-class floaters.

    Stage 1 works from components of the INPUT labels for both classes of
    a pair: the largest component keeps its class, every other component
    is relabeled to the partner class.  Stage 2 recomputes components per
    foreground class on the stage-1 result and clears all but the largest
    to background.  Unpaired classes only see stage 2.
    """
    pairs.validate_for(y.num_classes)
    stats = ComponentStats()
    out = y.labels.astype(np.int32)

    for a, b in pairs.pairs:
        for src, dst in ((a, b), (b, a)):
            comp, sizes = connected_components(y.labels == src, connectivity)
            stats.stage1_components[src] = [(i + 1, s) for i, s in enumerate(sizes)]
            if len(sizes) <= 1:
                continue
            move = comp > 1
            out[move] = dst
            for comp_id in range(2, len(sizes) + 1):
                stats.relabeled.append((comp_id, src, dst))

    for c in range(1, y.num_classes):
        mask = out == c
        if not mask.any():
            continue
        comp, sizes = connected_components(mask, connectivity)
        stats.stage2_components[c] = [(i + 1, s) for i, s in enumerate(sizes)]
        if len(sizes) <= 1:
            continue
        out[comp > 1] = 0
        for comp_id in range(2, len(sizes) + 1):
            stats.removed.append((comp_id, c, sizes[comp_id - 1]))

    return LabelVolume(y.geometry, out, num_classes=y.num_classes), stats
