"""Segmentation quality metrics: Dice, gap-restricted Dice, Hausdorff,
and a bundled report with a stable text serialization.

All distances are in voxel-index units.  Empty-set conventions keep every
metric total: Dice of two empty sets is 1, one-sided Hausdorff against an
empty set is +inf, both-empty Hausdorff is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpseg.distance import detect_collisions, gap_region, squared_edt
from mpseg.errors import DataError
from mpseg.volume import LabelVolume


def _check_compatible(p: LabelVolume, y: LabelVolume, what: str) -> None:
    if p.geometry != y.geometry:
        raise DataError(f"{what}: geometry mismatch")
    if p.num_classes != y.num_classes:
        raise DataError(f"{what}: class count mismatch ({p.num_classes} vs {y.num_classes})")


def _dice_from_masks(pm: np.ndarray, ym: np.ndarray) -> float:
    np_, ny = int(pm.sum()), int(ym.sum())
    if np_ + ny == 0:
        return 1.0
    inter = int((pm & ym).sum())
    return 2.0 * inter / (np_ + ny)


def dice(p: LabelVolume, y: LabelVolume) -> tuple[dict[int, float], float]:
    """Per-foreground-class Dice overlap and the macro average.

    The macro average runs over classes present in the ground truth; it
    is nan when the ground truth has no foreground at all.
    """
    _check_compatible(p, y, "dice")
    per_class = {}
    macro_terms = []
    for c in range(1, y.num_classes):
        pm, ym = p.labels == c, y.labels == c
        val = _dice_from_masks(pm, ym)
        per_class[c] = val
        if ym.any():
            macro_terms.append(val)
    macro = float(np.mean(macro_terms)) if macro_terms else float("nan")
    return per_class, macro


def gap_dice(p: LabelVolume, y: LabelVolume, epsilon: float = 10.0
             ) -> tuple[dict[int, float], float, float, bool]:
    """Dice restricted to the inter-class gap region of the ground truth.

    The gap region G collects voxels where the two smallest ground-truth
    class distances sum below epsilon.  Returns per-class values, the
    macro average over classes with ground-truth presence inside G, a
    pooled binary variant (all foreground as one set), and a flag that is
    True when G is empty.
    """
    _check_compatible(p, y, "gap_dice")
    g = gap_region(y, epsilon)
    empty = not g.any()
    per_class = {}
    macro_terms = []
    for c in range(1, y.num_classes):
        pm = (p.labels == c) & g
        ym = (y.labels == c) & g
        val = _dice_from_masks(pm, ym)
        per_class[c] = val
        if ym.any():
            macro_terms.append(val)
    macro = float(np.mean(macro_terms)) if macro_terms else float("nan")
    binary = _dice_from_masks((p.labels > 0) & g, (y.labels > 0) & g)
    return per_class, macro, binary, empty


def _hausdorff_masks(pm: np.ndarray, ym: np.ndarray) -> float:
    p_any, y_any = bool(pm.any()), bool(ym.any())
    if not p_any and not y_any:
        return 0.0
    if not p_any or not y_any:
        return float("inf")
    d_to_y = squared_edt(ym)
    d_to_p = squared_edt(pm)
    return float(np.sqrt(max(d_to_y[pm].max(), d_to_p[ym].max())))


def hausdorff(p: LabelVolume, y: LabelVolume) -> tuple[dict[int, float], float]:
    """Exact symmetric Hausdorff distance per class, in voxels.

    Computed from two distance transforms per class: the largest distance
    from either voxel set to the nearest point of the other.  Returns per
    class values and their maximum.
    """
    if p.geometry != y.geometry:
        raise DataError("hausdorff: geometry mismatch")
    per_class = {}
    for c in range(1, max(p.num_classes, y.num_classes)):
        per_class[c] = _hausdorff_masks(p.labels == c, y.labels == c)
    hd_max = max(per_class.values()) if per_class else 0.0
    return per_class, hd_max


def _fmt(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf"
    return repr(float(x))


def _eps_key(eps: float) -> str:
    return str(int(eps)) if float(eps).is_integer() else repr(float(eps))


@dataclass
class MetricsReport:
    """All evaluation results for one prediction/ground-truth pair."""

    num_classes: int
    dice_per_class: dict[int, float]
    dice_macro: float
    gap_epsilon: float
    gapdice_per_class: dict[int, float]
    gapdice_macro: float
    gapdice_binary: float
    no_gap_region: bool
    hd_per_class: dict[int, float]
    hd_max: float
    collision_epsilon: float
    collision_count: int
    pred_id: str = ""
    truth_id: str = ""

    def to_text(self) -> str:
        ge, ce = _eps_key(self.gap_epsilon), _eps_key(self.collision_epsilon)
        lines = [
            f"pred_id = {self.pred_id}",
            f"truth_id = {self.truth_id}",
            f"num_classes = {self.num_classes}",
        ]
        for c in sorted(self.dice_per_class):
            lines.append(f"dice.c{c} = {_fmt(self.dice_per_class[c])}")
        lines.append(f"dice.macro = {_fmt(self.dice_macro)}")
        for c in sorted(self.gapdice_per_class):
            lines.append(f"gapdice.c{c}.eps{ge} = {_fmt(self.gapdice_per_class[c])}")
        lines.append(f"gapdice.macro.eps{ge} = {_fmt(self.gapdice_macro)}")
        lines.append(f"gapdice.binary.eps{ge} = {_fmt(self.gapdice_binary)}")
        lines.append(f"gapdice.no_gap_region = {'true' if self.no_gap_region else 'false'}")
        for c in sorted(self.hd_per_class):
            lines.append(f"hd.c{c}_vox = {_fmt(self.hd_per_class[c])}")
        lines.append(f"hd.max_vox = {_fmt(self.hd_max)}")
        lines.append(f"collisions.count.eps{ce} = {self.collision_count}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        fields_raw: dict[str, str] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields_raw[key.strip()] = value.strip()

        def classes_of(prefix: str, suffix: str = "") -> dict[int, float]:
            out = {}
            for key, value in fields_raw.items():
                if key.startswith(prefix + ".c") and key.endswith(suffix):
                    middle = key[len(prefix) + 2:len(key) - len(suffix) if suffix else None]
                    middle = middle.split(".")[0].removesuffix("_vox")
                    out[int(middle)] = float(value)
            return out

        gap_eps = coll_eps = None
        for key in fields_raw:
            if key.startswith("gapdice.macro.eps"):
                gap_eps = float(key.removeprefix("gapdice.macro.eps"))
            if key.startswith("collisions.count.eps"):
                coll_eps = float(key.removeprefix("collisions.count.eps"))
        if gap_eps is None or coll_eps is None:
            raise DataError("metrics report is missing gapdice/collision keys")
        return cls(
            num_classes=int(fields_raw["num_classes"]),
            dice_per_class=classes_of("dice"),
            dice_macro=float(fields_raw["dice.macro"]),
            gap_epsilon=gap_eps,
            gapdice_per_class=classes_of("gapdice"),
            gapdice_macro=float(fields_raw[f"gapdice.macro.eps{_eps_key(gap_eps)}"]),
            gapdice_binary=float(fields_raw[f"gapdice.binary.eps{_eps_key(gap_eps)}"]),
            no_gap_region=fields_raw["gapdice.no_gap_region"] == "true",
            hd_per_class=classes_of("hd"),
            hd_max=float(fields_raw["hd.max_vox"]),
            collision_epsilon=coll_eps,
            collision_count=int(fields_raw[f"collisions.count.eps{_eps_key(coll_eps)}"]),
            pred_id=fields_raw.get("pred_id", ""),
            truth_id=fields_raw.get("truth_id", ""),
        )


def evaluate(p: LabelVolume, y: LabelVolume, gap_epsilon: float = 10.0,
             collision_epsilon: float = 2.0, pred_id: str = "",
             truth_id: str = "") -> MetricsReport:
    """Bundle Dice, GapDice, Hausdorff and the collision count into one report.

    Collisions are detected on the prediction alone; everything else
    compares prediction against ground truth.
    """
    _check_compatible(p, y, "evaluate")
    d_per, d_macro = dice(p, y)
    g_per, g_macro, g_bin, g_empty = gap_dice(p, y, gap_epsilon)
    h_per, h_max = hausdorff(p, y)
    collisions = detect_collisions(p, collision_epsilon, max_points=0)
    return MetricsReport(
        num_classes=y.num_classes,
        dice_per_class=d_per, dice_macro=d_macro,
        gap_epsilon=float(gap_epsilon),
        gapdice_per_class=g_per, gapdice_macro=g_macro,
        gapdice_binary=g_bin, no_gap_region=g_empty,
        hd_per_class=h_per, hd_max=h_max,
        collision_epsilon=float(collision_epsilon),
        collision_count=collisions.count,
        pred_id=pred_id, truth_id=truth_id,
    )
