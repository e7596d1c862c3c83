"""Intensity clipping and robust standardization, applied once per scan.

Quartiles use linear interpolation between order statistics (numpy's
default "linear" rule, position (n-1)*p), computed over every voxel of
the clipped volume including zeros.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpseg.errors import DataError
from mpseg.volume import Volume


@dataclass(frozen=True)
class StandardizationStats:
    mean: float
    q25: float
    q75: float

    def to_text(self) -> str:
        return (f"mean = {self.mean!r}\n"
                f"q25 = {self.q25!r}\n"
                f"q75 = {self.q75!r}\n")

    @classmethod
    def from_text(cls, text: str) -> "StandardizationStats":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = float(value.strip())
        return cls(fields["mean"], fields["q25"], fields["q75"])


def clip_negatives(v: Volume) -> Volume:
    """Replace negative intensities with zero; geometry unchanged."""
    return Volume(v.geometry, np.maximum(v.data, 0.0))


def standardize(v: Volume, center: str = "mean") -> tuple[Volume, StandardizationStats]:
    """Center intensities and scale by the interquartile range.

    Each voxel maps to (x - center) / (q75 - q25) where q25/q75 are the
    1st and 3rd quartiles of the whole volume.  ``center`` selects the
    mean (default) or the median.  Raises DataError when the IQR is
    degenerate (constant volume).
    """
    data = v.data.astype(np.float64)
    q25, q75 = np.quantile(data, [0.25, 0.75], method="linear")
    scale = q75 - q25
    if scale < 1e-9:
        raise DataError(f"degenerate intensity scale: q75 - q25 = {scale}")
    if center == "mean":
        c = float(data.mean())
    elif center == "median":
        c = float(np.quantile(data, 0.5, method="linear"))
    else:
        raise DataError(f"unknown centering mode {center!r}")
    stats = StandardizationStats(mean=float(data.mean()), q25=float(q25), q75=float(q75))
    return Volume(v.geometry, (data - c) / scale), stats
