"""Three-way split of a phase-difference stream around the linear band."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PHI_MIN = 0.2
DEFAULT_PHI_MAX = 1.2


@dataclass(frozen=True)
class SegmentationThresholds:
    phi_min: float = DEFAULT_PHI_MIN
    phi_max: float = DEFAULT_PHI_MAX

    def __post_init__(self):
        if not self.phi_min < self.phi_max:
            raise ValueError("phi_min must be < phi_max")

    def inside(self, x):
        x = np.asarray(x, dtype=float)
        return (x >= self.phi_min) & (x <= self.phi_max)


@dataclass(frozen=True)
class SegmentationVector:
    """Percentages of samples (in band, below band, above band)."""

    v1: float
    v2: float
    v3: float

    def __post_init__(self):
        if min(self.v1, self.v2, self.v3) < 0:
            raise ValueError("segmentation percentages must be >= 0")
        if abs(self.v1 + self.v2 + self.v3 - 100.0) > 1e-6:
            raise ValueError("segmentation percentages must sum to 100")

    def as_array(self) -> np.ndarray:
        return np.array([self.v1, self.v2, self.v3])

    @classmethod
    def from_counts(cls, inside: int, below: int, above: int) -> "SegmentationVector":
        n = inside + below + above
        return cls(100.0 * inside / n, 100.0 * below / n, 100.0 * above / n)


def segment_counts(x, thresholds: SegmentationThresholds) -> tuple[int, int, int]:
    x = np.asarray(x, dtype=float).ravel()
    below = int(np.count_nonzero(x < thresholds.phi_min))
    above = int(np.count_nonzero(x > thresholds.phi_max))
    return x.size - below - above, below, above


def segment(x, thresholds: SegmentationThresholds | None = None) -> SegmentationVector:
    """Percentages of ``x`` inside ``[phi_min, phi_max]``, strictly below, strictly above.

    Boundary samples count as inside so the three parts partition the stream.
    """
    thresholds = thresholds or SegmentationThresholds()
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("cannot segment an empty stream")
    if np.isnan(x).any():
        raise ValueError("cannot segment NaN phase differences")
    return SegmentationVector.from_counts(*segment_counts(x, thresholds))
