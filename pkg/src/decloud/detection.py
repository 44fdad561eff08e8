"""Occlusion mask estimation from a cloudy sequence.

Clouds are predominantly white, so a pixel whose darkest channel is bright is
treated as occluded.  Thresholding alone cannot tell a stationary white
object (a rooftop, say) from a cloud, so pixels that never pass the threshold
are post-processed: the per-channel median over time is taken as the
background color and the K frames closest to it are marked observed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor_ops import ImageSequence, ObservationMask

__all__ = [
    "DetectorConfig",
    "DetectionReport",
    "dark_channel",
    "threshold_mask",
    "find_always_white",
    "median_pixel",
    "knn_recover",
    "detect_clouds",
    "default_k",
]


@dataclass(frozen=True)
class DetectorConfig:
    """Threshold gamma in (0, 1) and neighbor count K for the rescue stage.

    ``k_neighbors=None`` picks max(1, ceil(t / 10)) once the sequence length
    is known.
    """

    gamma: float = 0.6
    k_neighbors: int | None = None

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.k_neighbors is not None and self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be >= 1, got {self.k_neighbors}")


@dataclass(frozen=True)
class DetectionReport:
    mask: ObservationMask
    always_white: tuple[tuple[int, int], ...]
    rescued: int


def default_k(times: int) -> int:
    return max(1, math.ceil(0.1 * times))


def dark_channel(seq: ImageSequence) -> np.ndarray:
    """Per-pixel minimum over channels; shape (rows, cols, time)."""
    return seq.data.min(axis=2)


def threshold_mask(seq: ImageSequence, gamma: float) -> ObservationMask:
    """Mark (i, j, l) observed iff its dark channel is below gamma."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return ObservationMask(dark_channel(seq) < gamma)


def find_always_white(mask: ObservationMask) -> set[tuple[int, int]]:
    """Pixels that are excluded at every time step."""
    never = ~mask.observed.any(axis=2)
    return {(int(i), int(j)) for i, j in zip(*np.nonzero(never))}


def median_pixel(seq: ImageSequence, i: int, j: int) -> np.ndarray:
    """Componentwise median over time of the channel vectors at (i, j).

    Even-length series use the lower midpoint (index (t-1)//2 of the sorted
    values) so every component is a value that actually occurs.
    """
    series = seq.data[i, j]  # (channels, time)
    t = series.shape[1]
    return np.sort(series, axis=1)[:, (t - 1) // 2].copy()


def knn_recover(seq: ImageSequence, i: int, j: int, m: np.ndarray, k: int) -> np.ndarray:
    """Time indices of the k channel vectors closest (Euclidean) to m.

    Ties are broken toward the smaller time index; the result is sorted.
    """
    t = seq.times
    if not 1 <= k <= t:
        raise ValueError(f"k must lie in [1, {t}], got {k}")
    series = seq.data[i, j]  # (channels, time)
    dist = np.linalg.norm(series - np.asarray(m, dtype=np.float64)[:, None], axis=0)
    order = np.argsort(dist, kind="stable")[:k]
    return np.sort(order)


def detect_clouds(seq: ImageSequence, cfg: DetectorConfig | None = None) -> DetectionReport:
    """Threshold on the dark channel, then rescue always-white pixels.

    The rescue stage only ever adds entries to the mask.
    """
    cfg = cfg or DetectorConfig()
    base = threshold_mask(seq, cfg.gamma)
    k = cfg.k_neighbors if cfg.k_neighbors is not None else default_k(seq.times)
    if k > seq.times:
        raise ValueError(f"k_neighbors={k} exceeds sequence length {seq.times}")
    observed = base.observed.copy()
    white = sorted(find_always_white(base))
    rescued = 0
    for i, j in white:
        med = median_pixel(seq, i, j)
        idx = knn_recover(seq, i, j, med, k)
        rescued += int(np.count_nonzero(~observed[i, j, idx]))
        observed[i, j, idx] = True
    return DetectionReport(
        mask=ObservationMask(observed),
        always_white=tuple(white),
        rescued=rescued,
    )
