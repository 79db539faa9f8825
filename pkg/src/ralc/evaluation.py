"""Map-quality metrics and per-run summary containers.

Generated maps are scored against a reference map produced by a
noise-free run of the same explorer. Both maps live in the dock frame,
so alignment is an integer cell shift followed by a crop to the common
extent; scoring never registers maps against each other.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from .sim import FREE, OCCUPIED, UNKNOWN, OccupancyMap

# Classes entering the mean scores. Unknown cells delimit the scoring
# domain instead of being scored as a class of their own.
SCORED_CLASSES: Tuple[int, ...] = (OCCUPIED, FREE)

_CLASS_NAMES = {OCCUPIED: "occupied", FREE: "free", UNKNOWN: "unknown"}


@dataclass(frozen=True)
class AlignedMapPair:
    """Two same-shape grids on a shared lattice, ready for scoring."""

    test: np.ndarray
    reference: np.ndarray
    resolution: float

    def __post_init__(self):
        if self.test.shape != self.reference.shape:
            raise ValueError("aligned grids must share a shape")
        if self.test.ndim != 2 or self.test.size == 0:
            raise ValueError("aligned grids must be non-empty 2-d arrays")

    @property
    def domain(self) -> np.ndarray:
        """Cells where the reference committed to a label."""
        return self.reference != UNKNOWN


def _cell_offset(value: float, resolution: float) -> int:
    cells = value / resolution
    snapped = round(cells)
    if abs(cells - snapped) > 1e-6:
        raise ValueError(f"origin offset {value} is not a whole cell")
    return int(snapped)


def align(test: OccupancyMap, reference: OccupancyMap) -> AlignedMapPair:
    """Shift by the metadata origin delta and crop to the overlap."""
    if abs(test.resolution - reference.resolution) > 1e-12:
        raise ValueError("maps disagree in resolution")
    res = reference.resolution
    # Global cell index of each map's lower-left corner.
    tc = _cell_offset(test.origin[0], res), _cell_offset(test.origin[1], res)
    rc = _cell_offset(reference.origin[0], res), _cell_offset(reference.origin[1], res)
    th, tw = test.grid.shape
    rh, rw = reference.grid.shape
    col0 = max(tc[0], rc[0])
    row0 = max(tc[1], rc[1])
    col1 = min(tc[0] + tw, rc[0] + rw)
    row1 = min(tc[1] + th, rc[1] + rh)
    if col1 <= col0 or row1 <= row0:
        raise ValueError("map extents do not overlap")
    t = test.grid[row0 - tc[1]:row1 - tc[1], col0 - tc[0]:col1 - tc[0]]
    r = reference.grid[row0 - rc[1]:row1 - rc[1], col0 - rc[0]:col1 - rc[0]]
    return AlignedMapPair(t.copy(), r.copy(), res)


def iou(pair: AlignedMapPair, cls: int) -> float:
    """Intersection over union of one class, over the labelled domain."""
    domain = pair.domain
    t = (pair.test == cls) & domain
    r = (pair.reference == cls) & domain
    union = int((t | r).sum())
    if union == 0:
        return 1.0
    return float((t & r).sum() / union)


def mean_iou(pair: AlignedMapPair) -> float:
    return float(np.mean([iou(pair, cls) for cls in SCORED_CLASSES]))


def distance_transform(grid: np.ndarray, cls: int,
                       resolution: float) -> np.ndarray:
    """Exact per-cell Euclidean distance to the nearest cell of cls, meters."""
    mask = grid == cls
    if not mask.any():
        return np.full(grid.shape, np.inf)
    return ndimage.distance_transform_edt(~mask, sampling=resolution)


def dte(pair: AlignedMapPair, cls: int) -> float:
    """Mean absolute distance-transform difference over the domain."""
    if not (pair.test == cls).any() or not (pair.reference == cls).any():
        raise ValueError(
            f"undefined transform: class {_CLASS_NAMES.get(cls, cls)} "
            "absent from one map")
    tt = distance_transform(pair.test, cls, pair.resolution)
    tr = distance_transform(pair.reference, cls, pair.resolution)
    domain = pair.domain
    return float(np.abs(tt - tr)[domain].mean())


def mean_dte(pair: AlignedMapPair) -> float:
    return float(np.mean([dte(pair, cls) for cls in SCORED_CLASSES]))


def map_scores(test: OccupancyMap, reference: OccupancyMap) -> Dict[str, object]:
    """All map-quality numbers for one run, as plain JSON-ready values."""
    pair = align(test, reference)
    per_iou = {_CLASS_NAMES[c]: iou(pair, c) for c in SCORED_CLASSES}
    per_dte = {_CLASS_NAMES[c]: dte(pair, c) for c in SCORED_CLASSES}
    return {
        "miou": mean_iou(pair),
        "iou_per_class": per_iou,
        "iou_unknown": iou(pair, UNKNOWN),
        "mdte": mean_dte(pair),
        "dte_per_class": per_dte,
    }


@dataclass
class RunMetrics:
    """Per-run bookkeeping the runner accumulates as it goes."""

    exploration_duration: float = 0.0
    keyframe_count: int = 0
    submap_count: int = 0
    pgo_count: int = 0
    pgo_wall_times: List[float] = field(default_factory=list)
    loop_closure_count: int = 0
    marginalization_reports: List[dict] = field(default_factory=list)

    @property
    def mean_pgo_ms(self) -> float:
        if not self.pgo_wall_times:
            return 0.0
        return float(np.mean(self.pgo_wall_times) * 1000.0)

    def summary(self) -> Dict[str, object]:
        """Deterministic portion of the run record (no wall-clock values)."""
        return {
            "duration_s": self.exploration_duration,
            "keyframes": self.keyframe_count,
            "submaps": self.submap_count,
            "pgo_count": self.pgo_count,
            "loop_closures": self.loop_closure_count,
            "marginalizations": self.marginalization_reports,
        }
