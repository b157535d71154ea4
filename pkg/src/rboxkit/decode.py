"""Anchor decoding from predicted maps, polygon NMS and anchor statistics.

Prediction maps mirror the target-map grids: a probability per cell plus
normalized orientation and the two log-size shape offsets. Decoding turns
every sufficiently confident cell into one rotated-box proposal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import RotatedBox, unit_to_angle
from .polyiou import iou
from .targets import (
    LOC_POSITIVE,
    LevelSpec,
    TargetMaps,
    _HEADER,
    cell_center,
    read_map_header,
    shape_decode,
)

PREDICTION_MAGIC = b"PMAP"


@dataclass(frozen=True)
class Proposal:
    """A decoded box with its confidence score."""

    box: RotatedBox
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score must be finite, got {self.score!r}")


@dataclass(frozen=True)
class DecodeParams:
    """Decoding knobs: activation threshold, optional cap, NMS overlap."""

    t_a: float = 0.05
    top_n: int | None = None
    nms_iou: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.t_a <= 1.0:
            raise ValueError(f"t_a must lie in [0, 1], got {self.t_a}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ValueError(f"nms_iou must lie in (0, 1), got {self.nms_iou}")
        if self.top_n is not None and self.top_n <= 0:
            raise ValueError(f"top_n must be positive, got {self.top_n}")


@dataclass
class PredictionMaps:
    """Per-level predicted grids, all shaped (grid_h, grid_w)."""

    level: LevelSpec
    location_prob: np.ndarray = field(repr=False)
    orientation: np.ndarray = field(repr=False)
    shape_dw: np.ndarray = field(repr=False)
    shape_dh: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = (self.level.grid_h, self.level.grid_w)
        for name in ("location_prob", "orientation", "shape_dw", "shape_dh"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} grid shape {arr.shape} != level grid {shape}")
        for name in ("location_prob", "orientation"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def ideal_predictions(target: TargetMaps) -> PredictionMaps:
    """Prediction maps that reproduce a target map exactly.

    Positive cells get probability 1, everything else 0 (so ignore cells
    stay inactive); undefined orientations default to the mid value.
    """
    prob = (target.location == LOC_POSITIVE).astype(np.float32)
    orientation = np.where(np.isfinite(target.orientation), target.orientation, 0.5)
    return PredictionMaps(
        level=target.level,
        location_prob=prob,
        orientation=orientation.astype(np.float32),
        shape_dw=target.shape_dw.astype(np.float32),
        shape_dh=target.shape_dh.astype(np.float32),
    )


def decode_anchors(maps: PredictionMaps, params: DecodeParams = DecodeParams()) -> list[Proposal]:
    """One proposal per cell whose probability strictly exceeds t_a.

    The box center is the cell center, the angle comes from the orientation
    map, the sides from the shape map. Output is sorted by score descending
    with ties in (i, j) cell order, then truncated to top_n when set.
    """
    lv = maps.level
    active = maps.location_prob > params.t_a
    proposals = []
    # transpose so ties come out ordered by i, then j
    for i, j in np.argwhere(active.T):
        p = cell_center(int(i), int(j), lv)
        w, h = shape_decode(float(maps.shape_dw[j, i]), float(maps.shape_dh[j, i]), lv)
        theta = unit_to_angle(float(maps.orientation[j, i]))
        box = RotatedBox.make(p.x, p.y, w, h, theta)
        proposals.append(Proposal(box=box, score=float(maps.location_prob[j, i])))
    proposals.sort(key=lambda pr: -pr.score)
    if params.top_n is not None:
        proposals = proposals[: params.top_n]
    return proposals


def polygon_nms(proposals: list[Proposal], iou_threshold: float = 0.3) -> list[Proposal]:
    """Greedy non-maximum suppression with rotated-polygon overlap.

    Repeatedly keeps the best-scoring remaining proposal and drops the rest
    whose IoU against it strictly exceeds the threshold. Ties keep input
    order. The result is a subset of the input in score-descending order.
    """
    order = sorted(range(len(proposals)), key=lambda k: -proposals[k].score)
    kept: list[int] = []
    alive = [True] * len(proposals)
    for idx in order:
        if not alive[idx]:
            continue
        kept.append(idx)
        alive[idx] = False
        for jdx in order:
            if alive[jdx] and iou(proposals[idx].box, proposals[jdx].box) > iou_threshold:
                alive[jdx] = False
    return [proposals[k] for k in kept]


@dataclass(frozen=True)
class AnchorStats:
    """Active-anchor summary: count, fraction of cells, shape histograms."""

    count: int
    cells_total: int
    fraction: float
    aspect_log2_hist: tuple
    angle_hist: tuple


def anchor_statistics(
    proposals: list[Proposal],
    cells_total: int,
    aspect_bins: int = 16,
    angle_bins: int = 18,
) -> AnchorStats:
    """Histogram the decoded anchors' log2 aspect ratios and angles."""
    aspect_edges = np.linspace(0.0, 4.0, aspect_bins + 1)
    angle_edges = np.linspace(-math.pi / 2, math.pi / 2, angle_bins + 1)
    if proposals:
        ratios = np.array([math.log2(p.box.w / p.box.h) for p in proposals])
        angles = np.array([p.box.theta for p in proposals])
        a_counts, _ = np.histogram(ratios, bins=aspect_edges)
        t_counts, _ = np.histogram(angles, bins=angle_edges)
    else:
        a_counts = np.zeros(aspect_bins, dtype=np.int64)
        t_counts = np.zeros(angle_bins, dtype=np.int64)
    fraction = len(proposals) / cells_total if cells_total > 0 else 0.0
    return AnchorStats(
        count=len(proposals),
        cells_total=cells_total,
        fraction=fraction,
        aspect_log2_hist=(a_counts, aspect_edges),
        angle_hist=(t_counts, angle_edges),
    )


def save_prediction_maps(maps: PredictionMaps, path) -> None:
    """Same layout as target maps with float32 probabilities as the first grid."""
    lv = maps.level
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PREDICTION_MAGIC, lv.stride, lv.grid_w, lv.grid_h, lv.k))
        for arr in (maps.location_prob, maps.orientation, maps.shape_dw, maps.shape_dh):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_prediction_maps(path) -> PredictionMaps:
    """Read a file written by :func:`save_prediction_maps`."""
    with open(path, "rb") as fh:
        data = fh.read()
    level = read_map_header(data, PREDICTION_MAGIC)
    n = level.grid_w * level.grid_h
    need = _HEADER.size + 4 * n * 4
    if len(data) != need:
        raise ValueError(f"map file has {len(data)} bytes, expected {need}")
    shape = (level.grid_h, level.grid_w)
    grids = []
    off = _HEADER.size
    for _ in range(4):
        grids.append(np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(shape).copy())
        off += 4 * n
    return PredictionMaps(
        level=level,
        location_prob=grids[0],
        orientation=grids[1],
        shape_dw=grids[2],
        shape_dh=grids[3],
    )
