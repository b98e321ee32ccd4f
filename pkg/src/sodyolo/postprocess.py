"""Greedy suppression of overlapping detections: hard NMS and linear Soft-NMS.

Hard NMS zeroes the score of any same-class box whose overlap with the
current best box reaches the threshold; Soft-NMS decays it by (1 - IoU)
instead. Both are per class unless configured class-agnostic, and both are
deterministic: equal scores break ties by lower original index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .boxes import Box, Detection
from .errors import InvalidArgumentError

MODE_HARD = "hard"
MODE_SOFT_LINEAR = "soft-linear"


@dataclass
class SuppressionConfig:
    nt: float = 0.5
    score_floor: float = 0.001
    mode: str = MODE_SOFT_LINEAR
    class_agnostic: bool = False

    def __post_init__(self):
        if not 0.0 < self.nt < 1.0:
            raise InvalidArgumentError(f"suppression: nt must be in (0,1), got {self.nt}")
        if not 0.0 <= self.score_floor < 1.0:
            raise InvalidArgumentError(
                f"suppression: score_floor must be in [0,1), got {self.score_floor}")


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two (x1, y1, x2, y2) boxes."""
    for box in (a, b):
        if box[2] <= box[0] or box[3] <= box[1]:
            raise InvalidArgumentError(f"iou: degenerate box {box}")
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _same_class(a: Detection, b: Detection, cfg: SuppressionConfig) -> bool:
    return cfg.class_agnostic or a.class_id == b.class_id


def _ranked(scores: dict[int, float]) -> list[int]:
    return sorted(scores, key=lambda i: (-scores[i], i))


def hard_nms(dets: Sequence[Detection], cfg: SuppressionConfig) -> list[Detection]:
    """Classic NMS: overlapping same-class boxes get their scores reset to zero."""
    scores = {i: d.score for i, d in enumerate(dets)}
    remaining = set(scores)
    while remaining:
        best = min(remaining, key=lambda i: (-scores[i], i))
        remaining.discard(best)
        for i in sorted(remaining):
            if _same_class(dets[best], dets[i], cfg) and \
                    iou(dets[best].box, dets[i].box) >= cfg.nt:
                scores[i] = 0.0
                remaining.discard(i)
    kept = [i for i in _ranked(scores) if scores[i] > cfg.score_floor]
    return [dets[i].with_score(scores[i]) for i in kept]


def soft_nms(dets: Sequence[Detection], cfg: SuppressionConfig) -> list[Detection]:
    """Linear Soft-NMS: overlapping same-class boxes decay by (1 - IoU)."""
    scores = {i: d.score for i, d in enumerate(dets)}
    unprocessed = set(scores)
    while unprocessed:
        best = min(unprocessed, key=lambda i: (-scores[i], i))
        unprocessed.discard(best)
        for i in sorted(unprocessed):
            if _same_class(dets[best], dets[i], cfg):
                overlap = iou(dets[best].box, dets[i].box)
                if overlap >= cfg.nt:
                    scores[i] *= (1.0 - overlap)
    kept = [i for i in _ranked(scores) if scores[i] > cfg.score_floor]
    return [dets[i].with_score(scores[i]) for i in kept]


def suppress(dets: Sequence[Detection], cfg: SuppressionConfig) -> list[Detection]:
    if cfg.mode == MODE_HARD:
        return hard_nms(dets, cfg)
    if cfg.mode == MODE_SOFT_LINEAR:
        return soft_nms(dets, cfg)
    raise InvalidArgumentError(f"suppression: unknown mode {cfg.mode!r}")
