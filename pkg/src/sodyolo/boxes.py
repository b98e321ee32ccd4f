"""Axis-aligned box records shared by the detector, suppression, and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, replace

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class Detection:
    """A scored, class-labeled box in image pixel coordinates (x1, y1, x2, y2)."""
    box: Box
    class_id: int
    score: float

    def with_score(self, score: float) -> "Detection":
        return replace(self, score=score)


@dataclass(frozen=True)
class GroundTruth:
    """An annotated box; `ignore` marks regions that absorb detections unpenalized."""
    box: Box
    class_id: int
    ignore: bool = False


def box_area(box: Box) -> float:
    return (box[2] - box[0]) * (box[3] - box[1])


def clip_box(box: Box, width: float, height: float) -> Box:
    x1, y1, x2, y2 = box
    return (min(max(x1, 0.0), width), min(max(y1, 0.0), height),
            min(max(x2, 0.0), width), min(max(y2, 0.0), height))
