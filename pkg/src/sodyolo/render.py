"""Draw detections (and optionally ground truth) onto images."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw

from .boxes import Detection, GroundTruth

GT_COLOR = (255, 255, 255)


def class_color(class_id: int) -> tuple[int, int, int]:
    """Deterministic, well-separated color per class index."""
    return (37 * class_id + 80) % 256, (91 * class_id + 160) % 256, (53 * class_id + 40) % 256


def render_detections(image: np.ndarray, dets: Sequence[Detection],
                      gts: Sequence[GroundTruth] | None = None,
                      labels: bool = True) -> np.ndarray:
    """Return a copy of `image` with class-colored detection boxes drawn on."""
    canvas = Image.fromarray(np.asarray(image).astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(canvas)
    if gts:
        for gt in gts:
            x1, y1, x2, y2 = gt.box
            draw.rectangle([x1, y1, x2 - 1, y2 - 1], outline=GT_COLOR, width=1)
    for det in dets:
        x1, y1, x2, y2 = det.box
        color = class_color(det.class_id)
        draw.rectangle([x1, y1, x2 - 1, y2 - 1], outline=color, width=1)
        if labels:
            text = f"{det.class_id}:{det.score:.2f}"
            ty = y1 - 10 if y1 >= 10 else y2
            draw.text((x1, ty), text, fill=color)
    return np.asarray(canvas)


def render_to_file(path, image: np.ndarray, dets: Sequence[Detection],
                   gts: Sequence[GroundTruth] | None = None,
                   labels: bool = True) -> None:
    out = render_detections(image, dets, gts, labels)
    Image.fromarray(out, "RGB").save(Path(path))
