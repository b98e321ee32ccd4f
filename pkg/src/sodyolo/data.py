"""Dataset ingestion and synthesis.

Annotations follow the drone-benchmark convention: one object per line,
``left,top,width,height,score,category,truncation,occlusion`` with integer
fields; category 0 is an ignored region, categories 1-10 map to class ids
0-9, and category 11 ("others") is dropped.

The synthetic generator renders textured backgrounds plus one colored shape
family per class, drawing object sizes so the expected fraction of boxes
under 0.1% of the image area hits a configurable target, with centers biased
toward the image center. Everything is derived from integer draws of a
seeded PCG64 stream, so datasets are bit-identical across runs and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .boxes import Box, GroundTruth
from .errors import AnnotationParseError, InvalidArgumentError

VISDRONE_CLASS_NAMES = (
    "pedestrian", "people", "bicycle", "car", "van", "truck",
    "tricycle", "awning-tricycle", "bus", "motor",
)
IGNORED_CATEGORY = 0
OTHERS_CATEGORY = 11
TINY_AREA_FRACTION = 0.001
PAD_VALUE = 114


# ---------------------------------------------------------------------------
# annotation format


def parse_visdrone_stats(text: str) -> tuple[list[GroundTruth], int]:
    """Parse annotation text; returns (ground truths, count of skipped boxes)."""
    gts: list[GroundTruth] = []
    skipped = 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.strip().rstrip(",")
        if not line:
            continue
        fields = line.split(",")
        if len(fields) < 8:
            raise AnnotationParseError(line_no, f"expected >= 8 fields, got {len(fields)}")
        try:
            left, top, w, h, _score, category, _trunc, _occl = \
                [int(f) for f in fields[:8]]
        except ValueError as exc:
            raise AnnotationParseError(line_no, f"non-integer field in {line!r}") from exc
        if w <= 0 or h <= 0:
            skipped += 1
            continue
        box: Box = (float(left), float(top), float(left + w), float(top + h))
        if category == IGNORED_CATEGORY:
            gts.append(GroundTruth(box=box, class_id=-1, ignore=True))
        elif 1 <= category <= len(VISDRONE_CLASS_NAMES):
            gts.append(GroundTruth(box=box, class_id=category - 1))
        elif category == OTHERS_CATEGORY:
            continue
        else:
            raise AnnotationParseError(line_no, f"unknown category {category}")
    return gts, skipped


def parse_visdrone(text: str) -> list[GroundTruth]:
    return parse_visdrone_stats(text)[0]


def serialize_visdrone(gts: Sequence[GroundTruth]) -> str:
    lines = []
    for gt in gts:
        x1, y1, x2, y2 = gt.box
        left, top = int(round(x1)), int(round(y1))
        w, h = int(round(x2 - x1)), int(round(y2 - y1))
        if gt.ignore:
            lines.append(f"{left},{top},{w},{h},0,{IGNORED_CATEGORY},0,0")
        else:
            lines.append(f"{left},{top},{w},{h},1,{gt.class_id + 1},0,0")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------------------
# letterboxing


@dataclass
class LetterboxTransform:
    scale: float
    pad_x: float
    pad_y: float

    def apply_box(self, box: Box) -> Box:
        x1, y1, x2, y2 = box
        return (x1 * self.scale + self.pad_x, y1 * self.scale + self.pad_y,
                x2 * self.scale + self.pad_x, y2 * self.scale + self.pad_y)

    def invert_box(self, box: Box) -> Box:
        x1, y1, x2, y2 = box
        return ((x1 - self.pad_x) / self.scale, (y1 - self.pad_y) / self.scale,
                (x2 - self.pad_x) / self.scale, (y2 - self.pad_y) / self.scale)


def _resize_nearest(image: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = image.shape[:2]
    rows = np.minimum((np.arange(new_h) * h) // new_h, h - 1)
    cols = np.minimum((np.arange(new_w) * w) // new_w, w - 1)
    return image[rows][:, cols]


def letterbox(image: np.ndarray, target: int) -> tuple[np.ndarray, LetterboxTransform]:
    """Aspect-preserving resize plus centered gray padding to (target, target)."""
    if target % 32 != 0:
        raise InvalidArgumentError(f"letterbox: target must be divisible by 32, got {target}")
    image = np.asarray(image)
    if image.size == 0 or image.ndim != 3 or image.shape[2] != 3:
        raise InvalidArgumentError(f"letterbox: expected (H,W,3) image, got {image.shape}")
    h, w = image.shape[:2]
    scale = min(target / w, target / h)
    new_w, new_h = int(round(w * scale)), int(round(h * scale))
    resized = _resize_nearest(image, new_h, new_w)
    canvas = np.full((target, target, 3), PAD_VALUE, dtype=image.dtype)
    off_x, off_y = (target - new_w) // 2, (target - new_h) // 2
    canvas[off_y:off_y + new_h, off_x:off_x + new_w] = resized
    return canvas, LetterboxTransform(scale=scale, pad_x=float(off_x), pad_y=float(off_y))


# ---------------------------------------------------------------------------
# dataset index


@dataclass
class DatasetIndex:
    root: Path
    entries: list[tuple[Path, Path]]
    class_names: tuple[str, ...] = VISDRONE_CLASS_NAMES


def load_index(root) -> DatasetIndex:
    root = Path(root)
    manifest = root / "index.txt"
    if not manifest.exists():
        raise InvalidArgumentError(f"no index.txt under {root}")
    entries = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        img_rel, ann_rel = line.split("\t")
        entries.append((root / img_rel, root / ann_rel))
    return DatasetIndex(root=root, entries=entries)


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path, image: np.ndarray) -> None:
    Image.fromarray(image.astype(np.uint8), "RGB").save(path)


def iter_samples(index: DatasetIndex) -> Iterator[tuple[str, np.ndarray, list[GroundTruth]]]:
    for img_path, ann_path in index.entries:
        gts = parse_visdrone(Path(ann_path).read_text())
        yield Path(img_path).stem, load_image(img_path), gts


# ---------------------------------------------------------------------------
# synthetic generation


@dataclass
class SynthConfig:
    image_size: int = 640
    num_images: int = 16
    objects_per_image: tuple[int, int] = (1, 4)
    tiny_fraction_target: float = 0.75
    small_area: tuple[int, int] | None = None
    large_area: tuple[int, int] | None = None
    clutter_level: float = 0.25
    num_classes: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.tiny_fraction_target <= 1.0:
            raise InvalidArgumentError(
                f"tiny_fraction_target must be in [0,1], got {self.tiny_fraction_target}")
        if not 2 <= self.num_classes <= len(VISDRONE_CLASS_NAMES):
            raise InvalidArgumentError(
                f"num_classes must be in [2,{len(VISDRONE_CLASS_NAMES)}], "
                f"got {self.num_classes}")
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise InvalidArgumentError(f"bad objects_per_image range {self.objects_per_image}")
        tiny = TINY_AREA_FRACTION * self.image_size ** 2
        if self.small_area is None:
            self.small_area = (max(1, int(tiny / 16)), max(1, math.ceil(tiny) - 1))
        if self.large_area is None:
            self.large_area = (math.ceil(tiny), max(math.ceil(tiny) + 3,
                                                    (self.image_size // 5) ** 2))

    def side_bands(self) -> tuple[tuple[int, int], tuple[int, int]]:
        """Integer side-length ranges guaranteeing areas stay in their band."""
        tiny = TINY_AREA_FRACTION * self.image_size ** 2
        s_lo = max(1, math.ceil(math.sqrt(self.small_area[0])))
        s_hi = int(math.floor(math.sqrt(self.small_area[1])))
        l_lo = math.ceil(math.sqrt(self.large_area[0]))
        l_hi = int(math.floor(math.sqrt(self.large_area[1])))
        l_hi = min(l_hi, self.image_size - 1)
        if s_lo > s_hi or s_hi * s_hi >= tiny:
            raise InvalidArgumentError(
                f"infeasible small band {self.small_area} for image {self.image_size}")
        if l_lo > l_hi or l_lo * l_lo < tiny:
            raise InvalidArgumentError(
                f"infeasible large band {self.large_area} for image {self.image_size}")
        return (s_lo, s_hi), (l_lo, l_hi)


_PALETTE = np.array([
    (230, 70, 70), (70, 200, 90), (90, 110, 235), (235, 200, 60),
    (200, 80, 210), (70, 210, 210), (245, 140, 50), (150, 230, 60),
    (120, 90, 220), (240, 120, 170)], dtype=np.int64)


def _shape_mask(class_id: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5) / w * 2.0 - 1.0
    v = (yy + 0.5) / h * 2.0 - 1.0
    family = class_id % 10
    if family == 0:
        mask = np.ones((h, w), dtype=bool)
    elif family == 1:
        mask = u * u + v * v <= 1.0
    elif family == 2:
        mask = np.abs(u) + np.abs(v) <= 1.0
    elif family == 3:
        mask = np.abs(v) <= 0.999  # near-full rect, roof accent added by caller
    elif family == 4:
        mask = (np.abs(u) >= 0.4) | (np.abs(v) >= 0.4)
    elif family == 5:
        mask = (np.abs(u) <= 0.4) | (np.abs(v) <= 0.4)
    elif family == 6:
        mask = v >= 2.0 * np.abs(u) - 1.0
    elif family == 7:
        mask = v <= 1.0 - 2.0 * np.abs(u)
    elif family == 8:
        mask = np.ones((h, w), dtype=bool)
    else:
        mask = np.abs(np.abs(u) - np.abs(v)) <= 0.35
    if not mask.any():
        mask = np.ones((h, w), dtype=bool)
    return mask


def _render_image(rng: np.random.Generator, cfg: SynthConfig) -> tuple[np.ndarray, list[GroundTruth]]:
    size = cfg.image_size
    amp = int(8 + 48 * cfg.clutter_level)
    base = rng.integers(40, 90, size=3)
    coarse = rng.integers(-amp, amp + 1, size=(size // 8 + 1, size // 8 + 1, 3))
    coarse = coarse.repeat(8, axis=0).repeat(8, axis=1)[:size, :size]
    fine = rng.integers(-8, 9, size=(size, size, 3))
    img = np.clip(base[None, None, :] + coarse + fine, 0, 255).astype(np.int64)

    # unannotated low-contrast distractors
    for _ in range(int(round(cfg.clutter_level * 4))):
        dw = int(rng.integers(2, max(3, size // 10)))
        dh = int(rng.integers(2, max(3, size // 10)))
        x = int(rng.integers(0, size - dw + 1))
        y = int(rng.integers(0, size - dh + 1))
        shade = base + rng.integers(-25, 26, size=3)
        img[y:y + dh, x:x + dw] = np.clip(shade, 0, 255)

    (s_lo, s_hi), (l_lo, l_hi) = cfg.side_bands()
    lo, hi = cfg.objects_per_image
    n_obj = int(rng.integers(lo, hi + 1))
    gts: list[GroundTruth] = []
    million = 1_000_000
    tiny_cut = int(round(cfg.tiny_fraction_target * million))
    for _ in range(n_obj):
        tiny = int(rng.integers(0, million)) < tiny_cut
        blo, bhi = (s_lo, s_hi) if tiny else (l_lo, l_hi)
        w = int(rng.integers(blo, bhi + 1))
        h = int(rng.integers(blo, bhi + 1))
        cx = (int(rng.integers(0, size)) + int(rng.integers(0, size))) // 2
        cy = (int(rng.integers(0, size)) + int(rng.integers(0, size))) // 2
        x1 = min(max(cx - w // 2, 0), size - w)
        y1 = min(max(cy - h // 2, 0), size - h)
        class_id = int(rng.integers(0, cfg.num_classes))
        color = np.clip(_PALETTE[class_id] + rng.integers(-20, 21, size=3), 60, 255)
        mask = _shape_mask(class_id, h, w)
        patch = img[y1:y1 + h, x1:x1 + w]
        patch[mask] = color
        if class_id % 10 in (3, 8):  # accent stripe keeps these families distinct
            accent = mask & ((np.arange(h) % max(2, h // 2) < max(1, h // 4))[:, None])
            patch[accent] = np.clip(color - 60, 0, 255)
        gts.append(GroundTruth(box=(float(x1), float(y1), float(x1 + w), float(y1 + h)),
                               class_id=class_id))
    return img.astype(np.uint8), gts


def synth_generate(cfg: SynthConfig, out_dir) -> DatasetIndex:
    """Materialize a deterministic synthetic dataset under `out_dir`."""
    cfg.side_bands()  # validate before writing anything
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    entries = []
    lines = []
    for i in range(cfg.num_images):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((cfg.seed, i))))
        img, gts = _render_image(rng, cfg)
        stem = f"img_{i:05d}"
        img_rel, ann_rel = f"images/{stem}.png", f"annotations/{stem}.txt"
        save_image(root / img_rel, img)
        (root / ann_rel).write_text(serialize_visdrone(gts))
        entries.append((root / img_rel, root / ann_rel))
        lines.append(f"{img_rel}\t{ann_rel}")
    (root / "index.txt").write_text("\n".join(lines) + "\n")
    (root / "classes.txt").write_text("\n".join(VISDRONE_CLASS_NAMES) + "\n")
    return DatasetIndex(root=root, entries=entries)


# ---------------------------------------------------------------------------
# dataset statistics


@dataclass
class AreaStats:
    tiny_fraction: float
    per_class_counts: dict[int, int]
    total_boxes: int


def area_stats(index: DatasetIndex) -> AreaStats:
    """Fraction of non-ignored boxes under 0.1% of their image's area."""
    tiny = 0
    total = 0
    counts: dict[int, int] = {}
    for img_path, ann_path in index.entries:
        with Image.open(img_path) as im:
            image_area = im.size[0] * im.size[1]
        for gt in parse_visdrone(Path(ann_path).read_text()):
            if gt.ignore:
                continue
            total += 1
            counts[gt.class_id] = counts.get(gt.class_id, 0) + 1
            x1, y1, x2, y2 = gt.box
            if (x2 - x1) * (y2 - y1) < TINY_AREA_FRACTION * image_area:
                tiny += 1
    return AreaStats(tiny_fraction=(tiny / total) if total else 0.0,
                     per_class_counts=counts, total_boxes=total)
