"""IoU-based matching, precision/recall, and mean average precision.

Matching is greedy in score order and one-to-one per IoU threshold. AP
integrates the enveloped precision-recall curve, either on the standard
101-point recall grid or exactly (step-area under the envelope). mAP is the
mean over classes that have at least one non-ignored ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .boxes import Detection, GroundTruth
from .errors import InvalidArgumentError, UndefinedMetricError
from .postprocess import iou

FLAG_TP = "tp"
FLAG_FP = "fp"
FLAG_IGNORED = "ignored"

AP_101POINT = "101point"
AP_EXACT = "exact"

MAP5095_THRESHOLDS = tuple((50 + 5 * i) / 100 for i in range(10))


@dataclass
class MatchResult:
    """Per-detection outcome flags (input order) plus the ground-truth count."""
    flags: list[str]
    matched_gt: list[int]
    num_gt: int


def match(dets: Sequence[Detection], gts: Sequence[GroundTruth],
          iou_thresh: float) -> MatchResult:
    """Match one image's single-class detections against ground truth.

    Detections claim, in score order, the highest-IoU unmatched non-ignored
    ground truth at or above the threshold. A detection whose only qualifying
    overlap is with an ignored region is flagged ignored (neither TP nor FP).
    """
    if not 0.0 < iou_thresh < 1.0:
        raise InvalidArgumentError(f"match: iou_thresh must be in (0,1), got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    flags = [FLAG_FP] * len(dets)
    matched_gt = [-1] * len(dets)
    taken = [False] * len(gts)
    for di in order:
        det = dets[di]
        best_iou, best_gi = 0.0, -1
        for gi, gt in enumerate(gts):
            if gt.ignore or taken[gi]:
                continue
            ov = iou(det.box, gt.box)
            if ov > best_iou:
                best_iou, best_gi = ov, gi
        if best_gi >= 0 and best_iou >= iou_thresh:
            flags[di] = FLAG_TP
            matched_gt[di] = best_gi
            taken[best_gi] = True
            continue
        for gi, gt in enumerate(gts):
            if gt.ignore and iou(det.box, gt.box) >= iou_thresh:
                flags[di] = FLAG_IGNORED
                break
    num_gt = sum(1 for gt in gts if not gt.ignore)
    return MatchResult(flags=flags, matched_gt=matched_gt, num_gt=num_gt)


def precision_recall(result: MatchResult) -> tuple[float, float]:
    """Precision and recall with the 0/0 -> 1.0 convention."""
    tp = sum(1 for f in result.flags if f == FLAG_TP)
    fp = sum(1 for f in result.flags if f == FLAG_FP)
    precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
    recall = tp / result.num_gt if result.num_gt > 0 else 1.0
    return precision, recall


def _pr_sweep(dets_per_image: Sequence[Sequence[Detection]],
              gts_per_image: Sequence[Sequence[GroundTruth]],
              iou_thresh: float) -> tuple[list[float], list[float], int]:
    """Cumulative PR points in global score-descending order (one class)."""
    entries = []
    num_gt = 0
    for img, (dets, gts) in enumerate(zip(dets_per_image, gts_per_image)):
        result = match(dets, gts, iou_thresh)
        num_gt += result.num_gt
        for di, det in enumerate(dets):
            if result.flags[di] != FLAG_IGNORED:
                entries.append((det.score, img, di, result.flags[di]))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    recalls, precisions = [], []
    tp = fp = 0
    for _, _, _, flag in entries:
        if flag == FLAG_TP:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / num_gt if num_gt > 0 else 0.0)
    return recalls, precisions, num_gt


def average_precision(dets_per_image: Sequence[Sequence[Detection]],
                      gts_per_image: Sequence[Sequence[GroundTruth]],
                      iou_thresh: float, method: str = AP_101POINT) -> float:
    """AP for one class across the dataset (inputs pre-filtered to the class)."""
    recalls, precisions, num_gt = _pr_sweep(dets_per_image, gts_per_image, iou_thresh)
    if num_gt == 0:
        return 0.0
    envelope = precisions[:]
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])

    if method == AP_EXACT:
        ap = 0.0
        prev_r = 0.0
        for r, p in zip(recalls, envelope):
            ap += (r - prev_r) * p
            prev_r = r
        return ap
    if method != AP_101POINT:
        raise InvalidArgumentError(f"average_precision: unknown method {method!r}")

    total = 0.0
    k = 0
    for i in range(101):
        r = i / 100
        while k < len(recalls) and recalls[k] < r:
            k += 1
        total += envelope[k] if k < len(envelope) else 0.0
    return total / 101.0


def _class_subsets(dets_per_image, gts_per_image, class_id):
    """Filter to one class; ignored regions are kept for every class."""
    dets = [[d for d in dets if d.class_id == class_id] for dets in dets_per_image]
    gts = [[g for g in gts if g.ignore or g.class_id == class_id] for gts in gts_per_image]
    return dets, gts


def _classes_with_gt(gts_per_image, num_classes) -> list[int]:
    counts = {c: 0 for c in range(num_classes)}
    for gts in gts_per_image:
        for gt in gts:
            if not gt.ignore and 0 <= gt.class_id < num_classes:
                counts[gt.class_id] += 1
    return [c for c in range(num_classes) if counts[c] > 0]


def map_at(dets_per_image, gts_per_image, iou_thresh: float, num_classes: int,
           method: str = AP_101POINT) -> float:
    """Mean AP over classes that have at least one non-ignored ground truth."""
    classes = _classes_with_gt(gts_per_image, num_classes)
    if not classes:
        raise UndefinedMetricError("map_at: no class has any ground truth")
    aps = []
    for c in classes:
        d, g = _class_subsets(dets_per_image, gts_per_image, c)
        aps.append(average_precision(d, g, iou_thresh, method))
    return sum(aps) / len(aps)


def map50(dets_per_image, gts_per_image, num_classes: int) -> float:
    return map_at(dets_per_image, gts_per_image, 0.5, num_classes)


def map5095(dets_per_image, gts_per_image, num_classes: int,
            thresholds: Sequence[float] = MAP5095_THRESHOLDS) -> float:
    values = [map_at(dets_per_image, gts_per_image, t, num_classes) for t in thresholds]
    return sum(values) / len(values)


# ---------------------------------------------------------------------------
# dataset-level report


@dataclass
class EvalReport:
    map50: float
    map5095: float
    precision: float
    recall: float
    operating_score: float
    per_class_ap: dict[int, dict[float, float]]
    gt_counts: dict[int, int]
    num_images: int
    num_detections: int
    class_names: list[str] | None = None
    suppression_mode: str | None = None

    def class_label(self, class_id: int) -> str:
        if self.class_names and 0 <= class_id < len(self.class_names):
            return self.class_names[class_id]
        return str(class_id)

    def to_text(self) -> str:
        lines = [
            f"map50 {self.map50:.6f}",
            f"map5095 {self.map5095:.6f}",
            f"precision {self.precision:.6f}",
            f"recall {self.recall:.6f}",
            f"operating_score {self.operating_score:.6f}",
            f"num_images {self.num_images}",
            f"num_detections {self.num_detections}",
        ]
        if self.suppression_mode:
            lines.append(f"suppression {self.suppression_mode}")
        for c in sorted(self.per_class_ap):
            lines.append(f"ap50.{self.class_label(c)} {self.per_class_ap[c][0.5]:.6f}")
        for c in sorted(self.gt_counts):
            lines.append(f"gt_count.{self.class_label(c)} {self.gt_counts[c]}")
        return "\n".join(lines) + "\n"


def parse_report_text(text: str) -> dict[str, float]:
    """Parse a serialized report into a flat key -> value mapping."""
    out: dict[str, float] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value  # type: ignore[assignment]
    return out


def evaluate_detections(dets_per_image: Sequence[Sequence[Detection]],
                        gts_per_image: Sequence[Sequence[GroundTruth]],
                        num_classes: int,
                        class_names: list[str] | None = None,
                        operating_score: float = 0.25,
                        thresholds: Sequence[float] = MAP5095_THRESHOLDS,
                        suppression_mode: str | None = None) -> EvalReport:
    """Full evaluation: per-class AP at every threshold plus summary metrics."""
    classes = _classes_with_gt(gts_per_image, num_classes)
    if not classes:
        raise UndefinedMetricError("evaluate_detections: no class has any ground truth")

    per_class_ap: dict[int, dict[float, float]] = {}
    all_thresholds = sorted(set(thresholds) | {0.5})
    for c in classes:
        d, g = _class_subsets(dets_per_image, gts_per_image, c)
        per_class_ap[c] = {t: average_precision(d, g, t) for t in all_thresholds}

    n = len(classes)
    map50_v = sum(per_class_ap[c][0.5] for c in classes) / n
    map5095_v = sum(sum(per_class_ap[c][t] for t in thresholds) / len(thresholds)
                    for c in classes) / n

    tp = fp = num_gt = 0
    for c in classes:
        d, g = _class_subsets(dets_per_image, gts_per_image, c)
        for dets, gts in zip(d, g):
            strong = [det for det in dets if det.score >= operating_score]
            result = match(strong, gts, 0.5)
            tp += sum(1 for f in result.flags if f == FLAG_TP)
            fp += sum(1 for f in result.flags if f == FLAG_FP)
            num_gt += result.num_gt
    precision = tp / (tp + fp) if (tp + fp) > 0 else 1.0
    recall = tp / num_gt if num_gt > 0 else 1.0

    gt_counts = {c: 0 for c in classes}
    for gts in gts_per_image:
        for gt in gts:
            if not gt.ignore and gt.class_id in gt_counts:
                gt_counts[gt.class_id] += 1

    return EvalReport(
        map50=map50_v, map5095=map5095_v, precision=precision, recall=recall,
        operating_score=operating_score, per_class_ap=per_class_ap,
        gt_counts=gt_counts, num_images=len(list(dets_per_image)),
        num_detections=sum(len(d) for d in dets_per_image),
        class_names=class_names, suppression_mode=suppression_mode)
