"""Matching, precision/recall, and AP tests against hand cases and a
brute-force PR-curve oracle."""

import numpy as np
import pytest

from sodyolo.boxes import Detection, GroundTruth
from sodyolo.errors import InvalidArgumentError, UndefinedMetricError
from sodyolo.evaluation import (AP_EXACT, MAP5095_THRESHOLDS, average_precision,
                                evaluate_detections, map5095, map50, map_at,
                                match, parse_report_text, precision_recall,
                                _pr_sweep)

GT_BOX = (0.0, 0.0, 10.0, 10.0)
FAR_BOX = (50.0, 50.0, 60.0, 60.0)
# det box with IoU exactly 3/5 against (0,0,2,2)
IOU06_GT = (0.0, 0.0, 2.0, 2.0)
IOU06_DET = (0.5, 0.0, 2.5, 2.0)


def det(box, score, cls=0):
    return Detection(box=box, class_id=cls, score=score)


def gt(box, cls=0, ignore=False):
    return GroundTruth(box=box, class_id=cls, ignore=ignore)


# ---------------------------------------------------------------------------
# brute-force oracle


def oracle_iou(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    ua = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / ua


def oracle_flags(dets, gts, thresh):
    """Fresh transcription of greedy score-order matching."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    used = set()
    flags = {}
    for di in order:
        overlaps = [(oracle_iou(dets[di].box, g.box), gi) for gi, g in enumerate(gts)
                    if not g.ignore and gi not in used]
        overlaps = [(ov, gi) for ov, gi in overlaps if ov > 0]
        best = max(overlaps, key=lambda t: (t[0], -t[1])) if overlaps else (0.0, -1)
        if best[0] >= thresh:
            flags[di] = "tp"
            used.add(best[1])
            continue
        if any(g.ignore and oracle_iou(dets[di].box, g.box) >= thresh for g in gts):
            flags[di] = "ignored"
        else:
            flags[di] = "fp"
    return flags


def oracle_pr_points(dets_per_image, gts_per_image, thresh):
    entries = []
    num_gt = 0
    for img, (dets, gts) in enumerate(zip(dets_per_image, gts_per_image)):
        flags = oracle_flags(dets, gts, thresh)
        num_gt += sum(1 for g in gts if not g.ignore)
        for di, d in enumerate(dets):
            if flags[di] != "ignored":
                entries.append((d.score, img, di, flags[di] == "tp"))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    points = []
    tp = fp = 0
    for _, _, _, is_tp in entries:
        tp, fp = tp + is_tp, fp + (not is_tp)
        points.append((tp / num_gt if num_gt else 0.0, tp / (tp + fp)))
    return points, num_gt


def oracle_ap(dets_per_image, gts_per_image, thresh, n_grid=None):
    """Exact envelope area (n_grid None) or direct n-point interpolation."""
    points, num_gt = oracle_pr_points(dets_per_image, gts_per_image, thresh)
    if num_gt == 0:
        return 0.0

    def env(r):
        vals = [p for (rk, p) in points if rk >= r]
        return max(vals) if vals else 0.0

    if n_grid is not None:
        return sum(env(i / (n_grid - 1)) for i in range(n_grid)) / n_grid

    area = 0.0
    prev = 0.0
    for rk, _p in points:
        if rk > prev:
            area += (rk - prev) * env(rk)
            prev = rk
    return area


def random_scene(rng, max_dets=6, max_gts=3):
    gts = [gt((x, y, x + w, y + h))
           for x, y, w, h in rng.uniform(1, 20, size=(int(rng.integers(1, max_gts + 1)), 4))]
    dets = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        if gts and rng.random() < 0.6:
            base = gts[int(rng.integers(0, len(gts)))].box
            dx, dy = rng.uniform(-3, 3, size=2)
            box = (base[0] + dx, base[1] + dy, base[2] + dx * 0.5, base[3] + dy * 0.5)
            if box[2] <= box[0] or box[3] <= box[1]:
                continue
        else:
            x, y, w, h = rng.uniform(1, 25, size=4)
            box = (x, y, x + w, y + h)
        dets.append(det(box, float(np.round(rng.uniform(0.05, 1), 3))))
    return dets, gts


class TestMatch:
    def test_perfect_detection_is_tp(self):
        res = match([det(GT_BOX, 0.9)], [gt(GT_BOX)], 0.5)
        assert res.flags == ["tp"] and res.matched_gt == [0] and res.num_gt == 1

    def test_second_detection_cannot_reclaim(self):
        near = (0.0, 0.0, 10.0, 9.0)
        res = match([det(GT_BOX, 0.9), det(near, 0.8)], [gt(GT_BOX)], 0.5)
        assert res.flags == ["tp", "fp"]

    def test_ignored_region_absorbs(self):
        res = match([det(GT_BOX, 0.9)], [gt(GT_BOX, ignore=True)], 0.5)
        assert res.flags == ["ignored"] and res.num_gt == 0

    def test_claims_highest_iou_gt(self):
        g1 = gt((0.0, 0.0, 10.0, 8.0))
        g2 = gt(GT_BOX)
        res = match([det(GT_BOX, 0.9)], [g1, g2], 0.5)
        assert res.matched_gt == [1]

    def test_threshold_validation(self):
        with pytest.raises(InvalidArgumentError):
            match([], [], 1.0)


class TestPrecisionRecall:
    def test_precision_fraction(self):
        res = match([det(GT_BOX, 0.9)] * 0, [], 0.5)
        res.flags = ["tp"] * 8 + ["fp"] * 2
        res.num_gt = 8
        p, _ = precision_recall(res)
        assert p == 0.8

    def test_recall_fraction(self):
        res = match([], [], 0.5)
        res.flags = ["tp"] * 3
        res.num_gt = 4
        _, r = precision_recall(res)
        assert r == 0.75

    def test_empty_conventions(self):
        res = match([], [], 0.5)
        assert precision_recall(res) == (1.0, 1.0)


class TestAveragePrecision:
    def test_single_tp_is_one(self):
        assert average_precision([[det(GT_BOX, 0.9)]], [[gt(GT_BOX)]], 0.5) == 1.0

    def test_fp_before_tp_is_half(self):
        dets = [det(FAR_BOX, 0.9), det(GT_BOX, 0.8)]
        assert average_precision([dets], [[gt(GT_BOX)]], 0.5) == 0.5

    def test_tp_before_fp_is_one(self):
        dets = [det(GT_BOX, 0.9), det(FAR_BOX, 0.8)]
        assert average_precision([dets], [[gt(GT_BOX)]], 0.5) == 1.0

    def test_score_order_is_all_that_matters(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            dets, gts = random_scene(rng)
            base = average_precision([dets], [gts], 0.5)
            squashed = [d.with_score(0.1 + 0.5 * d.score ** 3) for d in dets]
            assert average_precision([squashed], [gts], 0.5) == base

    def test_low_fp_never_increases_ap(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            dets, gts = random_scene(rng)
            base = average_precision([dets], [gts], 0.5)
            low = min((d.score for d in dets), default=1.0)
            extra = dets + [det((200.0, 200.0, 210.0, 210.0), low / 2)]
            assert average_precision([extra], [gts], 0.5) <= base + 1e-12

    def test_removing_fp_never_decreases_ap(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            dets, gts = random_scene(rng)
            if not dets:
                continue
            base = average_precision([dets], [gts], 0.5)
            flags = match(dets, gts, 0.5).flags
            fps = [i for i, f in enumerate(flags) if f == "fp"]
            for i in fps:
                pruned = dets[:i] + dets[i + 1:]
                assert average_precision([pruned], [gts], 0.5) >= base - 1e-12

    def test_bounds_and_sweep_shape(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            dets, gts = random_scene(rng)
            ap = average_precision([dets], [gts], 0.5)
            assert 0.0 <= ap <= 1.0
            recalls, precisions, _ = _pr_sweep([dets], [gts], 0.5)
            assert recalls == sorted(recalls)
            env = precisions[:]
            for i in range(len(env) - 2, -1, -1):
                env[i] = max(env[i], env[i + 1])
            assert all(env[i] >= env[i + 1] - 1e-15 for i in range(len(env) - 1))

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            dets, gts = random_scene(rng)
            for t in (0.3, 0.5, 0.75):
                exact = oracle_ap([dets], [gts], t)
                lib_101 = average_precision([dets], [gts], t)
                lib_exact = average_precision([dets], [gts], t, method=AP_EXACT)
                assert abs(lib_exact - exact) < 1e-9
                assert abs(lib_101 - exact) <= 0.01

    def test_101_matches_direct_grid_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            dets, gts = random_scene(rng)
            lib = average_precision([dets], [gts], 0.5)
            direct = oracle_ap([dets], [gts], 0.5, n_grid=101)
            assert abs(lib - direct) < 1e-12


class TestMAP:
    def test_perfect_two_classes(self):
        dets = [[det(GT_BOX, 0.9, cls=0), det(FAR_BOX, 0.8, cls=1)]]
        gts = [[gt(GT_BOX, cls=0), gt(FAR_BOX, cls=1)]]
        assert map50(dets, gts, 2) == 1.0
        assert map5095(dets, gts, 2) == 1.0

    def test_mean_over_classes(self):
        dets = [[det(GT_BOX, 0.9, cls=0)]]
        gts = [[gt(GT_BOX, cls=0), gt(FAR_BOX, cls=1)]]
        assert map50(dets, gts, 2) == 0.5

    def test_threshold_sweep_hand_case(self):
        dets = [[det(IOU06_DET, 0.9)]]
        gts = [[gt(IOU06_GT)]]
        value = map5095(dets, gts, 1)
        assert abs(value - 0.3) < 1e-9

    def test_degenerate_thresholds_equal_map50(self):
        rng = np.random.default_rng(5)
        dets, gts = random_scene(rng)
        assert map5095([dets], [gts], 1, thresholds=[0.5] * 10) == map50([dets], [gts], 1)

    def test_no_gt_rejected(self):
        with pytest.raises(UndefinedMetricError):
            map_at([[det(GT_BOX, 0.9)]], [[]], 0.5, 3)

    def test_zero_gt_classes_excluded(self):
        dets = [[det(GT_BOX, 0.9, cls=0), det(FAR_BOX, 0.3, cls=7)]]
        gts = [[gt(GT_BOX, cls=0)]]
        assert map50(dets, gts, 10) == 1.0


class TestEvalReport:
    def test_report_fields_and_serialization(self):
        dets = [[det(GT_BOX, 0.9, cls=0)], [det(FAR_BOX, 0.8, cls=1)]]
        gts = [[gt(GT_BOX, cls=0)], [gt(FAR_BOX, cls=1)]]
        report = evaluate_detections(dets, gts, 2, class_names=["car", "van"],
                                     suppression_mode="soft-linear")
        assert report.map50 == 1.0 and report.map5095 == 1.0
        assert report.precision == 1.0 and report.recall == 1.0
        text = report.to_text()
        parsed = parse_report_text(text)
        assert parsed["map50"] == 1.0
        assert parsed["ap50.car"] == 1.0
        assert parsed["suppression"] == "soft-linear"
        assert parsed["gt_count.van"] == 1

    def test_ignored_regions_do_not_count(self):
        dets = [[det(GT_BOX, 0.9, cls=0), det(FAR_BOX, 0.85, cls=0)]]
        gts = [[gt(GT_BOX, cls=0), gt(FAR_BOX, ignore=True)]]
        report = evaluate_detections(dets, gts, 1)
        assert report.map50 == 1.0
        assert report.recall == 1.0 and report.precision == 1.0
