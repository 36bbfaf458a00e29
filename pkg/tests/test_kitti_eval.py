import csv
import itertools
import random
import shutil
from pathlib import Path

import numpy as np
import pytest

from ss3d.box_geom import Box3D, iou_bev
from ss3d.errors import EmptyGroundTruth, FrameMismatch
from ss3d.ingest import LabeledObject, read_labels, write_labels
from ss3d.kitti_eval import (
    DIFFICULTIES,
    EASY,
    FP,
    HARD,
    IGNORE,
    MODERATE,
    TP,
    EvalConfig,
    FrameMatch,
    average_precision,
    evaluate,
    format_table,
    match_frame,
    stratify,
)

FIXTURE = Path(__file__).parent / "fixtures" / "eval3"
CAR = Box3D(20.0, 0.0, -0.9, 3.9, 1.6, 1.5, 0.0)


def obj(box=CAR, cls="Car", height=50.0, occ=0, trunc=0.0, score=None):
    return LabeledObject(cls, trunc, occ, (100.0, 100.0, 160.0, 100.0 + height), box,
                         score=score)


def _fixture_expected():
    rows = [r for r in (FIXTURE / "expected_ap.csv").read_text().splitlines()
            if r and not r.startswith("#")]
    return {(r["metric"], r["difficulty"]): float(r["ap"]) for r in csv.DictReader(rows)}


# stratify

def test_large_clear_object_valid_everywhere():
    g = obj(height=45, trunc=0.1)
    for rule in DIFFICULTIES:
        assert stratify([g], rule) == ([g], [])


def test_mid_object_only_from_moderate():
    g = obj(height=30, occ=1)
    assert stratify([g], EASY) == ([], [g])
    assert stratify([g], MODERATE) == ([g], [])
    assert stratify([g], HARD) == ([g], [])


def test_dontcare_and_neighbours_ignored_other_classes_dropped():
    dc = LabeledObject("DontCare", -1, -1, (0, 0, 50, 50), None)
    van, ped = obj(cls="Van"), obj(cls="Pedestrian")
    for rule in DIFFICULTIES:
        assert stratify([dc, van, ped], rule) == ([], [dc, van])


def test_difficulty_nesting():
    rng = random.Random(3)
    for _ in range(300):
        g = obj(height=rng.uniform(10, 60), occ=rng.randint(0, 3),
                trunc=rng.uniform(0, 0.8))
        e, m, h = (g in stratify([g], r)[0] for r in DIFFICULTIES)
        assert (not e or m) and (not m or h)


# match_frame

def test_identical_detection_is_tp():
    fm = match_frame([obj(score=0.9)], [obj()])
    assert fm.det_status == [TP] and fm.gt_matched == [True]


def test_two_detections_one_gt():
    fm = match_frame([obj(score=0.8), obj(score=0.9)], [obj()])
    assert fm.det_status == [FP, TP]


def test_detection_on_dontcare_is_ignored():
    dc = LabeledObject("DontCare", -1, -1, (90.0, 90.0, 200.0, 200.0), None)
    far = obj(Box3D(50.0, 10.0, -0.9, 3.9, 1.6, 1.5, 0.0), score=0.9)
    assert match_frame([far], [], [dc]).det_status == [IGNORE]
    assert match_frame([far], [], []).det_status == [FP]


def test_small_unmatched_detection_is_ignored():
    d = obj(Box3D(50.0, 10.0, -0.9, 3.9, 1.6, 1.5, 0.0), height=20, score=0.9)
    assert match_frame([d], [obj()], [], min_det_height=25).det_status == [IGNORE]


def test_3d_overlap_uses_height():
    raised = obj(CAR.translated(0.0, 0.0, 0.5), score=0.9)
    assert match_frame([raised], [obj()], overlap="bev").det_status == [TP]
    assert match_frame([raised], [obj()], overlap="3d").det_status == [FP]


def _greedy_holds(dets, gts, fm, thr):
    """Check the greedy definition against a finished matching."""
    taken = set()
    for i in sorted(range(len(dets)), key=lambda k: -dets[k].score):
        free = {j: iou_bev(dets[i].box3d, g.box3d) for j, g in enumerate(gts) if j not in taken}
        ok = {j: o for j, o in free.items() if o >= thr}
        if ok:
            if fm.det_status[i] != TP or ok[fm.det_gt[i]] != max(ok.values()):
                return False
            taken.add(fm.det_gt[i])
        elif fm.det_status[i] != FP:
            return False
    return taken == {j for j, m in enumerate(fm.gt_matched) if m}


def test_greedy_matches_exhaustive_check():
    rng = random.Random(11)
    xs = [0.0, 0.3, 0.6, 1.0, 2.0]
    for _ in range(400):
        gts = [obj(Box3D(rng.choice(xs), rng.choice(xs[:3]), -0.9, 3.9, 1.6, 1.5, 0.0))
               for _ in range(rng.randint(0, 3))]
        scores = rng.sample(range(1, 100), rng.randint(0, 4))
        dets = [obj(Box3D(rng.choice(xs), rng.choice(xs[:3]), -0.9, 3.9, 1.6, 1.5,
                          rng.choice([0.0, 0.1])), score=s / 100) for s in scores]
        fm = match_frame(dets, gts, iou_min=0.7)
        assert _greedy_holds(dets, gts, fm, 0.7)


# average_precision

def _frame(statuses, scores):
    return FrameMatch(list(statuses), [-1] * len(statuses), [], list(scores))


def test_hand_traced_ap():
    ap, curve = average_precision([_frame([TP, FP, TP], [0.9, 0.8, 0.7])], 2)
    assert round(ap, 2) == 84.85
    assert ap == pytest.approx((6 + 5 * 2 / 3) / 11 * 100, abs=1e-12)
    assert curve == [(0.5, 1.0), (0.5, 0.5), (1.0, pytest.approx(2 / 3))]


def test_no_detections_give_zero():
    for n in (11, 40):
        assert average_precision([_frame([], [])], 3, n)[0] == 0.0


def test_perfect_detector():
    for n in (11, 40):
        assert average_precision([_frame([TP] * 4, [0.9, 0.8, 0.7, 0.6])], 4, n)[0] == 100.0


def test_forty_point_mode():
    # recall 1/2 reached at precision 1, recall 1 at 2/3: 20 samples each
    ap, _ = average_precision([_frame([TP, FP, TP], [0.9, 0.8, 0.7])], 2, 40)
    assert ap == pytest.approx((20 + 20 * 2 / 3) / 40 * 100)


def test_empty_ground_truth():
    with pytest.raises(EmptyGroundTruth):
        average_precision([_frame([FP], [0.5])], 0)


def test_pr_curve_monotone_recall():
    rng = np.random.default_rng(2)
    st = [TP if b else FP for b in rng.random(40) < 0.5]
    _, curve = average_precision([_frame(st, rng.random(40))], 30)
    rec = [r for r, _ in curve]
    assert rec == sorted(rec)
    assert all(0 <= p <= 1 for _, p in curve)


# evaluate

def test_fixture_matches_hand_trace():
    report = evaluate(FIXTURE / "gt", FIXTURE / "det")
    for (metric, diff), ap in _fixture_expected().items():
        assert round(report.ap(metric, diff), 2) == ap, (metric, diff)
        assert report.to_dict()["results"][metric][diff] == ap


def test_ap3d_not_above_apbev_on_fixture():
    report = evaluate(FIXTURE / "gt", FIXTURE / "det")
    for d in ("easy", "moderate", "hard"):
        assert report.ap("AP_3D", d) <= report.ap("AP_BEV", d)


def _self_dets(tmp_path):
    det = tmp_path / "det"
    det.mkdir()
    for p in sorted((FIXTURE / "gt").glob("*.txt")):
        rows = [r for r in p.read_text().splitlines() if r.strip()]
        (det / p.name).write_text("".join(r + " 1.0\n" for r in rows))
    return det


def test_self_evaluation_is_perfect(tmp_path):
    report = evaluate(FIXTURE / "gt", _self_dets(tmp_path))
    for res in report.results.values():
        for r in res.values():
            assert r.ap == 100.0 and r.fp == 0


def test_empty_detection_files(tmp_path):
    det = tmp_path / "det"
    det.mkdir()
    for p in (FIXTURE / "gt").glob("*.txt"):
        (det / p.name).write_text("")
    report = evaluate(FIXTURE / "gt", det)
    assert all(r.ap == 0.0 for res in report.results.values() for r in res.values())
    empty = tmp_path / "none"
    empty.mkdir()
    assert evaluate(FIXTURE / "gt", empty).ap("AP_BEV", "easy") == 0.0


def test_extra_detection_frame(tmp_path):
    det = tmp_path / "det"
    shutil.copytree(FIXTURE / "det", det)
    (det / "000099.txt").write_text("")
    with pytest.raises(FrameMismatch):
        evaluate(FIXTURE / "gt", det)


def test_line_order_does_not_matter(tmp_path):
    det = tmp_path / "det"
    det.mkdir()
    rng = random.Random(5)
    for p in (FIXTURE / "det").glob("*.txt"):
        rows = p.read_text().splitlines()
        rng.shuffle(rows)
        (det / p.name).write_text("\n".join(rows) + "\n")
    a = evaluate(FIXTURE / "gt", FIXTURE / "det").to_json()
    assert evaluate(FIXTURE / "gt", det).to_json() == a


def test_class_without_ground_truth_is_absent():
    report = evaluate(FIXTURE / "gt", FIXTURE / "det", "Pedestrian")
    assert report.ap("AP_BEV", "easy") is None
    assert report.to_dict()["results"]["AP_3D"]["hard"] is None
    assert "-" in format_table(report)


def test_report_layout():
    d = evaluate(FIXTURE / "gt", FIXTURE / "det").to_dict()
    assert list(d) == ["class", "iou_min", "interp_points", "results", "curves", "counts"]
    assert list(d["results"]) == ["AP_BEV", "AP_3D"]
    assert list(d["results"]["AP_BEV"]) == ["easy", "moderate", "hard"]
    c = d["counts"]["AP_BEV"]["hard"]
    assert c["tp"] <= min(c["num_gt"], c["num_det"])


def test_forty_point_config():
    report = evaluate(FIXTURE / "gt", FIXTURE / "det", config=EvalConfig(n_recall_points=40))
    assert report.interp_points == 40
    assert 0 <= report.ap("AP_BEV", "easy") <= 100
