"""
Scoring detections KITTI style
==============================

Uses the three-frame fixture shipped with the tests.
"""
from pathlib import Path

from ss3d.kitti_eval import EvalConfig, evaluate, format_table

fixture = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "eval3"

report = evaluate(fixture / "gt", fixture / "det", "Car")
print(format_table(report))

moderate = report.results["AP_BEV"]["moderate"]
print("moderate BEV: gt", moderate.num_gt, "tp", moderate.tp, "fp", moderate.fp)
print("PR curve:", [(round(r, 2), round(p, 2)) for r, p in moderate.curve])

# the 40-point variant samples recall more finely
report40 = evaluate(fixture / "gt", fixture / "det", "Car", EvalConfig(n_recall_points=40))
print(format_table(report40))
