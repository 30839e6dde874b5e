import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rffs.metrics import ConfusionMatrix, confusion, export_confusion, export_report, per_class_metrics


def cm_from(tp, fp, fn, tn=0):
    # two-class matrix whose class 0 has the given TP/FP/FN
    return ConfusionMatrix(np.array([[tp, fn], [fp, tn]]))


def test_confusion_hand_count():
    cm = confusion([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert cm.counts.tolist() == [[1, 1], [0, 2]]
    assert cm.total == 4


def test_confusion_all_correct():
    cm = confusion([0, 1, 2, 2], [0, 1, 2, 2], 3)
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    assert per_class_metrics(cm).oa == 1.0


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion([], [], 2)
    with pytest.raises(ValueError):
        confusion([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion([0, 2], [0, 1], 2)


def test_metrics_perfect_class():
    r = per_class_metrics(cm_from(1, 0, 0))
    assert (r.precision[0], r.recall[0], r.f1[0], r.iou[0]) == (1, 1, 1, 1)


def test_metrics_two_thirds_case():
    r = per_class_metrics(cm_from(2, 1, 1))
    assert r.precision[0] == pytest.approx(2 / 3, abs=1e-12)
    assert r.recall[0] == pytest.approx(2 / 3, abs=1e-12)
    assert r.f1[0] == pytest.approx(2 / 3, abs=1e-12)
    assert r.iou[0] == pytest.approx(0.5, abs=1e-12)


def test_mean_f1():
    # class 0: p=r=0.8; class 1: p=r=0.6
    cm = ConfusionMatrix(np.array([[8, 2, 0], [0, 6, 4], [2, 2, 0]]))
    r = per_class_metrics(cm)
    assert r.f1[0] == pytest.approx(0.8) and r.f1[1] == pytest.approx(0.6)
    assert r.mf1 == pytest.approx((0.8 + 0.6 + r.f1[2]) / 3)


def test_absent_class_flagged():
    r = per_class_metrics(confusion([0, 1, 1], [0, 1, 0], 3))
    assert r.absent.tolist() == [False, False, True]
    assert r.f1[2] == 0 and r.iou[2] == 0
    assert r.miou == pytest.approx(r.iou.sum() / 3)


def test_f1_iou_identity_on_random_matrices():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = int(rng.integers(2, 10))
        r = per_class_metrics(ConfusionMatrix(rng.integers(0, 50, size=(c, c))))
        np.testing.assert_allclose(r.f1, 2 * r.iou / (1 + r.iou), atol=1e-9, rtol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_point_order_and_oa(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 300))
    t, p = rng.integers(0, 4, n), rng.integers(0, 4, n)
    perm = rng.permutation(n)
    a, b = confusion(t, p, 4), confusion(t[perm], p[perm], 4)
    assert a.counts.tolist() == b.counts.tolist()
    assert per_class_metrics(a).oa == pytest.approx(np.mean(t == p), abs=1e-15)
    r = per_class_metrics(a)
    for arr in (r.precision, r.recall, r.f1, r.iou):
        assert np.all((arr >= 0) & (arr <= 1))


def test_column_normalized():
    cm = ConfusionMatrix(np.array([[3, 0], [1, 0]]))
    np.testing.assert_allclose(cm.column_normalized(), [[0.75, 0], [0.25, 0]])


def test_json_round_trip_exact(tmp_path):
    r = per_class_metrics(confusion([0, 1, 1, 2, 2, 2], [0, 1, 2, 2, 2, 0], 3), ["a", "b", "c"])
    export_report(r, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert [c["name"] for c in doc["classes"]] == ["a", "b", "c"]
    assert [c["iou"] for c in doc["classes"]] == r.iou.tolist()
    assert (doc["oa"], doc["mf1"], doc["miou"]) == (r.oa, r.mf1, r.miou)


def test_csv_rows_and_precision(tmp_path):
    r = per_class_metrics(confusion([0, 1, 1, 2], [0, 1, 2, 2], 3))
    export_report(r, tmp_path / "r.csv", "csv")
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert len(rows[1:]) == 3 + 1
    assert rows[-1][0] == "aggregate"
    f1 = float(rows[2][3])
    assert f1 == pytest.approx(r.f1[1], rel=1e-6)
    with pytest.raises(ValueError):
        export_report(r, tmp_path / "r.xml", "xml")


def test_confusion_export(tmp_path):
    cm = confusion([0, 1, 1], [0, 1, 0], 2)
    export_confusion(cm, ["g", "b"], tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0][1:] == ["g", "b"] and rows[2] == ["b", "1", "1"]
