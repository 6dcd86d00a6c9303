import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pyramidssl.downstream import DownstreamConfig
from pyramidssl.errors import ConfigError, EmptyClass, ShapeMismatch
from pyramidssl.evaluation import (REFERENCE_ACCURACY, AblationRow, ablation, aggregate_runs,
                                   confusion_matrix, curve_svg, curve_table, mean_class_accuracy,
                                   write_ablation)
from pyramidssl.model import EncoderSpec
from pyramidssl.train import DownstreamSchedule


def test_confusion_matrix_orientation():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 0], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [1, 0, 0]]


def test_mean_class_accuracy_examples():
    assert mean_class_accuracy(np.eye(4) * 3) == 1.0
    assert mean_class_accuracy([[3, 1], [1, 1]]) == 0.625
    with pytest.raises(EmptyClass):
        mean_class_accuracy([[1, 0], [0, 0]])


cms = st.lists(st.lists(st.integers(1, 9), min_size=3, max_size=3), min_size=3, max_size=3)


@given(cms, st.permutations([0, 1, 2]))
def test_accuracy_invariant_to_class_relabelling(cm, perm):
    cm = np.array(cm)
    p = np.array(perm)
    assert mean_class_accuracy(cm[p][:, p]) == pytest.approx(mean_class_accuracy(cm))


def test_aggregate_identical_runs():
    cm = np.array([[3, 1], [0, 2]])
    s = aggregate_runs([cm, cm, cm])
    assert (s.cell_std == 0).all() and s.std_accuracy == 0
    assert s.misclassified == 1 and s.mean_accuracy == pytest.approx(mean_class_accuracy(cm))


def test_aggregate_std_sqrt2():
    a = np.array([[3, 1], [0, 2]])
    b = a.copy()
    b[0, 1] += 2
    s = aggregate_runs([a, b])
    assert s.cell_std[0, 1] == pytest.approx(math.sqrt(2))
    assert s.cell_mean[0, 1] == 2 and s.misclassified == 2


def test_misclassified_rounds_up():
    a, b = np.array([[2, 1], [0, 2]]), np.array([[2, 0], [1, 3]])
    c = np.array([[2, 1], [1, 1]])
    assert aggregate_runs([a, b, c]).misclassified == math.ceil(4 / 3)


@settings(max_examples=30)
@given(st.lists(cms, min_size=2, max_size=5))
def test_aggregate_means_within_range(runs):
    stack = np.array(runs, dtype=float)
    s = aggregate_runs(runs)
    assert (s.cell_mean >= stack.min(0) - 1e-12).all() and (s.cell_mean <= stack.max(0) + 1e-12).all()
    assert 0 <= s.mean_accuracy <= 1


def test_aggregate_errors():
    with pytest.raises(ShapeMismatch):
        aggregate_runs([np.eye(2), np.eye(3)])
    with pytest.raises(ConfigError):
        aggregate_runs([np.eye(2)])


def test_reference_constants():
    assert REFERENCE_ACCURACY == {"location-ssl": 76.5, "pair-ssl": 64.3, "imagenet": 69.8,
                                  "expertdt": 87.0}


ROWS = [AblationRow(v, f, r, 0.5 + 0.1 * f + 0.01 * r)
        for v in ("location-ssl", "random-init") for f in (0.33, 1.0) for r in range(3)]


def test_curve_table_and_writers(tmp_path):
    table = curve_table(ROWS)
    assert len(table) == 4 and all(t["runs"] == 3 for t in table)
    assert table[0]["std_acc"] == pytest.approx(0.01)
    cms = {("location-ssl", 0.33): [np.eye(2, dtype=int) * 2, np.array([[2, 0], [1, 1]])],
           ("random-init", 0.33): [np.eye(2, dtype=int)]}
    write_ablation(ROWS, cms, tmp_path)
    rows = list(csv.reader(open(tmp_path / "ablation.csv")))
    assert rows[0] == ["variant", "fraction", "run", "mean_acc"] and len(rows) == 13
    assert rows[1][:3] == ["location-ssl", "0.33", "0"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["runs"]["location-ssl@0.33"]["misclassified"] == 1
    svg = (tmp_path / "curve.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 2 and "random-init" in svg


def test_svg_error_bars_clamped():
    svg = curve_svg([{"variant": "v", "fraction": 1.0, "mean_acc": 0.95, "std_acc": 0.2, "runs": 2}])
    assert 'stroke="#1f77b4"' in svg and "nan" not in svg


def test_ablation_row_count_and_determinism(tiny_cohort):
    kw = dict(fractions=(0.5, 1.0), runs=2, seed=3,
              schedule=DownstreamSchedule(stage1=[[1, 1e-3], [1, 1e-4]], epochs=3, batch=16),
              tiling=DownstreamConfig(tile=32, input_size=8), spec=EncoderSpec([(4, 1), (4, 1)]))
    rows, cms = ablation(tiny_cohort, {"random-init": None}, **kw)
    assert len(rows) == 1 * 2 * 2
    assert all(0 <= r.mean_acc <= 1 for r in rows)
    again, _ = ablation(tiny_cohort, {"random-init": None}, **kw)
    assert [r.mean_acc for r in rows] == [r.mean_acc for r in again]
    with pytest.raises(ConfigError):
        ablation(tiny_cohort, {"imagenet": None}, **kw)
    with pytest.raises(ConfigError):
        ablation(tiny_cohort, {"location-ssl": None}, **kw)
