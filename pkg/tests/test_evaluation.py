"""Metric definitions and report files."""

import csv

import numpy as np
import pytest

from hgloc.dataset import CoordScaler
from hgloc.evaluation import (
    build_report,
    cdf_points,
    classification_accuracy,
    confusion_matrix,
    label_accuracy,
    location_errors,
    mean_location_error,
    predicted_classes,
    write_cdf_csv,
    write_confusion_csv,
    write_metrics,
)


def identity_scaler():
    return CoordScaler(mean=np.zeros(2), std=np.ones(2))


def test_three_four_five_triangle():
    scaler = identity_scaler()
    pred = np.array([[0.0, 0.0]])
    true = np.array([[3.0, 4.0]])
    mle, errors = mean_location_error(pred, true, scaler)
    assert mle == 5.0
    assert errors.tolist() == [5.0]


def test_location_errors_per_record_and_shape_check():
    pred = np.array([[0.0, 0.0], [1.0, 1.0]])
    true = np.array([[3.0, 4.0], [1.0, 1.0]])
    assert location_errors(pred, true).tolist() == [5.0, 0.0]
    with pytest.raises(ValueError):
        location_errors(pred, true[:1])


def test_mean_location_error_inverse_transforms_both_sides():
    scaler = CoordScaler(mean=np.array([10.0, -5.0]), std=np.array([2.0, 3.0]))
    rng = np.random.default_rng(0)
    true_xy = rng.uniform(-50, 50, size=(40, 2))
    pred_xy = true_xy + rng.normal(0, 4, size=(40, 2))
    expect = location_errors(pred_xy, true_xy)
    got, got_list = mean_location_error(
        scaler.transform(pred_xy), scaler.transform(true_xy), scaler
    )
    assert abs(got - expect.mean()) < 1e-9
    assert np.allclose(got_list, expect, atol=1e-9)


def test_argmax_ties_take_lowest_class():
    logits = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
    assert predicted_classes(logits).tolist() == [0, 1]


def test_accuracy_against_random_logits_statistics():
    rng = np.random.default_rng(1)
    k, n = 5, 4000
    logits = rng.normal(size=(n, k))
    labels = rng.integers(0, k, size=n)
    acc = classification_accuracy(logits, labels)
    assert abs(acc - 1.0 / k) < 0.03
    assert label_accuracy(labels, labels) == 1.0


def test_confusion_matrix_counts_and_trace():
    logits = np.array(
        [[2.0, 0.0], [2.0, 0.0], [0.0, 2.0], [0.0, 2.0], [2.0, 0.0]]
    )
    labels = np.array([0, 0, 1, 0, 1])
    cm = confusion_matrix(logits, labels, 2)
    assert cm.tolist() == [[2, 1], [1, 1]]
    assert cm.sum() == len(labels)
    assert cm.trace() / cm.sum() == classification_accuracy(logits, labels)


def test_confusion_trace_equals_accuracy_randomized():
    rng = np.random.default_rng(2)
    for _ in range(20):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(5, 60))
        logits = rng.normal(size=(n, k))
        labels = rng.integers(0, k, size=n)
        cm = confusion_matrix(logits, labels, k)
        assert cm.trace() / cm.sum() == classification_accuracy(logits, labels)


def test_build_report_fields():
    pred_xy = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [2.0, 0.0]])
    true_xy = np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    pred_f = np.array([0, 1, 1, 2])
    true_f = np.array([0, 1, 0, 2])
    report = build_report(pred_xy, true_xy, pred_f, true_f, n_floors=3,
                          pred_buildings=np.array([0, 0, 1, 1]),
                          true_buildings=np.array([0, 1, 1, 1]))
    assert report.error_list.tolist() == [0.0, 0.0, 1.0, 5.0]
    assert report.mle_meters == 1.5
    assert report.floor_accuracy == 0.75
    assert report.building_accuracy == 0.75
    assert report.confusion.tolist() == [[1, 1, 0], [0, 1, 0], [0, 0, 1]]
    assert report.to_dict()["mle_meters"] == 1.5


def test_build_report_without_buildings():
    pred_xy = np.zeros((2, 2))
    report = build_report(pred_xy, pred_xy, [0, 1], [0, 1], n_floors=2)
    assert report.building_accuracy is None
    assert "building_accuracy" not in report.to_dict()


def test_cdf_points_quarters():
    xs, fs = cdf_points([3.0, 1.0, 2.0, 4.0])
    assert xs.tolist() == [1.0, 2.0, 3.0, 4.0]
    assert fs.tolist() == [0.25, 0.5, 0.75, 1.0]


def test_metrics_file_round_trips_full_precision(tmp_path):
    path = tmp_path / "metrics.txt"
    value = 8.123456789012345
    write_metrics(path, {"val_mle": value, "epochs": 17, "dataset": "toy"})
    lines = path.read_text().splitlines()
    assert lines == sorted(lines)
    parsed = dict(line.split(" = ", 1) for line in lines)
    assert float(parsed["val_mle"]) == value
    assert parsed["epochs"] == "17"
    assert parsed["dataset"] == "toy"


def test_confusion_csv_round_trips(tmp_path):
    path = tmp_path / "confusion.csv"
    cm = np.array([[3, 1], [0, 5]])
    write_confusion_csv(path, cm, class_labels=[0, 1])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["true\\pred", "0", "1"]
    assert [int(x) for x in rows[1][1:]] == [3, 1]
    assert [int(x) for x in rows[2][1:]] == [0, 5]


def test_cdf_csv_round_trips(tmp_path):
    path = tmp_path / "cdf.csv"
    errors = [2.5, 0.5, 1.0]
    write_cdf_csv(path, errors)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["error", "fraction"]
    xs = [float(r[0]) for r in rows[1:]]
    fs = [float(r[1]) for r in rows[1:]]
    assert xs == [0.5, 1.0, 2.5]
    assert fs == [1 / 3, 2 / 3, 1.0]
