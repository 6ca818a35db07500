"""Localization metrics and report files.

Coordinates are evaluated in original map units (meters for the target
surveys): standardized predictions are inverse-transformed before the
Euclidean error is taken. Classification metrics work on logits (argmax,
ties to the lowest class index) or directly on decoded labels.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import CoordScaler


def location_errors(pred_xy: np.ndarray, true_xy: np.ndarray) -> np.ndarray:
    """Per-record Euclidean distance in original units."""
    pred_xy = np.asarray(pred_xy, dtype=np.float64)
    true_xy = np.asarray(true_xy, dtype=np.float64)
    if pred_xy.shape != true_xy.shape:
        raise ValueError(f"shape mismatch: {pred_xy.shape} vs {true_xy.shape}")
    return np.sqrt(((pred_xy - true_xy) ** 2).sum(axis=1))


def mean_location_error(pred_std, true_std, scaler: CoordScaler) -> tuple[float, np.ndarray]:
    """Mean Euclidean error after inverse-transforming both inputs.

    Returns the mean together with the per-record error array so callers
    can build distributions (CDFs, percentiles) without a second pass.
    """
    errors = location_errors(scaler.inverse(pred_std), scaler.inverse(true_std))
    return float(errors.mean()), errors


@dataclass
class MetricsReport:
    """Bundle of localization metrics for one evaluated record set.

    ``error_list`` is sorted ascending; ``confusion`` is the floor
    confusion matrix (true class by row, predicted by column).
    ``building_accuracy`` is None for surveys without building labels.
    """

    floor_accuracy: float
    mle_meters: float
    error_list: np.ndarray
    confusion: np.ndarray
    building_accuracy: float | None = None

    def to_dict(self) -> dict:
        out = {
            "floor_accuracy": self.floor_accuracy,
            "mle_meters": self.mle_meters,
        }
        if self.building_accuracy is not None:
            out["building_accuracy"] = self.building_accuracy
        return out


def build_report(pred_xy, true_xy, pred_floors, true_floors, n_floors,
                 pred_buildings=None, true_buildings=None) -> MetricsReport:
    """Assemble a MetricsReport from decoded predictions and ground truth.

    Floor inputs here are dense class indices (0..n_floors-1) so the
    confusion matrix rows line up with codec classes.
    """
    errors = np.sort(location_errors(pred_xy, true_xy))
    pred_floors = np.asarray(pred_floors)
    true_floors = np.asarray(true_floors)
    confusion = np.zeros((n_floors, n_floors), dtype=np.int64)
    np.add.at(confusion, (true_floors, pred_floors), 1)
    building_acc = None
    if pred_buildings is not None and true_buildings is not None:
        building_acc = label_accuracy(pred_buildings, true_buildings)
    return MetricsReport(
        floor_accuracy=label_accuracy(pred_floors, true_floors),
        mle_meters=float(errors.mean()),
        error_list=errors,
        confusion=confusion,
        building_accuracy=building_acc,
    )


def predicted_classes(logits: np.ndarray) -> np.ndarray:
    """Argmax per row; exact ties resolve to the lowest class index."""
    return np.argmax(logits, axis=1)


def classification_accuracy(logits, labels) -> float:
    labels = np.asarray(labels)
    return float((predicted_classes(np.asarray(logits)) == labels).mean())


def label_accuracy(pred_labels, true_labels) -> float:
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    return float((pred_labels == true_labels).mean())


def confusion_matrix(logits, labels, n_classes: int) -> np.ndarray:
    """counts[t][p] = records of true class t predicted as p."""
    pred = predicted_classes(np.asarray(logits))
    labels = np.asarray(labels)
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (labels, pred), 1)
    return out


def cdf_points(errors) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF: sorted errors with cumulative fractions i/n."""
    errors = np.sort(np.asarray(errors, dtype=np.float64))
    n = len(errors)
    fractions = np.arange(1, n + 1, dtype=np.float64) / n
    return errors, fractions


def write_metrics(path, metrics: dict) -> None:
    """Flat key=value metrics file; floats serialized to full precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(metrics):
            value = metrics[key]
            if isinstance(value, float):
                fh.write(f"{key} = {value:.17g}\n")
            else:
                fh.write(f"{key} = {value}\n")


def write_confusion_csv(path, matrix: np.ndarray, class_labels=None) -> None:
    matrix = np.asarray(matrix)
    if class_labels is None:
        class_labels = list(range(matrix.shape[0]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred", *class_labels])
        for label, row in zip(class_labels, matrix):
            writer.writerow([label, *row.tolist()])


def write_cdf_csv(path, errors) -> None:
    xs, fs = cdf_points(errors)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error", "fraction"])
        for x, f in zip(xs, fs):
            writer.writerow([f"{x:.17g}", f"{f:.17g}"])
