"""Confusion-matrix scores and mutual-information feature ranking.

Confusion matrices are indexed ``[reference, predicted]`` with class ``k``
stored at position ``k - 1``.
"""

import numpy as np

from ._validation import check_labels
from .errors import DataError, ShapeError


def confusion(y_true, y_pred, n_classes):
    """K×K count matrix; pairs whose reference label is 0 are skipped."""
    y_true = check_labels(y_true, allow_zero=True)
    y_pred = check_labels(y_pred, allow_zero=True)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"{y_true.size} reference labels vs {y_pred.size} predictions")
    keep = y_true != 0
    y_true, y_pred = y_true[keep], y_pred[keep]
    if np.any(y_true > n_classes) or np.any(y_pred < 1) or np.any(y_pred > n_classes):
        raise DataError(f"labels must lie in 1..{n_classes}")
    M = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(M, (y_true - 1, y_pred - 1), 1)
    return M


def _check_cm(M):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.size == 0:
        raise ShapeError("confusion matrix must be square and non-empty")
    if np.any(M < 0):
        raise DataError("confusion matrix has negative counts")
    n = M.sum()
    if n <= 0:
        raise DataError("confusion matrix is empty (no samples)")
    return M.astype(np.float64), float(n)


def overall_accuracy(M):
    M, n = _check_cm(M)
    return float(np.trace(M) / n)


def kappa(M):
    """Cohen's kappa; 0 when chance agreement is already 1."""
    M, n = _check_cm(M)
    po = np.trace(M) / n
    pe = float(np.sum(M.sum(axis=1) * M.sum(axis=0))) / n ** 2
    if pe == 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


def class_accuracies(M):
    """Producer's (recall) and user's (precision) accuracy per class.

    Returns a list of dicts with ``producers``, ``users`` and ``empty_reference``
    / ``empty_predicted`` flags marking 0/0 entries (reported as 0).
    """
    M, _ = _check_cm(M)
    diag, rows, cols = np.diag(M), M.sum(axis=1), M.sum(axis=0)
    out = []
    for k in range(M.shape[0]):
        out.append({
            "producers": float(diag[k] / rows[k]) if rows[k] else 0.0,
            "users": float(diag[k] / cols[k]) if cols[k] else 0.0,
            "empty_reference": bool(rows[k] == 0),
            "empty_predicted": bool(cols[k] == 0),
        })
    return out


def evaluation_report(y_true, y_pred, n_classes):
    M = confusion(y_true, y_pred, n_classes)
    return {
        "oa": overall_accuracy(M),
        "kappa": kappa(M),
        "per_class": [{"producers": c["producers"], "users": c["users"]} for c in class_accuracies(M)],
        "confusion": M.tolist(),
    }


def mutual_information(feature, labels, bins=32):
    """Plug-in MI (nats) between an equal-width binned feature and the labels."""
    f = np.asarray(feature, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if f.shape != y.shape:
        raise ShapeError("feature and labels differ in length")
    if f.size < 2:
        raise DataError("need at least two samples")
    if bins < 2:
        raise DataError("need at least two bins")
    lo, hi = f.min(), f.max()
    if lo == hi:
        return 0.0
    b = np.minimum(((f - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    _, yi = np.unique(y, return_inverse=True)
    joint = np.zeros((bins, yi.max() + 1))
    np.add.at(joint, (b, yi), 1.0)
    joint /= f.size
    pb = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(max(np.sum(joint[nz] * np.log(joint[nz] / (pb @ py)[nz])), 0.0))


def rank_features(features, labels, bins=32):
    """MI of each column of ``features`` with ``labels``, ranked descending.

    Returns ``(order, mi)``; ties keep the lower feature index first.
    """
    F = np.asarray(features, dtype=np.float64)
    mi = np.array([mutual_information(F[:, j], labels, bins) for j in range(F.shape[1])])
    order = np.argsort(-mi, kind="stable")
    return order, mi
