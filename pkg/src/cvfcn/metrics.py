"""Confusion matrix and the OA / AA / kappa scores derived from it.

Rows of the confusion matrix are true classes, columns are predictions.
"""

from __future__ import annotations

import json

import numpy as np

from .losses import LabelError


class EmptyEvaluationError(ValueError):
    pass


def confusion(pred: np.ndarray, truth: np.ndarray, K: int,
              eval_mask: np.ndarray | None = None) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in shape")
    mask = truth > 0 if eval_mask is None else np.asarray(eval_mask, dtype=bool) & (truth > 0)
    p, t = pred[mask], truth[mask]
    for name, v in (("prediction", p), ("truth", t)):
        if v.size and (v.min() < 1 or v.max() > K):
            raise LabelError(f"{name} class ids must lie in 1..{K}")
    return np.bincount((t - 1) * K + (p - 1), minlength=K * K).reshape(K, K).astype(np.int64)


def _total(c: np.ndarray) -> int:
    n = int(c.sum())
    if n == 0:
        raise EmptyEvaluationError("confusion matrix is empty")
    return n


def oa(c: np.ndarray) -> float:
    return float(np.trace(c)) / _total(c)


def per_class_accuracy(c: np.ndarray) -> np.ndarray:
    rows = c.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(rows > 0, np.diag(c) / rows, np.nan)


def aa(c: np.ndarray) -> float:
    """Mean accuracy over the classes that occur in the truth."""
    _total(c)
    return float(np.nanmean(per_class_accuracy(c)))


def kappa(c: np.ndarray) -> float:
    """Cohen's kappa, computed from integer counts so that worked examples
    come out exact: ``(n * trace - sum(row * col)) / (n^2 - sum(row * col))``."""
    n = _total(c)
    agree = int(np.trace(c))
    chance = sum(int(r) * int(k) for r, k in zip(c.sum(axis=1), c.sum(axis=0)))
    if chance == n * n:
        return 1.0 if agree == n else 0.0
    return (n * agree - chance) / (n * n - chance)


def report(c: np.ndarray) -> dict:
    return {
        "oa": oa(c),
        "aa": aa(c),
        "kappa": kappa(c),
        "per_class": [None if np.isnan(a) else float(a) for a in per_class_accuracy(c)],
        "confusion": c.tolist(),
    }


def _fmt(v) -> str:
    return "null" if v is None else f"{v:.6f}"


def report_json(c: np.ndarray) -> str:
    """Metrics JSON with every float written to six decimals."""
    r = report(c)
    per = ", ".join(_fmt(v) for v in r["per_class"])
    conf = json.dumps(r["confusion"])
    return (f'{{"oa": {_fmt(r["oa"])}, "aa": {_fmt(r["aa"])}, '
            f'"kappa": {_fmt(r["kappa"])}, "per_class": [{per}], "confusion": {conf}}}')
