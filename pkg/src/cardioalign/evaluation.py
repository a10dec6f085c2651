"""Reporting metrics: MAE with a mean-guess baseline, squared correlation, Dice, AUC, accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class MetricResult:
    name: str
    value: float | None
    n: int
    std: float | None = None
    breakdown: dict[str, float | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "n": self.n, "std": self.std,
                "breakdown": dict(self.breakdown)}


def _pair(pred, truth):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch: {pred.size} predictions, {truth.size} targets")
    if pred.size == 0:
        raise MetricError("empty input")
    return pred, truth


def metric_mae(pred, truth) -> MetricResult:
    """Mean and population standard deviation of |pred - truth|."""
    pred, truth = _pair(pred, truth)
    err = np.abs(pred - truth)
    return MetricResult("mae", float(err.mean()), err.size, float(err.std()))


def metric_mean_guess(truth) -> MetricResult:
    """MAE of predicting the cohort mean for every subject."""
    truth = np.asarray(truth, dtype=np.float64).ravel()
    res = metric_mae(np.full_like(truth, truth.mean()), truth)
    res.name = "mean_guess_mae"
    return res


def metric_r2(pred, truth) -> float | None:
    """Squared Pearson correlation; ``None`` when either side has no variance."""
    pred, truth = _pair(pred, truth)
    if pred.size < 2:
        return None
    pc, tc = pred - pred.mean(), truth - truth.mean()
    sp, st = np.sqrt((pc * pc).sum()), np.sqrt((tc * tc).sum())
    if sp == 0 or st == 0:
        return None
    r = float((pc * tc).sum() / (sp * st))
    return min(r * r, 1.0)


def metric_dice(pred, truth, cls: int) -> float:
    """2|A∩B| / (|A| + |B|) for label ``cls``; 1 when both masks are empty."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricError(f"shape mismatch {pred.shape} vs {truth.shape}")
    a, b = pred == cls, truth == cls
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def metric_auc(scores, labels) -> float | None:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted as one half."""
    scores, labels = _pair(scores, labels)
    pos = labels > 0.5
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks give ties half credit
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def metric_accuracy(scores, labels, threshold: float = 0.5) -> float:
    scores, labels = _pair(scores, labels)
    return float(((scores >= threshold) == (labels > 0.5)).mean())


def regression_table(pred: np.ndarray, truth: np.ndarray, names: list[str]) -> dict[str, dict]:
    """Per-target MAE, mean-guess MAE and squared correlation ([N, K] inputs)."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != len(names):
        raise MetricError(f"regression table wants [N, {len(names)}], got {pred.shape}")
    out = {}
    for k, name in enumerate(names):
        mae = metric_mae(pred[:, k], truth[:, k])
        mg = metric_mean_guess(truth[:, k])
        out[name] = {"mae": mae.value, "mae_std": mae.std, "mean_guess_mae": mg.value,
                     "mean_guess_std": mg.std, "r2": metric_r2(pred[:, k], truth[:, k]),
                     "n": mae.n}
    return out
