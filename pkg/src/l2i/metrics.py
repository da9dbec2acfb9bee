"""Binary classification scores: accuracy, Cohen's kappa, AUROC, aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UndefinedMetricError(ValueError):
    """The metric has no defined value on this input (e.g. single-class AUROC)."""


@dataclass
class MetricScores:
    accuracy: float
    kappa: float
    auroc: float
    n_samples: int


def _as_labels(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64)


def accuracy(pred, true) -> float:
    pred, true = _as_labels(pred), _as_labels(true)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError(f"label vectors must be equal and nonempty: {pred.shape} vs {true.shape}")
    return float(np.mean(pred == true))


def cohen_kappa(pred, true) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e).

    p_e is the product of the marginal label frequencies of both raters;
    when p_e == 1 (both raters constant and identical) the score is 0.
    """
    pred, true = _as_labels(pred), _as_labels(true)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError(f"label vectors must be equal and nonempty: {pred.shape} vs {true.shape}")
    n = pred.size
    classes = np.union1d(pred, true)
    p_o = float(np.mean(pred == true))
    p_e = float(sum(np.mean(pred == c) * np.mean(true == c) for c in classes))
    if p_e >= 1.0 - 1e-15:
        return 0.0
    return (p_o - p_e) / (1.0 - p_e)


def auroc(scores, true) -> float:
    """Probability that a random positive outscores a random negative.

    Computed from average ranks (ties count one half), which equals the
    pairwise comparison statistic exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    true = _as_labels(true)
    if scores.shape != true.shape or scores.size == 0:
        raise ValueError(f"score/label vectors must be equal and nonempty: {scores.shape} vs {true.shape}")
    pos = true == 1
    n_pos = int(pos.sum())
    n_neg = int(true.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes in the true labels")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # 1-based average rank of the tie block
        i = j + 1
    return ranks


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample standard deviation (0 for a single value)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("need at least one value")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def format_mean_std(mean: float, std: float) -> str:
    """Render a score pair on the 0..1 scale as e.g. '89.0 [3.9]'."""
    return f"{mean * 100:.1f} [{std * 100:.1f}]"


def aggregate(rows: Sequence[MetricScores]) -> dict[str, tuple[float, float]]:
    """Per-metric (mean, sample std) over a set of run scores."""
    if not rows:
        raise ValueError("need at least one row")
    return {
        "accuracy": mean_std([r.accuracy for r in rows]),
        "kappa": mean_std([r.kappa for r in rows]),
        "auroc": mean_std([r.auroc for r in rows]),
    }
