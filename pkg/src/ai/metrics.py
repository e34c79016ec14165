"""
Correlation between predicted scores and MOS: PLCC and SROCC.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


class UndefinedCorrelationError(ValueError):
    """A sequence has zero variance, so the correlation is undefined."""


@dataclass(frozen=True)
class ScorePairs:
    predictions: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        predictions = np.asarray(self.predictions, dtype=np.float64).reshape(-1)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if predictions.size != targets.size:
            raise ValueError(f"length mismatch: {predictions.size} predictions, {targets.size} targets")
        if predictions.size < 2:
            raise ValueError("correlation needs at least two pairs")
        if not (np.isfinite(predictions).all() and np.isfinite(targets).all()):
            raise ValueError("scores must be finite")
        object.__setattr__(self, 'predictions', predictions)
        object.__setattr__(self, 'targets', targets)

    @classmethod
    def of(cls, predictions: Sequence[float], targets: Sequence[float]) -> "ScorePairs":
        return cls(np.asarray(predictions), np.asarray(targets))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    for label, values in (('predictions', x), ('targets', y)):
        if np.all(values == values[0]):
            raise UndefinedCorrelationError(f"{label} have zero variance")
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
    return max(-1.0, min(1.0, r))


def plcc(pairs: ScorePairs) -> float:
    """Sample Pearson linear correlation, no nonlinear mapping beforehand."""
    return _pearson(pairs.predictions, pairs.targets)


def srocc(pairs: ScorePairs) -> float:
    """Spearman rank-order correlation; ties share their average rank."""
    return _pearson(rankdata(pairs.predictions, method='average'),
                    rankdata(pairs.targets, method='average'))
