"""Synthetic test sets with controlled calibration behavior.

These generators produce fully labeled TestSets whose misclassification
process is known by construction, so search efficiency can be checked
against ground truth: a calibrated null (SDR should concentrate at 1), a
high-confidence overconfident blob (facility-location search should win),
and overconfidence just above the usual candidate threshold (all strategies
should perform similarly).
"""

from __future__ import annotations

import numpy as np

from .dataset import TestPoint, TestSet

CLASSES = ("neg", "pos")


def _points(
    rng: np.random.Generator,
    features: np.ndarray,
    conf: np.ndarray,
    accuracy: np.ndarray,
) -> list[TestPoint]:
    n = len(conf)
    predicted = rng.integers(2, size=n)
    correct = rng.random(n) < accuracy
    pts = []
    for i in range(n):
        pred = CLASSES[predicted[i]]
        true = pred if correct[i] else CLASSES[1 - predicted[i]]
        pts.append(
            TestPoint(
                id=f"p{i:05d}",
                features=features[i],
                confidence=float(conf[i]),
                predicted_class=pred,
                true_label=true,
            )
        )
    return pts


def calibrated_null_testset(
    n: int, seed: int, p: int = 4, conf_range: tuple[float, float] = (0.5, 0.99)
) -> TestSet:
    """Every point is misclassified independently with probability 1 - c."""
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((n, p))
    conf = rng.uniform(conf_range[0], conf_range[1], size=n)
    return TestSet(_points(rng, features, conf, conf))


def planted_overconfidence_testset(
    n: int,
    seed: int,
    p: int = 4,
    high_fraction: float = 0.3,
    high_accuracy: float = 0.5,
    separation: float = 2.0,
) -> TestSet:
    """Calibrated low-confidence region plus an overconfident high-confidence
    blob occupying its own area of the feature space.

    Low region: c ~ U[0.65, 0.75], accuracy = c. High region: c ~
    U[0.88, 0.92] but true accuracy ``high_accuracy``.
    """
    rng = np.random.default_rng(seed)
    n_high = int(round(n * high_fraction))
    n_low = n - n_high
    feats_low = rng.standard_normal((n_low, p)) * 0.7 - separation
    feats_high = rng.standard_normal((n_high, p)) * 0.7 + separation
    conf_low = rng.uniform(0.65, 0.75, size=n_low)
    conf_high = rng.uniform(0.88, 0.92, size=n_high)
    features = np.vstack([feats_low, feats_high])
    conf = np.concatenate([conf_low, conf_high])
    accuracy = np.concatenate([conf_low, np.full(n_high, high_accuracy)])
    order = rng.permutation(n)
    return TestSet(_points(rng, features[order], conf[order], accuracy[order]))


def low_confidence_misclassification_testset(
    n: int,
    seed: int,
    p: int = 4,
    low_fraction: float = 0.3,
    low_accuracy: float = 0.25,
) -> TestSet:
    """Misclassifications concentrated in a narrow band just above 0.65.

    Low band: c ~ U[0.65, 0.70] with accuracy ``low_accuracy``. The rest is
    calibrated at c ~ U[0.85, 0.97]. Features are one uninformative blob.
    """
    rng = np.random.default_rng(seed)
    n_low = int(round(n * low_fraction))
    n_high = n - n_low
    features = rng.standard_normal((n, p))
    conf = np.concatenate(
        [rng.uniform(0.65, 0.70, size=n_low), rng.uniform(0.85, 0.97, size=n_high)]
    )
    accuracy = np.concatenate([np.full(n_low, low_accuracy), conf[n_low:]])
    order = rng.permutation(n)
    return TestSet(_points(rng, features[order], conf[order], accuracy[order]))


def near_threshold_overconfidence_testset(
    n: int,
    seed: int,
    p: int = 4,
    low_fraction: float = 0.6,
    low_accuracy: float = 0.45,
) -> TestSet:
    """Overconfidence planted just above the usual candidate threshold.

    Low region: c ~ U[0.65, 0.75] with constant true accuracy
    ``low_accuracy`` (well below c). High region: c ~ U[0.80, 0.95],
    calibrated. Features are a single uninformative blob, so confidence is
    the only useful predictor of misclassification.
    """
    rng = np.random.default_rng(seed)
    n_low = int(round(n * low_fraction))
    n_high = n - n_low
    features = rng.standard_normal((n, p))
    conf = np.concatenate(
        [rng.uniform(0.65, 0.75, size=n_low), rng.uniform(0.80, 0.95, size=n_high)]
    )
    accuracy = np.concatenate(
        [np.full(n_low, low_accuracy), conf[n_low:]]
    )
    order = rng.permutation(n)
    return TestSet(_points(rng, features[order], conf[order], accuracy[order]))
