"""
Ranking metrics (AP, mAP, top-5 mAP, HIT@1) and the Fréchet shift diagnostic.

Clips are ranked by descending score with ties broken by ascending clip index, so every
metric is deterministic.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core.exceptions import MetricError, NumericError
from src.core.schemas import BinarizeRule, ShiftScore
from src.core.utils import rank_order, round_half_up

logger = logging.getLogger(__name__)

Prediction = Tuple[np.ndarray, np.ndarray]  # (scores, positives)


def average_precision(scores: np.ndarray, positives: np.ndarray, top_k: Optional[int] = None) -> Optional[float]:
    """
    Mean over positives of the precision at their rank.

    Args:
        scores (np.ndarray): One score per clip.
        positives (np.ndarray): Boolean highlight flags.
        top_k (Optional[int]): Only the top_k ranked clips count; the denominator becomes
            min(top_k, #positives).

    Returns:
        Optional[float]: AP, or None when the video has no positive clip.
    """
    positives = np.asarray(positives, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != positives.shape:
        raise MetricError(f"scores {scores.shape} vs positives {positives.shape}")
    total = int(positives.sum())
    if total == 0:
        return None

    ranked = positives[rank_order(scores)]
    denominator = total
    if top_k is not None:
        ranked = ranked[:top_k]
        denominator = min(top_k, total)
    hits = np.cumsum(ranked)
    precision = hits / np.arange(1, ranked.size + 1)
    return float(math.fsum(precision[ranked]) / denominator)


def _mean(values: List[float]) -> float:
    # fsum is exactly rounded, so the mean does not depend on video order
    return math.fsum(values) / len(values)


def _aps(predictions: Sequence[Prediction], top_k: Optional[int]) -> List[float]:
    if not predictions:
        raise MetricError("No predictions to evaluate")
    aps = [average_precision(s, p, top_k) for s, p in predictions]
    kept = [ap for ap in aps if ap is not None]
    if not kept:
        raise MetricError("No video has a positive clip")
    return kept


def mean_average_precision(predictions: Sequence[Prediction]) -> float:
    """Mean AP over videos with at least one positive clip."""
    return _mean(_aps(predictions, None))


def top5_map(predictions: Sequence[Prediction]) -> float:
    """Mean AP truncated to the five top-ranked clips, denominator min(5, #positives)."""
    return _mean(_aps(predictions, 5))


def hit_at_1(predictions: Sequence[Prediction]) -> float:
    """Fraction of videos whose top-ranked clip is a highlight."""
    if not predictions:
        raise MetricError("No predictions to evaluate")
    hits = [float(np.asarray(p, dtype=bool)[rank_order(s)[0]]) for s, p in predictions]
    return _mean(hits)


def skipped_videos(predictions: Sequence[Prediction]) -> int:
    return sum(1 for _, p in predictions if not np.any(p))


def binarize_targets(h_gt: np.ndarray, rule: BinarizeRule = BinarizeRule()) -> np.ndarray:
    """
    Turns graded targets into highlight flags.

    threshold(t): h >= t. top_fraction(q): the round(q·n) highest targets, ties by index.
    """
    h_gt = np.asarray(h_gt, dtype=np.float64)
    if rule.kind == "threshold":
        return h_gt >= rule.value
    count = min(round_half_up(rule.value * h_gt.size), h_gt.size)
    flags = np.zeros(h_gt.size, dtype=bool)
    flags[rank_order(h_gt)[:count]] = True
    return flags


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T


def fid_shift(set_a: np.ndarray, set_b: np.ndarray, eps: float = 1e-6) -> ShiftScore:
    """
    Fréchet distance between Gaussian fits of two feature sets.

    FID = |μ_a − μ_b|² + tr(Σ_a + Σ_b − 2 (Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}), with unbiased
    covariances regularised by eps·I and matrix roots from a symmetric eigendecomposition
    (negative eigenvalues clamped to 0).

    Args:
        set_a (np.ndarray): m×D features (m >= 2).
        set_b (np.ndarray): k×D features (k >= 2).
        eps (float): Diagonal regulariser.

    Raises:
        MetricError: On fewer than two samples or mismatched widths.
        NumericError: If a covariance is not finite.
    """
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise MetricError(f"fid_shift needs two m×D sets of equal width, got {a.shape} and {b.shape}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise MetricError(f"fid_shift needs at least two samples per set, got {a.shape[0]} and {b.shape[0]}")

    dims = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sigma_a = np.atleast_2d(np.cov(a, rowvar=False)) + eps * np.eye(dims)
    sigma_b = np.atleast_2d(np.cov(b, rowvar=False)) + eps * np.eye(dims)
    if not (np.all(np.isfinite(sigma_a)) and np.all(np.isfinite(sigma_b))):
        raise NumericError("fid_shift: non-finite covariance")

    root_a = _sqrtm_psd(sigma_a)
    cross = _sqrtm_psd(root_a @ sigma_b @ root_a)
    diff = mu_a - mu_b
    fid = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * np.trace(cross))
    return ShiftScore(fid=max(fid, 0.0), dims=dims, n_a=a.shape[0], n_b=b.shape[0], eps=eps)
