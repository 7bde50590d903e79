import math

import numpy as np
import pytest

from src.core.exceptions import MetricError
from src.core.metrics import (
    average_precision,
    binarize_targets,
    fid_shift,
    hit_at_1,
    mean_average_precision,
    skipped_videos,
    top5_map,
)
from src.core.schemas import BinarizeRule


def brute_force_ap(scores, positives, top_k=None):
    """AP straight from the definition, ranking with an explicit sort key."""
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    if top_k is not None:
        ranked = ranked[:top_k]
    total = sum(positives)
    hits, precisions = 0, []
    for rank, index in enumerate(ranked, start=1):
        if positives[index]:
            hits += 1
            precisions.append(hits / rank)
    denominator = total if top_k is None else min(top_k, total)
    return math.fsum(precisions) / denominator


def test_average_precision_hand_example():
    ap = average_precision(np.array([0.9, 0.8, 0.1]), np.array([True, False, True]))
    assert ap == pytest.approx((1.0 + 2.0 / 3.0) / 2.0)


def test_all_positive_video_has_unit_ap():
    assert average_precision(np.array([0.1, 0.7, 0.3]), np.ones(3, dtype=bool)) == 1.0


def test_video_without_positives_is_skipped():
    assert average_precision(np.array([0.1, 0.2]), np.zeros(2, dtype=bool)) is None
    predictions = [
        (np.array([0.9, 0.1]), np.array([True, False])),
        (np.array([0.5, 0.4]), np.array([False, False])),
    ]
    assert mean_average_precision(predictions) == 1.0
    assert skipped_videos(predictions) == 1
    assert hit_at_1(predictions) == 0.5


def test_map_needs_a_positive_somewhere():
    with pytest.raises(MetricError):
        mean_average_precision([(np.array([0.5]), np.array([False]))])
    with pytest.raises(MetricError):
        hit_at_1([])


def test_ties_are_broken_by_clip_index():
    scores = np.array([0.5, 0.5, 0.5])
    assert average_precision(scores, np.array([True, False, False])) == 1.0
    assert average_precision(scores, np.array([False, False, True])) == pytest.approx(1.0 / 3.0)


def test_metrics_match_brute_force_on_random_small_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 7))
        scores = rng.integers(0, 4, size=n).astype(float)  # coarse values force ties
        positives = rng.random(n) < 0.5
        if not positives.any():
            positives[int(rng.integers(0, n))] = True
        expected = brute_force_ap(scores.tolist(), positives.tolist())
        assert average_precision(scores, positives) == expected
        assert average_precision(scores, positives, top_k=5) == brute_force_ap(
            scores.tolist(), positives.tolist(), top_k=5
        )
        top = sorted(range(n), key=lambda i: (-scores[i], i))[0]
        assert hit_at_1([(scores, positives)]) == float(positives[top])


def test_top5_map_on_ten_clips():
    rng = np.random.default_rng(1)
    scores = rng.random(10)
    positives = np.zeros(10, dtype=bool)
    positives[[0, 3, 4, 7, 8, 9]] = True
    expected = brute_force_ap(scores.tolist(), positives.tolist(), top_k=5)
    assert top5_map([(scores, positives)]) == pytest.approx(expected, abs=0)
    assert top5_map([(scores, positives)]) <= 1.0


def test_perfect_ranker_scores_one():
    targets = np.array([1.0, 0.0, 1.0, 0.0, 0.0])
    predictions = [(targets, targets.astype(bool))]
    assert mean_average_precision(predictions) == 1.0
    assert top5_map(predictions) == 1.0
    assert hit_at_1(predictions) == 1.0


def test_ap_is_invariant_to_monotone_transforms():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=12)
    positives = rng.random(12) < 0.4
    positives[0] = True
    assert average_precision(scores, positives) == average_precision(np.exp(3.0 * scores) + 1.0, positives)


def test_binarize_threshold_is_identity_on_binary_targets():
    targets = np.array([1.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(binarize_targets(targets), targets.astype(bool))


def test_binarize_top_fraction_counts_exactly():
    flags = binarize_targets(np.full(10, 0.3), BinarizeRule(kind="top_fraction", value=0.2))
    assert flags.sum() == 2
    np.testing.assert_array_equal(np.flatnonzero(flags), [0, 1])


def test_binarize_threshold_matches_comparison():
    targets = np.random.default_rng(3).random(50)
    np.testing.assert_array_equal(binarize_targets(targets, BinarizeRule(value=0.7)), targets >= 0.7)


def test_fid_of_identical_sets_is_zero():
    x = np.random.default_rng(4).normal(size=(200, 5))
    score = fid_shift(x, x)
    assert score.fid == pytest.approx(0.0, abs=1e-8)
    assert (score.dims, score.n_a, score.n_b, score.eps) == (5, 200, 200, 1e-6)


def test_fid_is_symmetric():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(100, 4)), rng.normal(1.0, 2.0, size=(80, 4))
    assert fid_shift(a, b).fid == pytest.approx(fid_shift(b, a).fid, abs=1e-8)


def test_fid_of_a_mean_shift_approaches_the_squared_distance():
    rng = np.random.default_rng(6)
    mu = np.array([0.6, 0.0, -0.8, 0.0])
    a = rng.normal(size=(20000, 4))
    b = rng.normal(size=(20000, 4)) + mu
    assert abs(fid_shift(a, b).fid - mu @ mu) < 0.1


def test_fid_matches_the_diagonal_closed_form():
    # Columns of a Sylvester Hadamard matrix (minus the constant one) are centred and
    # orthogonal, so the sample covariance is exactly diagonal
    h = np.array([[1.0]])
    for _ in range(3):
        h = np.kron(h, np.array([[1.0, 1.0], [1.0, -1.0]]))
    base = h[:, 1:4]
    n = base.shape[0]
    scale_a, scale_b = np.array([1.0, 2.0, 0.5]), np.array([0.3, 1.5, 2.5])
    mu_b = np.array([1.0, -2.0, 0.5])
    a = base * scale_a
    b = base * scale_b + mu_b

    var_a = scale_a ** 2 * n / (n - 1) + 1e-6
    var_b = scale_b ** 2 * n / (n - 1) + 1e-6
    expected = float(np.sum((np.sqrt(var_a) - np.sqrt(var_b)) ** 2) + mu_b @ mu_b)
    assert fid_shift(a, b).fid == pytest.approx(expected, abs=1e-8)


def test_fid_needs_two_samples_and_equal_widths():
    with pytest.raises(MetricError):
        fid_shift(np.ones((1, 3)), np.ones((4, 3)))
    with pytest.raises(MetricError):
        fid_shift(np.ones((4, 3)), np.ones((4, 2)))
