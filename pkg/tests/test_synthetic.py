import numpy as np
import pytest

from src.core.exceptions import DataValidationError
from src.core.schemas import ShiftSpec, SynthConfig
from src.core.synthetic import apply_shift, generate_synthetic, highlight_count


def test_splits_have_the_configured_sizes(bench, synth_config):
    assert (len(bench.train), len(bench.test_iid), len(bench.test_shifted)) == (6, 3, 4)
    assert all(synth_config.clips_min <= v.n_clips <= synth_config.clips_max for v in bench.train)
    assert bench.train.videos[0].id == "train-0000"


def test_same_seed_gives_identical_data(synth_config):
    first, second = generate_synthetic(synth_config), generate_synthetic(synth_config)
    for a, b in zip(first, second):
        assert a.same_as(b)
    other = generate_synthetic(synth_config.model_copy(update={"seed": 1}))
    assert not other.train.same_as(first.train)


def test_quantile_labels_count_exactly():
    cfg = SynthConfig(n_train=5, n_test_iid=1, n_test_shifted=1, clips_min=10, clips_max=10, q=0.2, seed=2)
    for video in generate_synthetic(cfg).train:
        assert video.targets.sum() == 2


@pytest.mark.parametrize("n, q, expected", [(10, 0.2, 2), (3, 0.01, 1), (3, 0.99, 2), (2, 0.5, 1)])
def test_highlight_count_keeps_a_positive_and_a_negative(n, q, expected):
    assert highlight_count(n, q) == expected


def test_noise_free_audio_is_linear_in_visual():
    cfg = SynthConfig(n_train=3, n_test_iid=1, n_test_shifted=1, sigma_v=0.0, sigma_a=0.0, seed=3)
    for video in generate_synthetic(cfg).train:
        weights, *_ = np.linalg.lstsq(video.visual, video.audio, rcond=None)
        assert np.max(np.abs(video.visual @ weights - video.audio)) < 1e-9


@pytest.mark.parametrize("target, moved, kept", [("visual", "visual", "audio"), ("audio", "audio", "visual")])
def test_shift_moves_only_the_targeted_modality(synth_config, target, moved, kept):
    shifted = generate_synthetic(synth_config.model_copy(update={"shift": ShiftSpec(target=target)}))
    clean = generate_synthetic(synth_config.model_copy(update={"shift": ShiftSpec(mix=0.0, offset=0.0, sigma=0.0)}))
    for before, after in zip(clean.test_shifted, shifted.test_shifted):
        np.testing.assert_array_equal(before.targets, after.targets)
        np.testing.assert_array_equal(getattr(before, kept), getattr(after, kept))
        assert not np.array_equal(getattr(before, moved), getattr(after, moved))


def test_default_shift_targets_the_audio_stream():
    assert ShiftSpec().target == "audio"


def test_null_shift_is_identity(bench):
    same = apply_shift(bench.test_iid, ShiftSpec(target="both", mix=0.0, offset=0.0, sigma=0.0), seed=0)
    for a, b in zip(bench.test_iid, same):
        np.testing.assert_array_equal(a.visual, b.visual)
        np.testing.assert_array_equal(a.audio, b.audio)


def test_invalid_clip_range_is_rejected():
    with pytest.raises(ValueError):
        SynthConfig(clips_min=10, clips_max=5)
    with pytest.raises(ValueError):
        SynthConfig(clips_min=1)
