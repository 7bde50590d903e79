"""
Synthetic correlated audio-visual benchmark.

Each clip carries a latent state z_i following a stationary AR(1) process. Visual and
audio features are noisy linear views of z_i, so either modality predicts the other, and
the per-clip highlight label marks the top-q fraction of <w*, z_i> within the video.
The shifted test split applies an affine map plus noise to the features only.
"""

import logging
from typing import NamedTuple, Tuple

import numpy as np

from src.core.dataset import Dataset, FeatureSequence
from src.core.exceptions import DataValidationError
from src.core.schemas import ShiftSpec, SynthConfig
from src.core.utils import derive_rng, rank_order, round_half_up

logger = logging.getLogger(__name__)

_TRAIN, _IID, _SHIFTED, _SHIFT_NOISE = 0, 1, 2, 3


class SyntheticBenchmark(NamedTuple):
    train: Dataset
    test_iid: Dataset
    test_shifted: Dataset


class _Mixing(NamedTuple):
    m_v: np.ndarray
    m_a: np.ndarray
    w_star: np.ndarray


def _mixing(cfg: SynthConfig, seed: int) -> _Mixing:
    rng = derive_rng(cfg.mixing_seed if cfg.mixing_seed is not None else seed, 0)
    scale = 1.0 / np.sqrt(cfg.d_z)
    return _Mixing(
        m_v=rng.normal(0.0, scale, size=(cfg.d_v, cfg.d_z)),
        m_a=rng.normal(0.0, scale, size=(cfg.d_a, cfg.d_z)),
        w_star=rng.normal(0.0, 1.0, size=cfg.d_z),
    )


def highlight_count(n: int, q: float) -> int:
    """Positives per video: round(q·n), kept within [1, n-1]."""
    return min(max(round_half_up(q * n), 1), n - 1)


def _video(cfg: SynthConfig, mix: _Mixing, rng: np.random.Generator, video_id: str) -> FeatureSequence:
    n = int(rng.integers(cfg.clips_min, cfg.clips_max + 1))
    innovation = np.sqrt(1.0 - cfg.rho ** 2)
    z = np.empty((n, cfg.d_z))
    z[0] = rng.normal(size=cfg.d_z)
    for i in range(1, n):
        z[i] = cfg.rho * z[i - 1] + innovation * rng.normal(size=cfg.d_z)

    visual = z @ mix.m_v.T + cfg.sigma_v * rng.normal(size=(n, cfg.d_v))
    audio = z @ mix.m_a.T + cfg.sigma_a * rng.normal(size=(n, cfg.d_a))

    targets = np.zeros(n)
    targets[rank_order(z @ mix.w_star)[: highlight_count(n, cfg.q)]] = 1.0
    return FeatureSequence(video_id, visual, audio, targets)


def _split(cfg: SynthConfig, mix: _Mixing, seed: int, code: int, name: str, count: int) -> Dataset:
    videos = [_video(cfg, mix, derive_rng(seed, code, i), f"{name}-{i:04d}") for i in range(count)]
    return Dataset(tuple(videos), name, cfg.d_v, cfg.d_a, {
        "generator": "synthetic",
        "seed": seed,
        "config": cfg.model_dump(mode="json"),
    })


def _affine(dim: int, spec: ShiftSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    q, r = np.linalg.qr(rng.normal(size=(dim, dim)))
    q = q * np.sign(np.diag(r))
    s = (1.0 - spec.mix) * np.eye(dim) + spec.mix * q
    direction = rng.normal(size=dim)
    b = spec.offset * direction / np.linalg.norm(direction)
    return s, b


def apply_shift(dataset: Dataset, spec: ShiftSpec, seed: int) -> Dataset:
    """
    Applies x -> x Sᵀ + b + N(0, sigma²) to the targeted modality of every video.
    Targets are left untouched.
    """
    shift_seed = spec.seed if spec.seed is not None else seed
    rng = derive_rng(shift_seed, 1)
    visual_map = _affine(dataset.d_v, spec, rng) if spec.target in ("visual", "both") else None
    audio_map = _affine(dataset.d_a, spec, rng) if spec.target in ("audio", "both") else None

    videos = []
    for index, video in enumerate(dataset.videos):
        noise = derive_rng(shift_seed, _SHIFT_NOISE, index)
        visual, audio = video.visual, video.audio
        if visual_map is not None:
            s, b = visual_map
            visual = visual @ s.T + b + spec.sigma * noise.normal(size=visual.shape)
        if audio_map is not None and audio is not None:
            s, b = audio_map
            audio = audio @ s.T + b + spec.sigma * noise.normal(size=audio.shape)
        videos.append(FeatureSequence(video.id, visual, audio, video.targets))
    return dataset.with_videos(videos, shift=spec.model_dump(mode="json"))


def generate_synthetic(cfg: SynthConfig) -> SyntheticBenchmark:
    """
    Generates the train, i.i.d. test and shifted test splits.

    Args:
        cfg (SynthConfig): Generator parameters; a null seed means 0.

    Returns:
        SyntheticBenchmark: (train, test_iid, test_shifted), bitwise reproducible for a seed.

    Raises:
        DataValidationError: If videos could not hold both a positive and a negative clip.
    """
    seed = cfg.seed if cfg.seed is not None else 0
    if cfg.clips_min < 2:
        raise DataValidationError("Videos need at least two clips to hold a positive and a negative")
    mix = _mixing(cfg, seed)

    train = _split(cfg, mix, seed, _TRAIN, "train", cfg.n_train)
    test_iid = _split(cfg, mix, seed, _IID, "test_iid", cfg.n_test_iid)
    test_shifted = apply_shift(_split(cfg, mix, seed, _SHIFTED, "test_shifted", cfg.n_test_shifted), cfg.shift, seed)

    logger.info(
        f"Generated synthetic benchmark (seed={seed}): "
        f"{len(train)} train / {len(test_iid)} iid / {len(test_shifted)} shifted videos"
    )
    return SyntheticBenchmark(train, test_iid, test_shifted)
