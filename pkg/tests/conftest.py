import numpy as np
import pytest

from src.core.dataset import Dataset, FeatureSequence
from src.core.model import init_params
from src.core.schemas import ModelConfig, SynthConfig, TrainConfig
from src.core.synthetic import generate_synthetic

TINY_DIMS = {"d_v": 4, "d_a": 3}


@pytest.fixture
def model_config() -> ModelConfig:
    return ModelConfig(d=6, d_h=5, seed=0, **TINY_DIMS)


@pytest.fixture
def params(model_config):
    return init_params(model_config)


@pytest.fixture
def synth_config() -> SynthConfig:
    return SynthConfig(
        n_train=6, n_test_iid=3, n_test_shifted=4, clips_min=5, clips_max=8, d_z=3, seed=0, **TINY_DIMS
    )


@pytest.fixture
def bench(synth_config):
    return generate_synthetic(synth_config)


@pytest.fixture
def video(bench) -> FeatureSequence:
    return bench.train.videos[0]


@pytest.fixture
def rng_array():
    rng = np.random.default_rng(0)
    return lambda *shape: rng.normal(size=shape)


@pytest.fixture
def train_config() -> TrainConfig:
    return TrainConfig(
        joint_lr=0.01, inner_lr=0.05, meta_lr=0.01, inner_steps=2, batch_size=2,
        joint_epochs=1, meta_epochs=1, seed=0,
    )


def make_video(video_id: str, n: int = 6, seed: int = 0, audio: bool = True, targets: bool = True) -> FeatureSequence:
    rng = np.random.default_rng(seed)
    labels = None
    if targets:
        labels = np.zeros(n)
        labels[: max(1, n // 3)] = 1.0
    return FeatureSequence(
        video_id,
        rng.normal(size=(n, TINY_DIMS["d_v"])),
        rng.normal(size=(n, TINY_DIMS["d_a"])) if audio else None,
        labels,
    )


def make_dataset(count: int, split: str = "test", **kwargs) -> Dataset:
    videos = tuple(make_video(f"{split}-{i:04d}", seed=i, **kwargs) for i in range(count))
    return Dataset(videos, split, TINY_DIMS["d_v"], TINY_DIMS["d_a"])
