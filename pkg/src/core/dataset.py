import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.core.exceptions import DataValidationError
from src.core.utils import derive_rng, round_half_up

logger = logging.getLogger(__name__)


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    """
    One video split into n clips: visual (n×d_v), optional audio (n×d_a) and optional
    per-clip highlight targets in [0, 1]. Arrays are copied and made read-only.
    """

    id: str
    visual: np.ndarray
    audio: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        visual = _frozen(self.visual)
        if visual.ndim != 2 or visual.shape[0] < 1 or visual.shape[1] < 1:
            raise DataValidationError(f"Video '{self.id}': visual must be n×d_v, got {visual.shape}")
        n = visual.shape[0]
        object.__setattr__(self, "visual", visual)

        if self.audio is not None:
            audio = _frozen(self.audio)
            if audio.ndim != 2 or audio.shape[0] != n or audio.shape[1] < 1:
                raise DataValidationError(f"Video '{self.id}': audio {audio.shape} does not match {n} clips")
            object.__setattr__(self, "audio", audio)

        if self.targets is not None:
            targets = _frozen(self.targets).reshape(-1)
            if targets.shape[0] != n:
                raise DataValidationError(f"Video '{self.id}': {targets.shape[0]} targets for {n} clips")
            if np.any(targets < 0) or np.any(targets > 1):
                raise DataValidationError(f"Video '{self.id}': targets must lie in [0, 1]")
            object.__setattr__(self, "targets", targets)

        for name in ("visual", "audio", "targets"):
            values = getattr(self, name)
            if values is not None and not np.all(np.isfinite(values)):
                raise DataValidationError(f"Video '{self.id}': non-finite {name} values")

    @property
    def n_clips(self) -> int:
        return self.visual.shape[0]

    @property
    def has_audio(self) -> bool:
        return self.audio is not None

    @property
    def has_targets(self) -> bool:
        return self.targets is not None

    def without_targets(self) -> "FeatureSequence":
        return replace(self, targets=None)

    def without_audio(self) -> "FeatureSequence":
        return replace(self, audio=None)

    def same_as(self, other: "FeatureSequence") -> bool:
        """Bitwise equality of id and every present array."""
        if self.id != other.id:
            return False
        for name in ("visual", "audio", "targets"):
            mine, theirs = getattr(self, name), getattr(other, name)
            if (mine is None) != (theirs is None):
                return False
            if mine is not None and (mine.shape != theirs.shape or mine.tobytes() != theirs.tobytes()):
                return False
        return True


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Homogeneous collection of videos plus split tag and provenance metadata.
    """

    videos: Tuple[FeatureSequence, ...]
    split: str
    d_v: int
    d_a: int
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "videos", tuple(self.videos))
        for video in self.videos:
            if video.visual.shape[1] != self.d_v:
                raise DataValidationError(
                    f"Video '{video.id}' has d_v={video.visual.shape[1]}, dataset expects {self.d_v}"
                )
            if video.audio is not None and video.audio.shape[1] != self.d_a:
                raise DataValidationError(
                    f"Video '{video.id}' has d_a={video.audio.shape[1]}, dataset expects {self.d_a}"
                )

    def __len__(self) -> int:
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    @property
    def is_labeled(self) -> bool:
        return len(self.videos) > 0 and all(v.has_targets for v in self.videos)

    def with_videos(self, videos: List[FeatureSequence], **provenance: Any) -> "Dataset":
        return Dataset(tuple(videos), self.split, self.d_v, self.d_a, {**self.provenance, **provenance})

    def renamed(self, split: str) -> "Dataset":
        return Dataset(self.videos, split, self.d_v, self.d_a, dict(self.provenance))

    def as_float32(self) -> "Dataset":
        """Rounds every feature and target to the 32-bit grid used by AVHF files."""
        def q(values: Optional[np.ndarray]) -> Optional[np.ndarray]:
            return None if values is None else values.astype(np.float32).astype(np.float64)

        return self.with_videos([
            FeatureSequence(v.id, q(v.visual), q(v.audio), q(v.targets)) for v in self.videos
        ])

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.split == other.split
            and (self.d_v, self.d_a) == (other.d_v, other.d_a)
            and len(self) == len(other)
            and all(a.same_as(b) for a, b in zip(self.videos, other.videos))
        )


# --- Transforms (pure, seed-deterministic) ---

def corrupt_gaussian(dataset: Dataset, sigma: float, seed: int) -> Dataset:
    """
    Adds independent N(0, sigma²) noise to every visual and audio entry. Targets are untouched.

    Args:
        dataset (Dataset): Source split (not modified).
        sigma (float): Noise standard deviation, >= 0.
        seed (int): Noise seed; each video draws from its own derived stream.

    Returns:
        Dataset: The corrupted copy.
    """
    if sigma < 0:
        raise DataValidationError(f"Noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return dataset.with_videos(list(dataset.videos))

    videos = []
    for index, video in enumerate(dataset.videos):
        rng = derive_rng(seed, index)
        visual = video.visual + rng.normal(0.0, sigma, size=video.visual.shape)
        audio = None if video.audio is None else video.audio + rng.normal(0.0, sigma, size=video.audio.shape)
        videos.append(FeatureSequence(video.id, visual, audio, video.targets))
    logger.info(f"Added Gaussian noise (sigma={sigma}) to {len(videos)} videos of '{dataset.split}'")
    return dataset.with_videos(videos, noise_sigma=sigma, noise_seed=seed)


def _choose(n: int, fraction: float, seed: int) -> np.ndarray:
    if not 0.0 <= fraction <= 1.0:
        raise DataValidationError(f"Fraction must lie in [0, 1], got {fraction}")
    count = min(n, round_half_up(fraction * n))
    chosen = np.random.default_rng(seed).choice(n, size=count, replace=False)
    return np.sort(chosen)


def drop_audio(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Removes the audio stream from a seeded uniform choice of round(fraction·N) videos."""
    chosen = set(_choose(len(dataset), fraction, seed).tolist())
    videos = [v.without_audio() if i in chosen else v for i, v in enumerate(dataset.videos)]
    logger.info(f"Dropped audio from {len(chosen)}/{len(dataset)} videos of '{dataset.split}'")
    return dataset.with_videos(videos, audio_dropped=len(chosen), drop_audio_seed=seed)


def drop_train_fraction(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Removes a seeded uniform choice of round(fraction·N) whole videos."""
    removed = set(_choose(len(dataset), fraction, seed).tolist())
    videos = [v for i, v in enumerate(dataset.videos) if i not in removed]
    logger.info(f"Removed {len(removed)}/{len(dataset)} videos from '{dataset.split}'")
    return dataset.with_videos(videos, videos_removed=len(removed), drop_train_seed=seed)


def split_halves(dataset: Dataset, seed: int) -> Tuple[Dataset, Dataset]:
    """Random split into two parts (p1 gets the extra video when N is odd)."""
    order = np.random.default_rng(seed).permutation(len(dataset))
    cut = (len(dataset) + 1) // 2
    first = [dataset.videos[i] for i in np.sort(order[:cut])]
    second = [dataset.videos[i] for i in np.sort(order[cut:])]
    return (
        Dataset(tuple(first), f"{dataset.split}_p1", dataset.d_v, dataset.d_a, dict(dataset.provenance)),
        Dataset(tuple(second), f"{dataset.split}_p2", dataset.d_v, dataset.d_a, dict(dataset.provenance)),
    )


def video_signature(video: FeatureSequence) -> np.ndarray:
    """Concatenation of mean-pooled visual and audio features (the FID feature of a video)."""
    if video.audio is None:
        raise DataValidationError(f"Video '{video.id}' has no audio; its signature is undefined")
    return np.concatenate([video.visual.mean(axis=0), video.audio.mean(axis=0)])


def dataset_signatures(dataset: Dataset) -> np.ndarray:
    return np.stack([video_signature(v) for v in dataset.videos])
