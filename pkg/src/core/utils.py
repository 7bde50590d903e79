import hashlib
from pathlib import Path
from typing import Mapping

import numpy as np


def calculate_content_hash(named_arrays: Mapping[str, np.ndarray]) -> str:
    """
    Computes the SHA256 hash of a set of named arrays for write-discipline checks.

    Args:
        named_arrays (Mapping[str, np.ndarray]): Arrays keyed by name.

    Returns:
        str: The hexadecimal hash string.
    """
    # Sorted names + shapes + raw float64 bytes, so equal contents always hash equal
    digest = hashlib.sha256()
    for name in sorted(named_arrays):
        values = np.ascontiguousarray(named_arrays[name], dtype=np.float64)
        digest.update(name.encode("utf-8"))
        digest.update(str(values.shape).encode("utf-8"))
        digest.update(values.tobytes())
    return digest.hexdigest()


def calculate_file_hash(path: Path) -> str:
    """SHA256 of a file's bytes (run manifests)."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def derive_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Independent generator for (seed, stream...) so per-item draws do not depend on
    iteration order or on how many other items exist.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def round_half_up(value: float) -> int:
    return int(np.floor(value + 0.5))


def rank_order(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; ties broken by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores))
