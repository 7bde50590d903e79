"""
AVHF feature files.

Layout (all integers little-endian):
    b"AVHF" | version u32 | manifest length u32 | manifest (UTF-8 JSON) | payload

The manifest carries the dims, the split tag, provenance and one entry per video
{id, n, has_audio, has_targets}. The payload then holds, per video in manifest order,
visual (n×d_v), audio (n×d_a, if present) and targets (n, if present) as float32
row-major values. Round trips are bit-exact for data on the float32 grid
(see Dataset.as_float32).
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from src.core.dataset import Dataset, FeatureSequence
from src.core.exceptions import (
    AvhfDimensionError,
    AvhfMagicError,
    AvhfManifestError,
    AvhfPayloadError,
    AvhfTruncatedError,
    DataValidationError,
)

logger = logging.getLogger(__name__)

MAGIC = b"AVHF"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_FLOAT = np.dtype("<f4")


def encode_avhf(dataset: Dataset) -> bytes:
    entries = [
        {"id": v.id, "n": v.n_clips, "has_audio": v.has_audio, "has_targets": v.has_targets}
        for v in dataset.videos
    ]
    manifest = {
        "d_v": dataset.d_v,
        "d_a": dataset.d_a,
        "split": dataset.split,
        "count": len(entries),
        "provenance": dataset.provenance,
        "videos": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")

    chunks = [_HEADER.pack(MAGIC, VERSION, len(manifest_bytes)), manifest_bytes]
    for video in dataset.videos:
        for values in (video.visual, video.audio, video.targets):
            if values is not None:
                chunks.append(np.ascontiguousarray(values, dtype=_FLOAT).tobytes())
    return b"".join(chunks)


def write_avhf(dataset: Dataset, path: Union[str, Path]) -> Path:
    """
    Writes a dataset as an AVHF file.

    Args:
        dataset (Dataset): The split to persist.
        path (Union[str, Path]): Destination file; parent directories are created.

    Returns:
        Path: The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_avhf(dataset))
    logger.info(f"Wrote {len(dataset)} videos ('{dataset.split}') to {path}")
    return path


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _parse_manifest(raw: bytes) -> Dict[str, Any]:
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError, RecursionError) as e:
        raise AvhfManifestError(f"Manifest is not valid UTF-8 JSON: {e}") from None

    if not isinstance(manifest, dict):
        raise AvhfManifestError("Manifest must be a JSON object")
    for key in ("d_v", "d_a", "count", "videos", "split"):
        if key not in manifest:
            raise AvhfManifestError(f"Manifest is missing '{key}'")
    if not isinstance(manifest["split"], str):
        raise AvhfManifestError("Manifest 'split' must be a string")
    if not isinstance(manifest.get("provenance", {}), dict):
        raise AvhfManifestError("Manifest 'provenance' must be an object")
    if not isinstance(manifest["videos"], list) or not _is_int(manifest["count"]):
        raise AvhfManifestError("Manifest 'videos' must be a list and 'count' an integer")
    if manifest["count"] != len(manifest["videos"]):
        raise AvhfManifestError(
            f"Manifest declares {manifest['count']} videos but lists {len(manifest['videos'])}"
        )
    for key in ("d_v", "d_a"):
        if not _is_int(manifest[key]) or manifest[key] < 1:
            raise AvhfDimensionError(f"Manifest '{key}' must be a positive integer, got {manifest[key]!r}")

    for entry in manifest["videos"]:
        if not isinstance(entry, dict):
            raise AvhfManifestError("Every video entry must be an object")
        if not isinstance(entry.get("id"), str):
            raise AvhfManifestError("Video entry without a string 'id'")
        if not isinstance(entry.get("has_audio"), bool) or not isinstance(entry.get("has_targets"), bool):
            raise AvhfManifestError(f"Video '{entry['id']}' needs boolean has_audio/has_targets")
        if not _is_int(entry.get("n")) or entry["n"] < 1:
            raise AvhfDimensionError(f"Video '{entry['id']}' declares an invalid clip count {entry.get('n')!r}")
    return manifest


def decode_avhf(blob: bytes) -> Dataset:
    """
    Parses AVHF bytes. Every malformed input raises an AvhfFormatError subclass.
    """
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise AvhfMagicError("Not an AVHF file (bad magic bytes)")
    if len(blob) < _HEADER.size:
        raise AvhfTruncatedError("File ends inside the header")

    _, version, manifest_len = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise AvhfManifestError(f"Unsupported AVHF version {version}")
    payload_start = _HEADER.size + manifest_len
    if payload_start > len(blob):
        raise AvhfTruncatedError(f"Manifest length {manifest_len} runs past the end of the file")

    manifest = _parse_manifest(blob[_HEADER.size:payload_start])
    d_v, d_a = manifest["d_v"], manifest["d_a"]
    entries: List[Dict[str, Any]] = manifest["videos"]

    # Cross-check the declared sizes against the payload before touching it
    per_video = [e["n"] * (d_v + (d_a if e["has_audio"] else 0) + (1 if e["has_targets"] else 0)) for e in entries]
    expected = sum(per_video) * _FLOAT.itemsize
    actual = len(blob) - payload_start
    if actual != expected:
        raise AvhfTruncatedError(f"Payload holds {actual} bytes, manifest declares {expected}")

    offset = payload_start

    def take(count: int, shape) -> np.ndarray:
        nonlocal offset
        values = np.frombuffer(blob, dtype=_FLOAT, count=count, offset=offset)
        offset += count * _FLOAT.itemsize
        return values.astype(np.float64).reshape(shape)

    videos = []
    try:
        for entry in entries:
            n = entry["n"]
            visual = take(n * d_v, (n, d_v))
            audio = take(n * d_a, (n, d_a)) if entry["has_audio"] else None
            targets = take(n, (n,)) if entry["has_targets"] else None
            videos.append(FeatureSequence(entry["id"], visual, audio, targets))
        return Dataset(tuple(videos), manifest["split"], d_v, d_a, manifest.get("provenance", {}))
    except DataValidationError as e:
        raise AvhfPayloadError(f"Invalid payload: {e}") from None


def read_avhf(path: Union[str, Path]) -> Dataset:
    """
    Reads an AVHF file.

    Raises:
        AvhfMagicError, AvhfTruncatedError, AvhfDimensionError, AvhfManifestError,
        AvhfPayloadError: Depending on what is wrong with the file.
    """
    path = Path(path)
    dataset = decode_avhf(path.read_bytes())
    logger.info(f"Loaded {len(dataset)} videos ('{dataset.split}') from {path}")
    return dataset
