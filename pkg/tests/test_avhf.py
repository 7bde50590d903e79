import numpy as np
import pytest

from src.core.avhf import decode_avhf, encode_avhf, read_avhf, write_avhf
from src.core.dataset import drop_audio
from src.core.exceptions import (
    AvhfDimensionError,
    AvhfFormatError,
    AvhfMagicError,
    AvhfManifestError,
    AvhfTruncatedError,
)
from tests.conftest import make_dataset


@pytest.fixture
def dataset():
    mixed = drop_audio(make_dataset(5), 0.4, seed=0)
    return mixed.with_videos([mixed.videos[0].without_targets(), *mixed.videos[1:]]).as_float32()


def test_round_trip_is_bit_exact(dataset, tmp_path):
    path = write_avhf(dataset, tmp_path / "split.avhf")
    loaded = read_avhf(path)
    assert loaded.same_as(dataset)
    assert loaded.provenance == dataset.provenance


def test_header_layout(dataset):
    blob = encode_avhf(dataset)
    assert blob[:4] == bytes([0x41, 0x56, 0x48, 0x46])
    assert int.from_bytes(blob[4:8], "little") == 1


def test_bad_magic(dataset):
    blob = bytearray(encode_avhf(dataset))
    blob[0] = ord("X")
    with pytest.raises(AvhfMagicError):
        decode_avhf(bytes(blob))


def test_truncated_payload(dataset):
    blob = encode_avhf(dataset)
    with pytest.raises(AvhfTruncatedError):
        decode_avhf(blob[:-3])
    with pytest.raises(AvhfTruncatedError):
        decode_avhf(blob[:6])


def test_trailing_bytes_are_rejected(dataset):
    with pytest.raises(AvhfTruncatedError):
        decode_avhf(encode_avhf(dataset) + b"\x00" * 4)


def test_unsupported_version(dataset):
    blob = bytearray(encode_avhf(dataset))
    blob[4] = 9
    with pytest.raises(AvhfManifestError):
        decode_avhf(bytes(blob))


def test_invalid_dimension_in_manifest(dataset):
    blob = encode_avhf(dataset)
    patched = blob.replace(b'"d_v": 4', b'"d_v": 0')
    assert patched != blob
    with pytest.raises(AvhfDimensionError):
        decode_avhf(patched)


def test_byte_flipping_never_crashes(dataset):
    blob = encode_avhf(dataset)
    rng = np.random.default_rng(0)
    for _ in range(500):
        mutated = bytearray(blob)
        for position in rng.integers(0, len(blob), size=int(rng.integers(1, 4))):
            mutated[position] ^= int(rng.integers(1, 256))
        try:
            decoded = decode_avhf(bytes(mutated))
        except AvhfFormatError:
            continue
        assert len(decoded) == len(dataset)
