"""Container format: lossless round trips and corruption detection."""

import numpy as np
import pytest

from hgloc.errors import ContainerError
from hgloc.serialize import FORMAT_VERSION, read_container, read_kind, write_container


def sample_blobs():
    rng = np.random.default_rng(0)
    return {
        "weights": rng.normal(size=(7, 3)).astype(np.float32),
        "edges": rng.integers(0, 100, size=(11, 2)).astype(np.uint32),
        "mask": (rng.random(7) < 0.5),
    }


def test_round_trip_preserves_arrays_bitwise(tmp_path):
    path = tmp_path / "artifact.bin"
    blobs = sample_blobs()
    write_container(path, "graph", {"role": "train", "k": 4}, blobs)
    meta, loaded = read_container(path, expect_kind="graph")
    assert meta == {"role": "train", "k": 4}
    assert list(loaded) == list(blobs)  # order preserved
    for name in blobs:
        assert loaded[name].dtype == blobs[name].dtype
        np.testing.assert_array_equal(loaded[name], blobs[name])


def test_double_serialization_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_container(a, "graph", {"x": 1}, sample_blobs())
    meta, blobs = read_container(a)
    write_container(b, "graph", meta, blobs)
    assert a.read_bytes() == b.read_bytes()


def test_truncated_file_is_detected(tmp_path):
    path = tmp_path / "t.bin"
    write_container(path, "graph", {}, sample_blobs())
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(ContainerError, match="truncated"):
        read_container(path)


def test_flipped_payload_byte_fails_checksum(tmp_path):
    path = tmp_path / "c.bin"
    write_container(path, "graph", {}, sample_blobs())
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="checksum"):
        read_container(path)


def test_bad_magic_and_version_mismatch(tmp_path):
    path = tmp_path / "m.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ContainerError, match="magic"):
        read_container(path)

    good = tmp_path / "v.bin"
    write_container(good, "graph", {}, {"x": np.zeros(2)})
    raw = good.read_bytes()
    head_len = int.from_bytes(raw[4:12], "little")
    head = raw[12 : 12 + head_len].decode()
    bumped = head.replace(f'"version":{FORMAT_VERSION}', f'"version":{FORMAT_VERSION + 1}')
    assert bumped != head
    good.write_bytes(raw[:4] + len(bumped).to_bytes(8, "little") + bumped.encode() + raw[12 + head_len :])
    with pytest.raises(ContainerError, match="version"):
        read_container(good)


def test_wrong_kind_rejected_and_peekable(tmp_path):
    path = tmp_path / "k.bin"
    write_container(path, "checkpoint", {}, {"w": np.zeros(3, dtype=np.float32)})
    assert read_kind(path) == "checkpoint"
    with pytest.raises(ContainerError, match="kind"):
        read_container(path, expect_kind="graph")


def test_big_endian_input_stored_little_endian(tmp_path):
    path = tmp_path / "e.bin"
    arr = np.arange(4, dtype=">f4")
    write_container(path, "graph", {}, {"x": arr})
    _, blobs = read_container(path)
    assert blobs["x"].dtype == np.dtype("<f4")
    np.testing.assert_array_equal(blobs["x"], arr.astype("<f4"))
