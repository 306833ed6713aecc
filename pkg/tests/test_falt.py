import numpy as np
import pytest

from falcon import falt
from falcon.errors import ArchiveError


def test_round_trip_preserves_order_dtype_bytes():
    rng = np.random.default_rng(0)
    entries = {
        "b_second": rng.normal(size=(3, 4)).astype(np.float32),
        "a_first": rng.normal(size=(2, 2, 2)).astype(np.float64),
        "c_third": rng.normal(size=(5,)).astype(np.float32),
    }
    data = falt.dumps(entries)
    assert data[:4] == b"FALT"
    back = falt.loads(data)
    assert list(back) == list(entries)  # insertion order kept
    for name, t in entries.items():
        assert back[name].dtype == t.dtype
        assert back[name].tobytes() == t.tobytes()


def test_file_round_trip(tmp_path):
    entries = {"x": np.arange(6, dtype=np.float32).reshape(2, 3)}
    path = tmp_path / "t.falt"
    falt.save(str(path), entries)
    assert np.array_equal(falt.load(str(path))["x"], entries["x"])


def test_bad_magic_rejected():
    with pytest.raises(ArchiveError):
        falt.loads(b"JUNKxxxxxx")


def test_truncated_rejected():
    data = falt.dumps({"x": np.ones((4, 4), np.float32)})
    with pytest.raises(ArchiveError):
        falt.loads(data[:-8])


def test_trailing_bytes_rejected():
    data = falt.dumps({"x": np.ones(3, np.float32)})
    with pytest.raises(ArchiveError):
        falt.loads(data + b"\x00")


def test_unknown_version_rejected():
    data = bytearray(falt.dumps({"x": np.ones(1, np.float32)}))
    data[4] = 9
    with pytest.raises(ArchiveError):
        falt.loads(bytes(data))


def test_unsupported_dtype_rejected():
    with pytest.raises(ArchiveError):
        falt.dumps({"x": np.ones(3, dtype=np.int32)})


def test_payload_is_little_endian():
    data = falt.dumps({"x": np.array([1.0], dtype=np.float32)})
    assert data[-4:] == np.array([1.0], dtype="<f4").tobytes()
