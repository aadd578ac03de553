import numpy as np
import pytest

from sspose.container import ContainerError, read_tensors, write_tensors


def test_roundtrip_mixed_dtypes(tmp_path):
    path = tmp_path / "t.sspt"
    a = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    b = np.linspace(0, 1, 7, dtype=np.float64)
    c = np.float32(3.5).reshape(())
    write_tensors(path, [a, b, c])
    ra, rb, rc = read_tensors(path)
    assert ra.dtype == np.float32 and np.array_equal(ra, a)
    assert rb.dtype == np.float64 and np.array_equal(rb, b)
    assert rc.shape == () and rc == np.float32(3.5)


def test_float64_roundtrip_bit_exact(tmp_path):
    path = tmp_path / "t.sspt"
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5))
    write_tensors(path, [a])
    (back,) = read_tensors(path)
    assert back.tobytes() == a.tobytes()


def test_header_layout(tmp_path):
    path = tmp_path / "t.sspt"
    write_tensors(path, [np.zeros((2, 2), dtype=np.float32)])
    raw = path.read_bytes()
    assert raw[:4] == b"SSPT"
    assert raw[4] == 1          # version
    assert raw[5] == 0          # dtype code float32
    assert raw[6] == 2          # rank
    assert int.from_bytes(raw[7:11], "little") == 2
    assert int.from_bytes(raw[11:15], "little") == 2


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.sspt"
    path.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(ContainerError):
        read_tensors(path)


def test_rejects_truncated(tmp_path):
    path = tmp_path / "t.sspt"
    write_tensors(path, [np.zeros((4, 4), dtype=np.float32)])
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ContainerError):
        read_tensors(path)


def test_rejects_int_dtype(tmp_path):
    with pytest.raises(ContainerError):
        write_tensors(tmp_path / "t.sspt", [np.zeros(3, dtype=np.int64)])
