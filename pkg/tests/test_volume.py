import numpy as np
import pytest

from slicebridge.volume import (Volume, VolumeFormatError, extract_subvolume,
                                load_volume, min_max_normalize, reassemble,
                                reslice, save_pgm, save_volume)


def rand_volume(shape, seed=0):
    rng = np.random.default_rng(seed)
    return Volume(rng.random(shape, dtype=np.float32))


def test_roundtrip_bit_exact(tmp_path):
    vol = rand_volume((5, 6, 7))
    path = tmp_path / "v.rvol"
    save_volume(vol, path)
    save_volume(vol, tmp_path / "v2.rvol")
    assert path.read_bytes() == (tmp_path / "v2.rvol").read_bytes()
    back = load_volume(path)
    assert np.array_equal(back.data, vol.data)


def test_zero_volume_byte_layout(tmp_path):
    path = tmp_path / "z.rvol"
    save_volume(Volume(np.zeros((2, 2, 2), dtype=np.float32)), path)
    raw = path.read_bytes()
    # 24-byte header (under the 64-byte cap) + 8 float32 zeros
    assert len(raw) == 24 + 32
    assert raw[24:] == b"\x00" * 32


def test_truncated_payload(tmp_path):
    vol = rand_volume((4, 4, 4))
    path = tmp_path / "t.rvol"
    save_volume(vol, path)
    path.write_bytes(path.read_bytes()[:-4])  # drop one float
    with pytest.raises(VolumeFormatError, match="truncated"):
        load_volume(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "b.rvol"
    save_volume(rand_volume((4, 4, 4)), path)
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(VolumeFormatError, match="magic"):
        load_volume(path)


def test_nan_payload_rejected(tmp_path):
    path = tmp_path / "n.rvol"
    save_volume(rand_volume((2, 2, 2)), path)
    raw = bytearray(path.read_bytes())
    raw[24:28] = np.float32(np.nan).tobytes()
    path.write_bytes(bytes(raw))
    with pytest.raises(VolumeFormatError, match="non-finite"):
        load_volume(path)


def test_volume_rejects_nan():
    data = np.zeros((2, 2, 2), dtype=np.float32)
    data[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Volume(data)


def test_min_max_normalize_affine():
    data = np.linspace(-100, 300, 64, dtype=np.float32).reshape(4, 4, 4)
    out = min_max_normalize(Volume(data))
    assert out.data.min() == 0.0
    assert out.data.max() == 1.0
    mid = np.abs(data - 100.0) < 1e-3
    np.testing.assert_allclose(out.data[mid], 0.5, atol=1e-6)


def test_min_max_normalize_identity():
    data = np.linspace(0, 1, 64, dtype=np.float32).reshape(4, 4, 4)
    out = min_max_normalize(Volume(data))
    np.testing.assert_allclose(out.data, data, atol=1e-7)


def test_min_max_normalize_constant():
    out = min_max_normalize(Volume(np.full((4, 4, 4), 0.7, dtype=np.float32)))
    assert out.constant_input
    assert np.all(out.data == 0.0)


def test_subvolume_interior():
    vol = rand_volume((10, 4, 4))
    sub = extract_subvolume(vol, 5, 1)
    np.testing.assert_array_equal(sub.data, vol.data[4:7])


def test_subvolume_replicates_low_edge():
    vol = rand_volume((10, 4, 4))
    sub = extract_subvolume(vol, 0, 1)
    np.testing.assert_array_equal(sub.data[0], vol.data[0])
    np.testing.assert_array_equal(sub.data[1], vol.data[0])
    np.testing.assert_array_equal(sub.data[2], vol.data[1])


def test_subvolume_replicates_high_edge():
    vol = rand_volume((10, 4, 4))
    sub = extract_subvolume(vol, 9, 1)
    np.testing.assert_array_equal(sub.data, vol.data[[8, 9, 9]])


def test_subvolume_center_row_always_exact():
    vol = rand_volume((6, 3, 3))
    for i in range(6):
        for N in (1, 2, 4):
            sub = extract_subvolume(vol, i, N)
            np.testing.assert_array_equal(sub.data[N], vol.data[i])


def test_subvolume_out_of_range():
    vol = rand_volume((5, 3, 3))
    with pytest.raises(IndexError):
        extract_subvolume(vol, 5, 1)
    with pytest.raises(IndexError):
        extract_subvolume(vol, -1, 1)


def test_reslice_axial():
    vol = rand_volume((5, 3, 4))
    s = reslice(vol, "z")
    assert s.shape == (5, 3, 4)
    np.testing.assert_array_equal(s[2], vol.data[2])


def test_reslice_coronal_shape():
    vol = rand_volume((2, 3, 4))
    s = reslice(vol, "y")
    assert s.shape == (3, 2, 4)
    np.testing.assert_array_equal(s[1], vol.data[:, 1, :])


def test_reslice_roundtrip_all_axes():
    vol = rand_volume((3, 4, 5))
    for axis in ("z", "y", "x"):
        back = reassemble(reslice(vol, axis), axis)
        np.testing.assert_array_equal(back.data, vol.data)


def test_pgm_export(tmp_path):
    sl = np.linspace(0, 1, 12).reshape(3, 4)
    path = tmp_path / "s.pgm"
    save_pgm(sl, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 3\n65535\n")
    pix = np.frombuffer(raw.split(b"65535\n", 1)[1], dtype=">u2").reshape(3, 4)
    assert pix[0, 0] == 0
    assert pix[2, 3] == 65535
