import numpy as np
import pytest

from crreg import DisplacementField, LabelVolume, Volume
from crreg.metaimage import (
    MetaImageError,
    load_field,
    load_labels,
    load_volume,
    save_field,
    save_labels,
    save_volume,
)


def _header(path, dims="4 4 4", etype="MET_FLOAT", extra=""):
    path.write_text(
        f"ObjectType = Image\nNDims = 3\nDimSize = {dims}\n{extra}"
        f"ElementType = {etype}\nElementDataFile = {path.stem}.raw\n"
    )


def test_constant_payload(tmp_path):
    hdr = tmp_path / "c.mhd"
    _header(hdr)
    (tmp_path / "c.raw").write_bytes(np.full(64, 0.5, dtype="<f4").tobytes())
    v = load_volume(hdr)
    assert v.dims == (4, 4, 4)
    assert v.data.dtype == np.float64
    assert np.all(v.data == 0.5)


def test_short_payload_is_reported(tmp_path):
    hdr = tmp_path / "s.mhd"
    _header(hdr)
    (tmp_path / "s.raw").write_bytes(np.zeros(63, dtype="<f4").tobytes())
    with pytest.raises(MetaImageError, match="DimSize"):
        load_volume(hdr)


def test_non_finite_payload_is_reported(tmp_path):
    hdr = tmp_path / "n.mhd"
    _header(hdr, dims="2 2 2")
    payload = np.zeros(8, dtype="<f4")
    payload[3] = np.inf
    (tmp_path / "n.raw").write_bytes(payload.tobytes())
    with pytest.raises(MetaImageError, match="non-finite"):
        load_volume(hdr)


def test_missing_files(tmp_path):
    with pytest.raises(MetaImageError, match="not found"):
        load_volume(tmp_path / "absent.mhd")
    hdr = tmp_path / "orphan.mhd"
    _header(hdr)
    with pytest.raises(MetaImageError, match="ElementDataFile"):
        load_volume(hdr)


def test_missing_header_key(tmp_path):
    hdr = tmp_path / "k.mhd"
    hdr.write_text("NDims = 3\nElementType = MET_FLOAT\nElementDataFile = k.raw\n")
    with pytest.raises(MetaImageError, match="DimSize"):
        load_volume(hdr)


def test_wrong_element_type(tmp_path):
    hdr = tmp_path / "t.mhd"
    _header(hdr, dims="2 2 2", etype="MET_DOUBLE")
    (tmp_path / "t.raw").write_bytes(np.zeros(8).tobytes())
    with pytest.raises(MetaImageError, match="ElementType"):
        load_volume(hdr)


def test_volume_round_trip_is_bit_exact(tmp_path, rng):
    data = rng.random((5, 3, 4)).astype(np.float32).astype(np.float64)
    v = Volume(data, spacing=(1.0, 0.5, 2.0))
    save_volume(v, tmp_path / "v.mhd")
    raw = (tmp_path / "v.raw").read_bytes()
    assert raw == np.asarray(v.flat, dtype="<f4").tobytes()
    back = load_volume(tmp_path / "v.mhd")
    assert np.array_equal(back.data, data)
    assert back.spacing == (1.0, 0.5, 2.0)
    save_volume(back, tmp_path / "w.mhd")
    assert (tmp_path / "w.raw").read_bytes() == raw


def test_zero_field_payload(tmp_path):
    save_field(DisplacementField.zeros((4, 4, 4)), tmp_path / "u.mhd")
    raw = np.frombuffer((tmp_path / "u.raw").read_bytes(), dtype="<f4")
    assert raw.size == 192
    assert not raw.any()


def test_field_round_trip_interleaves_components(tmp_path, rng):
    u = rng.standard_normal((3, 4, 5, 3))
    save_field(DisplacementField(u), tmp_path / "u.mhd")
    raw = np.frombuffer((tmp_path / "u.raw").read_bytes(), dtype="<f4")
    # voxel (1, 2, 3) is the (1 + 3 * (2 + 4 * 3))-th triple
    at = 1 + 3 * (2 + 4 * 3)
    assert np.array_equal(raw[3 * at:3 * at + 3], u[1, 2, 3].astype(np.float32))
    back = load_field(tmp_path / "u.mhd")
    assert np.array_equal(back.vectors, u.astype(np.float32).astype(np.float64))


def test_labels_round_trip(tmp_path, rng):
    lab = LabelVolume(rng.integers(0, 5, size=(4, 3, 2)))
    save_labels(lab, tmp_path / "l.mhd")
    assert "MET_USHORT" in (tmp_path / "l.mhd").read_text()
    assert np.array_equal(load_labels(tmp_path / "l.mhd").labels, lab.labels)


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_volume(Volume(np.zeros((2, 2, 2))), tmp_path / "no" / "such" / "dir" / "v.mhd")
