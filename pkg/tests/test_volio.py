import gzip
import json
import struct

import numpy as np
import pytest

from tubetopo.errors import (
    CorruptHeader,
    DimensionalityMismatch,
    SchemaViolation,
    UnsupportedDatatype,
)
from tubetopo.grid import BinaryMask, LabelVolume, ProbVolume, VoxelGrid
from tubetopo.heads import ChannelMap
from tubetopo.volio import (
    dumps_canonical,
    read_channelmap,
    read_report,
    read_volume,
    write_channelmap,
    write_report,
    write_volume,
)


class TestNifti:
    def test_uint8_roundtrip(self, rng, tmp_path):
        data = rng.integers(0, 256, size=(64, 64, 64)).astype(np.uint8)
        grid = VoxelGrid(data, spacing=(1.5, 0.8, 1.1))
        path = tmp_path / "vol.nii"
        write_volume(grid, path)
        back, meta = read_volume(path)
        assert np.array_equal(back.data, data)
        assert back.spacing == pytest.approx(grid.spacing, rel=1e-6)
        assert meta.datatype == "uint8"

    @pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.float32])
    def test_datatype_roundtrip(self, rng, dtype, tmp_path):
        data = (rng.random((6, 7, 8)) * 100).astype(dtype)
        path = tmp_path / "vol.nii"
        write_volume(VoxelGrid(data), path)
        back, _ = read_volume(path)
        assert back.data.dtype == dtype
        assert np.array_equal(back.data, data)

    def test_gzip_matches_plain(self, rng, tmp_path):
        data = rng.integers(0, 2, size=(10, 11, 12)).astype(np.uint8)
        write_volume(VoxelGrid(data), tmp_path / "a.nii")
        write_volume(VoxelGrid(data), tmp_path / "a.nii.gz")
        plain, _ = read_volume(tmp_path / "a.nii")
        zipped, _ = read_volume(tmp_path / "a.nii.gz")
        assert np.array_equal(plain.data, zipped.data)
        assert plain.spacing == zipped.spacing

    def test_gzip_write_is_deterministic(self, rng, tmp_path):
        mask = BinaryMask.from_array(rng.random((8, 8, 8)) < 0.5)
        write_volume(mask, tmp_path / "a.nii.gz")
        write_volume(mask, tmp_path / "b.nii.gz")
        assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()

    def test_2d_roundtrip(self, rng, tmp_path):
        data = rng.integers(0, 256, size=(16, 20)).astype(np.uint8)
        grid = VoxelGrid(data, rank=2)
        write_volume(grid, tmp_path / "img.nii")
        back, meta = read_volume(tmp_path / "img.nii")
        assert meta.ndim == 2
        assert back.rank == 2
        assert np.array_equal(back.to_array(), data)

    def test_prob_volume_roundtrip(self, rng, tmp_path):
        pv = ProbVolume(rng.normal(size=(3, 4, 5, 6)).astype(np.float32))
        write_volume(pv, tmp_path / "prob.nii.gz")
        back, meta = read_volume(tmp_path / "prob.nii.gz", channels=True)
        assert isinstance(back, ProbVolume)
        assert back.channels == 3
        assert np.array_equal(back.data.astype(np.float32), pv.data.astype(np.float32))

    def test_4d_without_flag_rejected(self, rng, tmp_path):
        pv = ProbVolume(rng.normal(size=(2, 3, 3, 3)).astype(np.float32))
        write_volume(pv, tmp_path / "prob.nii")
        with pytest.raises(DimensionalityMismatch):
            read_volume(tmp_path / "prob.nii")

    def test_label_volume_int16(self, rng, tmp_path):
        lab = LabelVolume(VoxelGrid(rng.integers(0, 5, size=(5, 5, 5)).astype(np.int32)))
        write_volume(lab, tmp_path / "lab.nii")
        back, meta = read_volume(tmp_path / "lab.nii")
        assert meta.datatype == "int16"
        assert np.array_equal(back.data, lab.data)

    def test_bad_magic_rejected(self, rng, tmp_path):
        path = tmp_path / "vol.nii"
        write_volume(VoxelGrid(np.zeros((3, 3, 3), dtype=np.uint8)), path)
        raw = bytearray(path.read_bytes())
        raw[344:348] = b"XXX\x00"
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptHeader):
            read_volume(path)

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "vol.nii"
        write_volume(VoxelGrid(np.zeros((4, 4, 4), dtype=np.uint8)), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(CorruptHeader):
            read_volume(path)

    def test_unsupported_datatype_code(self, tmp_path):
        path = tmp_path / "vol.nii"
        write_volume(VoxelGrid(np.zeros((3, 3, 3), dtype=np.uint8)), path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<h", raw, 70, 64)  # float64 code, outside the subset
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedDatatype):
            read_volume(path)

    def test_zero_pixdim_warns_and_defaults(self, tmp_path):
        path = tmp_path / "vol.nii"
        write_volume(VoxelGrid(np.zeros((3, 3, 3), dtype=np.uint8)), path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<f", raw, 76 + 4, 0.0)  # pixdim[1]
        path.write_bytes(bytes(raw))
        back, meta = read_volume(path)
        assert back.spacing[2] == 1.0
        assert any("pixdim" in w for w in meta.warnings)

    def test_scl_slope_applied(self, tmp_path):
        path = tmp_path / "vol.nii"
        write_volume(VoxelGrid(np.arange(8, dtype=np.uint8).reshape(2, 2, 2)), path)
        raw = bytearray(path.read_bytes())
        struct.pack_into("<f", raw, 112, 2.0)  # scl_slope
        struct.pack_into("<f", raw, 116, 1.0)  # scl_inter
        path.write_bytes(bytes(raw))
        back, _ = read_volume(path)
        assert np.array_equal(back.data, np.arange(8).reshape(2, 2, 2) * 2.0 + 1.0)

    def test_unsupported_extension(self, tmp_path):
        with pytest.raises(UnsupportedDatatype):
            read_volume(tmp_path / "vol.mha")


class TestPgm:
    def test_roundtrip(self, rng, tmp_path):
        data = rng.integers(0, 256, size=(9, 13)).astype(np.uint8)
        grid = VoxelGrid(data, rank=2)
        path = tmp_path / "img.pgm"
        write_volume(grid, path)
        back, meta = read_volume(path)
        assert meta.datatype == "uint8"
        assert np.array_equal(back.to_array(), data)

    def test_comment_header(self, tmp_path):
        payload = bytes(range(6))
        (tmp_path / "img.pgm").write_bytes(b"P5\n# comment line\n3 2\n255\n" + payload)
        back, _ = read_volume(tmp_path / "img.pgm")
        assert back.to_array().tolist() == [[0, 1, 2], [3, 4, 5]]

    def test_wrong_magic(self, tmp_path):
        (tmp_path / "img.pgm").write_bytes(b"P2\n2 2\n255\n....")
        with pytest.raises(CorruptHeader):
            read_volume(tmp_path / "img.pgm")

    def test_large_maxval_rejected(self, tmp_path):
        (tmp_path / "img.pgm").write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(UnsupportedDatatype):
            read_volume(tmp_path / "img.pgm")


class TestChannelMapJson:
    def test_identity_roundtrip(self, tmp_path):
        path = tmp_path / "map.json"
        write_channelmap(ChannelMap.identity(2), path)
        cmap = read_channelmap(path)
        assert np.array_equal(cmap.weight, np.eye(2))
        assert np.array_equal(cmap.bias, np.zeros(2))

    def test_weight_length_mismatch(self, tmp_path):
        doc = {"in": 2, "out": 2, "weight": [1.0, 0.0, 0.0], "bias": [0.0, 0.0]}
        path = tmp_path / "map.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(SchemaViolation) as err:
            read_channelmap(path)
        assert "weight" in str(err.value)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "map.json"
        path.write_text(json.dumps({"in": 2, "out": 2, "weight": [1, 0, 0, 1]}))
        with pytest.raises(SchemaViolation) as err:
            read_channelmap(path)
        assert "bias" in str(err.value)

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "map.json"
        path.write_text("{nope")
        with pytest.raises(SchemaViolation):
            read_channelmap(path)


class TestReportJson:
    def test_roundtrip_field_identical(self, tmp_path):
        report = {
            "schema_version": 1,
            "dice": 0.9172342551342999,
            "count": 42,
            "flag": True,
            "missing": None,
            "nested": {"values": [1.0, 0.5, 3.7416573867739413]},
        }
        path = tmp_path / "report.json"
        write_report(report, path)
        assert read_report(path) == report

    def test_seventeen_significant_digits(self):
        assert '"x": 0.10000000000000001' in dumps_canonical({"x": 0.1})

    def test_integral_floats_keep_float_type(self, tmp_path):
        path = tmp_path / "r.json"
        write_report({"dice": 1.0}, path)
        assert isinstance(read_report(path)["dice"], float)

    def test_rewrite_is_byte_identical(self, tmp_path):
        doc = {"a": [0.1, 0.2, {"b": 3}], "c": "text"}
        write_report(doc, tmp_path / "a.json")
        write_report(doc, tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            dumps_canonical({"x": float("nan")})
