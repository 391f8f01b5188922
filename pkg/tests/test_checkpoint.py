import hashlib
import struct

import numpy as np
import pytest

from hintloc.engine.checkpoint import MAGIC, load_state, save_state
from hintloc.errors import DataFormatError


def sample_arrays(seed=0):
    r = np.random.default_rng(seed)
    return {
        "encoder.weight": r.normal(size=(8, 4)),
        "encoder.bias": r.normal(size=4),
        "scalar": np.asarray(3.5),
    }


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        path = str(tmp_path / "state.bin")
        arrays = sample_arrays()
        meta = {"step": 17, "label": "coarse"}
        save_state(path, arrays, meta)
        loaded, got_meta = load_state(path)
        assert got_meta == meta
        assert set(loaded) == set(arrays)
        for name in arrays:
            assert np.array_equal(loaded[name], arrays[name])

    def test_repeated_saves_are_byte_identical(self, tmp_path):
        a = str(tmp_path / "a.bin")
        b = str(tmp_path / "b.bin")
        save_state(a, sample_arrays(), {"step": 1})
        save_state(b, sample_arrays(), {"step": 1})
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_no_temp_file_left_behind(self, tmp_path):
        path = tmp_path / "state.bin"
        save_state(str(path), sample_arrays(), {})
        assert [p.name for p in tmp_path.iterdir()] == ["state.bin"]


class TestCorruptionDetection:
    def test_truncated_file(self, tmp_path):
        path = str(tmp_path / "state.bin")
        save_state(path, sample_arrays(), {})
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[: len(blob) // 2])
        with pytest.raises(DataFormatError):
            load_state(path)

    def test_flipped_payload_byte(self, tmp_path):
        path = str(tmp_path / "state.bin")
        save_state(path, sample_arrays(), {})
        blob = bytearray(open(path, "rb").read())
        blob[len(blob) // 2] ^= 0xFF
        open(path, "wb").write(bytes(blob))
        with pytest.raises(DataFormatError, match="integrity"):
            load_state(path)

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "state.bin")
        open(path, "wb").write(b"NOPE" + b"\x00" * 64)
        with pytest.raises(DataFormatError, match="magic"):
            load_state(path)

    def test_version_mismatch(self, tmp_path):
        path = str(tmp_path / "state.bin")
        save_state(path, sample_arrays(), {})
        blob = bytearray(open(path, "rb").read()[:-32])
        blob[4:8] = struct.pack("<I", 99)
        blob += hashlib.sha256(bytes(blob)).digest()
        open(path, "wb").write(bytes(blob))
        with pytest.raises(DataFormatError, match="version"):
            load_state(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_state(str(tmp_path / "absent.bin"))

    def test_magic_constant(self):
        assert MAGIC == b"HLCK"
