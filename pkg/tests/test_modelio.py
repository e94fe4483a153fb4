import struct

import numpy as np
import pytest

from gaitgate.encoder import EncoderConfig, ParameterSet, init_params
from gaitgate.modelio import (
    MAGIC,
    VERSION,
    BadMagicError,
    ChecksumError,
    ModelFormatError,
    TruncatedFileError,
    VersionMismatchError,
    load_params,
    save_params,
)


@pytest.fixture
def saved(tmp_path):
    cfg = EncoderConfig(input_shape=(65, 14), conv_channels=(4, 8), embedding_dim=16, init_seed=3)
    params = init_params(cfg)
    path = tmp_path / "model.gait"
    save_params(params, path)
    return params, path


class TestRoundTrip:
    def test_bit_identical(self, saved):
        params, path = saved
        loaded = load_params(path)
        assert loaded.names == params.names
        for k in params.names:
            assert loaded[k].dtype == np.float32
            assert np.array_equal(loaded[k], params[k])

    def test_float64_input_cast_to_f32(self, tmp_path):
        p = ParameterSet({"w": np.array([1.0, 1.0 / 3.0], dtype=np.float64)})
        path = tmp_path / "m.gait"
        save_params(p, path)
        loaded = load_params(path)
        assert loaded["w"].dtype == np.float32
        assert np.array_equal(loaded["w"], p["w"].astype(np.float32))

    def test_rewrite_byte_identical(self, saved, tmp_path):
        params, path = saved
        other = tmp_path / "again.gait"
        save_params(params, other)
        assert other.read_bytes() == path.read_bytes()

    def test_scalar_tensor(self, tmp_path):
        p = ParameterSet({"s": np.float32(2.5)})
        path = tmp_path / "m.gait"
        save_params(p, path)
        assert load_params(path)["s"] == np.float32(2.5)


class TestCorruption:
    def test_bad_magic(self, saved):
        _, path = saved
        data = bytearray(path.read_bytes())
        data[0] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            load_params(path)

    def test_unknown_version(self, saved):
        _, path = saved
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", VERSION + 1)
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatchError):
            load_params(path)

    @pytest.mark.parametrize("keep", [0, 3, 4, 9, 20, -7])
    def test_truncation(self, saved, keep):
        _, path = saved
        data = path.read_bytes()
        path.write_bytes(data[:keep] if keep >= 0 else data[:keep])
        with pytest.raises(TruncatedFileError):
            load_params(path)

    def test_flipped_payload_byte_fails_crc(self, saved):
        _, path = saved
        data = bytearray(path.read_bytes())
        data[-5] ^= 0x01  # inside the last tensor's values, after all headers
        path.write_bytes(bytes(data))
        with pytest.raises(ChecksumError):
            load_params(path)

    def test_trailing_garbage_rejected(self, saved):
        _, path = saved
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(ModelFormatError):
            load_params(path)

    def test_error_types_are_distinct_and_share_base(self):
        kinds = {BadMagicError, VersionMismatchError, TruncatedFileError, ChecksumError}
        assert len(kinds) == 4
        for k in kinds:
            assert issubclass(k, ModelFormatError)
            assert issubclass(k, ValueError)

    def test_magic_constant(self):
        assert MAGIC == b"GAIT"
