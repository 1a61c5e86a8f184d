import struct

import numpy as np
import pytest

from pyrosurrogate.errors import (
    BadMagicError,
    ChecksumError,
    DecodeError,
    TruncatedPayloadError,
    UnsupportedVersionError,
)
from pyrosurrogate.forest import (
    HyperParams,
    deserialize,
    fit_forest_arrays,
    load_model,
    save_model,
    serialize,
)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def reseal(body: bytes) -> bytes:
    return body + struct.pack("<Q", fnv1a64(body))


@pytest.fixture
def leaf_model():
    return fit_forest_arrays([[0.0], [1.0]], [4.0, 4.0], HyperParams(n_estimators=1, seed=0), bootstrap=False)


class TestFormat:
    def test_single_leaf_bytes(self, leaf_model):
        body = b"PYRF"
        body += struct.pack("<H", 1)  # version
        body += struct.pack("<H", 0x0101)  # SplitMix64 id, bootstrap disabled
        body += struct.pack("<Q", 0)  # seed
        body += struct.pack("<I", 1)  # trees
        body += struct.pack("<I", 1)  # features
        body += struct.pack("<I", 1)  # nodes in tree 0
        body += struct.pack("<B", 0) + struct.pack("<I", 0) + struct.pack("<d", 4.0)
        body += struct.pack("<I", 2) + struct.pack("<I", 0)
        assert serialize(leaf_model) == reseal(body)
        assert len(serialize(leaf_model)) == 24 + 4 + 21 + 8

    def test_checksum_matches_reference(self, small_models):
        data = serialize(small_models["nox"])
        assert struct.unpack("<Q", data[-8:])[0] == fnv1a64(data[:-8])

    def test_round_trip_bytes_and_predictions(self, small_models, rng):
        for m in small_models.values():
            data = serialize(m)
            back = deserialize(data)
            assert serialize(back) == data
            X = rng.normal(size=(300, m.n_features))
            a = m.predict_many(X)
            b = back.predict_many(X)
            assert a.tobytes() == b.tobytes()

    def test_save_load_keeps_metadata(self, small_models, tmp_path):
        m = small_models["co2"]
        bin_path, meta_path = save_model(m, tmp_path / "co2.pyrf")
        assert meta_path.name == "co2.pyrf.json"
        back = load_model(bin_path)
        assert back.feature_names == m.feature_names
        assert back.target_name == "co2"
        assert back.lag == m.lag
        assert back.hyper == m.hyper
        assert np.array_equal(back.norm_stats.mean, m.norm_stats.mean)
        assert serialize(back) == serialize(m)

    def test_load_without_sidecar(self, small_models, tmp_path):
        p = tmp_path / "bare.pyrf"
        p.write_bytes(serialize(small_models["nox"]))
        back = load_model(p)
        assert back.n_features == small_models["nox"].n_features


class TestCorruption:
    def test_bad_magic(self, leaf_model):
        data = bytearray(serialize(leaf_model))
        data[0] ^= 0xFF
        with pytest.raises(BadMagicError):
            deserialize(bytes(data))

    def test_unsupported_version(self, leaf_model):
        data = bytearray(serialize(leaf_model))
        data[4:6] = struct.pack("<H", 2)
        with pytest.raises(UnsupportedVersionError):
            deserialize(reseal(bytes(data[:-8])))

    @pytest.mark.parametrize("cut", [3, 10, 23, 30, 50])
    def test_truncated(self, leaf_model, cut):
        data = serialize(leaf_model)
        with pytest.raises(DecodeError):
            deserialize(data[:cut])

    def test_truncated_node_block(self, small_models):
        data = serialize(small_models["nox"])
        with pytest.raises(TruncatedPayloadError):
            deserialize(reseal(data[:-8][:-5]))

    def test_checksum_flip(self, small_models):
        data = bytearray(serialize(small_models["nox"]))
        data[40] ^= 0x01
        with pytest.raises(ChecksumError):
            deserialize(bytes(data))

    def test_trailing_garbage(self, leaf_model):
        data = serialize(leaf_model)
        with pytest.raises(DecodeError):
            deserialize(reseal(data[:-8] + b"\x00"))

    def test_errors_are_distinct(self):
        kinds = {BadMagicError, UnsupportedVersionError, TruncatedPayloadError, ChecksumError}
        assert len(kinds) == 4
        assert all(issubclass(k, DecodeError) for k in kinds)
