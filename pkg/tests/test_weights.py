"""Weight-file format: byte-level oracle, roundtrips, and failure taxonomy."""

import struct

import numpy as np
import pytest

from raes.nn import (
    ARCHITECTURE,
    BadMagicError,
    DuplicateTensorError,
    FingerprintMismatchError,
    MissingTensorError,
    TensorShapeError,
    TruncatedFileError,
    UnknownTensorError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
    WeightBundle,
    identity_mask_bundle,
    load_weights,
    random_bundle,
    save_weights,
)

FROZEN_FINGERPRINT = "53d7c62854c28a8a3da039c0dda1df5e43773eca93cc609cd00f186c29c7100a"


def oracle_bytes(tensors, version=1, fingerprint=None, count=None):
    """Independent serializer for the weight container, written straight
    from the layout definition rather than sharing any production code."""
    fingerprint = ARCHITECTURE.fingerprint() if fingerprint is None else fingerprint
    blob = b"RAES" + struct.pack("<I", version) + fingerprint
    blob += struct.pack("<I", len(tensors) if count is None else count)
    for name, arr, *rest in tensors:
        dtype_code = rest[0] if rest else 0
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<BB", dtype_code, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    return blob


@pytest.fixture
def bundle():
    return random_bundle(42)


@pytest.fixture
def weight_path(tmp_path, bundle):
    path = tmp_path / "model.raes"
    save_weights(bundle, str(path))
    return path


class TestFormat:
    def test_serialization_matches_byte_oracle(self, weight_path, bundle):
        want = oracle_bytes(list(bundle.tensors.items()))
        assert weight_path.read_bytes() == want

    def test_header_fields(self, weight_path):
        data = weight_path.read_bytes()
        assert data[:4] == b"RAES"
        assert struct.unpack("<I", data[4:8])[0] == 1
        assert data[8:40].hex() == FROZEN_FINGERPRINT
        assert struct.unpack("<I", data[40:44])[0] == len(ARCHITECTURE.weight_shapes())

    def test_fingerprint_is_frozen(self):
        # The canonical table (and therefore every weight file ever written)
        # changes identity if any layer row changes. Freeze it.
        assert ARCHITECTURE.fingerprint().hex() == FROZEN_FINGERPRINT

    def test_roundtrip_bit_exact(self, weight_path, bundle):
        loaded = load_weights(str(weight_path))
        assert set(loaded.tensors) == set(bundle.tensors)
        for name, value in bundle.tensors.items():
            assert value.dtype == np.float32
            np.testing.assert_array_equal(loaded.tensors[name], value)

    def test_tensor_order_is_table_order(self, bundle):
        assert list(bundle.tensors) == list(ARCHITECTURE.weight_shapes())


class TestLoadFailures:
    def test_bad_magic(self, tmp_path, weight_path):
        data = bytearray(weight_path.read_bytes())
        data[:4] = b"XXXX"
        bad = tmp_path / "bad_magic.raes"
        bad.write_bytes(bytes(data))
        with pytest.raises(BadMagicError):
            load_weights(str(bad))

    def test_unsupported_version(self, tmp_path, bundle):
        bad = tmp_path / "v2.raes"
        bad.write_bytes(oracle_bytes(list(bundle.tensors.items()), version=2))
        with pytest.raises(UnsupportedVersionError, match="2"):
            load_weights(str(bad))

    def test_fingerprint_mismatch(self, tmp_path, bundle):
        other = bytes(32)
        bad = tmp_path / "wrong_arch.raes"
        bad.write_bytes(oracle_bytes(list(bundle.tensors.items()), fingerprint=other))
        with pytest.raises(FingerprintMismatchError, match="different architecture"):
            load_weights(str(bad))

    @pytest.mark.parametrize("keep", [3, 30, 43, 44, 60, 1000])
    def test_truncation(self, tmp_path, weight_path, keep):
        data = weight_path.read_bytes()[:keep]
        bad = tmp_path / "short.raes"
        bad.write_bytes(data)
        with pytest.raises(TruncatedFileError):
            load_weights(str(bad))

    def test_truncated_final_tensor(self, tmp_path, weight_path):
        data = weight_path.read_bytes()
        bad = tmp_path / "short_tail.raes"
        bad.write_bytes(data[:-2])
        with pytest.raises(TruncatedFileError):
            load_weights(str(bad))

    def test_unsupported_dtype(self, tmp_path, bundle):
        entries = [(n, a, 1 if n == "stem.w" else 0) for n, a in bundle.tensors.items()]
        bad = tmp_path / "f16.raes"
        bad.write_bytes(oracle_bytes(entries))
        with pytest.raises(UnsupportedDtypeError, match="stem.w"):
            load_weights(str(bad))

    def test_unknown_tensor(self, tmp_path, bundle):
        entries = [("stem.weight" if n == "stem.w" else n, a)
                   for n, a in bundle.tensors.items()]
        bad = tmp_path / "unknown.raes"
        bad.write_bytes(oracle_bytes(entries))
        with pytest.raises(UnknownTensorError, match="stem.weight"):
            load_weights(str(bad))

    def test_duplicate_tensor(self, tmp_path, bundle):
        entries = list(bundle.tensors.items())
        entries.append(("stem.b", bundle["stem.b"]))
        bad = tmp_path / "dup.raes"
        bad.write_bytes(oracle_bytes(entries))
        with pytest.raises(DuplicateTensorError, match="stem.b"):
            load_weights(str(bad))

    def test_missing_tensor(self, tmp_path, bundle):
        entries = [(n, a) for n, a in bundle.tensors.items() if n != "gate.fc.b"]
        bad = tmp_path / "missing.raes"
        bad.write_bytes(oracle_bytes(entries))
        with pytest.raises(MissingTensorError, match="gate.fc.b"):
            load_weights(str(bad))

    def test_wrong_shape(self, tmp_path, bundle):
        entries = [(n, a if n != "dtd.fc2.w" else a.reshape(1, -1))
                   for n, a in bundle.tensors.items()]
        bad = tmp_path / "shape.raes"
        bad.write_bytes(oracle_bytes(entries))
        with pytest.raises(TensorShapeError, match="dtd.fc2.w"):
            load_weights(str(bad))


class TestBundleValidation:
    def test_missing_raises(self, bundle):
        tensors = dict(bundle.tensors)
        del tensors["mask.fc2.b"]
        with pytest.raises(MissingTensorError, match="mask.fc2.b"):
            WeightBundle(tensors)

    def test_unknown_raises(self, bundle):
        tensors = dict(bundle.tensors)
        tensors["extra.w"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(UnknownTensorError, match="extra.w"):
            WeightBundle(tensors)

    def test_shape_raises(self, bundle):
        tensors = dict(bundle.tensors)
        tensors["dtd.fc1.b"] = np.zeros(31, dtype=np.float32)
        with pytest.raises(TensorShapeError, match="dtd.fc1.b"):
            WeightBundle(tensors)

    def test_coerces_dtype_and_order(self, bundle):
        tensors = {n: a.astype(np.float64) for n, a in bundle.tensors.items()}
        coerced = WeightBundle(tensors)
        assert all(a.dtype == np.float32 for a in coerced.tensors.values())
        assert list(coerced.tensors) == list(ARCHITECTURE.weight_shapes())

    def test_block_params(self, bundle):
        params = bundle.block_params("irb2")
        assert sorted(params) == ["dw.b", "dw.w", "expand.b", "expand.w",
                                  "project.b", "project.w"]
        np.testing.assert_array_equal(params["dw.w"], bundle["irb2.dw.w"])


class TestFactories:
    def test_random_bundle_deterministic(self):
        a, b = random_bundle(11), random_bundle(11)
        for name in a.tensors:
            np.testing.assert_array_equal(a[name], b[name])
        c = random_bundle(12)
        assert any(not np.array_equal(a[name], c[name]) for name in a.tensors)

    def test_random_bundle_identity_norm_and_zero_bias(self):
        b = random_bundle(5)
        np.testing.assert_array_equal(b["feat_norm.scale"], np.ones((2, 40, 32)))
        np.testing.assert_array_equal(b["feat_norm.offset"], np.zeros((2, 40, 32)))
        np.testing.assert_array_equal(b["stem.b"], np.zeros(16))

    def test_identity_mask_bundle_layout(self):
        b = identity_mask_bundle()
        np.testing.assert_array_equal(b["mask.fc2.b"], np.full(64, 30.0, dtype=np.float32))
        np.testing.assert_array_equal(b["feat_norm.scale"], np.ones((2, 40, 32)))
        np.testing.assert_array_equal(b["mask.fc2.w"], np.zeros((64, 256)))
        np.testing.assert_array_equal(b["stem.w"], np.zeros((16, 2, 3, 3)))
