"""Forward pass: end-to-end oracle parity, output contracts, failure modes."""

import numpy as np
import pytest

from raes.nn import (
    ARCHITECTURE,
    InferenceError,
    Scratch,
    WeightBundle,
    forward,
    identity_mask_bundle,
    random_bundle,
)

from oracles import direct_conv2d, direct_depthwise_conv2d, direct_matvec


def oracle_forward(feature, bundle):
    """The whole network composed from the naive float64 oracles."""
    t = {k: v.astype(np.float64) for k, v in bundle.tensors.items()}
    x = feature.astype(np.float64) * t["feat_norm.scale"] + t["feat_norm.offset"]
    x = np.clip(direct_conv2d(x, t["stem.w"], t["stem.b"], 2, 1), 0, 6)
    for i, stride in [(1, 2), (2, 2), (3, 1), (4, 1)]:
        e = np.clip(direct_conv2d(x, t[f"irb{i}.expand.w"], t[f"irb{i}.expand.b"], 1, 0), 0, 6)
        d = np.clip(direct_depthwise_conv2d(e, t[f"irb{i}.dw.w"], t[f"irb{i}.dw.b"], stride, 1), 0, 6)
        p = direct_conv2d(d, t[f"irb{i}.project.w"], t[f"irb{i}.project.b"], 1, 0)
        if stride == 1 and p.shape == x.shape:
            p = p + x
        x = p
    pooled = x.mean(axis=(1, 2))
    embedding = np.clip(direct_matvec(t["dtd.fc1.w"], pooled, t["dtd.fc1.b"]), 0, 6)
    logits = direct_matvec(t["dtd.fc2.w"], embedding, t["dtd.fc2.b"])
    z = np.exp(logits - logits.max())
    dtd = z / z.sum()
    gains = 1.0 / (1.0 + np.exp(-direct_matvec(t["gate.fc.w"], embedding, t["gate.fc.b"])))
    gated = x * gains[:, None, None]
    hidden = np.clip(direct_matvec(t["mask.fc1.w"], gated.reshape(-1), t["mask.fc1.b"]), 0, 6)
    mask = 1.0 / (1.0 + np.exp(-direct_matvec(t["mask.fc2.w"], hidden, t["mask.fc2.b"])))
    return mask, dtd, embedding


@pytest.fixture(scope="module")
def feature():
    return np.random.default_rng(77).normal(0.0, 2.0, size=(2, 40, 32)).astype(np.float32)


class TestForward:
    def test_matches_composed_oracle(self, feature):
        bundle = random_bundle(3)
        got = forward(feature, bundle)
        mask, dtd, embedding = oracle_forward(feature, bundle)
        np.testing.assert_allclose(got.mask, mask, rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(got.dtd, dtd, rtol=1e-4, atol=1e-4)
        np.testing.assert_allclose(got.embedding, embedding, rtol=1e-4, atol=1e-4)

    def test_identity_weights_pass_everything(self, feature):
        out = forward(feature, identity_mask_bundle())
        np.testing.assert_array_equal(out.mask, np.ones(64, dtype=np.float32))
        np.testing.assert_allclose(out.dtd, np.full(3, 1 / 3), rtol=1e-7)
        assert out.dtd.sum() == pytest.approx(1.0, abs=1e-7)

    def test_all_zero_weights_centre_the_heads(self, feature):
        zeros = WeightBundle({name: np.zeros(shape, dtype=np.float32)
                              for name, shape in ARCHITECTURE.weight_shapes().items()})
        out = forward(feature, zeros)
        np.testing.assert_array_equal(out.mask, np.full(64, 0.5, dtype=np.float32))
        np.testing.assert_allclose(out.dtd, np.full(3, 1 / 3), rtol=1e-7)
        np.testing.assert_array_equal(out.embedding, np.zeros(32, dtype=np.float32))

    def test_output_ranges(self, feature):
        for seed in range(5):
            out = forward(feature, random_bundle(seed))
            assert out.mask.shape == (64,) and out.dtd.shape == (3,)
            assert out.embedding.shape == (32,)
            assert np.all(out.mask >= 0) and np.all(out.mask <= 1)
            assert np.all(out.dtd >= 0) and out.dtd.sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all(out.embedding >= 0) and np.all(out.embedding <= 6)

    def test_deterministic_bit_identical(self, feature):
        bundle = random_bundle(9)
        a = forward(feature, bundle)
        b = forward(feature, bundle)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(a.dtd, b.dtd)
        np.testing.assert_array_equal(a.embedding, b.embedding)

    def test_shared_scratch_matches_fresh(self, feature):
        bundle = random_bundle(9)
        scratch = Scratch()
        rng = np.random.default_rng(5)
        for _ in range(3):
            feat = rng.normal(size=(2, 40, 32)).astype(np.float32)
            with_scratch = forward(feat, bundle, scratch)
            fresh = forward(feat, bundle)
            np.testing.assert_array_equal(with_scratch.mask, fresh.mask)
            np.testing.assert_array_equal(with_scratch.dtd, fresh.dtd)

    def test_outputs_survive_scratch_reuse(self, feature):
        bundle = random_bundle(9)
        scratch = Scratch()
        first = forward(feature, bundle, scratch)
        kept = first.mask.copy(), first.dtd.copy(), first.embedding.copy()
        other = np.random.default_rng(6).normal(size=(2, 40, 32)).astype(np.float32)
        forward(other, bundle, scratch)
        np.testing.assert_array_equal(first.mask, kept[0])
        np.testing.assert_array_equal(first.dtd, kept[1])
        np.testing.assert_array_equal(first.embedding, kept[2])

    def test_float64_input_accepted(self, feature):
        bundle = random_bundle(9)
        a = forward(feature.astype(np.float64), bundle)
        b = forward(feature, bundle)
        np.testing.assert_array_equal(a.mask, b.mask)

    def test_wrong_shape_rejected(self):
        bundle = identity_mask_bundle()
        with pytest.raises(InferenceError, match=r"\(2, 40, 32\)"):
            forward(np.zeros((2, 40, 31), dtype=np.float32), bundle)
        with pytest.raises(InferenceError, match="shape"):
            forward(np.zeros(64, dtype=np.float32), bundle)


class TestFiniteness:
    @pytest.mark.parametrize("tensor,layer", [
        ("stem.w", "stem"),
        ("irb2.expand.b", "irb2.expand"),
        ("irb3.dw.w", "irb3.dw"),
        ("mask.fc1.w", "mask.fc1"),
        ("dtd.fc2.b", "dtd.fc2"),
    ])
    def test_nan_weight_names_the_layer(self, feature, tensor, layer):
        bundle = random_bundle(1)
        flat = bundle.tensors[tensor].reshape(-1)
        flat[0] = np.nan
        with pytest.raises(InferenceError, match=layer):
            forward(feature, bundle)

    def test_inf_bias_caught_before_clipping_hides_it(self, feature):
        bundle = random_bundle(1)
        bundle.tensors["irb1.expand.b"][:] = np.inf
        with pytest.raises(InferenceError, match="irb1.expand"):
            forward(feature, bundle)

    def test_nan_input_caught_at_entry(self):
        bundle = random_bundle(1)
        feat = np.zeros((2, 40, 32), dtype=np.float32)
        feat[0, 0, 0] = np.nan
        with pytest.raises(InferenceError, match="feat_norm"):
            forward(feat, bundle)


class TestBudgets:
    def test_parameter_count_and_file_size(self):
        count = ARCHITECTURE.parameter_count()
        assert count == 587_403
        assert count * 4 < 5 * 1024 * 1024  # float32 payload under 5 MB

    def test_flops_budget(self):
        total = sum(layer.flops() for layer in ARCHITECTURE.layers)
        assert total <= 10_000_000

    def test_flops_worked_examples(self):
        assert ARCHITECTURE.layer("mask.fc1").op_flops() == 2 * 1920 * 256 == 983_040
        assert ARCHITECTURE.layer("stem").op_flops() == 2 * 16 * 2 * 9 * 20 * 16 == 184_320

    def test_trunk_and_head_geometry(self):
        assert ARCHITECTURE.layer("irb4.project").out_shape == (96, 5, 4)
        assert ARCHITECTURE.layer("mask.flatten").out_shape == (1920,)
        assert ARCHITECTURE.layer("mask.fc2").out_shape == (64,)
        assert ARCHITECTURE.layer("dtd.fc2").out_shape == (3,)
