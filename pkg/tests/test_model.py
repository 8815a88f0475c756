import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kan_ausculta.errors import FingerprintError, ShapeError
from kan_ausculta.model import (
    build_model,
    load_checkpoint,
    model_forward,
    parameters,
    restore_parameters,
    save_checkpoint,
    snapshot_parameters,
    softmax,
)
from kan_ausculta.optim import FocalParams, finite_diff_check


def small_model(seed=0, d_feat=5, classes=4, **kwargs):
    defaults = dict(lstm_hidden=4, kan_hidden=5, dropout_rate=0.0)
    defaults.update(kwargs)
    return build_model(d_feat, classes, np.random.default_rng(seed), **defaults)


class TestForward:
    def test_zero_kan_coefficients_give_zero_logits(self):
        m = small_model(kan_init_scale=0.0)
        for layer in m.kan.layers:
            layer.coeffs[...] = 0.0
        logits, _ = model_forward(m, np.random.default_rng(1).normal(size=5))
        np.testing.assert_array_equal(logits, np.zeros(4))

    def test_logits_finite_for_finite_parameters(self):
        m = small_model(seed=3)
        rng = np.random.default_rng(4)
        for _ in range(10):
            logits, _ = model_forward(m, rng.normal(scale=5, size=5))
            assert np.all(np.isfinite(logits))

    def test_eval_forward_bit_reproducible(self):
        m = small_model(seed=5)
        x = np.random.default_rng(6).normal(size=5)
        a, _ = model_forward(m, x)
        b, _ = model_forward(m, x)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        m = small_model()
        with pytest.raises(ShapeError):
            model_forward(m, np.zeros(6))

    def test_default_architecture_dimensions(self):
        m = build_model(100, 6, np.random.default_rng(0))
        assert m.encoder.hidden_size == 64
        assert m.encoder.output_size == 128
        assert [layer.n_in for layer in m.kan.layers] == [128, 32]
        assert m.kan.n_out == 6
        logits, _ = model_forward(m, np.zeros(100))
        assert logits.shape == (6,)


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        probs = softmax(np.zeros(6))
        np.testing.assert_allclose(probs, np.full(6, 1 / 6), atol=1e-15)

    def test_large_offsets_do_not_overflow(self):
        probs = softmax(np.array([3.0, 103.0, 3.0]))
        assert np.all(np.isfinite(probs))
        assert abs(probs[1] - 1.0) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(
        logits=st.lists(st.floats(-50, 50), min_size=2, max_size=8),
        shift=st.floats(-100, 100),
    )
    def test_shift_invariance_and_simplex(self, logits, shift):
        logits = np.array(logits)
        p = softmax(logits)
        q = softmax(logits + shift)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p >= 0)
        np.testing.assert_allclose(p, q, atol=1e-12)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0, np.inf]))


class TestEndToEndGradients:
    def test_twenty_random_instances(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(20):
            d_feat = int(rng.integers(3, 9))
            classes = int(rng.integers(3, 7))
            m = build_model(
                d_feat,
                classes,
                rng,
                lstm_hidden=int(rng.integers(3, 7)),
                kan_hidden=int(rng.integers(3, 7)),
                dropout_rate=0.0,
            )
            sample = rng.normal(size=d_feat)
            target = int(rng.integers(classes))
            err = finite_diff_check(m, sample, target, h=1e-5, fp=FocalParams(), rng=rng)
            worst = max(worst, err)
        assert worst < 1e-4

    def test_gradients_with_base_branch(self):
        rng = np.random.default_rng(7)
        m = small_model(seed=7, kan_base_branch=True)
        err = finite_diff_check(m, rng.normal(size=5), 1, rng=rng)
        assert err < 1e-4


class TestSnapshots:
    def test_snapshot_restore_round_trip(self):
        m = small_model(seed=9)
        snap = snapshot_parameters(m)
        x = np.random.default_rng(10).normal(size=5)
        before, _ = model_forward(m, x)
        for arr in parameters(m).values():
            arr += 0.1
        changed, _ = model_forward(m, x)
        assert not np.allclose(before, changed)
        restore_parameters(m, snap)
        after, _ = model_forward(m, x)
        np.testing.assert_array_equal(before, after)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = small_model(seed=11, kan_base_branch=True)
        path = tmp_path / "model.npz"
        save_checkpoint(
            m,
            path,
            fingerprint="abc123",
            scaler_mean=np.arange(5.0),
            scaler_scale=np.ones(5),
            meta={"fold": 2},
        )
        loaded, header, mean, scale = load_checkpoint(path, expected_fingerprint="abc123")
        x = np.random.default_rng(12).normal(size=5)
        a, _ = model_forward(m, x)
        b, _ = model_forward(loaded, x)
        np.testing.assert_array_equal(a, b)
        assert header["meta"]["fold"] == 2
        np.testing.assert_array_equal(mean, np.arange(5.0))
        np.testing.assert_array_equal(scale, np.ones(5))

    def test_fingerprint_mismatch_rejected(self, tmp_path):
        m = small_model(seed=13)
        path = tmp_path / "model.npz"
        save_checkpoint(m, path, fingerprint="abc123")
        with pytest.raises(FingerprintError):
            load_checkpoint(path, expected_fingerprint="something-else")
