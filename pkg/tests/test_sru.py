"""Tests for the recurrent layers and the assembled disaggregation model."""

import numpy as np
import pytest

from parkload.cnn import CnnWeights, InputMatrix
from parkload.errors import InvalidArgumentError, ParseError
from parkload.sru import (
    DeviceEstimate,
    DisaggregationModel,
    SruWeights,
    load_model,
    model_forward,
    save_model,
    sigmoid,
    sru_cell_step,
    sru_layer_forward,
)


def scalar_weights(w_s=4.0, w_f=0.0, b_f=0.0, w_r=0.0, b_r=0.0, w_skip=1.0):
    return SruWeights(
        w_s=[[w_s]], w_f=[[w_f]], b_f=[b_f], w_r=[[w_r]], b_r=[b_r], w_skip=[[w_skip]]
    )


def small_model(seed=0, j=16, names=("a", "b")):
    return DisaggregationModel.initialize(
        j, names, seed=seed, feature_dim=8, hidden=4, head_dim=8, dropout_rate=0.0
    )


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid(0.0) == 0.5

    def test_extremes_stay_bounded(self):
        assert sigmoid(800.0) == 1.0
        assert sigmoid(-800.0) == pytest.approx(0.0, abs=1e-300)

    def test_symmetry(self):
        x = np.linspace(-6, 6, 25)
        assert np.allclose(sigmoid(x) + sigmoid(-x), 1.0, atol=1e-15)


class TestSruCellStep:
    def test_saturated_forget_keeps_state(self):
        # f = sigmoid(60) rounds to exactly 1, so the state passes through
        w = scalar_weights(b_f=60.0)
        h, c = sru_cell_step([1.0], [2.0], w)
        assert c[0] == 2.0

    def test_open_forget_takes_candidate(self):
        w = scalar_weights(b_f=-60.0)
        h, c = sru_cell_step([1.0], [2.0], w)
        assert c[0] == 4.0

    def test_half_gate_mixes_evenly(self):
        # f = sigmoid(0) = 0.5, candidate 4, previous state 2 -> state 3
        w = scalar_weights()
        h, c = sru_cell_step([1.0], [2.0], w)
        assert c[0] == pytest.approx(3.0)

    def test_closed_highway_passes_skip(self):
        w = scalar_weights(b_r=-60.0, w_skip=2.5)
        h, c = sru_cell_step([1.0], [0.0], w)
        assert h[0] == 2.5

    def test_gates_do_not_read_state(self):
        rng = np.random.default_rng(0)
        w = SruWeights.initialize(5, 4, seed=1)
        s = rng.standard_normal(5)
        sig_f = sigmoid(w.w_f @ s + w.b_f)
        sig_r = sigmoid(w.w_r @ s + w.b_r)
        for c_prev in (np.zeros(4), rng.standard_normal(4) * 100):
            h, c = sru_cell_step(s, c_prev, w)
            assert np.array_equal(sigmoid(w.w_f @ s + w.b_f), sig_f)
            assert np.array_equal(sigmoid(w.w_r @ s + w.b_r), sig_r)

    def test_gate_range_open_interval(self):
        rng = np.random.default_rng(2)
        w = SruWeights.initialize(6, 8, seed=3)
        for _ in range(20):
            s = rng.standard_normal(6) * 10
            f = sigmoid(w.w_f @ s + w.b_f)
            r = sigmoid(w.w_r @ s + w.b_r)
            assert np.all((f > 0) & (f < 1))
            assert np.all((r > 0) & (r < 1))

    def test_shape_validation(self):
        w = scalar_weights()
        with pytest.raises(InvalidArgumentError):
            sru_cell_step([1.0, 2.0], [0.0], w)
        with pytest.raises(InvalidArgumentError):
            sru_cell_step([1.0], [0.0, 0.0], w)


class TestSruLayerForward:
    def test_single_step_matches_cell(self):
        w = SruWeights.initialize(3, 4, seed=4)
        x = np.array([[0.3, -0.7, 1.1]])
        h_layer = sru_layer_forward(x, w)
        h_cell, _ = sru_cell_step(x[0], np.zeros(4), w)
        assert np.allclose(h_layer[0], h_cell, atol=1e-15)

    def test_palindrome_mirrors_forward_and_reverse(self):
        w = SruWeights.initialize(2, 3, seed=5)
        rng = np.random.default_rng(6)
        half = rng.standard_normal((4, 2))
        x = np.vstack([half, half[::-1]])
        hf = sru_layer_forward(x, w, reverse=False)
        hr = sru_layer_forward(x, w, reverse=True)
        assert np.allclose(hf, hr[::-1], atol=1e-12)

    def test_zero_weights_closed_form(self):
        # all projections zero: f = r = 0.5, candidate and skip are zero,
        # so c halves each step from c0 and h = 0.5 * relu(c)
        w = SruWeights(
            w_s=np.zeros((1, 1)), w_f=np.zeros((1, 1)), b_f=[0.0],
            w_r=np.zeros((1, 1)), b_r=[0.0], w_skip=np.zeros((1, 1)),
        )
        x = np.ones((3, 1))
        h = sru_layer_forward(x, w, c0=[8.0])
        assert np.allclose(h[:, 0], [2.0, 1.0, 0.5])

    def test_state_contraction(self):
        rng = np.random.default_rng(7)
        w = SruWeights.initialize(3, 5, seed=8)
        x = rng.standard_normal((50, 3))
        s_tilde = x @ w.w_s.T
        bound = max(np.abs(s_tilde).max(), 1.0)
        # run with c0 at the bound; states must never escape it
        f = sigmoid(x @ w.w_f.T + w.b_f)
        c = np.full(5, bound)
        for t in range(50):
            c = f[t] * c + (1 - f[t]) * s_tilde[t]
            assert np.all(np.abs(c) <= bound + 1e-12)

    def test_reversed_input_swapped_layers_symmetry(self):
        wf = SruWeights.initialize(2, 3, seed=9)
        wr = SruWeights.initialize(2, 3, seed=10)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((6, 2))
        a = np.concatenate(
            [sru_layer_forward(x, wf), sru_layer_forward(x, wr, reverse=True)], axis=1
        )
        b = np.concatenate(
            [sru_layer_forward(x[::-1], wr), sru_layer_forward(x[::-1], wf, reverse=True)],
            axis=1,
        )
        # swapping layers on time-reversed input mirrors the representation
        assert np.allclose(a[:, :3], b[::-1, 3:], atol=1e-12)
        assert np.allclose(a[:, 3:], b[::-1, :3], atol=1e-12)

    def test_input_validation(self):
        w = SruWeights.initialize(2, 3, seed=12)
        with pytest.raises(InvalidArgumentError):
            sru_layer_forward(np.zeros((0, 2)), w)
        with pytest.raises(InvalidArgumentError):
            sru_layer_forward(np.zeros((4, 3)), w)
        with pytest.raises(InvalidArgumentError):
            sru_layer_forward(np.zeros((4, 2)), w, c0=np.zeros(2))


class TestModelForward:
    def test_output_shape(self):
        model = small_model()
        rng = np.random.default_rng(13)
        window = InputMatrix(
            price=rng.uniform(0.3, 0.9, 16),
            calendar=np.ones(16),
            load=rng.uniform(0.0, 10.0, 16),
        )
        est = model_forward(window, model)
        assert est.traces.shape == (2, 16)
        assert est.device_names == ("a", "b")
        assert np.all(est.traces >= 0)

    def test_zero_window_zero_biases_gives_zero(self):
        model = small_model(seed=1)
        est = model_forward(np.zeros((3, 16)), model)
        assert np.array_equal(est.traces, np.zeros((2, 16)))

    def test_window_length_checked(self):
        model = small_model()
        rng = np.random.default_rng(14)
        window = InputMatrix(
            price=rng.uniform(0.3, 0.9, 24),
            calendar=np.ones(24),
            load=rng.uniform(0.0, 10.0, 24),
        )
        with pytest.raises(InvalidArgumentError):
            model_forward(window, model)

    def test_deterministic(self):
        model = small_model(seed=2)
        rng = np.random.default_rng(15)
        x = np.abs(rng.standard_normal((3, 16)))
        a = model_forward(x, model)
        b = model_forward(x, model)
        assert np.array_equal(a.traces, b.traces)

    def test_denormalization_applies_device_constants(self):
        base = small_model(seed=3)
        import dataclasses

        model = dataclasses.replace(
            base, device_min=np.array([10.0, 0.0]), device_max=np.array([20.0, 1.0])
        )
        est = model_forward(np.zeros((3, 16)), model)
        # normalized zero output maps to each device's minimum
        assert np.allclose(est.traces[0], 10.0)
        assert np.allclose(est.traces[1], 0.0)


class TestDeviceEstimate:
    def test_trace_lookup(self):
        est = DeviceEstimate(("x", "y"), np.zeros((2, 5)))
        assert np.array_equal(est.trace("y"), np.zeros(5))
        with pytest.raises(InvalidArgumentError):
            est.trace("z")

    def test_negative_rejected(self):
        with pytest.raises(InvalidArgumentError):
            DeviceEstimate(("x",), np.array([[-0.1, 0.0]]))

    def test_duplicate_names_rejected(self):
        with pytest.raises(InvalidArgumentError):
            DeviceEstimate(("x", "x"), np.zeros((2, 3)))


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        model = DisaggregationModel.initialize(
            96,
            ("press", "loom", "pump", "fan"),
            seed=7,
            norm={
                "price_min": 0.2754,
                "price_max": 0.9182,
                "load_min": 5.0,
                "load_max": 310.0,
                "device_min": np.zeros(4),
                "device_max": np.array([120.0, 80.0, 60.0, 50.0]),
            },
        )
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.device_names == model.device_names
        assert loaded.window_length == model.window_length
        assert loaded.price_max == model.price_max
        from parkload.sru import _WEIGHT_PATHS, _get_path

        for name in _WEIGHT_PATHS:
            assert np.array_equal(_get_path(loaded, name), _get_path(model, name)), name

    def test_save_is_deterministic(self, tmp_path):
        model = small_model(seed=4)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ParseError):
            load_model(p)

    def test_truncated(self, tmp_path):
        model = small_model(seed=5)
        p = tmp_path / "model.bin"
        save_model(model, p)
        blob = p.read_bytes()
        p.write_bytes(blob[: len(blob) // 2])
        with pytest.raises(ParseError):
            load_model(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        model = small_model(seed=6)
        p = tmp_path / "model.bin"
        save_model(model, p)
        p.write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(ParseError):
            load_model(p)


class TestModelValidation:
    def test_input_dim_consistency_enforced(self):
        model = small_model()
        bad_sru = SruWeights.initialize(3, 4, seed=0)
        import dataclasses

        with pytest.raises(InvalidArgumentError):
            dataclasses.replace(model, forward_sru=bad_sru)

    def test_window_length_consistency(self):
        model = small_model()
        import dataclasses

        with pytest.raises(InvalidArgumentError):
            dataclasses.replace(model, window_length=32)

    def test_device_name_uniqueness(self):
        cnn = CnnWeights.initialize(16, feature_dim=8)
        with pytest.raises(InvalidArgumentError):
            DisaggregationModel.initialize(16, ("a", "a"), feature_dim=8, hidden=4, head_dim=8)
