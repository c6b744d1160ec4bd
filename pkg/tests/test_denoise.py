"""Tests for mode-count selection and correlation-screened denoising."""

import numpy as np
import pytest

from parkload.denoise import (
    AUTO_K_RANGE,
    CC_RETENTION_THRESHOLD,
    DEFAULT_CURVATURE_FACTOR,
    KSelectionReport,
    curvature,
    denoise,
    select_k,
)
from parkload.errors import InvalidArgumentError
from parkload.series import TimeSeries, add_noise_at_snr, correlation_coefficient
from parkload.vmd import VmdParams, decompose


def daily_load(n=960):
    """Smooth daily-shaped load: mean level plus three day-cycle harmonics."""
    t = np.arange(n)
    return TimeSeries(
        100.0
        + 12.0 * np.sin(2 * np.pi * t / 96 + 0.3)
        + 6.0 * np.sin(2 * np.pi * 2 * t / 96 + 1.1)
        + 3.0 * np.sin(2 * np.pi * 3 * t / 96 + 2.0)
    )


def three_tones(n=96):
    t = np.arange(n)
    return TimeSeries(
        np.sin(2 * np.pi * 3 * t / 96 + 0.5)
        + np.sin(2 * np.pi * 9 * t / 96 + 1.7)
        + 1.2 * np.sin(2 * np.pi * 27 * t / 96 + 2.9)
    )


class TestCurvature:
    def test_straight_line_is_flat(self):
        # zero second derivative forces zero curvature everywhere
        assert np.array_equal(curvature([0.0, 1.0, 2.0, 3.0, 4.0]), np.zeros(5))

    def test_parabola_vertex(self):
        # y = x^2 at the vertex: y' = 0, y'' = 2, so curvature is exactly 2
        xs = np.arange(-2.0, 3.0)
        kappa = curvature(xs**2)
        assert kappa[2] == pytest.approx(2.0, abs=1e-12)

    def test_circle_arc_matches_inverse_radius(self):
        # curvature of a circle is 1/radius; unit-spaced samples near the apex
        radius = 20.0
        xs = np.arange(-3.0, 4.0)
        ys = np.sqrt(radius**2 - xs**2)
        kappa = curvature(ys)
        assert kappa[3] == pytest.approx(1.0 / radius, rel=0.05)

    def test_short_curve_rejected(self):
        with pytest.raises(InvalidArgumentError):
            curvature([1.0, 2.0])

    def test_endpoints_copy_interior_second_difference(self):
        y = np.array([0.0, 0.0, 1.0, 3.0, 6.0])
        kappa = curvature(y)
        # first derivative at the left endpoint is one-sided: y[1]-y[0] = 0
        # second difference copied from index 1: 1 - 0 + 0 = 1
        assert kappa[0] == pytest.approx(1.0)

    def test_non_negative(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            assert np.all(curvature(rng.standard_normal(9)) >= 0.0)


class TestSelectK:
    def test_pure_tone_selects_bottom(self):
        # over-decomposition splits a lone tone immediately: the frequency
        # curve saturates right away and the elbow lands at the bottom count
        t = np.arange(96)
        tone = TimeSeries(np.sin(2 * np.pi * 40 * t / 96 + 0.7))
        report = select_k(tone, 2, 6, VmdParams())
        assert report.selected_k == 2
        assert not report.no_elbow

    def test_tone_mid_band_flags_no_elbow_at_top(self):
        t = np.arange(96)
        tone = TimeSeries(np.sin(2 * np.pi * 20 * t / 96 + 0.7))
        report = select_k(tone, 2, 6, VmdParams())
        assert report.no_elbow
        assert report.selected_k == 6

    def test_three_tone_noisy_selection_window(self):
        noisy = add_noise_at_snr(three_tones(), 20.0, seed=0)
        params = VmdParams(alpha=500.0, init_mode="random", seed=42)
        report = select_k(noisy, 2, 8, params)
        assert report.selected_k in (3, 4, 5)
        ks = [c[0] for c in report.candidates]
        assert ks == list(range(2, 9))
        assert report.threshold_used > 0.0

    def test_deterministic(self):
        noisy = add_noise_at_snr(three_tones(), 20.0, seed=1)
        params = VmdParams(alpha=500.0, init_mode="random", seed=42)
        a = select_k(noisy, 2, 8, params)
        b = select_k(noisy, 2, 8, params)
        assert a == b

    def test_report_text_layout(self):
        noisy = add_noise_at_snr(three_tones(), 20.0, seed=0)
        report = select_k(noisy, 2, 8, VmdParams(alpha=500.0))
        text = report.to_text()
        assert "selected_k" in text
        assert "threshold" in text
        assert text.count("\n") >= len(report.candidates) + 3

    def test_range_validation(self):
        sig = daily_load(192)
        with pytest.raises(InvalidArgumentError):
            select_k(sig, 4, 4, VmdParams())
        with pytest.raises(InvalidArgumentError):
            select_k(sig, 1, 8, VmdParams())
        with pytest.raises(InvalidArgumentError):
            select_k(sig, 2, 17, VmdParams())
        with pytest.raises(InvalidArgumentError):
            select_k(sig, 2, 8, VmdParams(), curvature_factor=0.0)

    def test_report_invariants_enforced(self):
        with pytest.raises(InvalidArgumentError):
            KSelectionReport(((2, 0.1, 0.0), (4, 0.2, 0.0)), 2, 0.0)
        with pytest.raises(InvalidArgumentError):
            KSelectionReport(((2, 0.1, 0.0), (3, 0.2, 0.0)), 5, 0.0)


class TestDenoise:
    def test_noiseless_signal_nearly_unchanged(self):
        clean = daily_load()
        out, report = denoise(clean, VmdParams(alpha=50.0), auto_k=True)
        assert report is not None
        assert AUTO_K_RANGE[0] <= report.selected_k <= AUTO_K_RANGE[1]
        assert correlation_coefficient(out, clean) >= 0.999

    def test_cc_at_30db(self):
        clean = daily_load()
        noisy = add_noise_at_snr(clean, 30.0, seed=0)
        out, _ = denoise(noisy, VmdParams(alpha=50.0), auto_k=True)
        assert correlation_coefficient(out, clean) >= 0.94

    def test_white_noise_fallback_returns_single_best_mode(self):
        rng = np.random.default_rng(7)
        noise = TimeSeries(rng.standard_normal(480))
        params = VmdParams(alpha=2e6, k=2)
        modes = decompose(noise, params)
        ccs = [
            abs(correlation_coefficient(noise.with_values(m), noise))
            for m in modes.modes
        ]
        # every mode is below the retention threshold, so the fallback fires
        assert max(ccs) < CC_RETENTION_THRESHOLD
        out, report = denoise(noise, params, auto_k=False)
        assert report is None
        assert np.array_equal(out.values, modes.modes[int(np.argmax(ccs))])

    def test_mean_cc_improves_with_snr(self):
        clean = daily_load()
        params = VmdParams(alpha=50.0, k=4)
        means = {}
        for snr in (20.0, 40.0):
            ccs = []
            for seed in range(2):
                noisy = add_noise_at_snr(clean, snr, seed=seed)
                out, _ = denoise(noisy, params, auto_k=False)
                ccs.append(correlation_coefficient(out, clean))
            means[snr] = np.mean(ccs)
        assert means[40.0] >= means[20.0]

    def test_idempotent_within_five_percent(self):
        noisy = add_noise_at_snr(daily_load(), 20.0, seed=3)
        once, _ = denoise(noisy, VmdParams(alpha=50.0, k=4), auto_k=False)
        twice, _ = denoise(once, VmdParams(alpha=50.0, k=4), auto_k=False)
        rel = np.linalg.norm(twice.values - once.values) / np.linalg.norm(once.values)
        assert rel <= 0.05

    def test_deterministic(self):
        noisy = add_noise_at_snr(daily_load(192), 20.0, seed=5)
        a, _ = denoise(noisy, VmdParams(alpha=50.0, k=3), auto_k=False)
        b, _ = denoise(noisy, VmdParams(alpha=50.0, k=3), auto_k=False)
        assert np.array_equal(a.values, b.values)

    def test_constant_signal_survives(self):
        flat = TimeSeries(np.full(96, 42.0))
        out, _ = denoise(flat, VmdParams(k=2), auto_k=False)
        assert len(out) == 96
        assert np.all(np.isfinite(out.values))

    def test_metadata_preserved(self):
        sig = TimeSeries(daily_load(192).values, interval_minutes=30, start_index=7)
        out, _ = denoise(sig, VmdParams(alpha=50.0, k=3), auto_k=False)
        assert out.interval_minutes == 30
        assert out.start_index == 7

    def test_default_factor_exported(self):
        assert DEFAULT_CURVATURE_FACTOR == 2.0
        assert CC_RETENTION_THRESHOLD == 0.10
