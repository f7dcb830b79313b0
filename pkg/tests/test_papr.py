"""Oversampling, PAPR values and CCDF estimation."""

import numpy as np
import pytest

from mbotfs.errors import ConfigurationError, DegenerateInputError
from mbotfs.im import IMConfig, im_map, interleave
from mbotfs.otfs import dd_modulate
from mbotfs.papr import CcdfCurve, PaprSample, ccdf, oversample, papr, papr_batch


class TestOversample:
    def test_constant_frame_stays_constant(self):
        frame = np.full(16, 1.5 - 0.5j)
        for j in (2, 4, 8):
            up = oversample(frame, j)
            assert up.shape == (16 * j,)
            np.testing.assert_allclose(up, np.full(16 * j, 1.5 - 0.5j), atol=1e-12)

    def test_tone_keeps_peak(self):
        n = 32
        tone = np.exp(2j * np.pi * 5 * np.arange(n) / n)
        up = oversample(tone, 4)
        assert np.max(np.abs(up)) == pytest.approx(1.0, abs=1e-9)
        assert np.min(np.abs(up)) == pytest.approx(1.0, abs=1e-9)

    def test_power_preserved(self):
        rng = np.random.default_rng(1)
        frame = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        up = oversample(frame, 4)
        assert np.mean(np.abs(up) ** 2) == pytest.approx(
            np.mean(np.abs(frame) ** 2), rel=1e-10
        )

    def test_original_samples_reappear(self):
        rng = np.random.default_rng(2)
        frame = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        up = oversample(frame, 4)
        np.testing.assert_allclose(up[::4], frame, atol=1e-10)

    def test_bad_factor(self):
        with pytest.raises(ConfigurationError):
            oversample(np.ones(8), 0)


class TestPapr:
    def test_constant_envelope_is_zero_db(self):
        assert papr(np.full(64, 0.3 + 0.4j)) == pytest.approx(0.0, abs=1e-12)

    def test_impulse_worst_case(self):
        frame = np.zeros(128, dtype=complex)
        frame[17] = 1.0
        assert papr(frame) == pytest.approx(10 * np.log10(128), abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        frame = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        base = papr(frame)
        for c in (2.0, 0.01j, -3.3 + 1.1j):
            assert papr(c * frame) == pytest.approx(base, abs=1e-10)

    def test_zero_frame_rejected(self):
        with pytest.raises(DegenerateInputError):
            papr(np.zeros(16))

    def test_oversampling_reveals_higher_peaks(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            frame = rng.standard_normal(64) + 1j * rng.standard_normal(64)
            assert papr(oversample(frame, 4)) >= papr(frame) - 1e-9

    def test_ensemble_mean_flag(self):
        frame = np.array([1.0, 1.0, 2.0, 0.0], dtype=complex)
        assert papr(frame, mean_power=1.0) == pytest.approx(10 * np.log10(4.0))

    def test_active_ratio_bound_on_structured_frames(self):
        # With G = M and stride interleaving, every delay row carries
        # exactly K_a active slots, so the frame peak power cannot exceed
        # rho^2 times the full-grid worst case N * max|x|^2 = N.
        m = n = 16
        cfg = IMConfig.for_grid(m, n, groups=m, null_count=2, constellation_order=4)
        rho = cfg.active_count / cfg.group_size
        bound = rho**2 * n
        rng = np.random.default_rng(5)
        for _ in range(10_000):
            bits = rng.integers(0, 2, cfg.bits_per_frame).astype(np.int8)
            subs = np.stack(
                [im_map(b, cfg).symbols for b in bits.reshape(cfg.groups, -1)]
            )
            frame = dd_modulate(interleave(subs, m, n))
            assert np.max(np.abs(frame) ** 2) <= bound + 1e-9

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(6)
        frames = rng.standard_normal((5, 32)) + 1j * rng.standard_normal((5, 32))
        batch = papr_batch(frames, oversampling=4)
        for i in range(5):
            assert batch[i] == pytest.approx(papr(oversample(frames[i], 4)), abs=1e-10)


class TestCcdf:
    def test_step_ensemble(self):
        samples = [PaprSample(papr_db=5.0, frame_id=i) for i in range(10)]
        curve = ccdf(samples, thresholds_db=[4.0, 6.0])
        np.testing.assert_array_equal(curve.exceed_prob, [1.0, 0.0])

    def test_uniform_ensemble_half_exceeds_midpoint(self):
        rng = np.random.default_rng(7)
        values = rng.uniform(0, 10, 20_000)
        curve = ccdf(values, thresholds_db=[5.0])
        assert curve.exceed_prob[0] == pytest.approx(0.5, abs=0.02)

    def test_nonincreasing_any_ensemble(self):
        rng = np.random.default_rng(8)
        curve = ccdf(rng.uniform(0, 14, 1000))
        assert np.all(np.diff(curve.exceed_prob) <= 0)

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            ccdf([])

    def test_threshold_lookup(self):
        curve = CcdfCurve(
            thresholds_db=np.array([1.0, 2.0, 3.0]),
            exceed_prob=np.array([1.0, 0.4, 0.0]),
        )
        assert curve.threshold_at(0.5) == 2.0
        assert curve.threshold_at(1e-3) == 3.0

    def test_invalid_curve_rejected(self):
        with pytest.raises(ConfigurationError):
            CcdfCurve(thresholds_db=np.array([1.0, 2.0]), exceed_prob=np.array([0.2, 0.5]))


class TestSpreadingLowersPeaks:
    def test_dft_spread_ccdf_below_unspread(self):
        # Paired ensembles at M = N = 16, 4-QAM, G = M bands: spreading must
        # strictly lower the CCDF threshold at the 1e-2 exceedance point.
        m = n = 16
        cfg = IMConfig.for_grid(m, n, groups=m, null_count=2, constellation_order=4)
        rng = np.random.default_rng(9)
        papr_plain, papr_spread = [], []
        for _ in range(10_000):
            bits = rng.integers(0, 2, cfg.bits_per_frame).astype(np.int8)
            subs = np.stack(
                [im_map(b, cfg).symbols for b in bits.reshape(cfg.groups, -1)]
            )
            from mbotfs.im import dft_spread

            plain = dd_modulate(interleave(subs, m, n))
            spread = dd_modulate(interleave(dft_spread(subs, axis=1), m, n))
            papr_plain.append(papr(oversample(plain, 4)))
            papr_spread.append(papr(oversample(spread, 4)))
        t_plain = ccdf(papr_plain).threshold_at(1e-2)
        t_spread = ccdf(papr_spread).threshold_at(1e-2)
        assert t_spread < t_plain
