import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from langesim.model import ForceField, Potential, SystemParams
from langesim.observables import (
    BlockMeanAccumulator,
    VelocityProfile,
    fit_linear_response,
    mean_experienced_force,
    mean_velocity,
    mode_amplitude,
    stroboscopic_velocity,
)


class FakeState:
    def __init__(self, p, q=None, step_index=0):
        self.p = np.asarray(p, dtype=float)
        self.q = np.zeros(2) if q is None else np.asarray(q, dtype=float)
        self.step_index = step_index


PARAMS = SystemParams()


def fill_profile(I, fn, laps=3):
    """Feed v = fn(i) for bin i, laps times around."""
    prof = VelocityProfile(I)
    for n in range(laps * I):
        prof.accept(n, FakeState(fn(n % I)), PARAMS)
    return prof


class TestVelocityProfile:
    def test_binning_and_means(self):
        prof = fill_profile(4, lambda i: [float(i), -float(i)], laps=5)
        assert np.array_equal(prof.counts, np.full(4, 5))
        means = prof.bin_means()
        assert np.allclose(means[:, 0], [0, 1, 2, 3])
        assert np.allclose(means[:, 1], [0, -1, -2, -3])

    def test_mass_scaling(self):
        params = SystemParams(mass=2.0)
        prof = VelocityProfile(3)
        prof.accept(0, FakeState([4.0, 4.0]), params)
        assert np.allclose(prof.sums[0], [2.0, 2.0])

    def test_merge_equals_single_pass(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=(60, 2))
        full = VelocityProfile(6)
        first = VelocityProfile(6)
        second = VelocityProfile(6)
        for n, v in enumerate(vals):
            full.accept(n, FakeState(v), PARAMS)
            (first if n < 30 else second).accept(n, FakeState(v), PARAMS)
        merged = first.merge(second)
        assert np.allclose(merged.sums, full.sums, rtol=1e-13, atol=1e-13)
        assert np.allclose(merged.sumsq, full.sumsq, rtol=1e-13)
        assert np.array_equal(merged.counts, full.counts)

    def test_merge_shape_mismatch(self):
        with pytest.raises(ValueError, match="share I and d"):
            VelocityProfile(4).merge(VelocityProfile(5))

    def test_empty_bin_rejected(self):
        prof = VelocityProfile(4)
        prof.accept(0, FakeState([1.0, 1.0]), PARAMS)
        with pytest.raises(ValueError, match="empty bin"):
            prof.bin_means()

    def test_overall_mean_weighs_by_count(self):
        prof = VelocityProfile(2)
        prof.accept(0, FakeState([1.0, 0.0]), PARAMS)
        prof.accept(1, FakeState([4.0, 0.0]), PARAMS)
        prof.accept(3, FakeState([4.0, 0.0]), PARAMS)
        assert prof.overall_mean()[0] == pytest.approx(3.0)


class TestStroboscopic:
    def test_recovers_injected_wave(self):
        I = 16
        prof = fill_profile(I, lambda i: [math.cos(2 * math.pi * i / I), 0.1], laps=4)
        rows = stroboscopic_velocity(prof, dt=0.5)
        assert rows[0][0] == pytest.approx(0.5)
        assert rows[-1][0] == pytest.approx(8.0)
        for i, (tau, mean, err) in enumerate(rows):
            assert mean[0] == pytest.approx(math.cos(2 * math.pi * i / I), abs=1e-12)
            assert mean[1] == pytest.approx(0.1, abs=1e-12)
            assert np.all(err < 1e-7)

    def test_needs_two_samples_per_bin(self):
        prof = fill_profile(4, lambda i: [1.0, 1.0], laps=1)
        with pytest.raises(ValueError, match="more than one sample"):
            stroboscopic_velocity(prof)


class TestModeAmplitude:
    def test_cosine_convention(self):
        I = 20
        A = 0.7
        prof = fill_profile(I, lambda i: [A * math.cos(2 * math.pi * i / I), 0.0])
        m1 = mode_amplitude(prof, 1)
        assert m1[0] == pytest.approx(A / 2, abs=1e-12)
        assert abs(m1[0].imag) < 1e-12
        assert abs(m1[1]) < 1e-12

    def test_sine_convention(self):
        I = 20
        A = 0.3
        prof = fill_profile(I, lambda i: [A * math.sin(2 * math.pi * i / I), 0.0])
        m1 = mode_amplitude(prof, 1)
        assert m1[0] == pytest.approx(-1j * A / 2, abs=1e-12)

    def test_constant_lives_in_mode_zero(self):
        prof = fill_profile(8, lambda i: [2.5, -1.0])
        m0 = mode_amplitude(prof, 0)
        m1 = mode_amplitude(prof, 1)
        assert m0[0] == pytest.approx(2.5, abs=1e-12)
        assert m0[1] == pytest.approx(-1.0, abs=1e-12)
        assert abs(m1[0]) < 1e-13 and abs(m1[1]) < 1e-13

    def test_inversion(self):
        I = 12
        rng = np.random.default_rng(3)
        vals = rng.normal(size=(I, 2))
        prof = fill_profile(I, lambda i: vals[i], laps=2)
        coeffs = np.array([mode_amplitude(prof, k) for k in range(I)])
        recon = np.array(
            [
                sum(
                    coeffs[k] * np.exp(2j * math.pi * k * i / I)
                    for k in range(I)
                )
                for i in range(I)
            ]
        )
        assert np.allclose(recon.real, vals, rtol=0, atol=1e-10)
        assert np.max(np.abs(recon.imag)) < 1e-10

    def test_mode_index_bounds(self):
        prof = fill_profile(4, lambda i: [0.0, 0.0])
        with pytest.raises(ValueError, match="mode index"):
            mode_amplitude(prof, 4)
        with pytest.raises(ValueError, match="mode index"):
            mode_amplitude(prof, -1)


class TestLinearResponseFit:
    def test_exact_line_through_origin(self):
        etas = np.array([0.1, 0.2, 0.3, 0.4])
        means = np.column_stack([2.0 * etas, -0.5 * etas])
        fit = fit_linear_response(etas, means)
        assert np.allclose(fit.slope, [2.0, -0.5], rtol=1e-12)
        assert np.allclose(fit.intercept, 0.0, atol=1e-13)
        assert np.all(fit.slope_stderr < 1e-12)
        assert fit.n_points == 4
        assert fit.with_intercept

    def test_exact_line_with_offset(self):
        etas = np.array([0.0, 0.5, 1.0])
        means = np.column_stack([0.1 + 2.0 * etas, np.zeros(3)])
        fit = fit_linear_response(etas, means)
        assert fit.slope[0] == pytest.approx(2.0, rel=1e-12)
        assert fit.intercept[0] == pytest.approx(0.1, rel=1e-12)

    def test_no_intercept_mode(self):
        etas = np.array([0.25, 0.5, 0.75, 1.0])
        means = np.column_stack([3.0 * etas + 0.01, np.zeros(4)])
        fit = fit_linear_response(etas, means, intercept=False)
        assert not fit.with_intercept
        assert np.array_equal(fit.intercept, np.zeros(2))
        # forced through the origin, the offset leaks into the slope
        assert fit.slope[0] == pytest.approx(3.016, abs=0.01)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(7)
        etas = np.linspace(0.0, 1.0, 9)
        means = np.column_stack(
            [1.3 * etas + rng.normal(0, 0.05, 9), -etas + rng.normal(0, 0.05, 9)]
        )
        fit = fit_linear_response(etas, means)
        pred = fit.intercept[None, :] + etas[:, None] * fit.slope[None, :]
        resid = means - pred
        assert np.all(np.abs(resid.sum(axis=0)) < 1e-10)
        assert np.all(np.abs((etas[:, None] * resid).sum(axis=0)) < 1e-10)

    def test_scaling_linearity(self):
        etas = np.array([0.0, 0.3, 0.6, 0.9])
        rng = np.random.default_rng(11)
        means = rng.normal(size=(4, 2))
        a = fit_linear_response(etas, means)
        b = fit_linear_response(etas, 10.0 * means)
        assert np.allclose(b.slope, 10.0 * a.slope, rtol=1e-12)
        assert np.allclose(b.intercept, 10.0 * a.intercept, rtol=1e-12)
        assert np.allclose(b.slope_stderr, 10.0 * a.slope_stderr, rtol=1e-10)

    def test_weights_pull_fit(self):
        etas = np.array([0.0, 0.5, 1.0, 1.5])
        means = np.column_stack([etas.copy(), np.zeros(4)])
        means[3, 0] += 1.0  # outlier
        heavy = fit_linear_response(etas, means, weights=[1, 1, 1, 100])
        light = fit_linear_response(etas, means, weights=[1, 1, 1, 0.01])
        assert heavy.slope[0] > light.slope[0]
        assert light.slope[0] == pytest.approx(1.0, abs=0.05)

    def test_error_all_equal(self):
        with pytest.raises(ValueError, match="rank deficient: all eta values equal"):
            fit_linear_response([0.5, 0.5, 0.5], np.zeros((3, 2)))

    def test_error_two_distinct(self):
        with pytest.raises(ValueError, match="need at least 3 distinct eta values"):
            fit_linear_response([0.1, 0.1, 0.4], np.zeros((3, 2)))

    def test_error_length_mismatch(self):
        with pytest.raises(ValueError, match="matching length"):
            fit_linear_response([0.1, 0.2, 0.3], np.zeros((4, 2)))

    @given(
        slope=st.floats(-5, 5),
        icpt=st.floats(-2, 2),
        n=st.integers(4, 12),
    )
    @settings(max_examples=30, deadline=None)
    def test_exact_recovery_property(self, slope, icpt, n):
        etas = np.linspace(0.0, 1.0, n)
        means = np.column_stack([icpt + slope * etas, np.zeros(n)])
        fit = fit_linear_response(etas, means)
        assert fit.slope[0] == pytest.approx(slope, rel=1e-9, abs=1e-9)
        assert fit.intercept[0] == pytest.approx(icpt, rel=1e-9, abs=1e-9)


class TestBlockMeans:
    def test_velocity_mean(self):
        acc = BlockMeanAccumulator("velocity", block_len=8)
        vals = np.arange(20, dtype=float)
        for n, v in enumerate(vals):
            acc.accept(n, FakeState([v, -v]), PARAMS)
        mean, _ = acc.result()
        assert mean[0] == pytest.approx(vals.mean())
        assert mean[1] == pytest.approx(-vals.mean())

    def test_mean_independent_of_block_len(self):
        rng = np.random.default_rng(5)
        vals = rng.normal(size=100)
        res = []
        for bl in (7, 100, 1000):
            acc = BlockMeanAccumulator("velocity", block_len=bl)
            for n, v in enumerate(vals):
                acc.accept(n, FakeState([v, 0.0]), PARAMS)
            res.append(acc.result()[0][0])
        assert res[0] == pytest.approx(res[1], rel=1e-14)
        assert res[1] == pytest.approx(res[2], rel=1e-14)

    def test_stderr_tracks_scatter(self):
        rng = np.random.default_rng(9)
        acc = BlockMeanAccumulator("velocity", block_len=100)
        n_samp = 64_000
        for n in range(n_samp):
            acc.accept(n, FakeState([rng.normal(), 0.0]), PARAMS)
        mean, err = acc.result()
        # iid samples: stderr ~ 1/sqrt(n)
        assert err[0] == pytest.approx(1.0 / math.sqrt(n_samp), rel=0.5)
        assert abs(mean[0]) < 5 * err[0]

    def test_single_block_has_nan_stderr(self):
        acc = BlockMeanAccumulator("velocity")
        acc.accept(0, FakeState([1.0, 2.0]), PARAMS)
        mean, err = acc.result()
        assert np.allclose(mean, [1.0, 2.0])
        assert np.all(np.isnan(err))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no samples"):
            BlockMeanAccumulator("velocity").result()

    def test_merge_matches_single_pass(self):
        rng = np.random.default_rng(13)
        vals = rng.normal(size=(50, 2))
        full = BlockMeanAccumulator("velocity", block_len=16)
        a = BlockMeanAccumulator("velocity", block_len=16)
        b = BlockMeanAccumulator("velocity", block_len=16)
        for n, v in enumerate(vals):
            full.accept(n, FakeState(v), PARAMS)
            (a if n < 20 else b).accept(n, FakeState(v), PARAMS)
        merged = a.merge(b)
        mf, _ = full.result()
        mm, _ = merged.result()
        assert np.allclose(mm, mf, rtol=1e-14)

    def test_force_kind_uses_static_part(self):
        pot = Potential("zero", d=2)
        fld = ForceField("constant-dir", PARAMS, pot, modulated=False)
        acc = BlockMeanAccumulator("force", field=fld)
        acc.accept(0, FakeState([0.0, 0.0], q=[1.0, 2.0]), PARAMS)
        acc.accept(1, FakeState([0.0, 0.0], q=[2.0, 1.0]), PARAMS)
        mean, _ = mean_experienced_force(acc)
        assert np.allclose(mean, [1.0, 0.0])

    def test_modulated_force_averages_to_zero(self):
        pot = Potential("zero", d=2)
        fld = ForceField("constant-dir", PARAMS, pot, modulated=True)
        acc = BlockMeanAccumulator("force", field=fld)
        assert acc.zero_force
        for n in range(10):
            acc.accept(n, FakeState([0.0, 0.0], q=[float(n), 0.0]), PARAMS)
        mean, _ = acc.result()
        assert np.array_equal(mean, np.zeros(2))

    def test_kind_guards(self):
        with pytest.raises(ValueError, match="kind"):
            BlockMeanAccumulator("energy")
        vel = BlockMeanAccumulator("velocity")
        vel.accept(0, FakeState([1.0, 1.0]), PARAMS)
        with pytest.raises(ValueError, match="force"):
            mean_experienced_force(vel)
        pot = Potential("zero", d=2)
        fld = ForceField("zero", PARAMS, pot)
        frc = BlockMeanAccumulator("force", field=fld)
        frc.accept(0, FakeState([1.0, 1.0]), PARAMS)
        with pytest.raises(ValueError, match="velocity"):
            mean_velocity(frc)
