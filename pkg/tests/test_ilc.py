import numpy as np
import pytest

from conftest import fir_plant, fir_response, random_signal
from ilcdpd.bla import LearningFilter, estimate_bla, invert_frf
from ilcdpd.errors import DivergenceError, PlantError, RejectedInputError
from ilcdpd.ilc import (
    BlaReference,
    ConstantGain,
    IlcConfig,
    compensation_error,
    controlled_rms,
    ilc_step,
    make_desired,
    run_ilc,
)
from ilcdpd.plant import mild_preset
from ilcdpd.siggen import MultisineSpec, OfdmSpec, gen_ofdm
from ilcdpd.signal_core import FrequencyGrid, Spectrum, dft, idft


def bla_and_filter(plant, grid, m=4, seed=0):
    # excite at the preset's calibrated unit-rms drive level
    frf = estimate_bla(plant, MultisineSpec.flat(grid, seed=seed, target_rms=1.0), m)
    return frf, invert_frf(frf)


@pytest.fixture
def flat_grid():
    return FrequencyGrid.centered_band(64, 21, 21)


class TestMakeDesired:
    def test_bla_mode_is_circular_convolution(self, flat_grid):
        # Y_d = G * R bin-wise equals circular convolution with the impulse
        # response of G in time (oracle: direct O(N^2) convolution)
        taps = [1.0, 0.3 - 0.1j, 0.05j]
        plant = fir_plant(taps)
        frf, _ = bla_and_filter(plant, flat_grid)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=1))
        y_d = make_desired(r, BlaReference(), frf)
        h = np.fft.ifft(fir_response(taps, 64))
        n = 64
        conv = np.array([
            sum(h[d] * r.samples[(t - d) % n] for d in range(n)) for t in range(n)
        ])
        # r lives entirely on controlled bins, so no masking difference
        np.testing.assert_allclose(idft(y_d).samples, conv, rtol=1e-9, atol=1e-11)

    def test_constant_gain_mode(self, flat_grid):
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=2))
        g = 2.0 - 1.0j
        y_d = make_desired(r, ConstantGain(g), fake_frf(flat_grid, 1.0))
        np.testing.assert_allclose(
            y_d.bins[flat_grid.controlled_index],
            g * dft(r).bins[flat_grid.controlled_index],
            rtol=1e-12,
        )

    def test_zero_outside_controlled(self, flat_grid):
        r = random_signal(64, seed=3)  # broadband reference
        y_d = make_desired(r, ConstantGain(1.0), fake_frf(flat_grid, 1.0))
        mask = np.zeros(64, dtype=bool)
        mask[flat_grid.controlled_index] = True
        assert np.all(y_d.bins[~mask] == 0.0)


def fake_frf(grid, gain):
    from ilcdpd.bla import FrfEstimate

    n_bins = len(grid.controlled_bins)
    return FrfEstimate(grid=grid, g_bla=np.full(n_bins, gain, dtype=complex),
                       variance=np.zeros(n_bins), n_realizations=2)


class TestIlcStep:
    def test_update_formula(self, flat_grid):
        u = dft(random_signal(64, seed=4))
        y = dft(random_signal(64, seed=5))
        y_d = dft(random_signal(64, seed=6))
        lvals = np.linspace(0.5, 1.5, 21).astype(complex)
        lf = LearningFilter(grid=flat_grid, l=lvals, gain_floor=0.0)
        out = ilc_step(u, y, y_d, lf, relaxation=0.7)
        idx = flat_grid.controlled_index
        expected = u.bins.copy()
        expected[idx] += 0.7 * lvals * (y_d.bins[idx] - y.bins[idx])
        np.testing.assert_allclose(out.bins, expected, rtol=1e-13)

    def test_fixed_point(self, flat_grid):
        u = dft(random_signal(64, seed=7))
        y_d = dft(random_signal(64, seed=8))
        lf = LearningFilter(grid=flat_grid, l=np.ones(21, dtype=complex), gain_floor=0.0)
        out = ilc_step(u, y_d, y_d, lf)
        np.testing.assert_array_equal(out.bins, u.bins)

    def test_non_controlled_bins_untouched(self, flat_grid):
        u = dft(random_signal(64, seed=9))
        y = dft(random_signal(64, seed=10))
        y_d = dft(random_signal(64, seed=11))
        lf = LearningFilter(grid=flat_grid, l=np.ones(21, dtype=complex), gain_floor=0.0)
        out = ilc_step(u, y, y_d, lf)
        mask = np.zeros(64, dtype=bool)
        mask[flat_grid.controlled_index] = True
        np.testing.assert_array_equal(out.bins[~mask], u.bins[~mask])

    def test_non_finite_update_names_bin(self, flat_grid):
        u = dft(random_signal(64, seed=12))
        y = dft(random_signal(64, seed=13))
        y_d = dft(random_signal(64, seed=14))
        lvals = np.ones(21, dtype=complex)
        lvals[5] = 1e308
        big = y_d.bins.copy()
        big[flat_grid.controlled_index[5]] = 1e308
        lf = LearningFilter(grid=flat_grid, l=lvals, gain_floor=0.0)
        with np.errstate(over="ignore"), pytest.raises(DivergenceError, match="bin"):
            ilc_step(u, y, Spectrum(big), lf)


class TestRunIlc:
    def test_linear_plant_one_step_exact(self, flat_grid):
        # with l = 1/P the first update lands exactly on the solution
        taps = [1.0, 0.2 - 0.1j]
        plant = fir_plant(taps)
        frf, lf = bla_and_filter(plant, flat_grid)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=15))
        y_d = make_desired(r, ConstantGain(1.0), frf)
        traj = run_ilc(plant, r, y_d, lf, IlcConfig(max_iterations=3, stop_tolerance=1e-12))
        assert traj.converged
        assert traj.error_norms[1] <= 1e-12 * traj.y_d_norm

    def test_contraction_matches_closed_form(self, flat_grid):
        # scale the exact inverse filter so each controlled bin contracts
        # by a known factor delta[k] = 1 - relaxation * l[k] * P[k]
        taps = [1.0, 0.15 + 0.1j]
        plant = fir_plant(taps)
        frf, lf = bla_and_filter(plant, flat_grid)
        relaxation = 0.6
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=16))
        y_d = make_desired(r, ConstantGain(1.0), frf)
        p = fir_response(taps, 64)[lf.grid.controlled_index]
        delta = 1.0 - relaxation * lf.l * p
        traj = run_ilc(plant, r, y_d, lf,
                       IlcConfig(max_iterations=6, relaxation=relaxation, stop_tolerance=0.0))
        idx = lf.grid.controlled_index
        e0 = y_d.bins[idx] - dft(traj.outputs[0]).bins[idx]
        for j in (1, 3, 6):
            ej = y_d.bins[idx] - dft(traj.outputs[j]).bins[idx]
            np.testing.assert_allclose(ej, delta**j * e0, rtol=1e-8, atol=1e-10)

    def test_nonlinear_plant_converges(self, flat_grid):
        plant = mild_preset()
        frf, lf = bla_and_filter(plant, flat_grid, m=8)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=17, target_rms=1.0))
        y_d = make_desired(r, BlaReference(), frf)
        traj = run_ilc(plant, r, y_d, lf, IlcConfig(max_iterations=12))
        assert traj.converged
        assert traj.error_norms[traj.best_index] <= 1e-6 * traj.y_d_norm

    def test_divergence_detected(self, flat_grid):
        # wrong-sign over-gained filter makes the error grow every step
        taps = [1.0]
        plant = fir_plant(taps)
        frf, lf = bla_and_filter(plant, flat_grid)
        bad = LearningFilter(grid=lf.grid, l=-3.0 * lf.l, gain_floor=lf.gain_floor)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=18))
        y_d = make_desired(r, ConstantGain(2.0), frf)
        traj = run_ilc(plant, r, y_d, bad, IlcConfig(max_iterations=10, stop_tolerance=0.0))
        assert traj.diverged
        assert not traj.converged
        assert traj.best_index == 0
        assert traj.iterations_run < 10

    def test_trajectory_self_consistent(self, flat_grid):
        plant = mild_preset()
        frf, lf = bla_and_filter(plant, flat_grid, m=4)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=19, target_rms=1.0))
        y_d = make_desired(r, BlaReference(), frf)
        traj = run_ilc(plant, r, y_d, lf, IlcConfig(max_iterations=5, stop_tolerance=0.0))
        assert len(traj.inputs) == len(traj.outputs) == traj.iterations_run + 1
        # outputs really are the plant applied to the stored inputs
        for u, y in zip(traj.inputs, traj.outputs):
            np.testing.assert_array_equal(plant.apply(u).samples, y.samples)
        # norms really are controlled-bin error rms
        for j, y in enumerate(traj.outputs):
            norm = controlled_rms(y_d.bins - dft(y).bins, lf.grid)
            assert traj.error_norms[j] == pytest.approx(norm, rel=1e-12)
        assert traj.best_index == int(np.argmin(traj.error_norms))
        np.testing.assert_array_equal(traj.best_input.samples,
                                      traj.inputs[traj.best_index].samples)

    def test_plant_failure_wrapped(self, flat_grid):
        class Broken:
            def apply(self, u):
                raise RuntimeError("hardware gone")

        frf = fake_frf(flat_grid, 1.0)
        lf = invert_frf(frf)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=20))
        y_d = make_desired(r, ConstantGain(1.0), frf)
        with pytest.raises(PlantError, match="iteration 0"):
            run_ilc(Broken(), r, y_d, lf)

    def test_length_mismatch_rejected(self, flat_grid):
        frf = fake_frf(flat_grid, 1.0)
        lf = invert_frf(frf)
        r = random_signal(32, seed=21)
        y_d = Spectrum(np.zeros(64, dtype=complex) + 1.0)
        with pytest.raises(RejectedInputError):
            run_ilc(fir_plant([1.0]), r, y_d, lf)


class TestAveraging:
    def test_n_averages_reduces_noise(self, flat_grid):
        import dataclasses

        noisy = dataclasses.replace(mild_preset(), noise_std=0.02)
        frf, lf = bla_and_filter(noisy.without_noise(), flat_grid, m=4)
        r = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=22, target_rms=1.0))
        y_d = make_desired(r, BlaReference(), frf)
        cfg1 = IlcConfig(max_iterations=8, stop_tolerance=0.0, divergence_factor=100.0)
        cfg8 = dataclasses.replace(cfg1, n_averages=8)
        final1 = run_ilc(noisy, r, y_d, lf, cfg1).error_norms[-1]
        final8 = run_ilc(noisy, r, y_d, lf, cfg8).error_norms[-1]
        assert final8 < final1


class TestErrorMetrics:
    def test_controlled_rms_matches_time_domain(self, flat_grid):
        sig = gen_ofdm(OfdmSpec(n=64, grid=flat_grid, seed=23))
        bins = dft(sig).bins
        # signal lives only on controlled bins: rms equals time-domain rms
        expected = np.sqrt(np.mean(np.abs(sig.samples) ** 2))
        assert controlled_rms(bins, flat_grid) == pytest.approx(expected, rel=1e-12)

    def test_compensation_error_exact_match_floors(self, flat_grid):
        y = dft(random_signal(64, seed=24))
        per_bin_db, rms = compensation_error(y, y, flat_grid)
        assert rms == 0.0
        assert np.all(per_bin_db <= -399.0)

    def test_compensation_error_single_bin(self, flat_grid):
        y_d = Spectrum(np.zeros(64, dtype=complex) + 1.0)
        y_c_bins = y_d.bins.copy()
        k = flat_grid.controlled_index[0]
        y_c_bins[k] += 0.1
        per_bin_db, rms = compensation_error(y_d, Spectrum(y_c_bins), flat_grid)
        assert per_bin_db[k] == pytest.approx(-20.0, abs=1e-10)
        assert rms == pytest.approx(0.1 / 64, rel=1e-12)
