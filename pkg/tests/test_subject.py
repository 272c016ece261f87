import numpy as np
import pytest
from scipy import stats as sps

from phaseloop.errors import ParameterError
from phaseloop.phase import BIN_CENTERS, bin_of
from phaseloop.signals import estimate_snr, welch_psd
from phaseloop.subject import (
    PREINNERVATION_EMG_THRESHOLD_UV,
    SNR_WELCH_WINDOW_S,
    MepResponse,
    SubjectParams,
    SubjectState,
    apply_plasticity,
    calibrate_mu_amp_uv,
    emit_roi_signals,
    emit_scalp_eeg,
    initial_state,
    respond,
)


class TestRespond:
    def test_amplitude_at_optimal_phase(self, rng):
        p = SubjectParams(mod_depth=0.3, lognorm_sigma=0.0, phi_opt=0.5)
        r = respond(initial_state(p), p, "paired", 0.5, rng)
        assert r.amplitude_mv == pytest.approx(1.3)

    def test_amplitude_at_anti_phase(self, rng):
        p = SubjectParams(mod_depth=0.3, lognorm_sigma=0.0, phi_opt=0.5)
        r = respond(initial_state(p), p, "paired", 0.5 + np.pi, rng)
        assert r.amplitude_mv == pytest.approx(0.7)

    def test_mean_over_uniform_phases(self, rng):
        p = SubjectParams(mod_depth=0.3, lognorm_sigma=0.0, preinnervation_prob=0.0)
        st = initial_state(p)
        phases = rng.uniform(-np.pi, np.pi, 20_000)
        amps = [respond(st, p, "paired", ph, rng).amplitude_mv for ph in phases]
        assert np.mean(amps) == pytest.approx(1.0, rel=0.02)

    def test_deterministic_and_cosine_tuned_with_zero_sigma(self, rng):
        p = SubjectParams(mod_depth=0.4, lognorm_sigma=0.0, phi_opt=1.1,
                          preinnervation_prob=0.0)
        st = initial_state(p)
        means = [respond(st, p, "paired", c, rng).amplitude_mv for c in BIN_CENTERS]
        assert int(np.argmax(means)) == bin_of(1.1).index

    def test_monotonic_optimum_over_bins(self, rng):
        # expected ppMEP at phi_opt strictly exceeds every other bin center
        p = SubjectParams(mod_depth=0.25, lognorm_sigma=0.0, phi_opt=float(BIN_CENTERS[5]))
        st = initial_state(p)
        means = np.array([respond(st, p, "paired", c, rng).amplitude_mv
                          for c in BIN_CENTERS])
        assert np.all(means[5] > np.delete(means, 5))

    def test_preinnervation_flag_consistent(self, rng):
        p = SubjectParams(preinnervation_prob=0.5)
        st = initial_state(p)
        for _ in range(200):
            r = respond(st, p, "paired", 0.0, rng)
            assert r.preinnervated == (r.emg_rms_pre_uv > PREINNERVATION_EMG_THRESHOLD_UV)

    def test_single_vs_paired_base(self, rng):
        p = SubjectParams(base_ppmep_mv=1.0, base_spmep_mv=2.0, lognorm_sigma=0.0,
                          mod_depth=0.0)
        st = initial_state(p)
        rp = respond(st, p, "paired", 0.0, rng)
        rs = respond(st, p, "single", 0.0, rng)
        assert rs.amplitude_mv == pytest.approx(2 * rp.amplitude_mv)

    def test_seed_equivalence_of_distributions(self):
        # different seeds, same params: indistinguishable amplitude distributions
        p = SubjectParams(lognorm_sigma=0.5, preinnervation_prob=0.0)
        st = initial_state(p)
        rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(2)
        a = [respond(st, p, "paired", 0.3, rng_a).amplitude_mv for _ in range(10_000)]
        b = [respond(st, p, "paired", 0.3, rng_b).amplitude_mv for _ in range(10_000)]
        assert sps.ks_2samp(a, b).pvalue > 0.01


class TestPlasticity:
    def test_optimal_phase_pairing(self):
        p = SubjectParams(hebb_rate=5e-4, coupling0=0.3, phi_opt=0.5)
        st = initial_state(p)
        for _ in range(400):
            st = apply_plasticity(st, p, "paired", 0.5)
        assert st.coupling == pytest.approx(0.5)

    def test_anti_phase_pairing(self):
        p = SubjectParams(hebb_rate=5e-4, coupling0=0.3, phi_opt=0.5)
        st = initial_state(p)
        for _ in range(400):
            st = apply_plasticity(st, p, "paired", 0.5 + np.pi)
        assert st.coupling == pytest.approx(0.1)

    def test_uniform_phases_leave_coupling(self, rng):
        p = SubjectParams(hebb_rate=5e-4, coupling0=0.3, ltp_rate=8e-4)
        st = initial_state(p)
        for _ in range(400):
            st = apply_plasticity(st, p, "paired", rng.uniform(-np.pi, np.pi))
        assert st.coupling == pytest.approx(0.3, abs=0.05)
        assert st.excitability_gain == pytest.approx((1 + 8e-4) ** 400, rel=1e-12)

    def test_increment_conservation(self, rng):
        # sum of increments equals hebb_rate * sum(cos(phi - phi_opt)) pre-clip
        p = SubjectParams(hebb_rate=1e-3, coupling0=0.5, phi_opt=-0.2)
        st = initial_state(p)
        phases = rng.uniform(-np.pi, np.pi, 200)
        for ph in phases:
            st = apply_plasticity(st, p, "paired", ph)
        expected = 0.5 + 1e-3 * np.sum(np.cos(phases - p.phi_opt))
        assert st.coupling == pytest.approx(expected, abs=1e-12)

    def test_clipping(self):
        p = SubjectParams(hebb_rate=0.5, coupling0=0.9, phi_opt=0.0)
        st = apply_plasticity(initial_state(p), p, "paired", 0.0)
        assert st.coupling == 1.0

    def test_single_pulse_rejected(self):
        p = SubjectParams()
        with pytest.raises(ParameterError):
            apply_plasticity(initial_state(p), p, "single", 0.0)


class TestMepResponse:
    def test_inconsistent_flag_rejected(self):
        with pytest.raises(ParameterError):
            MepResponse(amplitude_mv=1.0, preinnervated=True, emg_rms_pre_uv=50.0)

    def test_nonpositive_amplitude_rejected(self):
        with pytest.raises(ParameterError):
            MepResponse(amplitude_mv=0.0, preinnervated=False, emg_rms_pre_uv=10.0)


class TestScalpCalibration:
    def test_planted_snr_recovered(self):
        p = SubjectParams(snr_db=10.0)
        vals = [
            estimate_snr(welch_psd(emit_scalp_eeg(p, 300.0, 9000 + s),
                                   window_s=SNR_WELCH_WINDOW_S)).snr_db
            for s in range(12)
        ]
        assert np.mean(vals) == pytest.approx(10.0, abs=0.5)

    def test_amplitude_monotone_in_snr(self):
        a4 = calibrate_mu_amp_uv(SubjectParams(snr_db=4.0))
        a10 = calibrate_mu_amp_uv(SubjectParams(snr_db=10.0))
        assert a10 > a4 > 0


class TestRoiSignals:
    def test_zero_coupling_near_zero_imcoh(self):
        from phaseloop.connectivity import imaginary_coherence

        p = SubjectParams()
        rs = emit_roi_signals(SubjectState(coupling=0.0), p, 300.0, 1000.0, 5)
        v = imaginary_coherence(rs["sma"], rs["m1"], (8.0, 12.0))
        assert abs(v) < 0.05

    def test_full_coupling_no_noise_is_unity(self):
        from dataclasses import replace

        from phaseloop.connectivity import imaginary_coherence

        p = replace(SubjectParams(), m1_noise_uv=0.0, fc_lag_rad=np.pi / 2)
        rs = emit_roi_signals(SubjectState(coupling=1.0), p, 120.0, 1000.0, 6)
        v = imaginary_coherence(rs["sma"], rs["m1"], (9.5, 10.5))
        assert v == pytest.approx(1.0, abs=0.05)

    def test_coupling_monotonicity_over_seeds(self):
        from phaseloop.connectivity import imaginary_coherence

        p = SubjectParams()
        wins = 0
        for s in range(30):
            lo = emit_roi_signals(SubjectState(coupling=0.3), p, 120.0, 1000.0, 100 + s)
            hi = emit_roi_signals(SubjectState(coupling=0.5), p, 120.0, 1000.0, 200 + s)
            a = imaginary_coherence(lo["sma"], lo["m1"], (8.0, 12.0))
            b = imaginary_coherence(hi["sma"], hi["m1"], (8.0, 12.0))
            wins += b > a
        assert wins >= 29

    def test_extra_rois(self):
        from dataclasses import replace

        p = replace(SubjectParams(), n_extra_rois=6)
        rs = emit_roi_signals(initial_state(p), p, 60.0, 1000.0, 3)
        assert len(rs.names) == 8

    def test_determinism(self):
        p = SubjectParams()
        a = emit_roi_signals(initial_state(p), p, 60.0, 1000.0, 11)
        b = emit_roi_signals(initial_state(p), p, 60.0, 1000.0, 11)
        np.testing.assert_array_equal(a["m1"].samples, b["m1"].samples)
