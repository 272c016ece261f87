from types import SimpleNamespace

import numpy as np
import pytest

from phaseloop.connectivity import (
    ConnectivityResult,
    fc_change_analysis,
    imaginary_coherence,
    roi_pair_names,
)
from phaseloop.errors import ParameterError
from phaseloop.signals import TimeSeries

FS = 1000.0


def tone(f=10.0, dur=120.0, phase=0.0, amp=1.0):
    t = np.arange(int(dur * FS)) / FS
    return TimeSeries(amp * np.cos(2 * np.pi * f * t + phase), fs=FS)


class TestImaginaryCoherence:
    def test_self_coherence_is_zero(self, rng):
        x = TimeSeries(rng.standard_normal(90_000), fs=FS)
        assert imaginary_coherence(x, x, (8.0, 12.0)) == pytest.approx(0.0, abs=1e-12)

    def test_quarter_lag_tone_near_unity(self):
        x = tone(10.0)
        y = tone(10.0, phase=-np.pi / 2)  # delayed by a quarter period
        v = imaginary_coherence(x, y, (9.5, 10.5))
        assert v == pytest.approx(1.0, abs=0.05)

    def test_antisymmetry(self, rng):
        n = 90_000
        x = TimeSeries(rng.standard_normal(n), fs=FS)
        y = TimeSeries(np.roll(x.samples, 25) + 0.5 * rng.standard_normal(n), fs=FS)
        a = imaginary_coherence(x, y, (8.0, 12.0))
        b = imaginary_coherence(y, x, (8.0, 12.0))
        assert a == pytest.approx(-b, abs=1e-12)

    def test_scale_invariance(self, rng):
        n = 90_000
        x = TimeSeries(rng.standard_normal(n), fs=FS)
        y = TimeSeries(np.roll(x.samples, 25) + rng.standard_normal(n), fs=FS)
        a = imaginary_coherence(x, y, (8.0, 12.0))
        xs = TimeSeries(3.7 * x.samples, fs=FS)
        ys = TimeSeries(0.2 * y.samples, fs=FS)
        b = imaginary_coherence(xs, ys, (8.0, 12.0))
        assert a == pytest.approx(b, abs=1e-12)

    def test_volume_conduction_robustness(self, rng):
        # instantaneous mixing: real coherence high, imaginary part near zero
        n = 120_000
        x = tone(10.0, dur=120.0).samples + 0.5 * rng.standard_normal(n)
        y = x + rng.standard_normal(n)
        v = imaginary_coherence(TimeSeries(x, FS), TimeSeries(y, FS), (9.0, 11.0))
        assert abs(v) < 0.05

    def test_length_mismatch(self):
        with pytest.raises(ParameterError):
            imaginary_coherence(tone(dur=60.0), tone(dur=61.0), (8.0, 12.0))

    def test_too_short(self):
        with pytest.raises(ParameterError):
            imaginary_coherence(tone(dur=10.0), tone(dur=10.0), (8.0, 12.0))


class TestRoiPairs:
    def test_minimal(self):
        assert roi_pair_names(["sma", "m1"]) == [("sma", "m1")]

    def test_eight_rois_give_thirteen_connections(self):
        names = ["sma", "m1", "pm_l", "s1_l", "sma_r", "m1_r", "pm_r", "s1_r"]
        assert len(roi_pair_names(names)) == 13

    def test_missing_seed(self):
        with pytest.raises(ParameterError):
            roi_pair_names(["a", "b"])


def _stub_log(condition, base, post):
    return SimpleNamespace(
        rest_baseline=SimpleNamespace(imcoh={"sma-m1": base}),
        rest_post30=SimpleNamespace(imcoh={"sma-m1": post}),
    )


class TestFcChangeAnalysis:
    def test_planted_increase_detected(self, rng):
        logs = {"INCREASE": [_stub_log("INCREASE", rng.normal(0.4, 0.02),
                                       rng.normal(0.5, 0.02)) for _ in range(20)],
                "RANDOM": [_stub_log("RANDOM", rng.normal(0.4, 0.02),
                                     rng.normal(0.4, 0.02)) for _ in range(20)]}
        res = fc_change_analysis(logs)
        inc = next(r for r in res if r.condition == "INCREASE")
        rnd = next(r for r in res if r.condition == "RANDOM")
        assert inc.significant and inc.delta_mean > 0
        assert not rnd.significant

    def test_holm_applied_jointly(self, rng):
        logs = {"A": [_stub_log("A", rng.normal(0.4, 0.05),
                                rng.normal(0.4, 0.05)) for _ in range(10)],
                "B": [_stub_log("B", rng.normal(0.4, 0.05),
                                rng.normal(0.4, 0.05)) for _ in range(10)]}
        res = fc_change_analysis(logs)
        for r in res:
            assert r.p_corrected >= r.p_raw

    def test_constant_deltas_flagged_nan(self):
        logs = {"A": [_stub_log("A", 0.4, 0.45) for _ in range(5)]}
        res = fc_change_analysis(logs)
        assert np.isnan(res[0].p_raw)
        assert not res[0].significant

    def test_empty(self):
        assert fc_change_analysis({}) == []
