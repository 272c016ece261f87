"""Source-level functional connectivity via the imaginary part of coherence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ParameterError
from .signals import TimeSeries
from .stats import holm_bonferroni

EPOCH_S = 2.0
MIN_DURATION_S = 60.0


def imaginary_coherence(
    x: TimeSeries, y: TimeSeries, band: tuple[float, float], epoch_s: float = EPOCH_S
) -> float:
    """Mean over the band of Im(Sxy)/sqrt(Sxx*Syy).

    Cross- and auto-spectra are averaged over non-overlapping epochs
    (2 s by default). Sensitive only to lagged coupling: zero for identical
    or instantaneously mixed signals, antisymmetric under argument swap.
    """
    if x.fs != y.fs:
        raise ParameterError("sampling rates differ")
    if x.n != y.n:
        raise ParameterError(f"length mismatch ({x.n} vs {y.n})")
    if x.duration_s < MIN_DURATION_S:
        raise ParameterError(f"need >= {MIN_DURATION_S} s of signal, got {x.duration_s:.1f}")
    nper = int(round(epoch_s * x.fs))
    n_epochs = x.n // nper
    if n_epochs < 2:
        raise ParameterError("need at least two epochs")
    window = np.hanning(nper)

    def epoch_ffts(ts):
        segs = ts.samples[: n_epochs * nper].reshape(n_epochs, nper)
        segs = segs - segs.mean(axis=1, keepdims=True)
        return np.fft.rfft(segs * window, axis=1)

    fx = epoch_ffts(x)
    fy = epoch_ffts(y)
    sxy = np.mean(fx * np.conj(fy), axis=0)
    sxx = np.mean(np.abs(fx) ** 2, axis=0)
    syy = np.mean(np.abs(fy) ** 2, axis=0)
    freqs = np.fft.rfftfreq(nper, d=1.0 / x.fs)
    mask = (freqs >= band[0]) & (freqs <= band[1])
    if not np.any(mask):
        raise ParameterError(f"band {band} contains no spectral bins")
    denom = np.sqrt(sxx[mask] * syy[mask])
    with np.errstate(divide="ignore", invalid="ignore"):
        imcoh = np.where(denom > 0, np.imag(sxy[mask]) / denom, 0.0)
    return float(np.mean(imcoh))


def roi_pair_names(names) -> list[tuple[str, str]]:
    """Seed-based connection list: the two stimulated nodes to everything else."""
    names = list(names)
    if "sma" not in names or "m1" not in names:
        raise ParameterError("need 'sma' and 'm1' channels")
    others = [n for n in names if n not in ("sma", "m1")]
    pairs = [("sma", "m1")]
    pairs += [("sma", o) for o in others]
    pairs += [("m1", o) for o in others]
    return pairs


@dataclass(frozen=True)
class ConnectivityResult:
    condition: str
    pair: str
    baseline_mean: float
    post30_mean: float
    delta_mean: float
    delta_se: float
    t: float
    p_raw: float
    p_corrected: float
    significant: bool
    n: int


def fc_change_analysis(logs_by_condition: dict, alpha: float = 0.05) -> list[ConnectivityResult]:
    """Post30-Baseline connectivity change per condition and connection.

    One-sample t-test of the per-session deltas; Holm-Bonferroni correction
    applied jointly across every (condition, connection) test in the table.
    """
    tests = []
    for condition, logs in sorted(logs_by_condition.items()):
        if not logs:
            continue
        pairs = sorted(logs[0].rest_baseline.imcoh)
        for pair in pairs:
            base = np.array([lg.rest_baseline.imcoh[pair] for lg in logs])
            post = np.array([lg.rest_post30.imcoh[pair] for lg in logs])
            delta = post - base
            n = delta.size
            if n < 2 or np.std(delta, ddof=1) == 0:
                t = p = float("nan")
                se = 0.0
            else:
                res = sps.ttest_1samp(delta, 0.0)
                t, p = float(res.statistic), float(res.pvalue)
                se = float(np.std(delta, ddof=1) / np.sqrt(n))
            tests.append(dict(
                condition=condition, pair=pair,
                baseline_mean=float(base.mean()), post30_mean=float(post.mean()),
                delta_mean=float(delta.mean()), delta_se=se, t=t, p_raw=p, n=n,
            ))
    if not tests:
        return []
    raw = np.array([t["p_raw"] for t in tests])
    finite = np.isfinite(raw)
    corrected = np.ones_like(raw)
    if finite.any():
        corrected[finite] = holm_bonferroni(raw[finite])
    out = []
    for entry, p_c in zip(tests, corrected):
        p_c = float(p_c) if np.isfinite(entry["p_raw"]) else float("nan")
        significant = bool(np.isfinite(p_c) and p_c < alpha)
        out.append(ConnectivityResult(p_corrected=p_c, significant=significant, **entry))
    return out
