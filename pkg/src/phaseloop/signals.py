"""Synthetic mu-rhythm EEG generation, filtering, spectral estimation and SNR.

All loop-rate signals run at 1000 Hz. The phase convention throughout the
package is the analytic-signal convention for a cosine carrier: phase 0 at the
oscillation peak, +/-pi at the trough.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import fft as spfft
from scipy import signal as sps

from .circular import wrap_angle
from .errors import ParameterError

DEFAULT_FS = 1000.0
MU_BAND_HZ = (8.0, 13.0)

# 1/f noise fit recipe for the SNR estimate: straight line in dB vs log10(f)
# over SNR_FIT_RANGE_HZ, excluding SNR_FIT_EXCLUDE_HZ (and the search band).
SNR_FIT_RANGE_HZ = (2.0, 40.0)
SNR_FIT_EXCLUDE_HZ = (7.0, 14.0)


@dataclass(frozen=True)
class TimeSeries:
    """A uniformly sampled channel, amplitudes in microvolts."""

    samples: np.ndarray
    fs: float
    t0: float = 0.0
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", samples)
        if self.fs <= 0:
            raise ParameterError(f"fs must be positive, got {self.fs}")
        if samples.ndim != 1 or samples.size < 1:
            raise ParameterError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("samples must be finite")

    @property
    def n(self) -> int:
        return int(self.samples.size)

    @property
    def duration_s(self) -> float:
        return self.n / self.fs

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n) / self.fs


@dataclass(frozen=True)
class FilterSpec:
    """Bandpass or band-stop (notch) specification; edges in Hz."""

    kind: str  # "bandpass" | "notch"
    low_hz: float
    high_hz: float
    order: int = 2

    def __post_init__(self):
        if self.kind not in ("bandpass", "notch"):
            raise ParameterError(f"unknown filter kind {self.kind!r}")
        if not (0 < self.low_hz < self.high_hz):
            raise ParameterError(
                f"need 0 < low_hz < high_hz, got ({self.low_hz}, {self.high_hz})"
            )
        if self.order < 1:
            raise ParameterError(f"order must be >= 1, got {self.order}")

    def validate_for(self, fs: float) -> None:
        if self.high_hz >= fs / 2:
            raise ParameterError(
                f"band edge {self.high_hz} Hz at or above Nyquist ({fs / 2} Hz)"
            )

    def sos(self, fs: float) -> np.ndarray:
        self.validate_for(fs)
        btype = "bandpass" if self.kind == "bandpass" else "bandstop"
        return sps.butter(
            self.order, [self.low_hz, self.high_hz], btype=btype, fs=fs, output="sos"
        )

    def edge_trim_s(self) -> float:
        """Settling margin: three time constants of the slowest filter pole."""
        return 3.0 / (2.0 * np.pi * self.low_hz) * max(self.order, 1)


@dataclass(frozen=True)
class SpectrumEstimate:
    """Averaged periodogram on a log-power scale."""

    freqs: np.ndarray
    power_db: np.ndarray
    window_s: float

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=float)
        power = np.asarray(self.power_db, dtype=float)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "power_db", power)
        if freqs.size < 2 or np.any(np.diff(freqs) <= 0):
            raise ParameterError("freqs must be strictly increasing")
        if not np.all(np.isfinite(power)):
            raise ParameterError("power_db must be finite")


@dataclass(frozen=True)
class SnrEstimate:
    """Peak spectral amplitude minus fitted 1/f noise at that frequency, in dB."""

    peak_hz: float
    peak_db: float
    noise_fit_db: float
    snr_db: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "snr_db", self.peak_db - self.noise_fit_db)


@dataclass(frozen=True)
class MuGenParams:
    """Generative model of a sensorimotor-like scalp channel.

    A cosine carrier at ``mu_hz`` with slow random amplitude modulation plus
    1/f (pink) background noise.
    """

    mu_hz: float = 10.0
    mu_amp_uv: float = 5.0
    amp_mod_depth: float = 0.4
    amp_mod_hz: float = 0.2
    pink_noise_uv: float = 10.0
    duration_s: float = 10.0
    fs: float = DEFAULT_FS

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ParameterError(f"duration_s must be positive, got {self.duration_s}")
        if self.fs < 4 * self.mu_hz:
            raise ParameterError(
                f"fs={self.fs} too low for mu_hz={self.mu_hz} (need fs >= 4*mu_hz)"
            )
        if not (0 <= self.amp_mod_depth < 1):
            raise ParameterError("amp_mod_depth must be in [0, 1)")
        if self.mu_amp_uv < 0 or self.pink_noise_uv < 0:
            raise ParameterError("amplitudes must be non-negative")


def pink_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS 1/f noise via FFT spectral shaping of white Gaussian noise."""
    if n < 2:
        raise ParameterError("pink_noise needs n >= 2")
    nfft = spfft.next_fast_len(n)
    white = rng.standard_normal(nfft)
    spec = spfft.rfft(white)
    f = np.fft.rfftfreq(nfft)
    shape = np.zeros_like(f)
    shape[1:] = 1.0 / np.sqrt(f[1:])  # PSD ~ 1/f  =>  amplitude ~ 1/sqrt(f)
    x = spfft.irfft(spec * shape, n=nfft)[:n]
    rms = np.sqrt(np.mean(x**2))
    return x / rms if rms > 0 else x


# Modulation is band-limited below ~1 Hz, so it is generated at a decimated
# rate and linearly upsampled.
_MOD_DECIMATION = 16


def _slow_modulation(n: int, fs: float, cutoff_hz: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth zero-mean modulation signal squashed into (-1, 1)."""
    n_lo = max(int(np.ceil(n / _MOD_DECIMATION)) + 2, 16)
    fs_lo = fs / _MOD_DECIMATION
    nfft = spfft.next_fast_len(n_lo)
    white = rng.standard_normal(nfft)
    spec = spfft.rfft(white)
    f = np.fft.rfftfreq(nfft, d=1.0 / fs_lo)
    spec *= np.exp(-((f / max(cutoff_hz, 1e-9)) ** 2))
    spec[0] = 0.0
    m_lo = spfft.irfft(spec, n=nfft)[:n_lo]
    rms = np.sqrt(np.mean(m_lo**2))
    if rms > 0:
        m_lo = m_lo / rms
    m = np.interp(np.arange(n) / _MOD_DECIMATION, np.arange(n_lo), m_lo)
    return m / np.sqrt(1.0 + m**2)


def generate_mu_trace(params: MuGenParams, seed: int):
    """(full, clean, carrier phase) of one realization.

    full = clean + pink noise; clean is the amplitude-modulated carrier whose
    instantaneous phase (wrapped) is returned as the exact ground truth.
    Identical (params, seed) yield bit-identical output.
    """
    rng = np.random.default_rng(seed)
    n = int(round(params.duration_s * params.fs))
    if n < 2:
        raise ParameterError("duration too short for the requested fs")
    t = np.arange(n) / params.fs

    phase0 = rng.uniform(-np.pi, np.pi)
    if params.amp_mod_depth > 0:
        mod = _slow_modulation(n, params.fs, params.amp_mod_hz, rng)
        envelope = params.mu_amp_uv * (1.0 + params.amp_mod_depth * mod)
    else:
        rng.standard_normal(max(int(np.ceil(n / _MOD_DECIMATION)) + 2, 16))  # fixed draw order
        envelope = np.full(n, params.mu_amp_uv)
    phase = wrap_angle(2.0 * np.pi * params.mu_hz * t + phase0)
    clean = envelope * np.cos(phase)

    noise = params.pink_noise_uv * pink_noise(n, rng) if params.pink_noise_uv > 0 else np.zeros(n)

    full = TimeSeries(clean + noise, fs=params.fs, label="scalp")
    clean_ts = TimeSeries(clean, fs=params.fs, label="scalp_clean")
    return full, clean_ts, phase


def generate_mu_eeg_parts(params: MuGenParams, seed: int) -> tuple[TimeSeries, TimeSeries]:
    """Return (full, clean) where full = clean mu component + pink noise."""
    full, clean, _ = generate_mu_trace(params, seed)
    return full, clean


def generate_mu_eeg(params: MuGenParams, seed: int) -> TimeSeries:
    """Synthetic scalp channel: AM cosine at mu_hz plus pink noise."""
    full, _, _ = generate_mu_trace(params, seed)
    return full


def apply_filter(ts: TimeSeries, spec: FilterSpec) -> TimeSeries:
    """Zero-phase (forward-backward) filtering; output length equals input length."""
    sos = spec.sos(ts.fs)
    out = sps.sosfiltfilt(sos, ts.samples)
    return TimeSeries(out, fs=ts.fs, t0=ts.t0, label=ts.label)


def hilbert_phase(ts: TimeSeries | np.ndarray) -> np.ndarray:
    """Instantaneous analytic-signal phase, wrapped to (-pi, pi].

    Phase 0 at the oscillation peak, +/-pi at the trough. The caller is
    responsible for the input being narrow-band and at least two cycles long.
    """
    x = ts.samples if isinstance(ts, TimeSeries) else np.asarray(ts, dtype=float)
    if x.size < 4:
        raise ParameterError("hilbert_phase needs at least 4 samples")
    analytic = sps.hilbert(x)
    return wrap_angle(np.angle(analytic))


def welch_psd(ts: TimeSeries, window_s: float = 2.0, overlap_frac: float = 0.5) -> SpectrumEstimate:
    """Averaged periodogram (Hann windows) in dB; DC bin dropped."""
    nperseg = int(round(window_s * ts.fs))
    if nperseg < 64:
        raise ParameterError(f"window too short: {nperseg} samples (< 64)")
    if ts.n < nperseg:
        raise ParameterError(f"input shorter ({ts.n}) than one window ({nperseg})")
    if not (0 <= overlap_frac < 1):
        raise ParameterError("overlap_frac must be in [0, 1)")
    noverlap = int(round(overlap_frac * nperseg))
    freqs, psd = sps.welch(
        ts.samples, fs=ts.fs, nperseg=nperseg, noverlap=noverlap, window="hann",
        detrend="constant",
    )
    freqs, psd = freqs[1:], psd[1:]  # drop DC: log-frequency fit cannot use it
    psd = np.maximum(psd, 1e-300)
    return SpectrumEstimate(freqs=freqs, power_db=10.0 * np.log10(psd), window_s=window_s)


def estimate_snr(
    spec: SpectrumEstimate,
    search_band: tuple[float, float] = MU_BAND_HZ,
    fit_range_hz: tuple[float, float] = SNR_FIT_RANGE_HZ,
    exclude_hz: tuple[float, float] = SNR_FIT_EXCLUDE_HZ,
) -> SnrEstimate:
    """Peak in the search band minus a 1/f line fitted away from it.

    The noise model is a straight line in power_db vs log10(f), fitted over
    ``fit_range_hz`` excluding both ``exclude_hz`` and the search band.
    """
    lo, hi = search_band
    if not (lo < hi):
        raise ParameterError(f"empty search band {search_band}")
    f = spec.freqs
    in_band = (f >= lo) & (f <= hi)
    if not np.any(in_band):
        raise ParameterError(f"search band {search_band} contains no spectral bins")

    fit_mask = (f >= fit_range_hz[0]) & (f <= fit_range_hz[1])
    fit_mask &= ~((f >= exclude_hz[0]) & (f <= exclude_hz[1]))
    fit_mask &= ~in_band
    if np.count_nonzero(fit_mask) < 3:
        raise ParameterError("too few bins left for the 1/f noise fit")

    logf = np.log10(f[fit_mask])
    slope, intercept = np.polyfit(logf, spec.power_db[fit_mask], 1)

    band_power = spec.power_db[in_band]
    k = int(np.argmax(band_power))
    peak_hz = float(f[in_band][k])
    peak_db = float(band_power[k])
    noise_fit_db = float(intercept + slope * np.log10(peak_hz))
    return SnrEstimate(peak_hz=peak_hz, peak_db=peak_db, noise_fit_db=noise_fit_db)


def estimate_peak_hz(
    ts: TimeSeries, search_band: tuple[float, float] = MU_BAND_HZ, window_s: float = 2.0
) -> float:
    """Spectral peak frequency in the band, parabolically refined.

    Uses a finer Welch resolution than the SNR estimate: peak location, unlike
    the peak-over-noise ratio, benefits from narrow bins.
    """
    spec = welch_psd(ts, window_s=window_s)
    f = spec.freqs
    mask = (f >= search_band[0]) & (f <= search_band[1])
    if not np.any(mask):
        raise ParameterError(f"search band {search_band} contains no spectral bins")
    idxs = np.nonzero(mask)[0]
    k = idxs[int(np.argmax(spec.power_db[idxs]))]
    peak = float(f[k])
    if 0 < k < f.size - 1:
        y = spec.power_db[k - 1 : k + 2]
        denom = y[0] - 2.0 * y[1] + y[2]
        if abs(denom) > 1e-12:
            shift = float(np.clip(0.5 * (y[0] - y[2]) / denom, -1.0, 1.0))
            peak += shift * (f[1] - f[0])
    return peak


def write_timeseries_csv(ts: TimeSeries, path) -> None:
    """Two-column CSV (time_s, value_uv) with a `# fs=<Hz> label=<name>` header."""
    times = ts.times()
    with open(path, "w", newline="") as fh:
        fh.write(f"# fs={ts.fs!r} label={ts.label}\n")
        for t, v in zip(times, ts.samples):
            fh.write(f"{float(t)!r},{float(v)!r}\n")


def read_timeseries_csv(path) -> TimeSeries:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# fs="):
            raise ParameterError(f"{path}: missing '# fs=' header line")
        body = header[2:]
        fs_part, _, label_part = body.partition(" label=")
        fs = float(fs_part[len("fs="):])
        t0 = None
        values = []
        for line in fh:
            ts_str, _, v_str = line.strip().partition(",")
            if t0 is None:
                t0 = float(ts_str)
            values.append(float(v_str))
    return TimeSeries(np.array(values), fs=fs, t0=t0 or 0.0, label=label_part)
