"""Performance metrics: BER with confidence intervals, spectra, capacity, EVM."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import welch

from .core import AlignmentError, BitStream, DualPolWaveform
from .txchain import ConstellationTable, constellation

_Z95 = 1.959963984540054   # two-sided 95% normal quantile

# a sweep point is trustworthy once it saw >= 100 errors or 2^20 bits
CONVERGED_MIN_ERRORS = 100
CONVERGED_MIN_BITS = 1 << 20


@dataclass(frozen=True)
class BerReport:
    """Exact error count with a Wilson 95% confidence interval."""

    bit_errors: int
    bits_counted: int
    ber: float
    ci_low: float
    ci_high: float

    @property
    def converged(self) -> bool:
        return (self.bit_errors >= CONVERGED_MIN_ERRORS
                or self.bits_counted >= CONVERGED_MIN_BITS)

    @classmethod
    def from_counts(cls, errors: int, bits: int) -> "BerReport":
        if bits <= 0:
            raise ValueError("bits_counted must be > 0")
        lo, hi = wilson_interval(errors, bits)
        return cls(int(errors), int(bits), errors / bits, lo, hi)


def wilson_interval(k: int, n: int, z: float = _Z95) -> tuple:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be > 0")
    p = k / n
    denom = 1 + z**2 / n
    center = (p + z**2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z**2 / (4 * n**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _align_offset(a: np.ndarray, b: np.ndarray, max_lag: int) -> int:
    """Lag of the strongest (anti-)correlation between +-1 mapped streams.

    Raises :class:`AlignmentError` when no peak clears the random-stream
    noise floor, which distinguishes a lost alignment from a genuinely
    high BER.
    """
    n = min(a.size, b.size)
    nfft = 1 << int(np.ceil(np.log2(n + max_lag + 1)))
    fa = np.fft.rfft(a[:n], nfft)
    fb = np.fft.rfft(b[:n], nfft)
    cc = np.fft.irfft(fa * np.conj(fb), nfft)
    lags = np.concatenate([np.arange(0, max_lag + 1),
                           np.arange(-max_lag, 0)])
    vals = np.concatenate([cc[: max_lag + 1], cc[-max_lag:]])
    best = int(np.argmax(np.abs(vals)))
    peak = abs(vals[best])
    if peak < 8.0 * math.sqrt(n):
        raise AlignmentError(
            f"no correlation peak within +-{max_lag} bits "
            f"(best {peak:.1f} vs noise floor {8*math.sqrt(n):.1f})"
        )
    return int(lags[best])


def count_ber(tx: BitStream, rx: BitStream, skip: int = 0,
              max_lag: int = 256) -> BerReport:
    """Count bit errors after correlation alignment.

    ``skip`` drops leading bits of both streams (receiver convergence
    transients) before alignment; the alignment search covers lags up to
    +-``max_lag`` bits and also locks onto anti-correlated (complemented)
    streams.
    """
    a = tx.bits[skip:].astype(np.float64) * 2 - 1
    b = rx.bits[skip:].astype(np.float64) * 2 - 1
    if a.size == 0 or b.size == 0:
        raise ValueError("no bits left after skip")
    lag = _align_offset(a, b, max_lag)
    if lag >= 0:
        a_al, b_al = a[lag:], b
    else:
        a_al, b_al = a, b[-lag:]
    n = min(a_al.size, b_al.size)
    errors = int(np.sum(a_al[:n] != b_al[:n]))
    return BerReport.from_counts(errors, n)


@dataclass(frozen=True)
class SpectrumReport:
    """Peak power per resolution bandwidth and -3 dB full width."""

    peak_power_dbm: float
    fwhm_ghz: float
    resolution_bw_ghz: float


def analyze_spectrum(wave: DualPolWaveform,
                     resolution_bw_ghz: float = 1.0) -> SpectrumReport:
    """Welch spectrum smoothed to the resolution bandwidth.

    Reports the peak of the power-per-resolution-bandwidth trace in dBm
    and the full width at -3 dB from that peak, with the crossing points
    linearly interpolated between bins.
    """
    if resolution_bw_ghz <= 0:
        raise ValueError("resolution bandwidth must be > 0")
    if wave.power() == 0:
        raise ValueError("cannot analyze an all-zero waveform")
    fs = wave.sample_rate
    rbw = resolution_bw_ghz * 1e9
    nperseg = int(min(wave.n_samples,
                      2 ** np.ceil(np.log2(max(4 * fs / rbw, 16)))))
    f, pxx = welch(wave.samples_x, fs=fs, nperseg=nperseg,
                   return_onesided=False, detrend=False)
    _, pyy = welch(wave.samples_y, fs=fs, nperseg=nperseg,
                   return_onesided=False, detrend=False)
    psd = np.fft.fftshift(pxx + pyy)
    f = np.fft.fftshift(f)

    bin_hz = fs / nperseg
    width = max(1, int(round(rbw / bin_hz)))
    smoothed = uniform_filter1d(psd, size=width, mode="wrap")
    p_rbw = smoothed * width * bin_hz   # W per resolution bandwidth

    peak_idx = int(np.argmax(p_rbw))
    peak_w = float(p_rbw[peak_idx])
    half = peak_w / 2

    def crossing(direction: int) -> float:
        i = peak_idx
        while 0 < i < p_rbw.size - 1 and p_rbw[i] > half:
            i += direction
        j = i - direction
        if p_rbw[i] == p_rbw[j]:
            return f[i]
        frac = (p_rbw[j] - half) / (p_rbw[j] - p_rbw[i])
        return f[j] + frac * (f[i] - f[j])

    fwhm = abs(crossing(+1) - crossing(-1))
    return SpectrumReport(
        peak_power_dbm=10 * np.log10(peak_w * 1e3),
        fwhm_ghz=fwhm / 1e9,
        resolution_bw_ghz=resolution_bw_ghz,
    )


@dataclass(frozen=True)
class CapacityReport:
    """Aggregate WDM capacity and spectral-efficiency bookkeeping."""

    per_channel_gbps: tuple
    total_tbps: float
    n_channels: int
    spectral_efficiency: float       # (b/s)/Hz
    channel_spacing_ghz: float
    total_bandwidth_ghz: float


def spectral_efficiency(bit_rate_gbps, spacing_ghz=50) -> float:
    """Per-channel bit rate over channel spacing, computed exactly."""
    if spacing_ghz <= 0:
        raise ValueError("channel spacing must be > 0")
    return float(Fraction(bit_rate_gbps) / Fraction(spacing_ghz))


def total_capacity(rates_gbps, spacing_ghz=50) -> CapacityReport:
    """Sum of per-channel bit rates (exact rational arithmetic)."""
    rates = list(rates_gbps)
    if not rates:
        raise ValueError("rates list must not be empty")
    total = sum(Fraction(r) for r in rates)
    n = len(rates)
    per_ch = total / n
    return CapacityReport(
        per_channel_gbps=tuple(float(r) for r in rates),
        total_tbps=float(total / 1000),
        n_channels=n,
        spectral_efficiency=float(per_ch / Fraction(spacing_ghz)),
        channel_spacing_ghz=float(spacing_ghz),
        total_bandwidth_ghz=float(n * Fraction(spacing_ghz)),
    )


def evm(symbols: np.ndarray, reference) -> float:
    """Error vector magnitude in percent against the nearest reference point.

    RMS distance to the closest constellation point divided by the RMS
    constellation magnitude.
    """
    symbols = np.asarray(symbols)
    if symbols.size == 0:
        raise ValueError("empty symbol sequence")
    table = reference if isinstance(reference, ConstellationTable) \
        else constellation(reference)
    d = np.abs(symbols[:, None] - table.points[None, :]).min(axis=1)
    rms_err = np.sqrt(np.mean(d**2))
    rms_ref = np.sqrt(np.mean(np.abs(table.points) ** 2))
    return float(100.0 * rms_err / rms_ref)
