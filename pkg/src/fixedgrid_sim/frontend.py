"""Coherent homodyne front end: 90-degree hybrids, balanced detection, ADC.

The hybrid is ideal (lossless, perfectly balanced); with a noiseless LO of
matching phase the four photocurrents reconstruct the complex field up to
the gain constant R * sqrt(P_lo).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.constants as const

from .core import DualPolWaveform, dbm_to_w, rng_for
from .txchain import LaserSpec, laser_field

MAX_LO_OFFSET_HZ = 5e9   # homodyne/intradyne capture range


@dataclass(frozen=True, eq=False)
class ElectricalQuad:
    """Four balanced-detector photocurrent streams (A)."""

    xi: np.ndarray
    xq: np.ndarray
    yi: np.ndarray
    yq: np.ndarray
    sample_rate: float

    def __post_init__(self):
        n = self.xi.size
        for name in ("xq", "yi", "yq"):
            if getattr(self, name).size != n:
                raise ValueError("branch lengths differ")

    @property
    def n_samples(self) -> int:
        return self.xi.size


def hybrid_and_detect(signal: DualPolWaveform, lo: LaserSpec,
                      responsivity: float = 1.0,
                      dark_current: float = 10e-9,
                      shot_noise: bool = False,
                      seed: int = 0) -> ElectricalQuad:
    """Mix the signal with the local oscillator and detect.

    Per polarization the ideal hybrid + balanced pair yields
    I = R Re(E_s E_lo*), Q = R Im(E_s E_lo*); the LO linewidth enters as
    phase noise on E_lo and any signal-LO frequency offset appears as a
    rotation of the output constellation.
    """
    if dbm_to_w(lo.power) <= 0:
        raise ValueError("LO power must be > 0")
    df = signal.center_frequency - lo.center_frequency
    if abs(df) > MAX_LO_OFFSET_HZ:
        raise ValueError(
            f"LO offset {df/1e9:.2f} GHz outside the +-5 GHz homodyne range"
        )
    n = signal.n_samples
    fs = signal.sample_rate
    lo_field = laser_field(lo, n, fs, rng=rng_for(seed, "lo-laser"))
    t = np.arange(n) / fs
    # LO expressed in the signal's baseband frame
    lo_base = lo_field * np.exp(-2j * np.pi * df * t)

    zx = responsivity * signal.samples_x * np.conj(lo_base)
    zy = responsivity * signal.samples_y * np.conj(lo_base)

    branches = [zx.real, zx.imag, zy.real, zy.imag]
    branches = [b + dark_current for b in branches]
    if shot_noise:
        rng = rng_for(seed, "shot")
        for i, b in enumerate(branches):
            var = 2 * const.e * np.abs(b) * (fs / 2)
            branches[i] = b + rng.normal(size=n) * np.sqrt(var)
    return ElectricalQuad(*branches, sample_rate=fs)


def adc_sample(eq: ElectricalQuad, out_rate: float, *, baud_rate: float,
               timing_offset_ui: float = 0.0,
               clock_ppm: float = 0.0) -> ElectricalQuad:
    """Band-limited resampling to the ADC rate.

    ``timing_offset_ui`` injects a static fractional sampling-phase offset
    (unit intervals of the symbol clock) and ``clock_ppm`` a sampling-rate
    error, both of which the downstream clock recovery must absorb.
    """
    if out_rate < 2 * baud_rate:
        raise ValueError(
            f"ADC rate {out_rate/1e9:.1f} GS/s below the 2 samples/symbol "
            f"minimum for {baud_rate/1e9:.1f} GBd"
        )
    zx = eq.xi + 1j * eq.xq
    zy = eq.yi + 1j * eq.yq
    n = zx.size
    fs_in = eq.sample_rate

    if timing_offset_ui:
        delay = timing_offset_ui / baud_rate
        f = np.fft.fftfreq(n, d=1.0 / fs_in)
        ramp = np.exp(-2j * np.pi * f * delay)
        zx = np.fft.ifft(np.fft.fft(zx) * ramp)
        zy = np.fft.ifft(np.fft.fft(zy) * ramp)

    rate_eff = out_rate * (1.0 + clock_ppm * 1e-6)
    n_out = int(round(n * rate_eff / fs_in))
    if n_out != n:
        zx = _fft_resample(zx, n_out)
        zy = _fft_resample(zy, n_out)
    return ElectricalQuad(zx.real, zx.imag, zy.real, zy.imag,
                          sample_rate=out_rate)


def _fft_resample(x: np.ndarray, n_out: int) -> np.ndarray:
    n_in = x.size
    if n_out == n_in:
        return x
    f_in = np.fft.fft(x)
    f_out = np.zeros(n_out, dtype=np.complex128)
    h = min(n_in, n_out) // 2
    f_out[:h] = f_in[:h]
    f_out[-h:] = f_in[-h:]
    return np.fft.ifft(f_out) * (n_out / n_in)
