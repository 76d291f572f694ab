"""ITU-T fixed-grid bookkeeping and channel mux/demux onto a composite band.

Channel centers sit on the 50 GHz lattice anchored at 193.1 THz.  Grid
arithmetic is done in integer GHz so no floating drift accumulates over
the channel index range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DualPolWaveform

GRID_ANCHOR_GHZ = 193_100   # 193.1 THz
GRID_SPACING_GHZ = 50


def channel_frequency_ghz(n: int) -> int:
    """Exact center frequency of grid channel ``n`` in integer GHz."""
    return GRID_ANCHOR_GHZ + GRID_SPACING_GHZ * int(n)


def channel_frequency(n: int) -> float:
    """Center frequency of grid channel ``n`` in THz (193.1 + n * 0.05)."""
    return channel_frequency_ghz(n) / 1000.0


@dataclass(frozen=True)
class GridChannel:
    """One 50 GHz slot of the fixed grid."""

    index_n: int
    slot_width_ghz: float = 50.0

    @property
    def center_frequency_thz(self) -> float:
        return channel_frequency(self.index_n)

    @property
    def center_frequency_hz(self) -> float:
        return channel_frequency_ghz(self.index_n) * 1e9


@dataclass(frozen=True, eq=False)
class BandSignal:
    """Composite waveform plus the occupied-slot table.

    ``channel_ase`` keeps each tributary's tracked noise density so a
    demultiplexed channel walks away with its own bookkeeping.
    """

    composite: DualPolWaveform
    channels: tuple            # GridChannel per occupied slot
    channel_ase: tuple         # ase_psd_per_pol per occupied slot

    def __post_init__(self):
        idx = [c.index_n for c in self.channels]
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate grid channel indices")

    def channel(self, n: int) -> GridChannel:
        for c in self.channels:
            if c.index_n == n:
                return c
        raise KeyError(f"grid channel {n} not present in this band")


def _shift(wave_x, wave_y, fs, df):
    """Frequency shift snapped to the FFT bin grid (periodic waveform)."""
    n = wave_x.size
    k = int(round(df * n / fs))
    fx = np.fft.fft(wave_x)
    fy = np.fft.fft(wave_y)
    return np.fft.ifft(np.roll(fx, k)), np.fft.ifft(np.roll(fy, k))


def _resample(x, n_out):
    """FFT (band-limited, periodic) resampling to ``n_out`` samples."""
    n_in = x.size
    if n_out == n_in:
        return x.copy()
    f_in = np.fft.fft(x)
    f_out = np.zeros(n_out, dtype=np.complex128)
    m = min(n_in, n_out)
    h = m // 2
    f_out[:h] = f_in[:h]
    f_out[-h:] = f_in[-h:]
    return np.fft.ifft(f_out) * (n_out / n_in)


def mux(channels, composite_rate: float | None = None) -> BandSignal:
    """Multiplex per-channel waveforms onto one composite band signal.

    Parameters
    ----------
    channels : list of (GridChannel, DualPolWaveform)
        All waveforms must share sample rate and duration.
    composite_rate : float, optional
        Composite sample rate; default is max(per-channel rate,
        1.25 x occupied span).  Snapped so the sample count is integral.

    Returns
    -------
    BandSignal
        Band centered on the midpoint of the occupied slots.
    """
    if not channels:
        raise ValueError("mux needs at least one channel")
    fs_ch = channels[0][1].sample_rate
    n_ch = channels[0][1].n_samples
    for ch, w in channels:
        if w.sample_rate != fs_ch or w.n_samples != n_ch:
            raise ValueError("channel waveforms must share rate and duration")

    freqs = [c.center_frequency_hz for c, _ in channels]
    lo, hi = min(freqs), max(freqs)
    center = (lo + hi) / 2.0
    span = (hi - lo) + 50e9  # occupied slots plus half a slot each side

    if composite_rate is None:
        composite_rate = max(fs_ch, 1.25 * span)
    n_out = int(round(n_ch * composite_rate / fs_ch))
    fs_out = n_out * fs_ch / n_ch  # snap so duration is preserved exactly

    if span > fs_out:
        raise ValueError(
            f"occupied span {span/1e9:.0f} GHz exceeds composite "
            f"bandwidth {fs_out/1e9:.0f} GHz (aliasing)"
        )

    acc_x = np.zeros(n_out, dtype=np.complex128)
    acc_y = np.zeros(n_out, dtype=np.complex128)
    for ch, w in channels:
        x = _resample(w.samples_x, n_out)
        y = _resample(w.samples_y, n_out)
        df = ch.center_frequency_hz - center
        x, y = _shift(x, y, fs_out, df)
        acc_x += x
        acc_y += y

    composite = DualPolWaveform(
        acc_x, acc_y, fs_out, center,
        ase_psd_per_pol=max(w.ase_psd_per_pol for _, w in channels),
    )
    return BandSignal(
        composite,
        tuple(c for c, _ in channels),
        tuple(w.ase_psd_per_pol for _, w in channels),
    )


def _gaussian_lp(n, fs, bw_3db, order=4):
    f = np.fft.fftfreq(n, d=1.0 / fs)
    return np.exp(-(np.log(2) / 2) * (2 * f / bw_3db) ** (2 * order))


def demux(band: BandSignal, n: int, filter_bw_ghz: float = 40.0,
          out_rate: float | None = None) -> DualPolWaveform:
    """Extract grid channel ``n`` from a composite band.

    Shifts the slot to baseband, applies a 4th-order Gaussian low-pass of
    the given 3 dB bandwidth, and resamples to ``out_rate`` (default: the
    composite rate divided down to roughly 2 slots).
    """
    if filter_bw_ghz > 50.0:
        raise ValueError("filter bandwidth must be <= the 50 GHz slot")
    ch = band.channel(n)  # raises KeyError for unknown index
    comp = band.composite
    df = comp.center_frequency - ch.center_frequency_hz
    x, y = _shift(comp.samples_x, comp.samples_y, comp.sample_rate, df)

    h = _gaussian_lp(x.size, comp.sample_rate, filter_bw_ghz * 1e9)
    x = np.fft.ifft(np.fft.fft(x) * h)
    y = np.fft.ifft(np.fft.fft(y) * h)

    if out_rate is None:
        out_rate = min(comp.sample_rate, 100e9)
    n_out = int(round(comp.n_samples * out_rate / comp.sample_rate))
    fs_out = n_out * comp.sample_rate / comp.n_samples
    x = _resample(x, n_out)
    y = _resample(y, n_out)

    idx = [c.index_n for c in band.channels].index(n)
    return DualPolWaveform(x, y, fs_out, ch.center_frequency_hz,
                           ase_psd_per_pol=band.channel_ase[idx])
