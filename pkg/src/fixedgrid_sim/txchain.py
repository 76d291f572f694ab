"""Transmitter chain: bit source, symbol mapping, pulses, laser and IQ modulator.

The three supported formats share 4-fold rotational symmetry so that the
same quadrant-differential coding and 4th-power carrier recovery apply to
all of them:

* QPSK     -- four points on the unit circle at 45 + k*90 degrees.
* QAM8     -- two-ring star: 4 inner points at 45 + k*90 deg (radius R1)
              and 4 outer points at k*90 deg (radius R2), with
              R2/R1 = (sqrt(2)+sqrt(6))/2 so that nearest-neighbor
              distances are equal within and across rings.
* QAM16    -- square 16-QAM, levels {+-1, +-3}/sqrt(10), per-axis Gray.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import (
    BITS_PER_SYMBOL,
    BitStream,
    LinkConfig,
    SymbolStream,
    dbm_to_w,
    rng_for,
    wavelength_to_frequency,
)

# 2-bit Gray sequence around the circle: index k -> bits
_GRAY2 = (0b00, 0b01, 0b11, 0b10)
_GRAY2_INV = {g: k for k, g in enumerate(_GRAY2)}

# star-8QAM ring radii (unit average energy, equal nearest-neighbor spacing)
_R2_OVER_R1 = (np.sqrt(2.0) + np.sqrt(6.0)) / 2.0
_R1_8QAM = float(np.sqrt(2.0 / (1.0 + _R2_OVER_R1**2)))
_R2_8QAM = float(_R2_OVER_R1 * _R1_8QAM)


@dataclass(frozen=True, eq=False)
class ConstellationTable:
    """Bit-label <-> point tables for one modulation format.

    ``labels[i]`` is the Gray bit label (as an integer) of ``points[i]``.
    ``quadrant_index[i]`` / ``intra_index[i]`` decompose each point for the
    quadrant-differential coding: rotating a point by 90 degrees increments
    its quadrant index and preserves its intra index.
    """

    format: str
    points: np.ndarray            # complex, unit average energy
    labels: np.ndarray            # Gray bit label per point
    quadrant_index: np.ndarray    # 0..3, advances with +90 deg rotation
    intra_index: np.ndarray       # index into diff_base per point
    diff_base: np.ndarray         # one representative point per intra index
    intra_labels: np.ndarray      # bit label of each intra index
    symmetry_order: int = 4

    @property
    def bits_per_symbol(self) -> int:
        return BITS_PER_SYMBOL[self.format]

    @property
    def n_intra_bits(self) -> int:
        return self.bits_per_symbol - 2


def _build_qpsk() -> ConstellationTable:
    # Gray around the circle: 00 -> (1+j)/sqrt2, then CCW 01, 11, 10
    pts, labels, quad, intra = [], [], [], []
    base = (1 + 1j) / np.sqrt(2.0)
    for k in range(4):
        pts.append(base * 1j**k)
        labels.append(_GRAY2[k])
        quad.append(k)
        intra.append(0)
    return ConstellationTable(
        "QPSK", np.array(pts), np.array(labels), np.array(quad),
        np.array(intra), np.array([base]), np.array([0]),
    )


def _build_qam8() -> ConstellationTable:
    # label bits: (angle Gray bits << 1) | ring bit; ring 0 = inner
    pts, labels, quad, intra = [], [], [], []
    inner = _R1_8QAM * np.exp(1j * np.pi / 4)
    outer = complex(_R2_8QAM)
    for k in range(4):
        rot = 1j**k
        for ring, rep in ((0, inner), (1, outer)):
            pts.append(rep * rot)
            labels.append((_GRAY2[k] << 1) | ring)
            quad.append(k)
            intra.append(ring)
    return ConstellationTable(
        "QAM8", np.array(pts), np.array(labels), np.array(quad),
        np.array(intra), np.array([inner, outer]), np.array([0, 1]),
    )


def _build_qam16() -> ConstellationTable:
    # Gray label: two bits per axis, 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
    axis_levels = {0b00: -3, 0b01: -1, 0b11: 1, 0b10: 3}
    pts, labels = [], []
    for bi, li in axis_levels.items():
        for bq, lq in axis_levels.items():
            pts.append((li + 1j * lq) / np.sqrt(10.0))
            labels.append((bi << 2) | bq)
    pts = np.array(pts)
    labels = np.array(labels)
    # differential decomposition: first-quadrant base points with a 2-bit
    # Gray intra label; quadrant index = number of 90 deg steps from base
    base = np.array([1 + 1j, 1 + 3j, 3 + 3j, 3 + 1j]) / np.sqrt(10.0)
    intra_labels = np.array(_GRAY2)
    quad = np.zeros(16, dtype=int)
    intra = np.zeros(16, dtype=int)
    for i, p in enumerate(pts):
        for k in range(4):
            d = np.abs(base - p * (-1j) ** k)
            if d.min() < 1e-12:
                quad[i] = k
                intra[i] = int(d.argmin())
                break
        else:  # pragma: no cover - construction is exhaustive
            raise AssertionError("point not reachable from base set")
    return ConstellationTable(
        "QAM16", pts, labels, quad, intra, base, intra_labels,
    )


@lru_cache(maxsize=None)
def constellation(fmt: str) -> ConstellationTable:
    """Return the constellation table for a format name."""
    builders = {"QPSK": _build_qpsk, "QAM8": _build_qam8, "QAM16": _build_qam16}
    if fmt not in builders:
        raise ValueError(f"unknown format {fmt!r}")
    return builders[fmt]()


@dataclass(frozen=True)
class LaserSpec:
    """Continuous-wave laser parameters."""

    power: float = 14.0            # dBm
    linewidth: float = 0.1e6       # Hz
    initial_phase: float = 0.0     # rad
    center_frequency: float = wavelength_to_frequency(1550.0)

    def __post_init__(self):
        if self.linewidth < 0:
            raise ValueError("linewidth must be >= 0")


def generate_bits(seed: int, count: int, label: str = "prbs") -> BitStream:
    """Deterministic pseudo-random bit source."""
    if count <= 0:
        raise ValueError("count must be > 0")
    rng = rng_for(seed, "bits", label)
    return BitStream(rng.integers(0, 2, size=count, dtype=np.uint8), label)


def serial_to_parallel(bits: BitStream, lanes: int) -> list:
    """Round-robin demultiplex of a bit stream into ``lanes`` streams."""
    if lanes <= 0:
        raise ValueError("lanes must be > 0")
    if len(bits) % lanes:
        raise ValueError(
            f"bit count {len(bits)} is not divisible by {lanes} lanes"
        )
    return [
        BitStream(bits.bits[k::lanes], f"{bits.label}/lane{k}")
        for k in range(lanes)
    ]


def parallel_to_serial(streams) -> BitStream:
    """Inverse of :func:`serial_to_parallel` (round-robin interleave)."""
    n = len(streams[0])
    if any(len(s) != n for s in streams):
        raise ValueError("lane lengths differ")
    out = np.empty(n * len(streams), dtype=np.uint8)
    for k, s in enumerate(streams):
        out[k :: len(streams)] = s.bits
    return BitStream(out, "merged")


def _group_bits(bits: np.ndarray, bps: int) -> np.ndarray:
    if bits.size % bps:
        raise ValueError(
            f"bit count {bits.size} is not divisible by {bps} bits/symbol"
        )
    groups = bits.reshape(-1, bps)
    weights = 1 << np.arange(bps - 1, -1, -1)
    return (groups * weights).sum(axis=1)


def map_gray(bits: BitStream, fmt: str) -> SymbolStream:
    """Map bits to symbols through the format's Gray table."""
    table = constellation(fmt)
    vals = _group_bits(bits.bits, table.bits_per_symbol)
    point_by_label = np.empty(1 << table.bits_per_symbol, dtype=np.complex128)
    point_by_label[table.labels] = table.points
    return SymbolStream(point_by_label[vals], fmt, "GRAY")


def encode_differential(bits: BitStream, fmt: str) -> SymbolStream:
    """Quadrant-differential encoding.

    The two leading bits of each group select a Gray-coded quadrant
    increment relative to the previous symbol; any remaining bits select
    the ring/position inside the quadrant absolutely.  A reference symbol
    (quadrant 0, intra index 0) is prepended.
    """
    table = constellation(fmt)
    bps = table.bits_per_symbol
    vals = _group_bits(bits.bits, bps)
    inc_bits = vals >> table.n_intra_bits
    intra_bits = vals & ((1 << table.n_intra_bits) - 1)

    inc = np.array([_GRAY2_INV[int(b)] for b in inc_bits])
    intra_by_label = np.zeros(1 << max(table.n_intra_bits, 1), dtype=int)
    intra_by_label[table.intra_labels] = np.arange(table.diff_base.size)
    intra_idx = intra_by_label[intra_bits]

    quad = np.concatenate(([0], np.cumsum(inc) % 4))
    intra_idx = np.concatenate(([0], intra_idx))
    sym = table.diff_base[intra_idx] * (1j) ** quad
    return SymbolStream(sym, fmt, "DIFFERENTIAL")


def nearest_point_index(symbols: np.ndarray, table: ConstellationTable,
                        chunk: int = 65536) -> np.ndarray:
    """Minimum-distance decision; returns indices into ``table.points``."""
    symbols = np.asarray(symbols)
    out = np.empty(symbols.size, dtype=np.intp)
    for i in range(0, symbols.size, chunk):
        seg = symbols[i : i + chunk, None]
        out[i : i + chunk] = np.abs(seg - table.points[None, :]).argmin(axis=1)
    return out


def decode_gray(symbols: np.ndarray, fmt: str) -> BitStream:
    """Minimum-distance decision followed by Gray inverse mapping."""
    table = constellation(fmt)
    idx = nearest_point_index(symbols, table)
    labels = table.labels[idx]
    bps = table.bits_per_symbol
    out = np.empty(labels.size * bps, dtype=np.uint8)
    for b in range(bps):
        out[b::bps] = (labels >> (bps - 1 - b)) & 1
    return BitStream(out, f"{fmt}/gray-decoded")


def decode_differential(symbols: np.ndarray, fmt: str) -> BitStream:
    """Decision + quadrant-differential inverse mapping.

    Consumes n+1 symbols (the first being the reference) and returns
    n groups of bits.  Immune to a common k*90 degree rotation.
    """
    table = constellation(fmt)
    if np.asarray(symbols).size < 2:
        raise ValueError("differential decoding needs at least 2 symbols")
    idx = nearest_point_index(symbols, table)
    quad = table.quadrant_index[idx]
    intra = table.intra_index[idx]
    inc = (quad[1:] - quad[:-1]) % 4
    gray = np.array(_GRAY2)[inc]
    intra_label = table.intra_labels[intra[1:]]
    vals = (gray << table.n_intra_bits) | intra_label
    bps = table.bits_per_symbol
    out = np.empty(vals.size * bps, dtype=np.uint8)
    for b in range(bps):
        out[b::bps] = (vals >> (bps - 1 - b)) & 1
    return BitStream(out, f"{fmt}/diff-decoded")


def decode_symbols(symbols: np.ndarray, fmt: str, coding: str) -> BitStream:
    """Dispatch to the Gray or differential inverse mapping."""
    if np.asarray(symbols).size == 0:
        raise ValueError("empty symbol sequence")
    if coding == "GRAY":
        return decode_gray(symbols, fmt)
    if coding == "DIFFERENTIAL":
        return decode_differential(symbols, fmt)
    raise ValueError(f"unknown coding {coding!r}")


def _rc_spectrum(f: np.ndarray, symbol_rate: float, rolloff: float) -> np.ndarray:
    """Raised-cosine frequency response (unit gain at DC)."""
    af = np.abs(f)
    f1 = (1 - rolloff) * symbol_rate / 2
    f2 = (1 + rolloff) * symbol_rate / 2
    h = np.zeros_like(af)
    h[af <= f1] = 1.0
    trans = (af > f1) & (af < f2)
    h[trans] = 0.5 * (
        1 + np.cos(np.pi / (rolloff * symbol_rate) * (af[trans] - f1))
    )
    return h


def pulse_shape(symbols, sps: int, shape: str = "nrz",
                rolloff: float = 0.2) -> np.ndarray:
    """Upsample symbols to ``sps`` samples/symbol.

    ``nrz`` holds each symbol; ``rrc`` applies a root-raised-cosine
    spectrum on the (periodic) waveform so that the matched-filter cascade
    is exactly free of inter-symbol interference at the symbol instants.
    """
    if sps < 2:
        raise ValueError("needs >= 2 samples/symbol")
    sym = symbols.symbols if isinstance(symbols, SymbolStream) else np.asarray(symbols)
    if shape == "nrz":
        return np.repeat(sym, sps)
    if shape != "rrc":
        raise ValueError(f"unknown pulse shape {shape!r}")
    n = sym.size * sps
    stuffed = np.zeros(n, dtype=np.complex128)
    stuffed[::sps] = sym
    f = np.fft.fftfreq(n, d=1.0 / sps)  # in units of the symbol rate
    h = np.sqrt(_rc_spectrum(f, 1.0, rolloff))
    shaped = np.fft.ifft(np.fft.fft(stuffed) * h)
    # the raised-cosine aliases fold to unit gain, so one factor of sps
    # makes the matched-filter cascade return the symbols unscaled
    return shaped * sps


def matched_filter_rrc(samples: np.ndarray, sps: int,
                       rolloff: float = 0.2) -> np.ndarray:
    """Apply the root-raised-cosine matched filter (periodic convention)."""
    n = samples.size
    f = np.fft.fftfreq(n, d=1.0 / sps)
    h = np.sqrt(_rc_spectrum(f, 1.0, rolloff))
    return np.fft.ifft(np.fft.fft(samples) * h)


def laser_field(spec: LaserSpec, n_samples: int, sample_rate: float,
                seed: int = 0, rng=None) -> np.ndarray:
    """Continuous-wave laser field with Wiener phase noise.

    The phase increment variance per sample is 2 pi * linewidth / f_s;
    the first sample carries exactly the initial phase.
    """
    if n_samples <= 0:
        raise ValueError("n_samples must be > 0")
    amp = np.sqrt(dbm_to_w(spec.power))
    if spec.linewidth == 0:
        phase = np.full(n_samples, spec.initial_phase)
    else:
        if rng is None:
            rng = rng_for(seed, "laser")
        sigma = np.sqrt(2 * np.pi * spec.linewidth / sample_rate)
        steps = rng.normal(0.0, sigma, size=n_samples - 1)
        phase = spec.initial_phase + np.concatenate(([0.0], np.cumsum(steps)))
    return amp * np.exp(1j * phase)


def iq_modulate(carrier: np.ndarray, drive_i: np.ndarray,
                drive_q: np.ndarray, v_pi: float) -> np.ndarray:
    """Dual-parallel Mach-Zehnder IQ modulator, push-pull, null-biased.

    E_out = carrier/2 * [cos(pi d_I / 2 V_pi) + j cos(pi d_Q / 2 V_pi)].
    Driving both arms at V_pi (the null point) extinguishes the output.
    """
    if v_pi <= 0:
        raise ValueError("v_pi must be > 0")
    carrier = np.asarray(carrier)
    drive_i = np.asarray(drive_i, dtype=float)
    drive_q = np.asarray(drive_q, dtype=float)
    if not (carrier.size == drive_i.size == drive_q.size):
        raise ValueError("carrier and drive lengths differ")
    arg_i = np.pi * drive_i / (2 * v_pi)
    arg_q = np.pi * drive_q / (2 * v_pi)
    return carrier / 2 * (np.cos(arg_i) + 1j * np.cos(arg_q))


def drive_voltages(target: np.ndarray, v_pi: float,
                   scale: float) -> tuple:
    """Invert the MZM transfer so the output reproduces ``target``/scale.

    Components are clipped to the +-scale range before the arccos, so a
    shaped waveform that overshoots its constellation extrema is driven at
    the modulator extinction limits.
    """
    u_i = np.clip(np.real(target) / scale, -1.0, 1.0)
    u_q = np.clip(np.imag(target) / scale, -1.0, 1.0)
    return (
        (2 * v_pi / np.pi) * np.arccos(u_i),
        (2 * v_pi / np.pi) * np.arccos(u_q),
    )


def pdm_combine(field_x: np.ndarray, field_y: np.ndarray,
                sample_rate: float, center_frequency: float,
                ase_psd_per_pol: float = 0.0):
    """Polarization-beam combine two fields into one dual-pol waveform."""
    field_x = np.asarray(field_x, dtype=np.complex128)
    field_y = np.asarray(field_y, dtype=np.complex128)
    if field_x.size != field_y.size:
        raise ValueError(
            f"polarization lengths differ: {field_x.size} vs {field_y.size}"
        )
    from .core import DualPolWaveform

    return DualPolWaveform(field_x, field_y, sample_rate, center_frequency,
                           ase_psd_per_pol)


@dataclass(frozen=True, eq=False)
class TransmitResult:
    """Everything the link and the error counters need about one burst."""

    waveform: object              # DualPolWaveform at launch power
    bits: BitStream               # full source stream (round-robin x/y)
    bits_x: BitStream
    bits_y: BitStream
    symbols_x: SymbolStream
    symbols_y: SymbolStream


def transmit(cfg: LinkConfig, n_symbols: int, seed=None, *,
             pulse: str = "nrz", rolloff: float = 0.2) -> TransmitResult:
    """Run the full transmitter for ``n_symbols`` per polarization.

    The electrical drive is ideal (no driver bandwidth limit or DAC
    quantization).  The output waveform is scaled to the configured
    launch power by a lossless scaler.
    """
    if n_symbols < 2:
        raise ValueError("n_symbols must be >= 2")
    seed = cfg.rng_seed if seed is None else seed
    fmt = cfg.modulation_format
    bps = cfg.bits_per_symbol_per_pol
    groups = n_symbols - 1 if cfg.coding == "DIFFERENTIAL" else n_symbols
    bits = generate_bits(seed, 2 * groups * bps)
    lane_x, lane_y = serial_to_parallel(bits, 2)
    if cfg.coding == "DIFFERENTIAL":
        sx = encode_differential(lane_x, fmt)
        sy = encode_differential(lane_y, fmt)
    else:
        sx = map_gray(lane_x, fmt)
        sy = map_gray(lane_y, fmt)

    sps = cfg.samples_per_symbol
    bx = pulse_shape(sx, sps, pulse, rolloff)
    by = pulse_shape(sy, sps, pulse, rolloff)

    fs = cfg.sample_rate
    table = constellation(fmt)
    scale = float(
        max(np.abs(table.points.real).max(), np.abs(table.points.imag).max())
    )
    if pulse == "rrc":
        scale = float(
            max(np.abs(bx.real).max(), np.abs(bx.imag).max(),
                np.abs(by.real).max(), np.abs(by.imag).max())
        )

    laser = LaserSpec(cfg.laser_power, cfg.laser_linewidth,
                      cfg.laser_initial_phase, cfg.center_frequency)
    carrier = laser_field(laser, bx.size, fs, rng=rng_for(seed, "tx-laser"))
    carrier = carrier / np.sqrt(2.0)  # polarization splitter, equal halves

    v_pi = 1.0
    fields = []
    for b in (bx, by):
        d_i, d_q = drive_voltages(b, v_pi, scale)
        fields.append(iq_modulate(carrier, d_i, d_q, v_pi))

    wave = pdm_combine(fields[0], fields[1], fs, cfg.center_frequency)
    target = dbm_to_w(cfg.launch_power)
    wave = wave.replace(
        samples_x=wave.samples_x * np.sqrt(target / wave.power()),
        samples_y=wave.samples_y * np.sqrt(target / wave.power()),
    )
    return TransmitResult(wave, bits, lane_x, lane_y, sx, sy)
