"""Receiver DSP chain.

Stage order is fixed: frequency-domain chromatic-dispersion compensation,
Gardner symbol-clock recovery at 2 samples/symbol, CMA/RDE butterfly
polarization demultiplexing, 4th-power frequency-offset compensation, and
Viterbi-Viterbi carrier-phase estimation, followed by decision and
Gray/differential inverse mapping.  A constellation dump is emitted after
the clock, equalizer and carrier stages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize_scalar

from .core import (
    BitStream,
    ConvergenceError,
    beta2_si_from_d,
)
from .txchain import constellation, decode_symbols
from .frontend import ElectricalQuad, _fft_resample

_R1_R2_BY_FORMAT = {
    # ring radii of the unit-energy constellations (decision thresholds)
    "QPSK": (1.0,),
    "QAM8": tuple(np.unique(np.abs(constellation("QAM8").points)).round(12)),
    "QAM16": tuple(np.unique(np.abs(constellation("QAM16").points)).round(12)),
}


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class DspConfig:
    """Tuning knobs of the receiver chain."""

    cd_fft_block: int = 4096
    clock_kp: float = 8e-3
    clock_ki: float = 1e-5
    cma_taps: int = 13
    cma_mu: float = 1e-3
    cma_train_symbols: int = 20000
    cpe_block: int = 128
    qam_cpe_partition: str = "rings"   # ring-class selection rule for QAM

    def __post_init__(self):
        if self.cma_taps % 2 == 0:
            raise ValueError("cma_taps must be odd")
        if not 0 < self.cma_mu < 0.1:
            raise ValueError("cma_mu must lie in (0, 0.1)")
        for name in ("cd_fft_block", "cpe_block"):
            if not _is_pow2(getattr(self, name)):
                raise ValueError(f"{name} must be a power of two")


@dataclass(frozen=True, eq=False)
class StageDump:
    """Per-polarization constellation snapshot after one DSP stage."""

    stage: str
    samples_x: np.ndarray
    samples_y: np.ndarray


@dataclass(frozen=True, eq=False)
class DspResult:
    """Decoded bits plus per-stage diagnostics."""

    bits: BitStream                # round-robin interleave of both pols
    bits_x: BitStream
    bits_y: BitStream
    symbols_x: np.ndarray          # carrier-recovered symbols
    symbols_y: np.ndarray
    dumps: tuple
    foc_offset_hz: float
    cpe_slips: tuple
    clock_rate_error: float


def pnorm(x: np.ndarray) -> np.ndarray:
    """Normalize to unit average power."""
    p = np.mean(np.abs(x) ** 2)
    if p == 0:
        raise ValueError("cannot normalize an all-zero signal")
    return x / np.sqrt(p)


# --------------------------------------------------------------------------
# chromatic dispersion compensation
# --------------------------------------------------------------------------

def dispersion_memory_samples(d_ps_nm_km: float, length_km: float,
                              wavelength_nm: float,
                              sample_rate: float) -> int:
    """Channel memory of the dispersion operator, in samples.

    The band-limited dispersion impulse response is a chirp of duration
    2 pi |beta2| L * BW; multiplied by the sample rate this gives the
    number of samples any block filter must overlap.
    """
    beta2 = abs(beta2_si_from_d(d_ps_nm_km, wavelength_nm))
    t_mem = 2 * np.pi * beta2 * (length_km * 1e3) * sample_rate
    return int(np.ceil(t_mem * sample_rate))


def cd_compensate(samples: np.ndarray, d_ps_nm_km: float, length_km: float,
                  wavelength_nm: float, sample_rate: float,
                  fft_block: int = 4096) -> np.ndarray:
    """Overlap-save filtering with the inverse dispersion transfer function.

    H^-1(w) = exp(-j beta2 w^2 L / 2) applied block-wise; the block size
    must exceed the dispersion memory, otherwise the call is rejected with
    the computed requirement.
    """
    samples = np.asarray(samples, dtype=np.complex128)
    if length_km == 0:
        return samples.copy()
    if not _is_pow2(fft_block):
        raise ValueError("fft_block must be a power of two")
    mem = dispersion_memory_samples(d_ps_nm_km, length_km, wavelength_nm,
                                    sample_rate)
    if fft_block <= mem:
        raise ValueError(
            f"fft_block {fft_block} does not cover the dispersion memory: "
            f"need > {mem} samples for {length_km} km"
        )
    n = samples.size
    beta2_l = beta2_si_from_d(d_ps_nm_km, wavelength_nm) * length_km * 1e3
    if fft_block >= n:
        # single block covering the whole (periodic) waveform: the exact
        # inverse of the channel's cyclic dispersion operator
        w = 2 * np.pi * np.fft.fftfreq(n, d=1.0 / sample_rate)
        return np.fft.ifft(np.fft.fft(samples) * np.exp(-0.5j * beta2_l * w**2))

    overlap = min(2 * mem, fft_block - 2)
    overlap = max(2, overlap - (overlap % 2))
    hop = fft_block - overlap

    w = 2 * np.pi * np.fft.fftfreq(fft_block, d=1.0 / sample_rate)
    h_inv = np.exp(-0.5j * beta2_l * w**2)

    out = np.empty(n, dtype=np.complex128)
    half = overlap // 2
    base = np.arange(fft_block)
    for start in range(0, n, hop):
        idx = (start - half + base) % n   # cyclic edges
        blk = np.fft.ifft(np.fft.fft(samples[idx]) * h_inv)
        take = min(hop, n - start)
        out[start : start + take] = blk[half : half + take]
    return out


# --------------------------------------------------------------------------
# symbol clock recovery (Gardner TED + proportional-integral loop)
# --------------------------------------------------------------------------

@njit(cache=True)
def _gardner_loop(x, y, step_nom, kp, ki, n_out_max):
    out_x = np.empty(n_out_max, dtype=np.complex128)
    out_y = np.empty(n_out_max, dtype=np.complex128)
    err = np.zeros(n_out_max // 2 + 1)
    n = x.size
    p = 2.0
    integ = 0.0
    power = 1.0
    m = 0
    n_err = 0
    while p < n - 3.0 and m < n_out_max:
        i = int(np.floor(p))
        mu = p - i
        # 4-point Lagrange interpolation at i + mu
        am = -mu * (mu - 1.0) * (mu - 2.0) / 6.0
        a0 = (mu + 1.0) * (mu - 1.0) * (mu - 2.0) / 2.0
        a1 = -(mu + 1.0) * mu * (mu - 2.0) / 2.0
        a2 = (mu + 1.0) * mu * (mu - 1.0) / 6.0
        out_x[m] = am * x[i - 1] + a0 * x[i] + a1 * x[i + 1] + a2 * x[i + 2]
        out_y[m] = am * y[i - 1] + a0 * y[i] + a1 * y[i + 1] + a2 * y[i + 2]
        adj = 0.0
        if m >= 2 and m % 2 == 0:
            ex = ((out_x[m] - out_x[m - 2]) * np.conj(out_x[m - 1])).real
            ey = ((out_y[m] - out_y[m - 2]) * np.conj(out_y[m - 1])).real
            pw = 0.5 * (abs(out_x[m]) ** 2 + abs(out_y[m]) ** 2)
            power = 0.999 * power + 0.001 * pw
            e = 0.5 * (ex + ey) / power
            err[n_err] = e
            n_err += 1
            integ -= ki * e
            adj = -kp * e
        p += step_nom * (1.0 + integ) + adj
        m += 1
    return out_x[:m], out_y[:m], err[:n_err], integ


@dataclass(frozen=True)
class ClockInfo:
    rate_error: float          # final integrator value (fractional rate)
    error_trace: np.ndarray    # TED samples, one per symbol


def clock_recover(x: np.ndarray, y: np.ndarray, sps_in: float,
                  kp: float = 8e-3, ki: float = 1e-5):
    """Recover the symbol clock; returns 2 samples/symbol, symbol-aligned.

    Even output indices are the on-time (eye-center) samples.  The loop
    raises :class:`ConvergenceError` when its error variance keeps growing
    over consecutive 10^4-symbol windows.
    """
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if sps_in < 2 - 1e-9:
        raise ValueError("clock recovery needs at least 2 samples/symbol")
    if abs(sps_in - 2.0) > 1e-9:
        n2 = int(round(x.size * 2.0 / sps_in))
        x = _fft_resample(x, n2)
        y = _fft_resample(y, n2)
    out_x, out_y, err, integ = _gardner_loop(
        x, y, 1.0, kp, ki, x.size + 8
    )
    n_sym = out_x.size // 2
    out_x = out_x[: 2 * n_sym]
    out_y = out_y[: 2 * n_sym]

    win = 10000
    if err.size >= 3 * win:
        v = [float(np.var(err[i : i + win]))
             for i in range(0, err.size - win + 1, win)]
        if len(v) >= 3 and v[-1] > 10 * v[0] and v[-1] > v[-2] > v[-3]:
            raise ConvergenceError(
                "clock recovery diverging: TED error variance grew from "
                f"{v[0]:.3g} to {v[-1]:.3g}"
            )
    return out_x, out_y, ClockInfo(float(integ), err)


# --------------------------------------------------------------------------
# CMA / radius-directed butterfly equalizer
# --------------------------------------------------------------------------

@njit(cache=True)
def _butterfly(xp, yp, hxx, hxy, hyx, hyy, mu, n_sym, r2_cma, radii2,
               rde_start):
    out_x = np.empty(n_sym, dtype=np.complex128)
    out_y = np.empty(n_sym, dtype=np.complex128)
    n_blk = (n_sym + 1023) // 1024
    cost = np.zeros(n_blk)
    taps = hxx.size
    for k in range(n_sym):
        base = 2 * k
        zx = 0.0j
        zy = 0.0j
        for i in range(taps):
            sx = xp[base + i]
            sy = yp[base + i]
            zx += hxx[i] * sx + hxy[i] * sy
            zy += hyx[i] * sx + hyy[i] * sy
        px = zx.real * zx.real + zx.imag * zx.imag
        py = zy.real * zy.real + zy.imag * zy.imag
        if k < rde_start:
            ex = r2_cma - px
            ey = r2_cma - py
        else:
            rx = radii2[0]
            dx = abs(px - radii2[0])
            ry = radii2[0]
            dy = abs(py - radii2[0])
            for r in radii2[1:]:
                d = abs(px - r)
                if d < dx:
                    dx = d
                    rx = r
                d = abs(py - r)
                if d < dy:
                    dy = d
                    ry = r
            ex = rx - px
            ey = ry - py
        gx = mu * ex * zx
        gy = mu * ey * zy
        for i in range(taps):
            cx = np.conj(xp[base + i])
            cy = np.conj(yp[base + i])
            hxx[i] += gx * cx
            hxy[i] += gx * cy
            hyx[i] += gy * cx
            hyy[i] += gy * cy
        out_x[k] = zx
        out_y[k] = zy
        cost[k // 1024] += ex * ex + ey * ey
    for b in range(n_blk):
        hi = min(1024, n_sym - b * 1024)
        cost[b] /= max(hi, 1)
    return out_x, out_y, cost


@dataclass(frozen=True, eq=False)
class EqualizerInfo:
    cost_trace: np.ndarray
    reinitialized: bool


def _init_taps(taps: int):
    h = [np.zeros(taps, dtype=np.complex128) for _ in range(4)]
    c = taps // 2
    c -= c % 2  # keep the spike on an on-time sample
    h[0][c] = 1.0
    h[3][c] = 1.0
    return h


def cma_equalize(x2: np.ndarray, y2: np.ndarray, fmt: str,
                 taps: int = 13, mu: float = 1e-3,
                 train_symbols: int = 20000):
    """Blind 2x2 butterfly equalizer at 2 samples/symbol.

    Pure CMA for QPSK; for the multi-ring formats the constant-modulus
    pre-convergence hands over to radius-directed refinement halfway
    through the training window.  If both branches lock onto the same
    source, the second filter is re-seeded from the orthogonal complement
    of the first and adaptation restarts.
    """
    if taps % 2 == 0:
        raise ValueError("taps must be odd")
    x2 = pnorm(np.asarray(x2, dtype=np.complex128))
    y2 = pnorm(np.asarray(y2, dtype=np.complex128))
    n_sym = (x2.size - taps) // 2 + 1
    if n_sym < 1:
        raise ValueError("input shorter than the equalizer span")

    table = constellation(fmt)
    e2 = np.abs(table.points) ** 2
    r2_cma = float(np.mean(e2**2) / np.mean(e2))
    radii2 = np.unique(e2.round(12))
    rde_start = train_symbols // 2 if radii2.size > 1 else n_sym + 1

    def run(h):
        return _butterfly(x2, y2, h[0], h[1], h[2], h[3], mu, n_sym,
                          r2_cma, radii2, rde_start)

    h = _init_taps(taps)
    out_x, out_y, cost = run(h)

    # singularity guard: both outputs tracking the same source
    lo = min(train_symbols, n_sym) // 2
    hi = min(train_symbols, n_sym)
    wx, wy = out_x[lo:hi], out_y[lo:hi]
    denom = np.sqrt(np.mean(np.abs(wx) ** 2) * np.mean(np.abs(wy) ** 2))
    reinit = False
    if denom > 0 and abs(np.mean(wx * np.conj(wy))) / denom > 0.9:
        reinit = True
        h = _init_taps(taps)
        # pre-converge x only, then orthogonal re-seed for y
        _butterfly(x2[: 2 * lo + taps - 1], y2[: 2 * lo + taps - 1],
                   h[0], h[1], h[2], h[3], mu, lo, r2_cma, radii2, rde_start)
        h[2] = -np.conj(h[1][::-1])
        h[3] = np.conj(h[0][::-1])
        out_x, out_y, cost = run(h)

    t_end = max(min(train_symbols, n_sym) // 1024, 1)
    c0 = cost[0]
    c_end = cost[t_end - 1] if t_end <= cost.size else cost[-1]
    if c_end > max(0.9 * c0, 0.5):
        raise ConvergenceError(
            f"equalizer cost not decreasing over the training window "
            f"({c0:.3g} -> {c_end:.3g})"
        )
    return out_x, out_y, EqualizerInfo(cost, reinit)


# --------------------------------------------------------------------------
# frequency-offset compensation (4th-power spectral estimate)
# --------------------------------------------------------------------------

def foc(sx: np.ndarray, sy: np.ndarray, symbol_rate: float,
        fmt: str = "QPSK"):
    """Estimate and remove the signal-LO frequency offset.

    The 4th power of the symbols concentrates a tone at 4x the offset;
    both polarizations' spectra are summed, the dominant peak is
    parabolic-interpolated, and a phase-slope (Kay) pass on the derotated
    4th-power sequence refines the estimate.  Capture range is
    +- symbol_rate / 8.
    """
    sx = np.asarray(sx, dtype=np.complex128)
    sy = np.asarray(sy, dtype=np.complex128)
    n = sx.size
    x4 = sx**4
    y4 = sy**4
    nfft = 1 << int(np.ceil(np.log2(max(n, 2))) + 2)
    spec = (np.abs(np.fft.fft(x4, nfft)) ** 2
            + np.abs(np.fft.fft(y4, nfft)) ** 2)
    peak = int(np.argmax(spec))
    med = float(np.median(spec))
    if spec[peak] < 4.0 * med:   # < 6 dB above the median floor
        raise ConvergenceError(
            "frequency-offset estimate ambiguous: 4th-power spectral peak "
            f"only {10*np.log10(spec[peak]/max(med,1e-300)):.1f} dB above median"
        )
    freqs = np.fft.fftfreq(nfft, d=1.0 / symbol_rate)
    a = spec[(peak - 1) % nfft]
    b = spec[peak]
    c = spec[(peak + 1) % nfft]
    denom = a - 2 * b + c
    shift = 0.5 * (a - c) / denom if abs(denom) > 0 else 0.0
    f4 = freqs[peak] + shift * symbol_rate / nfft

    # fine pass: maximize the coherent 4th-power line around the peak bin
    # (robust to the modulation self-noise that breaks phase-slope
    # estimators on multi-ring formats)
    t = np.arange(n) / symbol_rate

    def line_power(f):
        ph = np.exp(-2j * np.pi * f * t)
        return -(abs(np.dot(ph, x4)) ** 2 + abs(np.dot(ph, y4)) ** 2)

    bin_hz = symbol_rate / nfft
    res = minimize_scalar(line_power, bounds=(f4 - bin_hz, f4 + bin_hz),
                          method="bounded",
                          options={"xatol": symbol_rate * 1e-8})
    f4 = float(res.x)

    f_hat = f4 / 4.0
    corr = np.exp(-2j * np.pi * f_hat * t)
    return sx * corr, sy * corr, float(f_hat)


# --------------------------------------------------------------------------
# Viterbi-Viterbi carrier phase estimation
# --------------------------------------------------------------------------

def _fourth_power_class(s: np.ndarray, fmt: str):
    """4th-power phase contributions with the format's class selection.

    Returns (z, mask): z has arg = 4*phase_error for selected symbols.
    """
    if fmt == "QPSK":
        return -(s**4), np.ones(s.size, dtype=bool)  # points at 45+k*90
    radii = np.array(_R1_R2_BY_FORMAT[fmt])
    r_idx = np.abs(np.abs(s)[:, None] - radii[None, :]).argmin(axis=1)
    if fmt == "QAM8":
        r_near = radii[r_idx]
        z = (s / np.where(r_near == 0, 1, r_near)) ** 4
        inner = r_idx == 0  # inner ring sits at 45 deg: flip its sign
        z = np.where(inner, -z, z)
        return z, np.ones(s.size, dtype=bool)
    # QAM16: keep only the two diagonal rings (QPSK partition)
    mask = r_idx != 1
    r_near = radii[r_idx]
    z = -((s / np.where(r_near == 0, 1, r_near)) ** 4)
    return np.where(mask, z, 0), mask


def cpe_viterbi_viterbi(s: np.ndarray, fmt: str = "QPSK", block: int = 64):
    """Blockwise 4th-power carrier phase estimation and correction.

    Phase is estimated per block from the 4-fold-symmetric symbol class,
    unwrapped across blocks in the 4x domain, and the correction is
    applied to every symbol by linear interpolation between block
    centers.  Jumps larger than 45 degrees between adjacent blocks are
    flagged as cycle slips.
    """
    s = np.asarray(s, dtype=np.complex128)
    n = s.size
    z, _ = _fourth_power_class(s, fmt)
    n_blk = int(np.ceil(n / block))
    pad = n_blk * block - n
    zp = np.concatenate([z, np.zeros(pad)]) if pad else z
    sums = zp.reshape(n_blk, block).sum(axis=1)
    # carry the previous estimate over empty blocks
    raw = np.zeros(n_blk)
    prev = 0.0
    for b in range(n_blk):
        if np.abs(sums[b]) > 0:
            prev = float(np.angle(sums[b]))
        raw[b] = prev
    track4 = np.unwrap(raw)
    phases = track4 / 4.0
    slips = tuple(np.nonzero(np.abs(np.diff(phases)) > np.pi / 4)[0] + 1)

    centers = np.arange(n_blk) * block + (block - 1) / 2.0
    per_symbol = np.interp(np.arange(n), centers, phases)
    return s * np.exp(-1j * per_symbol), per_symbol, slips


def decide_decode(symbols: np.ndarray, fmt: str, coding: str) -> BitStream:
    """Minimum-distance decision plus inverse (Gray/differential) mapping."""
    return decode_symbols(symbols, fmt, coding)


# --------------------------------------------------------------------------
# full chain
# --------------------------------------------------------------------------

def run_dsp_chain(eq: ElectricalQuad, cfg: DspConfig, *, baud_rate: float,
                  fiber_dispersion: float = 17.0, total_length_km: float = 0.0,
                  wavelength_nm: float = 1550.0, fmt: str = "QPSK",
                  coding: str = "GRAY") -> DspResult:
    """Run the five receiver stages in order and decode.

    Emits a constellation dump after CD compensation + clock recovery,
    after the equalizer, and after carrier recovery.  A stage failure is
    re-raised with the stage name prepended.
    """
    zx = eq.xi + 1j * eq.xq
    zy = eq.yi + 1j * eq.yq
    zx = pnorm(zx - np.mean(zx))   # balanced-pair DC (dark current) removal
    zy = pnorm(zy - np.mean(zy))

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ValueError, ConvergenceError) as exc:
            raise type(exc)(f"{name}: {exc}") from exc

    if total_length_km > 0:
        mem = dispersion_memory_samples(fiber_dispersion, total_length_km,
                                        wavelength_nm, eq.sample_rate)
        block = max(cfg.cd_fft_block, 1 << int(np.ceil(np.log2(4 * mem + 4))))
        zx = stage("cd_compensate", cd_compensate, zx, fiber_dispersion,
                   total_length_km, wavelength_nm, eq.sample_rate, block)
        zy = stage("cd_compensate", cd_compensate, zy, fiber_dispersion,
                   total_length_km, wavelength_nm, eq.sample_rate, block)

    sps_in = eq.sample_rate / baud_rate
    x2, y2, clock_info = stage("clock_recover", clock_recover, zx, zy,
                               sps_in, cfg.clock_kp, cfg.clock_ki)
    dumps = [StageDump("cd_clock", pnorm(x2[0::2]), pnorm(y2[0::2]))]

    sx, sy, eq_info = stage("cma_equalize", cma_equalize, x2, y2, fmt,
                            cfg.cma_taps, cfg.cma_mu, cfg.cma_train_symbols)
    dumps.append(StageDump("cma", pnorm(sx), pnorm(sy)))

    sx, sy, f_hat = stage("foc", foc, sx, sy, baud_rate, fmt)
    sx, tx_track, slips_x = stage("cpe", cpe_viterbi_viterbi, sx, fmt,
                                  cfg.cpe_block)
    sy, ty_track, slips_y = stage("cpe", cpe_viterbi_viterbi, sy, fmt,
                                  cfg.cpe_block)
    sx = pnorm(sx)
    sy = pnorm(sy)
    dumps.append(StageDump("foc_cpe", sx, sy))

    bits_x = stage("decode", decide_decode, sx, fmt, coding)
    bits_y = stage("decode", decide_decode, sy, fmt, coding)
    n = min(len(bits_x), len(bits_y))
    merged = np.empty(2 * n, dtype=np.uint8)
    merged[0::2] = bits_x.bits[:n]
    merged[1::2] = bits_y.bits[:n]
    return DspResult(
        bits=BitStream(merged, "decoded"),
        bits_x=bits_x,
        bits_y=bits_y,
        symbols_x=sx,
        symbols_y=sy,
        dumps=tuple(dumps),
        foc_offset_hz=f_hat,
        cpe_slips=tuple(sorted(set(slips_x) | set(slips_y))),
        clock_rate_error=clock_info.rate_error,
    )
