"""Fiber spans, EDFA amplification with ASE, and OSNR control.

Frequency-domain operators treat the waveform as periodic (cyclic
convolution); downstream error counting discards the dispersion memory at
the block edges.  OSNR is computed from the analytically tracked ASE
density rather than from spectral estimation, which makes the
signal/noise bookkeeping exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.constants as const

from .core import (
    OSNR_REF_BANDWIDTH_HZ,
    DualPolWaveform,
    LinkConfig,
    OsnrReport,
    beta2_si_from_d,
    db_to_lin,
    rng_for,
)


@dataclass(frozen=True)
class SpanPlan:
    """Homogeneous span layout: ``n_spans`` sections with an EDFA each."""

    n_spans: int
    span_length: float = 40.0        # km
    edfa_after_each: bool = True

    def __post_init__(self):
        if self.n_spans < 0:
            raise ValueError("n_spans must be >= 0")
        if self.span_length <= 0:
            raise ValueError("span_length must be > 0")

    @property
    def total_length(self) -> float:
        return self.n_spans * self.span_length


@dataclass(frozen=True)
class FiberState:
    """Per-section fiber parameters in propagation-ready units."""

    attenuation_db_km: float
    beta2_s2_m: float              # group-velocity dispersion, SI
    dgd_ps_km: float               # differential group delay coefficient
    pmd_angle: float = 0.0         # Jones rotation into the DGD axes, rad
    gamma: float = 0.0             # Kerr coefficient, 1/(W km)
    step_km: float = 0.5           # split-step size when gamma > 0

    @classmethod
    def from_config(cls, cfg: LinkConfig, pmd_angle: float = 0.0,
                    step_km: float = 0.5) -> "FiberState":
        return cls(
            attenuation_db_km=cfg.fiber_attenuation,
            beta2_s2_m=beta2_si_from_d(cfg.fiber_dispersion,
                                       cfg.laser_wavelength),
            dgd_ps_km=cfg.fiber_dgd,
            gamma=cfg.kerr_gamma,
            step_km=step_km,
        )

    def jones_rotation(self) -> np.ndarray:
        """Unitary rotation into the principal DGD axes."""
        c, s = np.cos(self.pmd_angle), np.sin(self.pmd_angle)
        return np.array([[c, s], [-s, c]])


def _apply_cd(fx: np.ndarray, fy: np.ndarray, w: np.ndarray,
              beta2_l: float) -> tuple:
    """Dispersion all-pass H(w) = exp(+j beta2 L w^2 / 2) on FFT spectra."""
    h = np.exp(0.5j * beta2_l * w**2)
    return fx * h, fy * h


def _apply_pmd(fx: np.ndarray, fy: np.ndarray, w: np.ndarray,
               tau_s: float, angle: float) -> tuple:
    """First-order PMD: rotate, split +-tau/2 group delay, rotate back."""
    c, s = np.cos(angle), np.sin(angle)
    ax = c * fx + s * fy
    ay = -s * fx + c * fy
    ax = ax * np.exp(-0.5j * w * tau_s)
    ay = ay * np.exp(+0.5j * w * tau_s)
    return c * ax - s * ay, s * ax + c * ay


def fiber_propagate(wave: DualPolWaveform, length_km: float,
                    fiber: FiberState) -> DualPolWaveform:
    """Propagate through ``length_km`` of fiber.

    Applies attenuation, chromatic dispersion, first-order PMD and, when
    ``fiber.gamma > 0``, Kerr self-phase modulation via the symmetric
    split-step method with nonlinear phase gamma * P * dz.

    Parameters
    ----------
    wave : DualPolWaveform
        Input field.
    length_km : float
        Section length in km; 0 is the identity.
    fiber : FiberState
        Propagation parameters.
    """
    if length_km < 0:
        raise ValueError("length must be >= 0")
    if length_km == 0:
        return wave

    fs = wave.sample_rate
    w = 2 * np.pi * np.fft.fftfreq(wave.n_samples, d=1.0 / fs)
    tau_s = fiber.dgd_ps_km * length_km * 1e-12
    loss_amp = 10.0 ** (-fiber.attenuation_db_km * length_km / 20.0)

    x, y = wave.samples_x, wave.samples_y
    if fiber.gamma > 0:
        if fiber.step_km > length_km:
            raise ValueError(
                f"split-step size {fiber.step_km} km exceeds section "
                f"length {length_km} km"
            )
        n_steps = int(np.ceil(length_km / fiber.step_km))
        dz = length_km / n_steps
        alpha_amp_half = 10.0 ** (-fiber.attenuation_db_km * dz / 40.0)
        half = 0.5 * fiber.beta2_s2_m * (dz * 1e3)
        h_half = np.exp(0.5j * half * w**2)

        def linear_half(u, v):
            fu = np.fft.fft(u) * h_half
            fv = np.fft.fft(v) * h_half
            return (np.fft.ifft(fu) * alpha_amp_half,
                    np.fft.ifft(fv) * alpha_amp_half)

        for _ in range(n_steps):
            x, y = linear_half(x, y)
            phi = fiber.gamma * (np.abs(x) ** 2 + np.abs(y) ** 2) * dz
            rot = np.exp(1j * phi)
            x, y = x * rot, y * rot
            x, y = linear_half(x, y)
        fx, fy = np.fft.fft(x), np.fft.fft(y)
        fx, fy = _apply_pmd(fx, fy, w, tau_s, fiber.pmd_angle)
        x, y = np.fft.ifft(fx), np.fft.ifft(fy)
    else:
        fx, fy = np.fft.fft(x), np.fft.fft(y)
        fx, fy = _apply_cd(fx, fy, w, fiber.beta2_s2_m * length_km * 1e3)
        fx, fy = _apply_pmd(fx, fy, w, tau_s, fiber.pmd_angle)
        x = np.fft.ifft(fx) * loss_amp
        y = np.fft.ifft(fy) * loss_amp

    ase = wave.ase_psd_per_pol * loss_amp**2
    return wave.replace(samples_x=x, samples_y=y, ase_psd_per_pol=ase)


def edfa_amplify(wave: DualPolWaveform, gain_db: float, nf_db: float,
                 noise_bw: float = 4e12, seed: int = 0,
                 rng=None) -> DualPolWaveform:
    """Flat-gain EDFA with additive white ASE.

    The ASE one-sided density per polarization is
    S = n_sp * h * nu * (G - 1) with n_sp = 10^(NF/10) / 2; noise is
    added white over the simulation bandwidth and S is accumulated in the
    waveform's tracked density.  ``noise_bw`` is carried for total-noise
    bookkeeping only; it does not shape the in-band noise.
    """
    if gain_db < 0:
        raise ValueError("gain must be >= 0 dB")
    g_amp = 10.0 ** (gain_db / 20.0)
    g_lin = g_amp**2
    n_sp = db_to_lin(nf_db) / 2.0
    psd = n_sp * const.h * wave.center_frequency * (g_lin - 1.0)  # W/Hz

    x = wave.samples_x * g_amp
    y = wave.samples_y * g_amp
    if psd > 0:
        if rng is None:
            rng = rng_for(seed, "ase")
        sigma = np.sqrt(psd * wave.sample_rate / 2.0)
        n = wave.n_samples
        x = x + sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
        y = y + sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
    ase = wave.ase_psd_per_pol * g_lin + psd
    return wave.replace(samples_x=x, samples_y=y, ase_psd_per_pol=ase)


def ase_psd_per_pol(gain_db: float, nf_db: float,
                    center_frequency: float) -> float:
    """One-sided ASE density per polarization added by one EDFA (W/Hz)."""
    g_lin = db_to_lin(gain_db)
    n_sp = db_to_lin(nf_db) / 2.0
    return n_sp * const.h * center_frequency * (g_lin - 1.0)


def run_link(wave: DualPolWaveform, plan: SpanPlan, fiber: FiberState, *,
             edfa_gain_db: float, edfa_nf_db: float, noise_bw: float = 4e12,
             seed: int = 0) -> DualPolWaveform:
    """Chain ``plan.n_spans`` sections of fiber + EDFA.

    Each span draws its own PMD rotation angle and ASE realization from
    stage-split generators, so the sequence is reproducible and
    independent of any other consumer of the seed.
    """
    angle_rng = rng_for(seed, "pmd-angles")
    for i in range(plan.n_spans):
        span_fiber = replace(
            fiber, pmd_angle=float(angle_rng.uniform(0, 2 * np.pi))
        )
        wave = fiber_propagate(wave, plan.span_length, span_fiber)
        if plan.edfa_after_each:
            wave = edfa_amplify(
                wave, edfa_gain_db, edfa_nf_db, noise_bw,
                rng=rng_for(seed, "ase", i),
            )
    return wave


def signal_power(wave: DualPolWaveform) -> float:
    """Total power minus the tracked in-band noise power, in W."""
    noise = 2.0 * wave.ase_psd_per_pol * wave.sample_rate
    return wave.power() - noise


def set_osnr(wave: DualPolWaveform, target_db: float,
             seed: int = 0, rng=None) -> DualPolWaveform:
    """Noise-load the waveform to an exact target OSNR.

    White Gaussian noise is added so that the tracked-density OSNR in the
    12.5 GHz reference bandwidth equals ``target_db``.
    """
    if target_db < -10.0:
        raise ValueError(f"target OSNR {target_db} dB is degenerate (< -10 dB)")
    p_sig = signal_power(wave)
    if p_sig <= 0:
        raise ValueError("waveform has no signal power")
    target_noise_ref = p_sig / db_to_lin(target_db)
    psd_target = target_noise_ref / (2.0 * OSNR_REF_BANDWIDTH_HZ)
    delta = psd_target - wave.ase_psd_per_pol
    if delta < 0:
        raise ValueError(
            "waveform already noisier than the requested OSNR "
            f"({measure_osnr(wave).osnr_db:.2f} dB < {target_db} dB)"
        )
    if rng is None:
        rng = rng_for(seed, "osnr-loading")
    sigma = np.sqrt(delta * wave.sample_rate / 2.0)
    n = wave.n_samples
    x = wave.samples_x + sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
    y = wave.samples_y + sigma * (rng.normal(size=n) + 1j * rng.normal(size=n))
    return wave.replace(samples_x=x, samples_y=y,
                        ase_psd_per_pol=psd_target)


def measure_osnr(wave: DualPolWaveform) -> OsnrReport:
    """OSNR from tracked noise density in the reference bandwidth.

    Noise power counts both polarizations; a noiseless waveform reports
    the +inf sentinel.
    """
    noise_ref_w = 2.0 * wave.ase_psd_per_pol * OSNR_REF_BANDWIDTH_HZ
    sig_w = signal_power(wave)
    return OsnrReport.from_powers(sig_w * 1e3, noise_ref_w * 1e3)
