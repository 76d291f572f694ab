"""Shared domain types, unit conversions, seeded randomness and configuration.

All optical fields are complex baseband amplitudes in sqrt(W); powers are
tracked in W internally and converted to mW/dBm only at reporting surfaces.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.constants as const

MODULATION_FORMATS = ("QPSK", "QAM8", "QAM16")
CODINGS = ("GRAY", "DIFFERENTIAL")

# bits per symbol carried on one polarization
BITS_PER_SYMBOL = {"QPSK": 2, "QAM8": 3, "QAM16": 4}
FORMAT_BY_BITS = {2: "QPSK", 3: "QAM8", 4: "QAM16"}

# OSNR reference bandwidth: 0.1 nm at 1550 nm, the OSA convention
OSNR_REF_BANDWIDTH_HZ = 12.5e9


class ConfigError(ValueError):
    """Invalid configuration; carries the full list of violations."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ConvergenceError(RuntimeError):
    """An adaptive receiver stage failed to converge."""


class AlignmentError(RuntimeError):
    """Bit-stream alignment could not be established."""


def dbm_to_mw(p_dbm: float) -> float:
    """Convert a power level from dBm to mW."""
    if not math.isfinite(p_dbm):
        raise ValueError(f"non-finite power level: {p_dbm!r}")
    return 10.0 ** (p_dbm / 10.0)


def mw_to_dbm(p_mw: float) -> float:
    """Convert a power from mW to dBm. Rejects non-positive powers."""
    if not (math.isfinite(p_mw) and p_mw > 0):
        raise ValueError(f"power must be finite and > 0, got {p_mw!r}")
    return 10.0 * math.log10(p_mw)


def dbm_to_w(p_dbm: float) -> float:
    """Convert dBm to W."""
    return dbm_to_mw(p_dbm) * 1e-3


def w_to_dbm(p_w: float) -> float:
    """Convert W to dBm."""
    return mw_to_dbm(p_w * 1e3)


def db_to_lin(x_db: float) -> float:
    """Convert a dB ratio to linear."""
    return 10.0 ** (x_db / 10.0)


def beta2_from_d(d_ps_nm_km: float, wavelength_nm: float) -> float:
    """Group-velocity dispersion beta2 (ps^2/km) from the D parameter.

    Parameters
    ----------
    d_ps_nm_km : float
        Dispersion parameter D in ps/(nm km).
    wavelength_nm : float
        Carrier wavelength in nm.

    Returns
    -------
    float
        beta2 = -D lambda^2 / (2 pi c), in ps^2/km.
    """
    if wavelength_nm <= 0:
        raise ValueError("wavelength must be > 0")
    d_si = d_ps_nm_km * 1e-6  # s/m^2
    lam = wavelength_nm * 1e-9  # m
    beta2_si = -d_si * lam**2 / (2 * np.pi * const.c)  # s^2/m
    return beta2_si * 1e27  # ps^2/km


def beta2_si_from_d(d_ps_nm_km: float, wavelength_nm: float) -> float:
    """Same as :func:`beta2_from_d` but in SI units (s^2/m)."""
    return beta2_from_d(d_ps_nm_km, wavelength_nm) * 1e-27


def wavelength_to_frequency(wavelength_nm: float) -> float:
    """Optical carrier frequency in Hz for a vacuum wavelength in nm."""
    if wavelength_nm <= 0:
        raise ValueError("wavelength must be > 0")
    return const.c / (wavelength_nm * 1e-9)


def rng_for(seed: int, *labels) -> np.random.Generator:
    """Deterministic per-stage random generator.

    Every consumer of randomness derives its own generator from the master
    seed plus a stage label path, so reordering or removing one stage never
    shifts the draws of another.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    entropy.extend(zlib.crc32(str(lbl).encode()) for lbl in labels)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True, eq=False)
class BitStream:
    """A finite sequence of bits with a free-text label."""

    bits: np.ndarray
    label: str = ""

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.size == 0:
            raise ValueError("BitStream must contain at least one bit")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("BitStream values must be 0 or 1")
        object.__setattr__(self, "bits", arr.astype(np.uint8))

    def __len__(self):
        return self.bits.size


@dataclass(frozen=True, eq=False)
class SymbolStream:
    """Discrete complex symbols drawn from one constellation table."""

    symbols: np.ndarray
    format: str
    coding: str
    per_polarization: bool = True

    def __post_init__(self):
        if self.format not in MODULATION_FORMATS:
            raise ValueError(f"unknown format {self.format!r}")
        if self.coding not in CODINGS:
            raise ValueError(f"unknown coding {self.coding!r}")
        arr = np.asarray(self.symbols, dtype=np.complex128)
        if arr.size == 0:
            raise ValueError("SymbolStream must contain at least one symbol")
        object.__setattr__(self, "symbols", arr)
        # membership in the (unit-average-energy) constellation table
        from .txchain import constellation  # local import to avoid a cycle

        table = constellation(self.format)
        d = np.abs(arr[:, None] - table.points[None, :]).min(axis=1)
        if d.max() > 1e-9:
            raise ValueError(
                f"symbols deviate from the {self.format} table by {d.max():.3g}"
            )

    def __len__(self):
        return self.symbols.size


@dataclass(frozen=True, eq=False)
class DualPolWaveform:
    """Complex optical field on two polarizations.

    ``ase_psd_per_pol`` is the analytically tracked accumulated noise
    density (W/Hz per polarization), used by the OSNR bookkeeping instead
    of spectral estimation.
    """

    samples_x: np.ndarray
    samples_y: np.ndarray
    sample_rate: float
    center_frequency: float
    ase_psd_per_pol: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.samples_x, dtype=np.complex128)
        y = np.asarray(self.samples_y, dtype=np.complex128)
        if x.ndim != 1 or y.ndim != 1:
            raise ValueError("polarization sample arrays must be 1-D")
        if x.size != y.size:
            raise ValueError(
                f"polarization lengths differ: {x.size} vs {y.size}"
            )
        if x.size < 2:
            raise ValueError("waveform needs at least 2 samples")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.ase_psd_per_pol < 0:
            raise ValueError("ase_psd_per_pol must be >= 0")
        object.__setattr__(self, "samples_x", x)
        object.__setattr__(self, "samples_y", y)

    @property
    def n_samples(self) -> int:
        return self.samples_x.size

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def power(self) -> float:
        """Mean total optical power across both polarizations, in W."""
        return float(
            np.mean(np.abs(self.samples_x) ** 2 + np.abs(self.samples_y) ** 2)
        )

    def replace(self, **kwargs) -> "DualPolWaveform":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class OsnrReport:
    """Signal/noise powers in the reference bandwidth and the dB ratio."""

    signal_power_mw: float
    noise_power_ref_bw_mw: float
    reference_bandwidth_hz: float
    osnr_db: float

    @classmethod
    def from_powers(cls, signal_mw: float, noise_mw: float,
                    ref_bw: float = OSNR_REF_BANDWIDTH_HZ) -> "OsnrReport":
        if noise_mw == 0.0:
            osnr = math.inf
        else:
            osnr = 10.0 * math.log10(signal_mw / noise_mw)
        return cls(signal_mw, noise_mw, ref_bw, osnr)


@dataclass(frozen=True)
class LinkConfig:
    """Physical link parameters plus modulation/coding selection.

    Field units follow the conventional engineering mix (dB/km, ps/nm/km,
    dBm, ...); see each field name.  Defaults reproduce the standard
    25 GBd fixed-grid setup.
    """

    baud_rate: float = 25e9                 # symbols/s
    bits_per_symbol_per_pol: int = 2        # 2=QPSK, 3=8QAM, 4=16QAM
    coding: str = "GRAY"
    fiber_attenuation: float = 0.2          # dB/km
    fiber_dispersion: float = 17.0          # ps/nm/km
    fiber_dgd: float = 0.2                  # ps/km
    kerr_gamma: float = 0.0                 # 1/(W km); 0 = linear fiber
    span_length: float = 40.0               # km
    laser_power: float = 14.0               # dBm
    laser_wavelength: float = 1550.0        # nm
    laser_linewidth: float = 0.1e6          # Hz
    laser_initial_phase: float = 0.0        # rad
    launch_power: float = 0.0               # dBm into the fiber
    edfa_gain: float = 8.0                  # dB
    edfa_noise_bw: float = 4e12             # Hz
    edfa_nf: float = 6.0                    # dB
    pd_responsivity: float = 1.0            # A/W
    pd_dark_current: float = 10e-9          # A
    samples_per_symbol: int = 2
    rng_seed: int = 1

    @property
    def modulation_format(self) -> str:
        return FORMAT_BY_BITS[self.bits_per_symbol_per_pol]

    @property
    def sample_rate(self) -> float:
        return self.baud_rate * self.samples_per_symbol

    @property
    def center_frequency(self) -> float:
        return wavelength_to_frequency(self.laser_wavelength)

    @property
    def bit_rate(self) -> float:
        """Aggregate dual-polarization bit rate in bit/s."""
        return self.baud_rate * self.bits_per_symbol_per_pol * 2


def config_errors(cfg: LinkConfig) -> list:
    """Check every LinkConfig invariant; return all violations, not just one."""
    errs = []
    positive = (
        "baud_rate", "fiber_attenuation", "fiber_dispersion", "fiber_dgd",
        "span_length", "laser_wavelength", "edfa_noise_bw",
        "pd_responsivity",
    )
    for name in positive:
        if not getattr(cfg, name) > 0:
            errs.append(f"{name} must be > 0, got {getattr(cfg, name)}")
    nonneg = ("kerr_gamma", "laser_linewidth", "edfa_gain", "edfa_nf",
              "pd_dark_current")
    for name in nonneg:
        if getattr(cfg, name) < 0:
            errs.append(f"{name} must be >= 0, got {getattr(cfg, name)}")
    if cfg.bits_per_symbol_per_pol not in FORMAT_BY_BITS:
        errs.append(
            "bits_per_symbol_per_pol must be one of 2, 3, 4, got "
            f"{cfg.bits_per_symbol_per_pol}"
        )
    if cfg.coding not in CODINGS:
        errs.append(f"coding must be one of {CODINGS}, got {cfg.coding!r}")
    if cfg.samples_per_symbol < 2:
        errs.append(
            f"needs >= 2 samples/symbol, got {cfg.samples_per_symbol}"
        )
    for name in ("laser_power", "launch_power"):
        if not math.isfinite(getattr(cfg, name)):
            errs.append(f"{name} must be finite")
    return errs


def validate_config(cfg=None, **overrides) -> LinkConfig:
    """Build and validate a LinkConfig.

    Accepts an existing LinkConfig, a dict of field values, or keyword
    overrides; absent fields take their defaults.  Raises
    :class:`ConfigError` carrying the complete list of violated
    constraints.
    """
    if cfg is None:
        cfg = {}
    if isinstance(cfg, dict):
        known = {f.name for f in fields(LinkConfig)}
        merged = {**cfg, **overrides}
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError([f"unknown config field {u!r}" for u in unknown])
        cfg = LinkConfig(**merged)
    elif overrides:
        cfg = replace(cfg, **overrides)
    errs = config_errors(cfg)
    if errs:
        raise ConfigError(errs)
    return cfg
