"""Experiment orchestration: OSNR/reach sweeps, capacity tables, spectra.

Every sweep point derives its own seed from (master seed, format, coding,
axis value), so results are reproducible and independent of evaluation
order or worker count.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel import FiberState, SpanPlan, run_link, set_osnr
from .core import (
    AlignmentError,
    BITS_PER_SYMBOL,
    CODINGS,
    FORMAT_BY_BITS,
    LinkConfig,
    MODULATION_FORMATS,
    rng_for,
    validate_config,
)
from .dsp import DspConfig, run_dsp_chain
from .frontend import adc_sample, hybrid_and_detect
from .metrics import (
    BerReport,
    CapacityReport,
    SpectrumReport,
    analyze_spectrum,
    count_ber,
    total_capacity,
)
from .txchain import (
    LaserSpec,
    decode_differential,
    decode_gray,
    transmit,
)

EXPERIMENT_KINDS = ("OSNR_BER", "REACH", "CAPACITY", "SPECTRUM",
                    "CONSTELLATION")

PRE_FEC_BER = 2e-3

# symbols discarded before error counting (equalizer/loop convergence)
CONVERGENCE_SKIP_SYMBOLS = 20000

# gray-over-differential OSNR improvement quoted for this link class; the
# harness reports the measured gap and flags deviations instead of
# forcing agreement
EXPECTED_CODING_GAP_DB = {"QPSK": 4.0, "QAM8": 3.2, "QAM16": 4.0}

_BITS_BY_FORMAT = {f: b for b, f in FORMAT_BY_BITS.items()}


@dataclass(frozen=True)
class SweepSpec:
    """What to sweep: experiment kind, formats/codings, axis and budget."""

    kind: str
    formats: tuple = ("QPSK",)
    codings: tuple = ("GRAY",)
    axis: tuple = ()
    bits_per_point: int = 1 << 17
    seed: int = 1

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        object.__setattr__(self, "formats", tuple(self.formats))
        object.__setattr__(self, "codings", tuple(self.codings))
        object.__setattr__(self, "axis", tuple(float(a) for a in self.axis))
        for f in self.formats:
            if f not in MODULATION_FORMATS:
                raise ValueError(f"unknown format {f!r}")
        for c in self.codings:
            if c not in CODINGS:
                raise ValueError(f"unknown coding {c!r}")
        if any(b <= a for a, b in zip(self.axis, self.axis[1:])):
            raise ValueError("axis must be strictly increasing")
        if self.bits_per_point < (1 << 15):
            raise ValueError("bits_per_point must be >= 2^15")


@dataclass(frozen=True, eq=False)
class SweepRecord:
    format: str
    coding: str
    axis_value: float
    payload: object     # BerReport | SpectrumReport | CapacityReport | dumps


@dataclass(frozen=True, eq=False)
class SweepResult:
    spec: SweepSpec
    records: tuple
    required_osnr_db: dict = field(default_factory=dict)
    max_reach_km: dict = field(default_factory=dict)
    coding_gap_db: dict = field(default_factory=dict)
    notes: tuple = ()

    def points(self, fmt: str, coding: str):
        return [r for r in self.records
                if r.format == fmt and r.coding == coding]


@dataclass(frozen=True)
class RunOptions:
    """Receiver-side impairment injection and DSP tuning for sweeps."""

    lo_offset_hz: float = 100e6
    timing_offset_ui: float = 0.25
    dsp: DspConfig = field(default_factory=DspConfig)
    jobs: int = 1
    nonlinear: bool = False          # reach sweeps: enable Kerr propagation
    nonlinear_gamma: float = 1.3     # 1/(W km), conventional SMF value


def _point_seed(seed: int, fmt: str, coding: str, axis_value: float) -> int:
    return int(rng_for(seed, "point", fmt, coding,
                       f"{axis_value:.6f}").integers(0, 2**62))


def _n_symbols_for(bits_per_point: int, fmt: str) -> int:
    bps = _BITS_BY_FORMAT[fmt]
    count = int(np.ceil(bits_per_point / (2 * bps)))
    return CONVERGENCE_SKIP_SYMBOLS + count + 256


def transmit_receive(cfg: LinkConfig, n_symbols: int, seed: int, *,
                     n_spans: int = 0, osnr_db: float | None = None,
                     opts: RunOptions = None):
    """One end-to-end run: transmitter, optional link/noise loading, receiver."""
    opts = opts or RunOptions()
    tx = transmit(cfg, n_symbols, seed)
    wave = tx.waveform
    total_km = 0.0
    if n_spans > 0:
        fiber = FiberState.from_config(cfg)
        plan = SpanPlan(n_spans, cfg.span_length)
        wave = run_link(wave, plan, fiber, edfa_gain_db=cfg.edfa_gain,
                        edfa_nf_db=cfg.edfa_nf, noise_bw=cfg.edfa_noise_bw,
                        seed=seed)
        total_km = plan.total_length
    if osnr_db is not None:
        wave = set_osnr(wave, osnr_db, rng=rng_for(seed, "osnr-load"))
    lo = LaserSpec(power=10.0, linewidth=cfg.laser_linewidth,
                   center_frequency=cfg.center_frequency - opts.lo_offset_hz)
    eq = hybrid_and_detect(wave, lo, cfg.pd_responsivity,
                           cfg.pd_dark_current, seed=seed)
    eq = adc_sample(eq, 2 * cfg.baud_rate, baud_rate=cfg.baud_rate,
                    timing_offset_ui=opts.timing_offset_ui)
    res = run_dsp_chain(eq, opts.dsp, baud_rate=cfg.baud_rate,
                        fiber_dispersion=cfg.fiber_dispersion,
                        total_length_km=total_km,
                        wavelength_nm=cfg.laser_wavelength,
                        fmt=cfg.modulation_format, coding=cfg.coding)
    return tx, res


def _pol_ber(tx_bits, symbols, fmt: str, coding: str,
             skip_bits: int) -> BerReport:
    """Best BER of one polarization over the 90-degree rotation ambiguity.

    Blind carrier recovery leaves an unknown k*90 deg rotation per
    polarization.  Differential decoding is immune; for Gray decoding the
    counter resolves it the standard way, by taking the best of the four
    rotations (a data-aided receiver would pin it with a pilot).
    """
    if coding == "DIFFERENTIAL":
        candidates = [decode_differential(symbols, fmt)]
    else:
        candidates = [decode_gray(symbols * (1j) ** k, fmt)
                      for k in range(4)]
    best = None
    for rx in candidates:
        try:
            rep = count_ber(tx_bits, rx, skip=skip_bits)
        except AlignmentError:
            continue
        if best is None or rep.ber < best.ber:
            best = rep
    if best is None:
        raise AlignmentError(f"no polarization alignment found ({fmt})")
    return best


def point_ber(tx, res, fmt: str, coding: str,
              skip_symbols: int = CONVERGENCE_SKIP_SYMBOLS) -> BerReport:
    """Combined dual-polarization BER with source-assignment search."""
    bps = _BITS_BY_FORMAT[fmt]
    skip_bits = skip_symbols * bps
    best = None
    for rx_a, rx_b in ((res.symbols_x, res.symbols_y),
                       (res.symbols_y, res.symbols_x)):
        try:
            ra = _pol_ber(tx.bits_x, rx_a, fmt, coding, skip_bits)
            rb = _pol_ber(tx.bits_y, rx_b, fmt, coding, skip_bits)
        except AlignmentError:
            continue
        combined = BerReport.from_counts(
            ra.bit_errors + rb.bit_errors,
            ra.bits_counted + rb.bits_counted,
        )
        if best is None or combined.ber < best.ber:
            best = combined
    if best is None:
        raise AlignmentError("no polarization assignment aligned")
    return best


def _osnr_point(payload: dict) -> dict:
    fmt = payload["format"]
    coding = payload["coding"]
    osnr_db = payload["axis_value"]
    seed = payload["seed"]
    opts = RunOptions(**payload["opts"])
    cfg = validate_config(payload["link"],
                          bits_per_symbol_per_pol=_BITS_BY_FORMAT[fmt],
                          coding=coding, rng_seed=seed)
    n_sym = _n_symbols_for(payload["bits_per_point"], fmt)
    tx, res = transmit_receive(cfg, n_sym, seed, osnr_db=osnr_db, opts=opts)
    rep = point_ber(tx, res, fmt, coding)
    return {**payload, "report": rep}


def _reach_point(payload: dict) -> dict:
    fmt = payload["format"]
    coding = payload["coding"]
    distance = payload["axis_value"]
    seed = payload["seed"]
    opts = RunOptions(**payload["opts"])
    gamma = opts.nonlinear_gamma if opts.nonlinear else 0.0
    cfg = validate_config(payload["link"],
                          bits_per_symbol_per_pol=_BITS_BY_FORMAT[fmt],
                          coding=coding, rng_seed=seed, kerr_gamma=gamma)
    n_spans = int(round(distance / cfg.span_length))
    n_sym = _n_symbols_for(payload["bits_per_point"], fmt)
    tx, res = transmit_receive(cfg, n_sym, seed, n_spans=n_spans, opts=opts)
    rep = point_ber(tx, res, fmt, coding)
    return {**payload, "report": rep}


def _run_points(runner, payloads, jobs: int):
    if jobs <= 1 or len(payloads) <= 1:
        return [runner(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(runner, payloads))


def _opts_dict(opts: RunOptions) -> dict:
    return {
        "lo_offset_hz": opts.lo_offset_hz,
        "timing_offset_ui": opts.timing_offset_ui,
        "dsp": opts.dsp,
        "jobs": 1,
        "nonlinear": opts.nonlinear,
        "nonlinear_gamma": opts.nonlinear_gamma,
    }


def interpolate_required_osnr(axis, bers, bits,
                              threshold: float = PRE_FEC_BER):
    """Threshold crossing by linear interpolation in (dB, log10 BER).

    Returns (value, note); value is None when the threshold is not
    bracketed by adjacent sweep points.
    """
    for i in range(len(axis) - 1):
        b0, b1 = bers[i], bers[i + 1]
        if b0 >= threshold >= b1:
            if b0 == threshold:
                return float(axis[i]), None
            f1 = b1 if b1 > 0 else 0.5 / bits[i + 1]
            if f1 >= threshold:
                return float(axis[i + 1]), None
            t = (math.log10(threshold) - math.log10(b0)) / (
                math.log10(f1) - math.log10(b0))
            return float(axis[i] + t * (axis[i + 1] - axis[i])), None
    note = (f"threshold {threshold:g} not bracketed: BER spans "
            f"[{min(bers):.3g}, {max(bers):.3g}] over the axis")
    return None, note


def run_osnr_sweep(spec: SweepSpec, link: dict | None = None,
                   opts: RunOptions | None = None) -> SweepResult:
    """Back-to-back noise-loading sweep; interpolates the required OSNR."""
    if spec.kind != "OSNR_BER":
        raise ValueError("spec.kind must be OSNR_BER")
    opts = opts or RunOptions()
    link = dict(link or {})
    payloads = [
        {
            "format": f, "coding": c, "axis_value": v,
            "bits_per_point": spec.bits_per_point,
            "seed": _point_seed(spec.seed, f, c, v),
            "link": link, "opts": _opts_dict(opts),
        }
        for f in spec.formats for c in spec.codings for v in spec.axis
    ]
    rows = _run_points(_osnr_point, payloads, opts.jobs)
    records = tuple(
        SweepRecord(r["format"], r["coding"], r["axis_value"], r["report"])
        for r in sorted(rows, key=lambda r: (r["format"], r["coding"],
                                             r["axis_value"]))
    )
    required, notes = {}, []
    for f in spec.formats:
        for c in spec.codings:
            pts = [r for r in records if r.format == f and r.coding == c]
            val, note = interpolate_required_osnr(
                [p.axis_value for p in pts],
                [p.payload.ber for p in pts],
                [p.payload.bits_counted for p in pts],
            )
            required[f"{f}/{c}"] = val
            if note:
                notes.append(f"{f}/{c}: {note}")
    gaps = {}
    for f in spec.formats:
        g = required.get(f"{f}/GRAY")
        d = required.get(f"{f}/DIFFERENTIAL")
        if g is not None and d is not None:
            gaps[f] = d - g
            expected = EXPECTED_CODING_GAP_DB[f]
            if abs(gaps[f] - expected) > 1.0:
                notes.append(
                    f"{f}: measured coding gap {gaps[f]:.2f} dB deviates "
                    f"from the quoted {expected} dB benchmark"
                )
    return SweepResult(spec, records, required_osnr_db=required,
                       coding_gap_db=gaps, notes=tuple(notes))


def run_reach_sweep(spec: SweepSpec, link: dict | None = None,
                    opts: RunOptions | None = None) -> SweepResult:
    """Multi-span sweep over distance; reports the last compliant distance."""
    if spec.kind != "REACH":
        raise ValueError("spec.kind must be REACH")
    opts = opts or RunOptions()
    link = dict(link or {})
    span = validate_config(link).span_length
    for v in spec.axis:
        if abs(v / span - round(v / span)) > 1e-9:
            raise ValueError(
                f"distance {v} km is not a multiple of the {span} km span"
            )
    payloads = [
        {
            "format": f, "coding": c, "axis_value": v,
            "bits_per_point": spec.bits_per_point,
            "seed": _point_seed(spec.seed, f, c, v),
            "link": link, "opts": _opts_dict(opts),
        }
        for f in spec.formats for c in spec.codings for v in spec.axis
    ]
    rows = _run_points(_reach_point, payloads, opts.jobs)
    records = tuple(
        SweepRecord(r["format"], r["coding"], r["axis_value"], r["report"])
        for r in sorted(rows, key=lambda r: (r["format"], r["coding"],
                                             r["axis_value"]))
    )
    reach, notes = {}, []
    for f in spec.formats:
        for c in spec.codings:
            pts = [r for r in records if r.format == f and r.coding == c]
            ok = [p.axis_value for p in pts if p.payload.ber <= PRE_FEC_BER]
            key = f"{f}/{c}"
            reach[key] = max(ok) if ok else None
            if ok and max(ok) == pts[-1].axis_value:
                notes.append(
                    f"{key}: BER still <= {PRE_FEC_BER:g} at the end of the "
                    "axis; reach is a lower bound"
                )
            if not ok:
                notes.append(f"{key}: BER above threshold at every distance")
    return SweepResult(spec, records, max_reach_km=reach, notes=tuple(notes))


def run_capacity_table(spec: SweepSpec, link: dict | None = None,
                       reach_km: dict | None = None) -> SweepResult:
    """Exact aggregate-capacity table for N in {80, 90} channels."""
    if spec.kind != "CAPACITY":
        raise ValueError("spec.kind must be CAPACITY")
    cfg = validate_config(dict(link or {}))
    records = []
    for f in spec.formats:
        rate_gbps = cfg.baud_rate * _BITS_BY_FORMAT[f] * 2 / 1e9
        for n in (80, 90):
            rep = total_capacity([rate_gbps] * n, spacing_ghz=50)
            records.append(SweepRecord(f, "GRAY", float(n), rep))
    reach = {f"{f}/GRAY": (reach_km or {}).get(f) for f in spec.formats}
    return SweepResult(spec, tuple(records), max_reach_km=reach)


def run_spectrum_experiment(spec: SweepSpec, link: dict | None = None,
                            resolution_bw_ghz: float = 1.0,
                            n_symbols: int = 1 << 13) -> SweepResult:
    """Transmitter-output spectrum per format at equal launch power."""
    if spec.kind != "SPECTRUM":
        raise ValueError("spec.kind must be SPECTRUM")
    records = []
    for f in spec.formats:
        cfg = validate_config(dict(link or {}),
                              bits_per_symbol_per_pol=_BITS_BY_FORMAT[f],
                              coding="GRAY", rng_seed=spec.seed)
        tx = transmit(cfg, n_symbols, spec.seed)
        rep = analyze_spectrum(tx.waveform, resolution_bw_ghz)
        records.append(SweepRecord(f, "GRAY", 0.0, rep))
    return SweepResult(spec, tuple(records))


def run_constellation_experiment(spec: SweepSpec, link: dict | None = None,
                                 opts: RunOptions | None = None,
                                 osnr_db: float = 18.0) -> SweepResult:
    """One impaired run per format, keeping the per-stage dumps."""
    if spec.kind != "CONSTELLATION":
        raise ValueError("spec.kind must be CONSTELLATION")
    opts = opts or RunOptions()
    distance = spec.axis[0] if spec.axis else 400.0
    records = []
    for f in spec.formats:
        coding = spec.codings[0]
        seed = _point_seed(spec.seed, f, coding, distance)
        cfg = validate_config(dict(link or {}),
                              bits_per_symbol_per_pol=_BITS_BY_FORMAT[f],
                              coding=coding, rng_seed=seed)
        n_spans = int(round(distance / cfg.span_length))
        n_sym = _n_symbols_for(spec.bits_per_point, f)
        _, res = transmit_receive(cfg, n_sym, seed, n_spans=n_spans,
                                  osnr_db=osnr_db, opts=opts)
        records.append(SweepRecord(f, coding, distance, res.dumps))
    return SweepResult(spec, tuple(records))


def run_experiment(spec: SweepSpec, link: dict | None = None,
                   opts: RunOptions | None = None) -> SweepResult:
    """Dispatch on the experiment kind."""
    runners = {
        "OSNR_BER": lambda: run_osnr_sweep(spec, link, opts),
        "REACH": lambda: run_reach_sweep(spec, link, opts),
        "CAPACITY": lambda: run_capacity_table(spec, link),
        "SPECTRUM": lambda: run_spectrum_experiment(spec, link),
        "CONSTELLATION": lambda: run_constellation_experiment(spec, link,
                                                              opts),
    }
    return runners[spec.kind]()


# --------------------------------------------------------------------------
# deterministic file output
# --------------------------------------------------------------------------

def _f9(v) -> str:
    """Serialize a float with 9 significant digits."""
    return format(float(v), ".9g")


def _round9(v):
    return None if v is None else float(_f9(v))


def emit_outputs(result: SweepResult, out_dir: str) -> list:
    """Write curves.csv, summary.json and per-kind side files.

    Re-running with the same spec and seed reproduces the numeric content
    byte for byte.  Returns the list of paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path(name):
        p = os.path.join(out_dir, name)
        written.append(p)
        return p

    ber_rows = [r for r in result.records if isinstance(r.payload, BerReport)]
    with open(path("curves.csv"), "w") as fh:
        fh.write("format,coding,axis_value,ber,errors,bits,ci_low,ci_high\n")
        for r in ber_rows:
            p = r.payload
            fh.write(",".join([
                r.format, r.coding, _f9(r.axis_value), _f9(p.ber),
                str(p.bit_errors), str(p.bits_counted),
                _f9(p.ci_low), _f9(p.ci_high),
            ]) + "\n")

    spec_rows = [r for r in result.records
                 if isinstance(r.payload, SpectrumReport)]
    if spec_rows:
        with open(path("spectrum.csv"), "w") as fh:
            fh.write("format,peak_power_dbm,fwhm_ghz,resolution_bw_ghz\n")
            for r in spec_rows:
                p = r.payload
                fh.write(",".join([
                    r.format, _f9(p.peak_power_dbm), _f9(p.fwhm_ghz),
                    _f9(p.resolution_bw_ghz),
                ]) + "\n")

    cap_rows = [r for r in result.records
                if isinstance(r.payload, CapacityReport)]
    if cap_rows:
        with open(path("capacity.csv"), "w") as fh:
            fh.write("format,n_channels,total_tbps,spectral_efficiency,"
                     "total_bandwidth_ghz\n")
            for r in cap_rows:
                p = r.payload
                fh.write(",".join([
                    r.format, str(p.n_channels), _f9(p.total_tbps),
                    _f9(p.spectral_efficiency), _f9(p.total_bandwidth_ghz),
                ]) + "\n")

    for r in result.records:
        if isinstance(r.payload, tuple):  # constellation stage dumps
            for dump in r.payload:
                for pol, samples in (("x", dump.samples_x),
                                     ("y", dump.samples_y)):
                    name = f"constellation_{dump.stage}_{pol}.csv"
                    with open(path(name), "w") as fh:
                        fh.write("re,im\n")
                        for z in samples:
                            fh.write(f"{_f9(z.real)},{_f9(z.imag)}\n")

    capacity_tbps = {
        f"{r.format}/{int(r.axis_value)}": _round9(r.payload.total_tbps)
        for r in cap_rows
    }
    se = {r.format: _round9(r.payload.spectral_efficiency)
          for r in cap_rows}
    summary = {
        "kind": result.spec.kind,
        "seed": result.spec.seed,
        "required_osnr_db": {k: _round9(v) for k, v in
                             sorted(result.required_osnr_db.items())},
        "max_reach_km": {k: _round9(v) for k, v in
                         sorted(result.max_reach_km.items())},
        "coding_gap_db": {k: _round9(v) for k, v in
                          sorted(result.coding_gap_db.items())},
        "capacity_tbps": capacity_tbps or None,
        "spectral_efficiency": se or None,
        "notes": list(result.notes),
    }
    with open(path("summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return written
