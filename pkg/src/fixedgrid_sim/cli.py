"""Command-line entry point.

    fixedgrid-sim run <spec-file> --out <dir> [--seed N] [--jobs K]
                                  [--bits-per-point N]
    fixedgrid-sim validate <spec-file>
    fixedgrid-sim grid --channel <n>

The spec file is plain text, one ``key = value`` per line (``#`` starts a
comment).  Keys mirror the LinkConfig and SweepSpec field names exactly;
lists are comma-separated and the axis also accepts ``start:stop:step``.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from .core import ConfigError, ConvergenceError, LinkConfig, validate_config
from .grid import channel_frequency
from .sweep import (
    EXPERIMENT_KINDS,
    RunOptions,
    SweepSpec,
    emit_outputs,
    run_experiment,
)

_SWEEP_KEYS = {"kind", "formats", "codings", "axis", "bits_per_point", "seed"}
_LINK_KEYS = {f.name for f in fields(LinkConfig)}


def _parse_value(raw: str):
    raw = raw.strip()
    try:
        v = float(raw)
        return int(v) if v.is_integer() and "e" not in raw.lower() \
            and "." not in raw else v
    except ValueError:
        return raw


def _parse_axis(raw: str):
    raw = raw.strip()
    if ":" in raw and "," not in raw:
        parts = [float(p) for p in raw.split(":")]
        if len(parts) != 3:
            raise ConfigError([f"axis range needs start:stop:step, got {raw!r}"])
        start, stop, step = parts
        vals = np.arange(start, stop + step / 2, step)
        return tuple(float(v) for v in vals)
    return tuple(float(p) for p in raw.split(",") if p.strip())


def parse_spec_file(text: str):
    """Parse a key-value experiment spec into (SweepSpec kwargs, link dict)."""
    sweep_kw, link_kw, errors = {}, {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            errors.append(f"line {lineno}: expected 'key = value'")
            continue
        key, raw = (s.strip() for s in line.split(sep, 1))
        if key == "axis":
            sweep_kw["axis"] = _parse_axis(raw)
        elif key in ("formats", "codings"):
            sweep_kw[key] = tuple(
                p.strip().upper() for p in raw.split(",") if p.strip()
            )
        elif key in _SWEEP_KEYS:
            v = _parse_value(raw)
            sweep_kw[key] = v.upper() if key == "kind" else v
        elif key in _LINK_KEYS:
            v = _parse_value(raw)
            link_kw[key] = v.upper() if key == "coding" else v
        else:
            errors.append(f"line {lineno}: unknown key {key!r}")
    if errors:
        raise ConfigError(errors)
    if "kind" not in sweep_kw:
        raise ConfigError(["spec file must set 'kind'"])
    return sweep_kw, link_kw


def _load_spec(path: str, args) -> tuple:
    with open(path) as fh:
        sweep_kw, link_kw = parse_spec_file(fh.read())
    if getattr(args, "seed", None) is not None:
        sweep_kw["seed"] = args.seed
    if getattr(args, "bits_per_point", None) is not None:
        sweep_kw["bits_per_point"] = args.bits_per_point
    try:
        spec = SweepSpec(**sweep_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError([str(exc)]) from exc
    validate_config(link_kw)   # surface link errors before any run
    return spec, link_kw


def _cmd_run(args) -> int:
    spec, link = _load_spec(args.spec_file, args)
    opts = RunOptions(jobs=args.jobs)
    result = run_experiment(spec, link, opts)
    written = emit_outputs(result, args.out)
    for note in result.notes:
        print(f"note: {note}")
    for p in written:
        print(f"wrote {p}")
    return 0


def _cmd_validate(args) -> int:
    spec, link = _load_spec(args.spec_file, args)
    cfg = validate_config(link)
    print(f"spec OK: kind={spec.kind} formats={','.join(spec.formats)} "
          f"codings={','.join(spec.codings)} points={len(spec.axis)}")
    print(f"link OK: {cfg.modulation_format} {cfg.coding} at "
          f"{cfg.baud_rate/1e9:g} GBd, {cfg.span_length:g} km spans")
    return 0


def _cmd_grid(args) -> int:
    n = args.channel
    print(f"channel n={n}: {channel_frequency(n):.5f} THz "
          f"(193.1 THz + {n} x 50 GHz, 50 GHz slot)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fixedgrid-sim",
        description="Fixed-grid coherent DWDM link simulator",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment spec")
    run.add_argument("spec_file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--bits-per-point", type=int, default=None,
                     dest="bits_per_point")
    run.set_defaults(func=_cmd_run)

    val = sub.add_parser("validate", help="check a spec file")
    val.add_argument("spec_file")
    val.set_defaults(func=_cmd_validate)

    grid = sub.add_parser("grid", help="print fixed-grid channel arithmetic")
    grid.add_argument("--channel", type=int, required=True)
    grid.set_defaults(func=_cmd_grid)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 1
    except (ConvergenceError, RuntimeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
