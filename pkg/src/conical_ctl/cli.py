"""``conical-ctl`` command line entry point.

    conical-ctl <scenario> --config <path> [--out <dir>] [--fidelity ci|paper] [--threads N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 some scan points failed (the others are still written).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import math
import os
import sys
import time
from typing import Optional

from conical_ctl import __version__
from conical_ctl.config import SCENARIOS, ScenarioConfig, format_value, parse_text, resolve
from conical_ctl.errors import ConfigError, DomainError, NumericalFailure
from conical_ctl.scenarios import ScenarioResult, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4
THREADS_ENV = "CONICAL_CTL_THREADS"

log = logging.getLogger("conical_ctl")


def format_cell(value) -> str:
    """Nine significant digits in scientific notation for numbers."""
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    return f"{v:.8e}"


def write_csv(path: str, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=",", lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def manifest_text(cfg: ScenarioConfig, result: ScenarioResult, outputs, wall_clock: float, started: str) -> str:
    """Resolved config followed by ``manifest.*`` provenance lines."""
    lines = [cfg.to_text()]
    prov = {
        "manifest.engine_version": __version__,
        "manifest.started_utc": started,
        "manifest.wall_clock_s": f"{wall_clock:.3f}",
        "manifest.separable_z": format_value(cfg.separable()),
        "manifest.effective_lam": repr(cfg.model().lam),
        "manifest.outputs": ", ".join(outputs),
        "manifest.failed_points": str(len(result.failures)),
    }
    for i, f in enumerate(result.failures):
        prov[f"manifest.failure.{i}"] = f"{f['point']}: {f['error']}"
    for k, v in result.summary.items():
        prov[f"manifest.summary.{k}"] = format_cell(v) if not isinstance(v, str) else v
    lines.extend(f"{k} = {v}\n" for k, v in prov.items())
    return "".join(lines)


def prepare_out_dir(out_dir: str) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir!r}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise ConfigError(f"output directory {out_dir!r} is not writable")


def emit_outputs(result: ScenarioResult, cfg: ScenarioConfig, out_dir: str, wall_clock: float, started: str):
    """Write every table as ``<name>.csv`` plus one ``manifest.kv``; return paths."""
    prepare_out_dir(out_dir)
    names = []
    for name, table in result.tables.items():
        fname = f"{name}.csv"
        write_csv(os.path.join(out_dir, fname), table.columns, table.rows)
        names.append(fname)
    manifest = os.path.join(out_dir, "manifest.kv")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(manifest_text(cfg, result, names, wall_clock, started))
    return [os.path.join(out_dir, n) for n in names] + [manifest]


def _threads(arg: Optional[int]) -> Optional[int]:
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return n
    return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conical-ctl", description=__doc__.splitlines()[0])
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", help="key-value config file (omit for all defaults)")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--fidelity", choices=("ci", "paper"), help="grid tier; overrides the config")
    p.add_argument("--threads", type=int, help=f"worker threads; overrides the config and ${THREADS_ENV}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _load(args)
        threads = _threads(args.threads)
        if threads is not None and threads < 1:
            raise ConfigError("--threads must be >= 1")
        prepare_out_dir(args.out)
        started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        t0 = time.perf_counter()
        result = run_scenario(cfg, threads)
        paths = emit_outputs(result, cfg, args.out, time.perf_counter() - t0, started)
    except (ConfigError, DomainError) as exc:
        print(f"conical-ctl: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"conical-ctl: numerical failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for p in paths:
        log.info("wrote %s", p)
    if result.failures:
        for f in result.failures:
            print(f"conical-ctl: point {f['point']} failed: {f['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _load(args) -> ScenarioConfig:
    """Explicit file keys plus the command-line scenario, then defaults."""
    explicit = {}
    if args.config is not None:
        if not os.path.isfile(args.config):
            raise ConfigError(f"config file {args.config!r} does not exist")
        with open(args.config, encoding="utf-8") as fh:
            explicit = parse_text(fh.read(), args.config)
    explicit["scenario"] = args.scenario
    return resolve(explicit, args.fidelity)


if __name__ == "__main__":
    sys.exit(main())
