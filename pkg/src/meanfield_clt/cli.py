"""Command-line entry point.

    python -m meanfield_clt run <subcommand> [--config PATH] [--out DIR]
                               [--workers N] [--verbose] [--emit-resolved-config]

Every run writes ``<subcommand>.csv`` and ``<subcommand>.json`` (summary with
the config hash, rate fits and threshold checks) into the output directory.
Exit status: 0 when every threshold passes, 2 when one fails, 1 on errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import DEFAULTS, STUDY_DEFAULTS, SUBCOMMANDS, ConfigError, canonical_json, config_hash, load_config, resolve

__all__ = ["main", "run", "format_csv", "write_atomic"]

log = logging.getLogger("meanfield_clt")

WORKERS_ENV = "MFCLT_WORKERS"
EXIT_OK, EXIT_ERROR, EXIT_THRESHOLD = 0, 1, 2

_PARALLEL = {
    "clt": ex.clt_convergence_study,
    "berry-esseen": ex.berry_esseen_study,
    "density-rate": ex.density_matrix_rate_study,
    "fluctuation": ex.fluctuation_growth_study,
    "crosscheck": ex.bogoliubov_crosscheck,
}
_SERIAL = {
    "hartree": ex.hartree_report,
    "bogoliubov": ex.bogoliubov_report,
    "covariance": ex.covariance_report,
    "xi": ex.xi_report,
}


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.16e}"
    return str(x)


def format_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(x) for x in r])
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary(result: ex.StudyResult, cfg: dict, subcommand: str) -> dict:
    return _jsonable({
        "subcommand": subcommand,
        "config_hash": config_hash(cfg),
        "passed": result.passed,
        "checks": result.checks,
        "fits": [f.to_json() for f in result.fits],
        "extra": result.extra,
    })


def run(subcommand: str, config_path=None, out_dir=".", workers: int = 1, emit_resolved: bool = False) -> int:
    """Run one subcommand and write its outputs; returns the exit status."""
    try:
        if subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {subcommand!r}")
        cfg = resolve(None, subcommand) if config_path is None else load_config(config_path, subcommand)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        h = config_hash(cfg)
        log.info("%s: config hash %s, %d worker(s)", subcommand, h, workers)
        if emit_resolved:
            write_atomic(out / f"{subcommand}.resolved-config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        if subcommand in _PARALLEL:
            result = _PARALLEL[subcommand](cfg, workers=workers)
        else:
            result = _SERIAL[subcommand](cfg)
        header = ["config_hash"] + list(result.header)
        rows = [[h, *r] for r in result.rows]
        write_atomic(out / f"{subcommand}.csv", format_csv(header, rows))
        doc = summary(result, cfg, subcommand)
        write_atomic(out / f"{subcommand}.json", json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for name, c in result.checks.items():
        log.info("%-40s %s  value=%s threshold=%s", name, "pass" if c["pass"] else "FAIL", c["value"], c["threshold"])
    if not result.passed:
        failed = [n for n, c in result.checks.items() if not c["pass"]]
        print(f"{subcommand}: threshold failure: {', '.join(failed)}", file=sys.stderr)
        return EXIT_THRESHOLD
    print(f"{subcommand}: all {len(result.checks)} checks passed (config {h[:12]})")
    return EXIT_OK


def _default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return int(env)
    return os.cpu_count() or 1


def _help_epilog() -> str:
    lines = ["defaults (JSON; unknown keys are rejected):", canonical_json(DEFAULTS), "", "study defaults per subcommand:"]
    for sub, d in STUDY_DEFAULTS.items():
        lines.append(f"  {sub}: {canonical_json(d)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meanfield_clt", description="Mean-field fluctuation dynamics and CLT rate studies.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a subcommand", epilog=_help_epilog(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    r.add_argument("subcommand", choices=SUBCOMMANDS)
    r.add_argument("--config", default=None, help="JSON config (defaults when omitted)")
    r.add_argument("--out", default=".", help="output directory")
    r.add_argument("--workers", type=int, default=None,
                   help=f"worker processes (fallback: ${WORKERS_ENV}, then the number of cores)")
    r.add_argument("--verbose", action="store_true")
    r.add_argument("--emit-resolved-config", action="store_true", help="also write the resolved config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        workers = args.workers if args.workers is not None else _default_workers()
    except ValueError:
        print(f"error: {WORKERS_ENV} must be an integer", file=sys.stderr)
        return EXIT_ERROR
    if workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    return run(args.subcommand, args.config, args.out, workers, args.emit_resolved_config)
