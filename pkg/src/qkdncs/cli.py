"""Command-line front end.

Exit codes:
    0   success
    1   metrics-verify found a mismatch
    2   key pool underrun under strict one-time-pad policy
    3   attack still being detected at the end of the run
    64  usage error (bad flags, missing config file)
    65  config file could not be parsed
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from . import loopsim, tables
from .config import load_config, load_sweep
from .errors import ConfigError
from .keysource import KeyPool

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 64
EXIT_DATAERR = 65

VERBS = ("run", "sweep", "metrics-table", "metrics-verify", "keystats")
DELIMITERS = {"csv": ",", "tsv": "\t"}

log = logging.getLogger("qkdncs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class Command:
    verb: str
    config_path: Path | None = None
    output_dir: Path | None = None
    seed_override: int | None = None
    format: str = "csv"
    jobs: int = 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qkdncs", description="QKD-encrypted networked control loop simulator")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", type=Path, help="scenario (run, keystats) or sweep file")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="override rng_seed")
    p.add_argument("--format", choices=tuple(DELIMITERS), default="csv")
    p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def parse_args(argv: list[str]) -> Command:
    argv = list(argv)
    if not argv:
        raise UsageError(build_parser().format_usage().strip())
    # "metrics table" and "metrics verify" read as the hyphenated verbs
    if len(argv) >= 2 and argv[0] == "metrics" and argv[1] in ("table", "verify"):
        argv = [f"metrics-{argv[1]}", *argv[2:]]
    ns = build_parser().parse_args(argv)
    if ns.verb in ("run", "sweep", "keystats"):
        if ns.config is None:
            raise UsageError(f"{ns.verb} requires --config")
        if not ns.config.is_file():
            raise UsageError(f"config file not found: {ns.config}")
    if ns.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    return Command(ns.verb, ns.config, ns.out, ns.seed, ns.format, ns.jobs)


def fixture_dir() -> Path:
    env = os.environ.get("QKDNCS_FIXTURES")
    if env:
        return Path(env)
    return Path(str(resources.files("qkdncs") / "fixtures"))


def _emit(out_dir: Path | None, name: str, text: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


def write_run(report: loopsim.RunReport, out_dir: Path, delimiter: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "trace.csv").write_text(loopsim.trace_csv(report, delimiter))
    (out_dir / "report.csv").write_text(loopsim.report_csv(report, delimiter))
    (out_dir / "detections.csv").write_text(loopsim.detection_csv(report, delimiter))


def _run_one(args: tuple[str, loopsim.LoopConfig, Path | None, str]) -> tuple[str, dict]:
    name, cfg, out, delimiter = args
    report = loopsim.run(cfg)
    if out is not None:
        write_run(report, out / name, delimiter)
    return name, report.summary()


def cmd_run(cmd: Command) -> int:
    cfg = load_config(cmd.config_path, cmd.seed_override)
    report = loopsim.run(cfg)
    delim = DELIMITERS[cmd.format]
    if cmd.output_dir is not None:
        write_run(report, cmd.output_dir, delim)
    else:
        sys.stdout.write(loopsim.report_csv(report, delim))
    if report.diagnostic:
        print(report.diagnostic, file=sys.stderr)
    return report.exit_code


def cmd_sweep(cmd: Command) -> int:
    scenarios = load_sweep(cmd.config_path, cmd.seed_override)
    delim = DELIMITERS[cmd.format]
    jobs = [(name, cfg, cmd.output_dir, delim) for name, cfg in scenarios.items()]
    if cmd.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cmd.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    summaries = [{"scenario": name, **s} for name, s in results]
    cols = list(summaries[0])
    text = loopsim.rows_to_csv(cols, ([s[c] for c in cols] for s in summaries), delim)
    _emit(cmd.output_dir, "summary.csv", text)
    return max((int(s["exit_code"]) for s in summaries), default=EXIT_OK)


def cmd_metrics_table(cmd: Command) -> int:
    delim = DELIMITERS[cmd.format]
    if cmd.output_dir is None:
        sys.stdout.write(tables.render(delim))
    else:
        tables.write_all(cmd.output_dir, delim)
    return EXIT_OK


def cmd_metrics_verify(cmd: Command) -> int:
    checks = tables.verify(fixture_dir())
    for c in checks:
        print(c.line())
    bad = sum(not c.ok for c in checks)
    print(f"{len(checks) - bad}/{len(checks)} checks passed")
    return EXIT_OK if bad == 0 else EXIT_MISMATCH


def cmd_keystats(cmd: Command) -> int:
    """Generate key material for the configured horizon and compare it with demand."""
    cfg = load_config(cmd.config_path, cmd.seed_override)
    import numpy as np

    kc = cfg.keys
    spec = cfg.cipher
    pool = KeyPool(
        key_len=spec.key_len_N,
        generation_rate=kc.generation_rate_bps,
        grade=cfg.key_grade,
        qber=kc.qber,
        check_fraction=kc.check_fraction,
        ratio_m_over_n=kc.ratio_m_over_n,
        pa_security_s=kc.pa_security_s,
        batch_bits=kc.batch_bits,
        rng=np.random.default_rng(cfg.rng_seed),
    )
    duration = cfg.horizon_periods * cfg.Ts
    pool.credit(kc.prefill_s + duration)
    pool.ensure(len(pool.keys) + 10**12)
    st = pool.stats
    demand_bits = 2 * spec.frame_key_bits() * cfg.horizon_periods
    summary = {
        "cipher": spec.name,
        "grade": cfg.key_grade,
        "seconds": kc.prefill_s + duration,
        "sifted_bits": st.sifted_bits,
        "check_bits": st.check_bits,
        "leaked_bits": st.leaked_bits,
        "output_bits": st.output_bits,
        "batches": st.batches,
        "qber_aborts": st.qber_aborts,
        "reconcile_failures": st.reconcile_failures,
        "keys_generated": st.keys_generated,
        "demand_bits": demand_bits,
        "supply_covers_demand": st.output_bits >= demand_bits,
    }
    delim = DELIMITERS[cmd.format]
    _emit(cmd.output_dir, "keystats.csv", loopsim.rows_to_csv(list(summary), [list(summary.values())], delim))
    if cmd.output_dir is not None:
        (cmd.output_dir / "keys.csv").write_text(pool.to_csv())
    return EXIT_OK


HANDLERS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "metrics-table": cmd_metrics_table,
    "metrics-verify": cmd_metrics_verify,
    "keystats": cmd_keystats,
}


def execute(cmd: Command) -> int:
    return HANDLERS[cmd.verb](cmd)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return execute(cmd)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_DATAERR


if __name__ == "__main__":
    sys.exit(main())
