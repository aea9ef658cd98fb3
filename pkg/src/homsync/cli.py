"""Command-line entry point: ``homsync {dip-scan,sync,security,curves}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FitError, HomSyncError
from .output import write_records, write_table
from .simulation import Direction

log = logging.getLogger("homsync")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FIT = 3
EXIT_DATA = 4


def _fit_rows(results):
    columns = [
        "direction", "baseline", "baseline_err", "depth", "depth_err", "center",
        "center_stderr", "width", "width_err", "chi2", "dof", "iterations", "scan_center",
    ]
    rows = []
    for res in results:
        f = res.fit
        err = f.stderr
        rows.append([
            res.direction, f.baseline, float(err[0]), f.depth, float(err[1]), f.center,
            f.center_stderr, f.width, float(err[3]), f.chi2, f.dof, f.iterations, res.center,
        ])
    return columns, rows


def _scan_rows(results):
    columns = ["direction", "delay", "rate", "stderr", "n_trials", "coincidences"]
    rows = [
        [res.direction, p.delay, p.rate, p.stderr, p.n_trials, p.coincidences]
        for res in results
        for p in res.points
    ]
    return columns, rows


def _write_event_logs(out: Path, results):
    for res in results:
        for i, frame in enumerate(res.frames):
            with (out / f"events_{res.direction.value}_{i}.txt").open("w") as fh:
                frame.write_event_log(fh)


def cmd_dip_scan(cfg: ExperimentConfig, out: Path, fmt: str, event_log: bool = False) -> int:
    results = []
    for direction in Direction:
        results.append(pipeline.run_scan(cfg, direction))
    write_table(out, "dip_scan", *_scan_rows(results), cfg, fmt)
    for res in results:
        pipeline.fit_scan(res)
    write_table(out, "dip_fit", *_fit_rows(results), cfg, fmt)
    if event_log:
        for res in results:
            pipeline.correlate(cfg, res)
        _write_event_logs(out, results)
    for res in results:
        log.info("%s: centre %.4f +- %.4f ns", res.direction.value, res.fit.center, res.fit.center_stderr)
    return EXIT_OK


def cmd_sync(cfg: ExperimentConfig, out: Path, fmt: str, event_log: bool = False) -> int:
    result = pipeline.run_sync(cfg)
    est = result.estimate
    summary = [
        ["dt_bb", est.dt_bb, est.dt_bb_stderr, "ns"],
        ["dt_aa", est.dt_aa, est.dt_aa_stderr, "ns"],
        ["k", est.k, 0, ""],
        ["k_prime", est.k_prime, 0, ""],
        ["delta_hat", est.delta_hat, est.delta_stderr, "ns"],
        ["delta_true", result.delta_true, 0, "ns"],
        ["accuracy", result.accuracy, est.delta_stderr, "ns"],
    ]
    write_table(out, "sync", ["quantity", "value", "stderr", "unit"], summary, cfg, fmt)
    results = [result.a_to_b, result.b_to_a]
    write_table(out, "dip_scan", *_scan_rows(results), cfg, fmt)
    write_table(out, "dip_fit", *_fit_rows(results), cfg, fmt)
    corr_rows = [
        [res.direction, c.k, c.rate, c.stderr, c.n_trials, c.coincidences]
        for res in results
        for c in res.correlation
    ]
    write_table(
        out, "correlation", ["direction", "k", "rate", "stderr", "n_trials", "coincidences"],
        corr_rows, cfg, fmt,
    )
    if event_log:
        _write_event_logs(out, results)
    print(f"delta_hat = {est.delta_hat:.6f} +- {est.delta_stderr:.6f} ns "
          f"(true {result.delta_true} ns, accuracy {1e3 * result.accuracy:.3f} ps)")
    return EXIT_OK


def cmd_security(cfg: ExperimentConfig, out: Path, fmt: str, event_log: bool = False) -> int:
    result = pipeline.run_security(cfg)
    columns = [
        "channel", "observed_rate", "n_trials", "honest_floor", "attacked_floor",
        "threshold", "z_score", "flagged", "rate_rectilinear", "rate_diagonal", "warning",
    ]
    rows = []
    for chk in result.checks:
        v = chk.verdict
        rows.append([
            chk.channel, v.observed_rate, v.n_trials, v.honest_floor, v.attacked_floor,
            v.threshold, v.z_score, v.flagged, chk.rate_rectilinear, chk.rate_diagonal, chk.warning,
        ])
    write_table(out, "verdict", columns, rows, cfg, fmt)
    write_records(out, "attack_sweep", result.sweep, cfg, fmt)
    write_records(out, "attack_dip", result.dip, cfg, fmt)
    for chk in result.checks:
        print(f"{chk.channel}: rate {chk.verdict.observed_rate:.5f} "
              f"threshold {chk.verdict.threshold:.5f} flagged={chk.verdict.flagged}")
    return EXIT_OK


def cmd_curves(cfg: ExperimentConfig, out: Path, fmt: str, event_log: bool = False) -> int:
    write_records(out, "curves", pipeline.compute_curves(cfg), cfg, fmt)
    return EXIT_OK


COMMANDS = {
    "dip-scan": cmd_dip_scan,
    "sync": cmd_sync,
    "security": cmd_security,
    "curves": cmd_curves,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homsync",
        description="Simulate HOM-based two-way clock synchronization with weak coherent pulses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML experiment config (defaults otherwise)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--format", choices=("csv", "json"), help="output table format")
        p.add_argument("--frames", type=int, help="frames per delay-line setting")
        p.add_argument("--workers", type=int, help="threads for scan points")
        p.add_argument("--event-log", action="store_true",
                       help="also write the event log of the frames nearest the optimum")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        changes["seed"] = args.seed
    if args.frames is not None:
        changes["scan"] = {"frames": args.frames}
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        changes["workers"] = args.workers
    output = {}
    if args.out is not None:
        output["path"] = str(args.out)
    if args.format is not None:
        output["format"] = args.format
    if output:
        changes["output"] = output
    return cfg.replace(**changes) if changes else cfg


def _write_diagnostic(out: Path, command: str, exc: Exception, code: int) -> None:
    record = {"command": command, "exit_code": code, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, FitError):
        record["stage"] = exc.stage
        if exc.last_params is not None:
            record["last_params"] = [float(x) for x in exc.last_params]
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(record, indent=1) + "\n")
    except OSError:
        pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = args.out or Path("results")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(cfg.output.path)
        (out / "error.json").unlink(missing_ok=True)
        return COMMANDS[args.command](cfg, out, cfg.output.format, args.event_log)
    except HomSyncError as exc:
        code = exc.exit_code
        stage = getattr(exc, "stage", None)
        print(f"homsync {args.command}: {'[' + stage + '] ' if stage else ''}{exc}", file=sys.stderr)
        if code != EXIT_CONFIG:
            _write_diagnostic(out, args.command, exc, code)
        return code


if __name__ == "__main__":
    sys.exit(main())
