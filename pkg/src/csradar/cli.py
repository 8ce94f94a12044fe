"""Command-line front end: design / run / sweep / report.

Exit codes: 0 on success, 1 on configuration or validation errors, 2 when a
Monte-Carlo run aborts from too many trial failures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .design import save_design
from .harness import (
    ConfigError,
    RunAbortedError,
    _build_design,
    emit_report,
    load_config,
    load_records,
    run_monte_carlo,
    trial_source,
)

PAPER_PROFILE = {"samples_per_pulse": 128, "max_delay_bins": 100, "trials": 1000}


def _apply_overrides(config, args):
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if getattr(args, "profile", "desk") == "paper":
        changes.update(PAPER_PROFILE)
    if changes:
        config = replace(config, **changes)
        from .harness import validate_config

        validate_config(config)
    return config


def _cmd_design(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    src = trial_source(config, 0, 0)
    geometry = config.geometry(src)
    waveforms = config.waveforms(src)
    grid = config.grid()
    design = _build_design(config, config.families[0], geometry, grid, waveforms, src)
    out = args.out or f"{config.name}.mmx"
    save_design(design, out)
    print(f"wrote {out}: family={design.family} shape={design.phi.shape}")
    return 0


def _run_and_emit(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    summary = run_monte_carlo(config, threads=args.threads)
    written = emit_report(summary, config.output_dir)
    print(f"{config.name}: {len(summary.records)} records, {len(summary.failures)} failures")
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_report(args) -> int:
    summary = load_records(args.records)
    written = emit_report(summary, args.out or ".", formats=("txt", "series"))
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csradar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="scenario config file")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--out", default=None, help="output directory (or .mmx path for design)")
        p.add_argument("--profile", choices=("desk", "paper"), default="desk")
        p.add_argument("--threads", type=int, default=1, help="trial-level worker threads")

    p_design = sub.add_parser("design", help="build and save a measurement matrix (.mmx)")
    add_common(p_design)
    p_design.set_defaults(func=_cmd_design)

    p_run = sub.add_parser("run", help="execute a scenario config")
    add_common(p_run)
    p_run.set_defaults(func=_run_and_emit)

    p_sweep = sub.add_parser("sweep", help="execute a parameter-sweep scenario config")
    add_common(p_sweep)
    p_sweep.set_defaults(func=_run_and_emit, require_sweep=True)

    p_report = sub.add_parser("report", help="re-aggregate an existing records.csv")
    p_report.add_argument("--records", required=True, help="records.csv produced by run/sweep")
    p_report.add_argument("--out", default=None, help="output directory")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "require_sweep", False):
            config = load_config(args.config)
            if not config.sweep_values:
                raise ConfigError("sweep requires a config with a [sweep] section")
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except RunAbortedError as err:
        print(f"aborted: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
