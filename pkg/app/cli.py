"""
Command line of the engine.

    orthrus gen --ct wt --cpa sk --rows 8 --cols 8 --width 8 -o mac.json
    orthrus analyze --netlist mac.json --archive run.jsonl
    orthrus tech-loop --direction report.json --library lib.json --seed 7
    orthrus system-loop --budget 50 --seed 3 --out run.jsonl
    orthrus run --config campaign.toml
    orthrus report --runs a.jsonl b.jsonl

Exit codes: 0 success, 2 configuration or argument error, 3 any other
engine failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .utils.errors import ConfigError, OrthrusError
from .utils.settings import VERSION, setup_logging

logger = logging.getLogger("orthrus")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURE = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _print(doc) -> None:
    print(json.dumps(doc, indent=1, default=float))


def _library(path: Optional[str]):
    from .utils.library import default_library, load_library
    return load_library(path) if path else default_library()


def cmd_gen(args) -> int:
    from .utils.macgen import generate_mac_array
    from .utils.netlist import save_netlist

    g = generate_mac_array(args.ct, args.cpa, args.rows, args.cols, args.width)
    save_netlist(g, args.output)
    print(f"{g.name}: {len(g)} cells, {len(g.registers())} registers -> {args.output}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .utils.netlist import load_netlist
    from .utils.orchestrator import InterloopSettings, analyze_netlist
    from .utils.systemloop import read_archive

    g = load_netlist(args.netlist)
    records = read_archive(args.archive) if args.archive else None
    doc = analyze_netlist(g, _library(args.library), records, InterloopSettings(lam=args.lam),
                          naive_weighting=args.naive)
    if args.output:
        Path(args.output).write_text(json.dumps(doc, indent=1, default=float))
        logger.info(f"Wrote analysis report to {args.output}")
    else:
        _print(doc)
    return EXIT_OK


def cmd_tech_loop(args) -> int:
    from .utils.orchestrator import tech_loop_command
    from .utils.techloop import TechLoopSettings

    try:
        doc = json.loads(Path(args.direction).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read direction report {args.direction}: {e}")
    overrides = {k: v for k, v in (("n_init", args.n_init), ("i_max", args.i_max)) if v is not None}
    settings = TechLoopSettings.from_dict(overrides)
    out_dir = args.out or f"tech-{args.anchor}-s{args.seed}"
    _print(tech_loop_command(doc, _library(args.library), out_dir, args.seed, args.anchor, settings))
    return EXIT_OK


def cmd_system_loop(args) -> int:
    from .utils.orchestrator import ArraySettings, system_loop_command
    from .utils.systemloop import SystemLoopSettings

    settings = SystemLoopSettings.from_dict({"n_init": args.n_init})
    array = ArraySettings(args.rows, args.cols, args.width)
    summary = system_loop_command(args.out, args.budget, args.seed, _library(args.library), settings, array)
    print(f"{summary['evaluations']} evaluations ({summary['failed']} failed), "
          f"HV {summary['hypervolume']:.5f}, {len(summary['pareto_set'])} Pareto configs -> {summary['archive']}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .utils.orchestrator import load_campaign_config, run_dual_loop

    config = load_campaign_config(args.config)
    if args.out_dir:
        config.out_dir = Path(args.out_dir)
    if args.seed is not None:
        config.seed = args.seed
    result = run_dual_loop(config)
    print(f"Campaign {result.mode} seed {result.seed}: {result.status}, HV {result.hypervolume}")
    print(f"Report: {result.outputs.get('report')}")
    if result.failed:
        logger.error(f"Stage {result.failed_stage} failed: {result.error}")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_report(args) -> int:
    from .utils.orchestrator import report

    if len(args.runs) < 2:
        raise ConfigError(f"report needs at least 2 runs, got {len(args.runs)}")
    _print(report(args.runs, args.tolerance, args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orthrus", description="Dual-loop system/technology co-optimization engine")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a MAC-array netlist")
    p.add_argument("--ct", default="wt", help="compressor tree: wt | dt")
    p.add_argument("--cpa", default="sk", help="carry-propagate adder: sk | ks | bk")
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--cols", type=int, default=8)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("analyze", help="contributions, mined patterns and frontier directions")
    p.add_argument("--netlist", required=True)
    p.add_argument("--archive", help="run.jsonl of a system loop; adds anchor directions")
    p.add_argument("--library", help="cell library JSON (default: ORTHRUS_LIBRARY_PATH)")
    p.add_argument("--lam", type=float, default=10.0, help="power-contribution exponent")
    p.add_argument("--naive", action="store_true", help="uniform contributions")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("tech-loop", help="optimize technology parameters along a direction")
    p.add_argument("--direction", required=True, help="analysis report or directions.json")
    p.add_argument("--library", help="single-row library (fused cells included)")
    p.add_argument("--anchor", default="knee", choices=("knee", "low_delay"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-init", type=int)
    p.add_argument("--i-max", type=int)
    p.add_argument("--out", help="output directory for library.json and candidates.csv")
    p.set_defaults(func=cmd_tech_loop)

    p = sub.add_parser("system-loop", help="PRF + EHVI search over system parameters")
    p.add_argument("--budget", type=int, default=50, help="EHVI iterations after the initial samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-init", type=int, default=10)
    p.add_argument("--library")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--out", default="run.jsonl")
    p.set_defaults(func=cmd_system_loop)

    p = sub.add_parser("run", help="run a dual-loop campaign")
    p.add_argument("--config", required=True, help="campaign TOML")
    p.add_argument("--out-dir", help="overrides [campaign] out_dir")
    p.add_argument("--seed", type=int, help="overrides [campaign] seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="iso-metric comparison of persisted runs")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--out", help="directory for frontier.csv and report.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level.upper() if args.log_level else None)
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except OrthrusError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
