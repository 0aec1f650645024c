#!/usr/bin/env python3
"""
sufflab - approximate sufficiency and contrastive learning experiments

Features:
- Exact ILS / VFS / CBS sufficiency of a statistic on a joint file
- figure1: downstream regression on KL and chi-squared pretrained MLP features
- Topic model: chi-squared trained AugLinear encoder with softmax heads
- vMF half-spheres: InfoNCE trained linear encoder against the oracle score
- Property suite over random discrete joints with a pass/fail report
"""

import argparse
import logging
import os
import sys
from pathlib import Path

from sufflab.utils.config_manager import ConfigManager
from sufflab.utils.errors import ConfigError, SuffLabError

logger = logging.getLogger("sufflab")

package_dir = Path(__file__).parent

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

PLOTS = {
    "figure1": ("excess_risk", "downstream sample size m", "excess risk", True),
    "vmf": ("excess_proxy", "pretraining sample size n", "held-out InfoNCE excess", True),
    "topic": ("score_proxy", "pretraining sample size n", "chi-squared score sufficiency", True),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sufflab", description=__doc__.strip().splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config merged over the preset")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--svg", action="store_true", help="also write an SVG plot")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="only warnings and errors")
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")

    sub = parser.add_subparsers(dest="command", required=True)
    for tag in ("figure1", "topic", "vmf"):
        cmd = sub.add_parser(tag, parents=[common], help=f"run the {tag} experiment")
        cmd.add_argument("--no-progress", action="store_true", help="hide training progress bars")
    eq = sub.add_parser("equivalence", parents=[common], help="run the property suite")
    eq.add_argument("--inject-fault", action="store_true", help="flip the CBS Bregman sign (harness self-test)")
    suff = sub.add_parser("suff", parents=[common], help="sufficiency of a statistic on a joint file")
    suff.add_argument("--joint", help="joint JSON file (default: the preset's joint)")
    suff.add_argument("--f", default=None, choices=["kl", "chisq", "hellinger", "all"], help="f-generator")
    suff.add_argument("--form", default=None, choices=["ils", "vfs", "cbs", "all"], help="sufficiency form")
    return parser


def configure_logging(args):
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def load_config(args):
    manager = ConfigManager()
    user = ConfigManager.load_user_config(args.config) if args.config else None
    return manager.build_config(args.command, user, args.out)


def print_summary(table):
    """Mean of every (method, param, metric) over repetitions"""
    seen = []
    for row in table.rows:
        key = (row.method, row.param, row.metric)
        if key not in seen:
            seen.append(key)
    print(f"{'method':<12}{'param':>8}  {'metric':<20}{'mean':>14}")
    for method, param, metric in seen:
        print(f"{method:<12}{param:>8}  {metric:<20}{table.mean(method, metric, param):>14.6g}")


def run_experiment(args, config) -> int:
    from sufflab.experiments.figure1 import run_figure1
    from sufflab.experiments.topic import run_topic
    from sufflab.experiments.vmf import run_vmf

    runners = {"figure1": run_figure1, "topic": run_topic, "vmf": run_vmf}
    table = runners[args.command](config, progress=not (args.no_progress or args.quiet))
    out = Path(config.output_dir)
    table.write_csv(out / f"{args.command}.csv")
    if args.svg:
        metric, xlabel, ylabel, logx = PLOTS[args.command]
        table.render_svg(out / f"{args.command}.svg", metric, xlabel, ylabel, logx)
    print_summary(table)
    return EXIT_OK


def run_property_suite(args, config) -> int:
    from sufflab.experiments.equivalence import run_equivalence

    report = run_equivalence(config, inject_fault=args.inject_fault)
    report.to_result_table().write_csv(Path(config.output_dir) / "equivalence.csv")
    print(report.format_table())
    return EXIT_OK if report.passed else EXIT_FAILURE


def run_suff(args, config) -> int:
    from sufflab.experiments.suff import compute_sufficiency, format_sufficiency, load_joint

    opts = config.options
    joint_path = args.joint or opts.get("joint", "data/joint_example.json")
    if not args.joint and not os.path.isabs(joint_path):
        joint_path = package_dir / joint_path
    joint, stat = load_joint(joint_path)
    values = compute_sufficiency(joint, stat, args.f or opts.get("f", "kl"), args.form or opts.get("form", "all"))
    print(format_sufficiency(values))
    return EXIT_OK


def main(argv=None) -> int:
    """Main entry point for the command line"""
    args = build_parser().parse_args(argv)
    configure_logging(args)
    try:
        config = load_config(args)
        if args.command == "suff":
            return run_suff(args, config)
        os.makedirs(config.output_dir, exist_ok=True)
        if args.command == "equivalence":
            return run_property_suite(args, config)
        return run_experiment(args, config)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except SuffLabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
