"""Command-line entry point.

    mmia run --config configs/frfr.yaml           # every stage
    mmia train-target --config configs/frfr.yaml  # one stage
    mmia run --config cfg.yaml --stage attack-fb  # same thing via --stage
    mmia scenario CRFV                            # classify a code

Artifacts go to ``<out>/<name>/`` where ``out`` defaults to ``$MMIA_RUNS`` or
``./runs``. Exit status is 0 on success, 2 for a bad config or code and 1 when
a stage fails; the failing stage is named on stderr.
"""

import argparse
import json
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, DependencyError, MmiaError, ParseError, StageError
from .scenario import parse_scenario

log = logging.getLogger("mmia")


def _add_run_flags(p):
    p.add_argument("--config", required=True, metavar="PATH", help="experiment YAML file")
    p.add_argument("--out", metavar="DIR", default=None,
                   help=f"artifact root (default: ${pipeline.RUNS_ENV} or ./runs)")
    p.add_argument("--seed", type=int, default=None, metavar="N",
                   help="override the config seed; the run name gets a -seedN suffix")
    p.add_argument("--force", action="store_true", help="rerun stages whose outputs exist")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="mmia",
                                     description="Membership inference on image captioning models.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every stage of one scenario")
    _add_run_flags(run)
    run.add_argument("--stage", choices=pipeline.STAGES, metavar="NAME",
                     help="run only this stage: " + ", ".join(pipeline.STAGES))
    for stage in pipeline.STAGES:
        _add_run_flags(sub.add_parser(stage, help=f"run the {stage} stage"))
    sc = sub.add_parser("scenario", help="parse and classify a scenario code")
    sc.add_argument("code")
    return parser


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None and args.seed != cfg.seed:
        cfg.seed = args.seed
        cfg.name = f"{cfg.name}-seed{args.seed}"
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenario":
        try:
            spec = parse_scenario(args.code)
        except ParseError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        print(json.dumps({"code": spec.code, "shadow": "".join(spec.shadow),
                          "target": "".join(spec.target), "class": spec.scenario_class}))
        return 0
    try:
        cfg = _load(args)
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    stage = args.command if args.command != "run" else args.stage
    try:
        if stage is None:
            rd = pipeline.run_scenario(cfg, args.out, force=args.force)
        else:
            rd = pipeline.run_stage(cfg, stage, args.out, force=args.force)
    except DependencyError as e:
        print(f"error: stage {stage!r}: {e}", file=sys.stderr)
        return 1
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except MmiaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(rd)
    return 0


if __name__ == "__main__":
    sys.exit(main())
