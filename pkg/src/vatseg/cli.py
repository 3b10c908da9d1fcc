"""Command line entry point: ``vatseg <command> ...``.

Commands: phantom, train, cv, predict, evaluate, report. Every command logs
one ``key=value`` line per event to stderr and exits nonzero with a message on
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import pipeline
from .architectures import Checkpoint
from .config import load_config
from .data.manifest import load_manifest
from .data.phantom import PhantomParams, generate_cohort
from .evaluation import aggregate, aggregate_csv, read_scans_csv, scatter_csv

log = logging.getLogger("vatseg")


def _cmd_phantom(args) -> int:
    params = PhantomParams(dims=(args.depth, args.height, args.width),
                           include_background_noise=args.background_noise)
    overrides = {}
    if args.sat_thickness is not None:
        overrides["sat_thickness"] = tuple(args.sat_thickness)
    for name in ("wall_thickness", "skin_thickness", "spine_radius"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    params = replace(params, **overrides)
    manifest, records = generate_cohort(args.patients, args.visits, params, args.seed, args.out,
                                        center_tag=args.center, prefix=args.prefix)
    log.info("event=phantom_done scans=%d manifest=%s", len(records), manifest)
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    pipeline.run_train(cfg)
    return 0


def _cmd_cv(args) -> int:
    cfg = load_config(args.config, args.set)
    outcome = pipeline.run_cv(cfg)
    print(outcome.report.format_table())
    return 0


def _cmd_predict(args) -> int:
    net = Checkpoint.load(args.checkpoint).to_network()
    pipeline.predict_files(net, args.volumes, args.out, args.skip_background_mask, args.ff_threshold)
    return 0


def _cmd_evaluate(args) -> int:
    records = load_manifest(args.manifest)
    if not records:
        raise ValueError(f"manifest {args.manifest} lists no scans")
    if args.checkpoint:
        metrics = pipeline.evaluate_checkpoint(Checkpoint.load(args.checkpoint), records,
                                               args.skip_background_mask, args.ff_threshold)
    elif args.predictions:
        metrics = pipeline.evaluate_predictions(records, args.predictions)
    else:
        raise ValueError("evaluate needs --predictions or --checkpoint")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = pipeline.write_report(out, metrics)
    print(report.format_table())
    return 0


def _cmd_report(args) -> int:
    report = aggregate(read_scans_csv(Path(args.scans).read_text(encoding="utf-8")))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "aggregate.csv").write_text(aggregate_csv(report), encoding="utf-8")
    (out / "scatter.csv").write_text(scatter_csv(report), encoding="utf-8")
    print(report.format_table())
    if args.baseline:
        base = aggregate(read_scans_csv(Path(args.baseline).read_text(encoding="utf-8")))
        deltas = pipeline.report_deltas(report, base)
        (out / "deltas.csv").write_text(deltas, encoding="utf-8")
        print(deltas, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vatseg", description="VAT/SAT segmentation of water-fat MRI volumes")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="generate a synthetic cohort with ground truth")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--visits", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--background-noise", action="store_true",
                   help="fill the background with noise (fat fraction uniform in [0, 1])")
    p.add_argument("--center", default="site_a", help="center tag written to the manifest")
    p.add_argument("--prefix", default="P", help="patient id prefix")
    p.add_argument("--sat-thickness", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--wall-thickness", type=float)
    p.add_argument("--skin-thickness", type=float)
    p.add_argument("--spine-radius", type=float)
    p.set_defaults(func=_cmd_phantom)

    for name, func, text in (("train", _cmd_train, "train one network on a whole manifest"),
                             ("cv", _cmd_cv, "patient-level k-fold cross-validation")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--config", help="key = value run configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.set_defaults(func=func)

    p = sub.add_parser("predict", parents=[common], help="segment image volumes with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="directory for <name>.pred.mvf label files")
    p.add_argument("--skip-background-mask", action="store_true",
                   help="do not mask the background with the body mask before inference")
    p.add_argument("--ff-threshold", action="store_true",
                   help="reset VAT/SAT predictions with fat fraction below 0.5")
    p.add_argument("volumes", nargs="+")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against manifest labels")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="directory written by 'predict'")
    src.add_argument("--checkpoint", help="predict on the fly with this checkpoint")
    p.add_argument("--skip-background-mask", action="store_true")
    p.add_argument("--ff-threshold", action="store_true")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="aggregate a per-scan metrics CSV")
    p.add_argument("--scans", required=True, help="scans.csv from evaluate or cv")
    p.add_argument("--baseline", help="second scans.csv; writes deltas.csv against it")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    root = logging.getLogger("vatseg")
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s level=%(levelname)s %(message)s"))
        root.addHandler(handler)
    root.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        log.error("event=failed command=%s error=%s", args.command, exc)
        print(f"vatseg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
