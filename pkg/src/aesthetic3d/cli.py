"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 2 bad or missing input, 3 score fit did not converge.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .btrank import ConvergenceError
from .config import ConfigError, PipelineConfig
from .features import FeatureError
from .geometry import GeometryError

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 2, 3


def _common(p):
    p.add_argument("--config", help="YAML pipeline config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (overrides paths.output_dir)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aesthetic3d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="geometric features for a mesh directory")
    _common(p)
    p.add_argument("--mesh-dir", help="overrides paths.mesh_dir")
    p.add_argument("--dump-derived", action="store_true", help="also write hull, OBB and voxel meshes")

    p = sub.add_parser("fit-bt", help="preference scores from pairwise comparisons")
    _common(p)
    p.add_argument("--comparisons", help="overrides paths.comparisons")

    p = sub.add_parser("train", help="random forest from features to scores")
    _common(p)
    p.add_argument("--comparisons", help="overrides paths.comparisons (used for sample weights)")

    p = sub.add_parser("explain", help="SHAP, partial dependence and Pearson tables")
    _common(p)

    p = sub.add_parser("crosscat", help="compare importances and features across categories")
    _common(p)
    p.add_argument("categories", nargs="*", help="category output directories or their config files")

    p = sub.add_parser("synth", help="planted-utility experiment on generated shapes")
    _common(p)

    p = sub.add_parser("report", help="summary JSON and SVG plots for an output directory")
    _common(p)
    p.add_argument("directory", nargs="?", help="directory to summarize (default: paths.output_dir)")
    return parser


def load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def run(args) -> None:
    config = load_config(args)
    out = args.out
    cmd = args.command
    if cmd == "extract":
        path = pipeline.run_extract(config, out, args.mesh_dir, args.dump_derived)
    elif cmd == "fit-bt":
        path = pipeline.run_fit_bt(config, out, args.comparisons)
    elif cmd == "train":
        path = pipeline.run_train(config, out, args.comparisons)
    elif cmd == "explain":
        path = pipeline.run_explain(config, out)
    elif cmd == "crosscat":
        path = pipeline.run_crosscat(config, args.categories, out)
    elif cmd == "synth":
        path = pipeline.run_synth(config, out)
    else:
        path = pipeline.run_report(config, args.directory, out)
    print(path)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (pipeline.InputError, ConfigError, GeometryError, FeatureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
