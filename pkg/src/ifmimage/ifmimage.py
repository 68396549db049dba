"""
ifmimage.py: Entry point script for the ifmimage simulator.

This script parses command-line arguments, resolves the run configuration from the config
file, generic --set overrides and dedicated flags (in that order of precedence, lowest first),
and dispatches to one of the experiment runs.
"""

from typing import Any, Dict, List, Optional
import argparse
import json
import logging
import os
import sys

from ifmimage import experiment, log, utils
from ifmimage.config import RunConfig, parse_override
from ifmimage.errors import ConfigError, IfmImageError, UsageError
from ifmimage.scene import GLYPHS

logger = logging.getLogger(__name__)

SUBCOMMAND_MODES = {
    "sense": "sense",
    "curves": "curves",
    "resolution": "resolution",
    "masks": "masks",
    "phase-sim": "phase-sim",
    "calibrate": "calibrate",
}

# flag dest -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "workers": "workers",
    "noiseless": "noiseless",
    "color_scheme": "color_scheme",
    "integration": "integration",
    "masks": "masks.m",
    "k": "masks.k",
    "ordering": "masks.ordering",
    "acquisition": "masks.acquisition",
    "threshold": "object.threshold",
    "phase_map": "object.phase_path",
    "rate": "emission.rate",
    "trials": "sense.trials",
    "present_rate": "sense.present_rate",
    "absent_rate": "sense.absent_rate",
    "excess_noise": "sense.excess_noise",
    "k_sigma": "sense.k_sigma",
    "bin_width": "sense.bin_width",
    "samples": "curves.samples",
    "channels": "curves.channels",
    "counts_scale": "resolution.counts_scale",
    "edge_col": "object.edge_col",
    "mean_counts": "phase.mean_counts",
    "text": "phase.text",
    "targets": "calibration.signal",
    "tolerance": "calibration.tolerance",
}


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-C", default=None,
                        help="Path to the configuration file, JSON or YAML (default: ~/.ifmimage/config.json)")
    common.add_argument("--out", "-o", default=None,
                        help="Output directory; relative paths are placed under $IFMIMAGE_OUTPUT_ROOT if set")
    common.add_argument("--seed", type=int, help="Run seed (0 <= seed < 2^64)")
    common.add_argument("--workers", type=int, help="Worker threads (default: available parallelism)")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("--noisy", dest="noiseless", action="store_false", default=None,
                       help="Poisson-sample every detection")
    noise.add_argument("--noiseless", dest="noiseless", action="store_true", default=None,
                       help="Report exact expectation values")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any configuration key, e.g. --set model.ifm.mode_overlap=0.699")
    common.add_argument("--color-scheme", help="Pygments style for the terminal summary")
    common.add_argument("--verbose", "-v", action="count", default=0,
                        help="-v for progress and info logging, -vv for debug")
    return common


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments provided to the script.

    Returns:
        argparse.Namespace: The parsed command-line arguments.
    """
    parser = argparse.ArgumentParser("ifmimage",
                                     description="Interaction-free single-pixel quantum imaging simulator")
    parser.add_argument("--list-history", nargs="?", const=5, type=int, metavar="N",
                        help="List the last N runs (default 5)")
    common = _common_parser()
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    image = sub.add_parser("image", parents=[common], help="Image an object with the array detector or by SPI")
    image.add_argument("--mode", choices=["iccd", "spi"], help="Detection scheme (default: iccd)")
    image.add_argument("--object",
                       help="PGM file, a shipped glyph (N, J, U), a text of glyphs, 'knife-edge' or 'uniform'")
    image.add_argument("--size", type=int, help="Object grid side in pixels")
    image.add_argument("--threshold", type=int, help="Gray level at or above which a pixel is transparent")
    image.add_argument("--phase-map", help="PGM file with the per-pixel phase")
    image.add_argument("--rate", type=float, help="Pair emission rate per pixel in counts/s")
    image.add_argument("--integration", type=float, help="Integration time per setting in s")
    image.add_argument("--no-blur", action="store_true", help="Skip the signal-arm blur in ICCD mode")
    image.add_argument("--masks", type=int, help="Number of Hadamard masks to acquire (default: all)")
    image.add_argument("--k", type=int, help="Mask scale: masks are 2^k x 2^k")
    image.add_argument("--ordering", choices=["sequency", "natural"], help="Mask acquisition order")
    image.add_argument("--acquisition", choices=["ifm", "ic"],
                       help="Four-setting rule with the IFM module or the bare two-setting rule")

    sense = sub.add_parser("sense", parents=[common], help="Interaction-free sensing statistics")
    sense.add_argument("--trials", type=int, help="Trials per class")
    sense.add_argument("--present-rate", type=float, help="Object-present mean in counts/s")
    sense.add_argument("--absent-rate", type=float, help="Object-absent mean in counts/s")
    sense.add_argument("--excess-noise", type=float, help="Gaussian excess noise in counts/s")
    sense.add_argument("--k-sigma", type=float, help="Required class separation at the threshold")
    sense.add_argument("--bin-width", type=float, help="Histogram bin width in counts/s")

    curves = sub.add_parser("curves", parents=[common], help="Interference curves of all channels")
    curves.add_argument("--samples", type=int, help="Number of theta samples")
    curves.add_argument("--channels", nargs="+", choices=["signal", "idler", "coincidence"],
                        help="Detection channels to scan")

    resolution = sub.add_parser("resolution", parents=[common], help="Knife-edge resolution and field of view")
    resolution.add_argument("--size", type=int, help="Knife-edge frame side in pixels")
    resolution.add_argument("--counts-scale", type=float, help="Counts in the transparent half")
    resolution.add_argument("--edge-col", type=int, help="Column of the edge")

    masks = sub.add_parser("masks", parents=[common], help="Export Hadamard masks as PGM")
    masks.add_argument("--k", type=int, help="Mask scale: masks are 2^k x 2^k")
    masks.add_argument("--masks", type=int, help="Number of masks to export (default: all)")
    masks.add_argument("--ordering", choices=["sequency", "natural"], help="Mask order")

    phase = sub.add_parser("phase-sim", parents=[common], help="Phase imaging without the IFM module")
    phase.add_argument("--mean-counts", type=float, help="Mean counts per pixel without interference")
    phase.add_argument("--size", type=int, help="Image side in pixels")
    phase.add_argument("--text", help="Characters of the plate")

    calibrate = sub.add_parser("calibrate", parents=[common], help="Fit the model to measured visibilities")
    calibrate.add_argument("--targets", type=float, nargs=3, metavar=("V_PI", "V_0", "V_OBJ"),
                           help="Signal visibilities at phi=pi, phi=0 and with the object")
    calibrate.add_argument("--tolerance", type=float, help="Largest acceptable visibility residual")

    args = parser.parse_args(argv)
    if args.command is None and args.list_history is None:
        parser.error("a subcommand is required")
    return args


def _object_overrides(value: str) -> Dict[str, Any]:
    if os.path.exists(value) or value.lower().endswith((".pgm", ".pnm")):
        return {"object.pattern": "file", "object.path": value}
    if value in ("knife-edge", "uniform"):
        return {"object.pattern": value}
    if len(value) == 1 and value.upper() in GLYPHS:
        return {"object.pattern": "glyph", "object.glyph": value.upper()}
    if value and all(c.upper() in GLYPHS for c in value):
        return {"object.pattern": "text", "object.text": value.upper()}
    raise UsageError(f"--object '{value}' is neither a raster file nor a known pattern")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """
    Load the config file and apply --set overrides, then dedicated flags. A config file or --set
    entry that does not validate is a ConfigError; flags that do not validate are a UsageError.
    """
    config = RunConfig.load_config(config_path=args.config)
    if args.set:
        config = config.with_overrides(dict(parse_override(item) for item in args.set))

    overrides: Dict[str, Any] = {}
    if args.command == "image":
        mode = args.mode or (config.mode if config.mode in ("iccd", "spi") else "iccd")
        overrides["mode"] = mode
        if args.object:
            overrides.update(_object_overrides(args.object))
        if args.no_blur:
            overrides["blur"] = False
    else:
        overrides["mode"] = SUBCOMMAND_MODES[args.command]

    if getattr(args, "size", None) is not None:
        key = {"resolution": "resolution.size", "phase-sim": "phase.size"}.get(args.command, "object.size")
        overrides[key] = args.size

    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value

    try:
        return config.with_overrides(overrides)
    except ConfigError as e:
        raise UsageError(str(e)) from e


def handle_modes(config: RunConfig, args: argparse.Namespace) -> None:
    """
    Handle the requested subcommand with the resolved configuration.

    Args:
        config (RunConfig): Fully resolved configuration.
        args (argparse.Namespace): Parsed command-line arguments.
    """
    out_dir = utils.resolve_output_dir(args.out or f"ifmimage-{args.command}")
    summary = experiment.run_experiment(config, out_dir, progress=args.verbose > 0)
    log.log_run(args.command, out_dir, config.seed, utils.headline(summary["results"]))
    print(utils.get_formatted_summary(config.color_scheme, summary, colorize=sys.stdout.isatty()))


def _fail(error_class: str, message: str, exit_code: int) -> None:
    print(json.dumps({"error": error_class, "message": message}), file=sys.stderr)
    sys.exit(exit_code)


def main(argv: Optional[List[str]] = None) -> None:
    """
    Main function to execute when the script is run directly.
    """
    args = parse_arguments(argv)

    if args.list_history is not None:
        log.list_run_history(args.list_history)
        if args.command is None:
            return

    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose > 1:
        level = logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = resolve_config(args)
        handle_modes(config, args)
    except IfmImageError as e:
        _fail(type(e).__name__, str(e), e.exit_code)
    except OSError as e:
        _fail(type(e).__name__, str(e), IfmImageError.exit_code)


if __name__ == "__main__":
    main()
