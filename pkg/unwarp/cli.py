#!/usr/bin/env python3
'''
Command-line entry point.

    unwarp gen-data --n 30 --size 64 --out data/synthetic
    unwarp train --data data/synthetic --out toy.uwck --steps 500
    unwarp rectify --checkpoint toy.uwck --input photo.ppm --out flat.ppm
    unwarp eval --pairs results/ --out report
'''
import argparse
import logging
import os
import sys
import time
import typing as t

from colors import color

from unwarp.core.autodiff import PRECISION_ENV_VAR
from unwarp.core.dataset import resolve_dataset_path
from unwarp.core.flow import flow_to_color
from unwarp.core.raster import encode_mask, encode_ppm, load_raster
from unwarp.core.wfl import save_flow
from unwarp.datasets.pairs import EvalPairDataset
from unwarp.datasets.synthetic import SyntheticDataset
from unwarp.filters import DEFAULT_SAMPLE_FILTERS
from unwarp.metrics.report import EvalSettings, evaluate_set
from unwarp.metrics.ssim import PROTOCOL_AREA
from unwarp.model.checkpoint import load_checkpoint, validate_params
from unwarp.model.config import PRESETS, load_config
from unwarp.model.inference import rectify
from unwarp.model.trainer import (FLOW_MODES, LossPoint, TrainingRun,
                                  prepare_examples, read_trace, train)
from unwarp.synth.builder import build_dataset
from unwarp.utils.files import atomic_write_bytes, ensure_writable

LOG = logging.getLogger(__name__)

DEFAULT_SEED = 42
DEFAULT_MIX = "1,1,1"
IMAGE_EXTENSIONS = (".ppm", ".pgm", ".png", ".jpg", ".jpeg")

EXIT_OK = 0
EXIT_FAILURE = 1

_HANDLED_ERRORS = (ValueError, RuntimeError, OSError, FloatingPointError)


def main(argv: t.Sequence[str] | None = None) -> int:
    args = _parse_args_from_argv(argv)
    logging.basicConfig(
        format='[%(asctime)s] [%(levelname)s] %(message)s',
        level=logging.DEBUG if args.verbose else logging.INFO,
    )
    if args.precision is not None:
        os.environ[PRECISION_ENV_VAR] = args.precision

    try:
        args.handler(args)
    except _HANDLED_ERRORS as ex:
        LOG.error("%s failed: %s", args.command, ex)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> None:
    manifest = build_dataset(n=args.n,
                             size=args.size,
                             category_mix=args.mix,
                             out_dir=args.out,
                             seed=args.seed,
                             jobs=args.jobs,
                             filter_names=args.filters,
                             force=args.force)
    print(color("  dataset written  ", fg="black", bg="green", style="bold"))
    print(f"manifest: {manifest.path}")
    for category, count in manifest.category_counts().items():
        print(f"  {category:>8}: {count}")


def cmd_train(args: argparse.Namespace) -> None:
    trace_path = args.trace or f"{args.out}.loss.csv"
    resume = None
    initial_trace: list[LossPoint] = []
    if args.resume is not None:
        resume = load_checkpoint(args.resume)
        config = resume.config
        if os.path.isfile(trace_path):
            initial_trace = read_trace(trace_path)
    else:
        config = load_config(args.preset,
                             args.config,
                             height=args.size[0] if args.size else None,
                             width=args.size[1] if args.size else None,
                             upsample_mode=args.upsample,
                             query_mode=args.query)
    if args.resume is None or os.path.abspath(args.resume) != os.path.abspath(
            args.out):
        ensure_writable(args.out, args.force)
    if args.resume is None:
        ensure_writable(trace_path, args.force)

    run = TrainingRun(steps=args.steps,
                      batch=args.batch,
                      lr_max=args.lr_max,
                      seed=args.seed,
                      flow_mode=args.flow,
                      checkpoint_every=args.checkpoint_every)
    dataset = SyntheticDataset(resolve_dataset_path(args.data))
    examples = prepare_examples(dataset, config, run.flow_mode)
    LOG.info("Training on %d samples at %d×%d for %d steps", len(examples),
             config.height, config.width, run.steps)

    started = time.perf_counter()
    result = train(examples,
                   config,
                   run,
                   checkpoint_path=args.out,
                   trace_path=trace_path,
                   resume=resume,
                   initial_trace=initial_trace)
    elapsed = time.perf_counter() - started
    final = result.trace[-1].loss if result.trace else float("nan")
    print(color("  training done  ", fg="black", bg="green", style="bold"))
    print(f"checkpoint: {args.out}  loss trace: {trace_path}  "
          f"final loss: {final:.5f}  ({elapsed:.1f}s)")


def cmd_rectify(args: argparse.Namespace) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    if args.preset is not None or args.config is not None:
        expected = load_config(args.preset or "toy", args.config)
        validate_params(expected, checkpoint.params)

    if os.path.isdir(args.input):
        inputs = [
            path for path in sorted(os.listdir(args.input))
            if path.lower().endswith(IMAGE_EXTENSIONS)
        ]
        work = [(os.path.join(args.input, name),
                 os.path.join(args.out,
                              os.path.splitext(name)[0] + ".ppm"))
                for name in inputs]
    else:
        work = [(args.input, args.out)]

    for source, destination in work:
        ensure_writable(destination, args.force)
        started = time.perf_counter()
        result = rectify(load_raster(source), checkpoint)
        atomic_write_bytes(destination, encode_ppm(result.image))
        if args.dump_flow:
            stem = os.path.splitext(destination)[0]
            save_flow(f"{stem}.wfl", result.flow)
            atomic_write_bytes(f"{stem}_mask.pgm",
                               encode_mask(result.validity))
        if args.flow_color:
            stem = os.path.splitext(destination)[0]
            atomic_write_bytes(f"{stem}_flow.ppm",
                               encode_ppm(flow_to_color(result.flow)))
        LOG.info("Rectified %s -> %s in %.3fs", source, destination,
                 time.perf_counter() - started)
    LOG.info("Rectified %d file(s)", len(work))


def cmd_eval(args: argparse.Namespace) -> None:
    csv_path, json_path = f"{args.out}.csv", f"{args.out}.json"
    ensure_writable(csv_path, args.force)
    ensure_writable(json_path, args.force)

    dataset = EvalPairDataset(args.pairs, baseline=args.baseline)
    report = evaluate_set(list(dataset),
                          EvalSettings(area=args.area),
                          jobs=args.jobs,
                          skipped=dataset.skipped)
    report.write(csv_path, json_path)

    means = report.means()
    fields = [("MSSIM-M", "mssim_m", "{:.4f}"), ("LD-M", "ld_m", "{:.2f}"),
              ("ED", "ed", "{:.2f}"), ("CER", "cer", "{:.4f}")]
    line = "  ".join(
        f"{label} {fmt.format(means[key]) if means[key] is not None else '-'}"
        for label, key, fmt in fields)
    print(color(line, fg="green", style="bold"))
    if report.skipped:
        print(color(f"skipped {len(report.skipped)} pair(s) without ground "
                    f"truth", fg="orange"))


#
# Helpers and CLI entrypoint.
#


def _parse_size(value: str) -> tuple[int, int]:
    try:
        parts = [int(part) for part in value.lower().split("x")]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(f"Bad size {value!r}") from ex
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(
            f"Size must be N or HxW with positive extents, got {value!r}")
    return parts[0], parts[1]


def _parse_mix(value: str) -> tuple[float, float, float]:
    '''Three non-negative weights (complete, partial, none), normalized.'''
    try:
        parts = [float(part) for part in value.split(",")]
    except ValueError as ex:
        raise argparse.ArgumentTypeError(f"Bad mix {value!r}") from ex
    if len(parts) != 3 or min(parts) < 0 or sum(parts) <= 0:
        raise argparse.ArgumentTypeError(
            f"Mix needs three non-negative weights (complete, partial, "
            f"none) with a positive sum, got {value!r}")
    total = sum(parts)
    return parts[0] / total, parts[1] / total, parts[2] / total


def _parse_args_from_argv(
        argv: t.Sequence[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="unwarp",
        description="Document image rectification: data, training, "
        "inference and evaluation.")
    parser.add_argument("-v",
                        "--verbose",
                        action="store_true",
                        help="Enable verbose logging.")
    parser.add_argument("--precision",
                        choices=["f32", "f64"],
                        default=None,
                        help="Scalar type of the differentiation engine.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen = subparsers.add_parser("gen-data",
                                help="Generate a synthetic training set.")
    gen.set_defaults(handler=cmd_gen_data)
    gen.add_argument("--n", type=int, default=30, help="Number of samples.")
    gen.add_argument("--size",
                     type=_parse_size,
                     default=(64, 64),
                     help="Sample extents, N or HxW.")
    gen.add_argument("--mix",
                     type=_parse_mix,
                     default=DEFAULT_MIX,
                     help="Relative weights of complete, partial and "
                     "boundary-free crops, comma-separated.")
    gen.add_argument("--filters",
                     type=str,
                     default=DEFAULT_SAMPLE_FILTERS,
                     help="Comma-separated sample filters to apply.")
    gen.add_argument("-o", "--out", type=str, required=True,
                     help="Output directory.")
    _add_common(gen, jobs=True)

    trainer = subparsers.add_parser("train", help="Train a model.")
    trainer.set_defaults(handler=cmd_train)
    trainer.add_argument("--data",
                         type=str,
                         default="synthetic",
                         help="Dataset folder, or a name under the data "
                         "folder.")
    trainer.add_argument("-o", "--out", type=str, required=True,
                         help="Checkpoint path.")
    trainer.add_argument("--trace",
                         type=str,
                         default=None,
                         help="Loss trace CSV (default: <out>.loss.csv).")
    trainer.add_argument("--size",
                         type=_parse_size,
                         default=None,
                         help="Network input extents, N or HxW.")
    trainer.add_argument("--steps", type=int, default=500)
    trainer.add_argument("--batch", type=int, default=4)
    trainer.add_argument("--lr-max", type=float, default=1e-4)
    trainer.add_argument("--upsample", choices=["learned", "bilinear"],
                         default=None)
    trainer.add_argument("--query", choices=["learned", "fixed"],
                         default=None)
    trainer.add_argument("--flow", choices=list(FLOW_MODES),
                         default="continuous",
                         help="Ground-truth flow outside the image: kept "
                         "continuous or replaced by a sentinel.")
    trainer.add_argument("--checkpoint-every", type=int, default=0)
    trainer.add_argument("--resume",
                         type=str,
                         default=None,
                         help="Checkpoint to continue training from.")
    _add_model_config(trainer)
    _add_common(trainer)

    rect = subparsers.add_parser("rectify",
                                 help="Rectify an image or a directory.")
    rect.set_defaults(handler=cmd_rectify)
    rect.add_argument("--checkpoint", type=str, required=True)
    rect.add_argument("-i", "--input", type=str, required=True,
                      help="Image file or directory of images.")
    rect.add_argument("-o", "--out", type=str, required=True,
                      help="Output PPM file, or directory in batch mode.")
    rect.add_argument("--dump-flow",
                      action="store_true",
                      help="Also write the flow (.wfl) and validity mask.")
    rect.add_argument("--flow-color",
                      action="store_true",
                      help="Also write a color map of the displacement "
                      "(<out>_flow.ppm) for debugging.")
    rect.add_argument("--preset", choices=sorted(PRESETS), default=None,
                      help="Expected architecture; checked against the "
                      "checkpoint.")
    rect.add_argument("--config", type=str, default=None,
                      help="YAML overrides of the expected architecture.")
    _add_common(rect)

    evaluation = subparsers.add_parser("eval",
                                       help="Evaluate rectification results.")
    evaluation.set_defaults(handler=cmd_eval)
    evaluation.add_argument("--pairs", type=str, required=True,
                            help="Directory of <id>_rec/_gt groups.")
    evaluation.add_argument("-o", "--out", type=str, required=True,
                            help="Report prefix; writes .csv and .json.")
    evaluation.add_argument("--baseline",
                            action="store_true",
                            help="Evaluate the distorted inputs "
                            "(<id>_dist.ppm) instead of the rectified ones.")
    evaluation.add_argument("--area",
                            type=int,
                            default=PROTOCOL_AREA,
                            help="Pixel area both images are resized to "
                            "before scoring.")
    _add_common(evaluation, jobs=True)

    return parser.parse_args(argv)


def _add_model_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=sorted(PRESETS), default="toy")
    parser.add_argument("--config",
                        type=str,
                        default=None,
                        help="YAML file of model config overrides.")


def _add_common(parser: argparse.ArgumentParser, jobs: bool = False) -> None:
    parser.add_argument("--seed",
                        type=int,
                        default=DEFAULT_SEED,
                        help="The seed for the random number generators.")
    parser.add_argument("--force",
                        action="store_true",
                        help="Overwrite existing outputs.")
    if jobs:
        parser.add_argument("--jobs",
                            type=int,
                            default=1,
                            help="Worker processes.")


if __name__ == "__main__":
    sys.exit(main())
