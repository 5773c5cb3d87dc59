"""depth-splat command line: synthesize scenes, train, render, evaluate, check gradients and run ablations.

    depth-splat synth --seed 0 --out scene/
    depth-splat train --data scene/ --out run/ --no-soft
    depth-splat render --ckpt run/checkpoint.npz --camera camera.json --out view.png --depth view.pfm
    depth-splat eval --ckpt run/checkpoint.npz --data scene/ --report report.json
    depth-splat gradcheck --seed 0 --size 24 --prims 12
    depth-splat ablate --experiment regularization --seeds 5 --out ablation.csv

Exit codes: 0 success, 1 failed gradient check, 2 invalid input, 3 non-finite training loss.
"""

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from depth_splat.autodiff.gradcheck import finite_diff_check, weighted_sum_loss
from depth_splat.color.model import make_color_model
from depth_splat.dataset.files import load_dataset, save_dataset
from depth_splat.dataset.synth import SceneSpec, load_scene_spec, synth_scene
from depth_splat.errors import DatasetFormatError, NonFiniteLossError, ValidationError
from depth_splat.evaluate import evaluate, render_view
from depth_splat.experiments import (
    COLOR_VARIANTS,
    FREEZING_VARIANTS,
    NORMALIZATION_VARIANTS,
    REGULARIZATION_VARIANTS,
    SCALE_FREE_VARIANTS,
    compare_variants,
    run_ablation,
)
from depth_splat.export import export
from depth_splat.field.camera import Camera, look_at
from depth_splat.field.primitives import ColorMode, GaussianField
from depth_splat.render.rasterizer import COLOR, DEPTH, SOFT_DEPTH, RasterSettings, hard_depth
from depth_splat.train.checkpoint import load_checkpoint, save_checkpoint
from depth_splat.train.config import ABLATION_FLAGS, TrainConfig, config_to_dict, load_config, with_ablations
from depth_splat.train.trainer import fit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_GRADCHECK_FAILED = 1
EXIT_VALIDATION_ERROR = 2
EXIT_NON_FINITE_LOSS = 3

CHECKPOINT_FILENAME = "checkpoint.npz"
FIELD_FILENAME = "field.ply"
METRICS_FILENAME = "metrics.csv"
CONFIG_FILENAME = "config.json"
GROUND_TRUTH_FILENAME = "ground_truth.ply"

# experiment name -> (variants, candidate compared against every other variant, metrics compared)
EXPERIMENTS = {
    "regularization": (REGULARIZATION_VARIANTS, "full", ["psnr", "depth_mae"]),
    "normalization": (NORMALIZATION_VARIANTS, "global_and_local", ["depth_mae"]),
    "freezing": (FREEZING_VARIANTS, "shape_freeze", ["psnr"]),
    "scale_free": (SCALE_FREE_VARIANTS, "corrupted_depth", ["depth_mae"]),
    "color": (COLOR_VARIANTS, "neural", ["psnr", "ssim"]),
}


def _synth(args):
    spec = load_scene_spec(args.spec) if args.spec else SceneSpec()
    dataset, ground_truth = synth_scene(spec, args.seed)
    save_dataset(dataset, args.out)
    export(ground_truth, Path(args.out) / GROUND_TRUTH_FILENAME)
    print(
        f"Wrote {spec.kind} scene (seed {args.seed}) with {len(dataset.train)} train and {len(dataset.test)} test "
        f"views to {args.out}"
    )
    return EXIT_OK


def _with_iters(config, iters):
    if iters is None:
        return config
    return dataclasses.replace(config, total_iters=iters, soft_start_iter=min(config.soft_start_iter, iters))


def _train_config(args):
    config = load_config(args.config) if args.config else TrainConfig()
    if args.color_mode:
        config = dataclasses.replace(config, color_mode=str(ColorMode.parse(args.color_mode)))
    config = _with_iters(config, args.iters)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return with_ablations(config, **{flag: getattr(args, flag) for flag in ABLATION_FLAGS})


def _train(args):
    config = _train_config(args)
    if args.print_config:
        print(json.dumps(config_to_dict(config), indent=2, sort_keys=True))
        return EXIT_OK
    if not (args.data and args.out):
        raise ValidationError("train needs --data and --out (or --print-config)")

    dataset = load_dataset(args.data, require_mono_depth=config.uses_depth)
    result = fit(config, dataset, progress=not args.quiet)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / CHECKPOINT_FILENAME, result.state, config)
    export(result.field, out / FIELD_FILENAME, color_model=result.color_model)
    result.log.to_csv(out / METRICS_FILENAME)
    (out / CONFIG_FILENAME).write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True))

    final = result.log.iloc[-1]
    print(
        f"Trained {len(result.field)} primitives for {config.total_iters} iterations: "
        f"PSNR {final['psnr']:.2f} dB, SSIM {final['ssim']:.4f}, depth MAE {final['depth_mae']:.4f}"
    )
    print(f"Wrote {CHECKPOINT_FILENAME}, {FIELD_FILENAME}, {METRICS_FILENAME} and {CONFIG_FILENAME} to {out}")
    return EXIT_OK


def _read_camera(path):
    try:
        camera_dict = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DatasetFormatError(f"Camera file {path} does not exist")
    except json.JSONDecodeError as error:
        raise DatasetFormatError(f"Camera file {path} is not valid JSON: {error}")
    try:
        return Camera.from_dict(camera_dict)
    except (KeyError, TypeError) as error:
        raise DatasetFormatError(f"Camera file {path} is missing or has a malformed entry: {error}")


def _render(args):
    state, config = load_checkpoint(args.ckpt)
    camera = _read_camera(args.camera)
    image, depth = render_view(state.field, camera, state.color_model, RasterSettings(workers=config.workers))
    export(image, args.out, format="png")
    if args.depth:
        export(depth, args.depth, format="pfm")
    print(f"Rendered {len(state.field)} primitives at {camera.width}x{camera.height} to {args.out}")
    return EXIT_OK


def _eval(args):
    state, config = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    split = "test" if dataset.test else "train"
    table = evaluate(state.field, dataset, state.color_model, RasterSettings(workers=config.workers), split=split)
    table.to_json(args.report, orient="index")
    print(f"Evaluation on {split} views:")
    print(table.to_string(float_format="{:.4f}".format))
    return EXIT_OK


def gradcheck_scene(seed, size, primitives):
    """A small random double-precision field in front of a look-at camera, for gradient checks"""
    rng = np.random.default_rng(seed)
    color_mode = ColorMode(kind="sh", sh_degree=1)
    field = GaussianField(
        centers=rng.uniform(-1, 1, size=(primitives, 3)),
        log_scales=np.log(rng.uniform(0.1, 0.3, size=(primitives, 3))),
        rotations=rng.normal(size=(primitives, 4)),
        opacity_logits=rng.normal(0, 1.5, size=primitives),
        color_params=rng.normal(0, 0.3, size=(primitives, color_mode.feature_dim)),
        color_mode=color_mode,
    )
    focal = size * 0.8
    camera = look_at([0.3, -0.2, -4.0], [0, 0, 0], [0, -1, 0], fx=focal, fy=focal, width=size, height=size)
    return field, camera, rng


def _gradcheck(args):
    if args.size < 1 or args.prims < 1:
        raise ValidationError(f"--size and --prims must be >= 1, got {args.size} and {args.prims}")
    field, camera, rng = gradcheck_scene(args.seed, args.size, args.prims)
    color_model = make_color_model(field.color_mode)
    passed = True
    for kind in (COLOR, DEPTH, hard_depth(), SOFT_DEPTH):
        loss = weighted_sum_loss(rng.normal(size=(args.size, args.size, kind.channels)))
        report = finite_diff_check(field, camera, kind, loss, color_model=color_model)
        kind_passed = report.passed(args.rtol)
        passed = passed and kind_passed
        print(f"{kind.name}: {'ok' if kind_passed else 'FAILED'}")
        print(report.to_frame().to_string())
    return EXIT_OK if passed else EXIT_GRADCHECK_FAILED


def _ablate(args):
    variants, candidate, metrics = EXPERIMENTS[args.experiment]
    config = load_config(args.config) if args.config else TrainConfig()
    config = _with_iters(config, args.iters)
    spec = load_scene_spec(args.spec) if args.spec else SceneSpec()

    results = run_ablation(variants, range(args.seeds), config, spec)
    if args.out:
        results.to_csv(args.out, index=False)
    print(results.to_string(index=False, float_format="{:.4f}".format))
    baselines = [variant.name for variant in variants if variant.name != candidate]
    for baseline in baselines:
        for metric in metrics:
            _, wins = compare_variants(results, candidate, baseline, metric)
            print(f"{candidate} beats {baseline} on {metric} in {wins}/{args.seeds} seeds")
    return EXIT_OK


def _add_train_arguments(parser):
    parser.add_argument("--data", help="dataset directory")
    parser.add_argument("--config", help="JSON file of TrainConfig overrides")
    parser.add_argument("--out", help="output directory for the checkpoint, PLY, metric log and config")
    parser.add_argument("--color-mode", help='"sh:<degree>" or "neural"')
    parser.add_argument("--iters", type=int, help="override total_iters")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    parser.add_argument("--quiet", action="store_true", help="hide the progress bar")
    for flag, field_name in ABLATION_FLAGS.items():
        parser.add_argument(
            "--" + flag.replace("_", "-"), dest=flag, action="store_true", help=f"set {field_name} to false"
        )


def build_parser():
    parser = argparse.ArgumentParser(prog="depth-splat", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    subparsers = parser.add_subparsers(dest="command")
    subparsers.required = True

    synth = subparsers.add_parser("synth", help="render a synthetic sparse-view dataset")
    synth.add_argument("--spec", help="JSON file of SceneSpec overrides")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="dataset directory to write")
    synth.set_defaults(handler=_synth)

    train = subparsers.add_parser("train", help="optimize a field on a dataset")
    _add_train_arguments(train)
    train.set_defaults(handler=_train)

    render = subparsers.add_parser("render", help="render a checkpoint from a camera")
    render.add_argument("--ckpt", required=True)
    render.add_argument("--camera", required=True, help="JSON camera, as in a dataset's cameras.json")
    render.add_argument("--out", required=True, help="PNG to write")
    render.add_argument("--depth", help="Optional PFM to write the expected depth to")
    render.set_defaults(handler=_render)

    evaluate_parser = subparsers.add_parser("eval", help="held-out metrics of a checkpoint")
    evaluate_parser.add_argument("--ckpt", required=True)
    evaluate_parser.add_argument("--data", required=True)
    evaluate_parser.add_argument("--report", required=True, help="JSON report to write")
    evaluate_parser.set_defaults(handler=_eval)

    gradcheck = subparsers.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--size", type=int, default=24, help="image edge length, pixels")
    gradcheck.add_argument("--prims", type=int, default=12)
    gradcheck.add_argument("--rtol", type=float, default=1e-4)
    gradcheck.set_defaults(handler=_gradcheck)

    ablate = subparsers.add_parser("ablate", help="paired ablation runs on synthetic scenes")
    ablate.add_argument("--experiment", choices=sorted(EXPERIMENTS), required=True)
    ablate.add_argument("--seeds", type=int, default=5)
    ablate.add_argument("--config", help="JSON file of TrainConfig overrides")
    ablate.add_argument("--iters", type=int, help="override total_iters")
    ablate.add_argument("--spec", help="JSON file of SceneSpec overrides")
    ablate.add_argument("--out", help="CSV of per-seed results")
    ablate.set_defaults(handler=_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    try:
        return args.handler(args)
    except ValidationError as error:
        logger.error("%s", error)
        return EXIT_VALIDATION_ERROR
    except NonFiniteLossError as error:
        logger.error("%s", error)
        for key, value in error.diagnostics.items():
            logger.error("  %s: %s", key, value)
        return EXIT_NON_FINITE_LOSS


if __name__ == "__main__":
    sys.exit(main())
