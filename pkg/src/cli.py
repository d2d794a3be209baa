"""Command-line entry point: ``ted-net <subcommand> [flags]``"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from src.config import PRESETS, build_configs, configure_logging, get_settings, load_config_file
from src.exceptions import (
    ConfigError,
    FormatError,
    GeometryError,
    NonFiniteError,
    RangeError,
    ShapeError,
    TapeError,
    TrainingDivergedError,
)
from src.models.image_volume import PhantomSpec
from src.models.model_config import ModelConfig
from src.models.train_config import TrainConfig
from src.services.metrics import evaluate_volumes
from src.services.param_store import load_params, save_params
from src.services.phantom_generator import generate_phantoms
from src.services.tednet_model import plan_shapes
from src.services.tiling import denoise_volume
from src.services.training import pairs_from_volumes, train
from src.services.volume_store import load_volume, save_volume
from src.validation.gradcheck import run_suite

logger = logging.getLogger("ted-net")

HANDLED_ERRORS = (
    ConfigError,
    FormatError,
    GeometryError,
    NonFiniteError,
    RangeError,
    ShapeError,
    TapeError,
    TrainingDivergedError,
    ValueError,
    OSError,
)


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value file with model and training fields")
    common.add_argument("--seed", type=_non_negative, default=None, help="seed for every random draw")
    common.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help="base configuration (default: paper for shape-check, else TEDNET_PRESET or desk)")
    common.add_argument("--log-level", default=None, help="logging level (default: TEDNET_LOG_LEVEL or INFO)")

    parser = argparse.ArgumentParser(prog="ted-net", description="Convolution-free transformer denoiser")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    gen = sub.add_parser("gen-data", parents=[common], help="write synthetic clean/noisy phantom volumes")
    gen.add_argument("--out", type=Path, required=True, help="directory receiving clean.tdv and noisy.tdv")
    gen.add_argument("--count", type=int, default=8)
    gen.add_argument("--side", type=int, default=None, help="image side (default: 2 x patch side)")
    gen.add_argument("--noise-sigma", type=float, default=0.05)
    gen.add_argument("--signal-noise", type=float, default=0.0)

    tr = sub.add_parser("train", parents=[common], help="train on a clean/noisy volume pair")
    tr.add_argument("--in", dest="input", type=Path, required=True, help="directory with clean.tdv and noisy.tdv")
    tr.add_argument("--out", type=Path, required=True, help="parameter file to write")
    tr.add_argument("--log", type=Path, default=None, help="per-epoch loss log")

    den = sub.add_parser("denoise", parents=[common], help="tile-denoise every image of a volume")
    den.add_argument("--in", dest="input", type=Path, required=True)
    den.add_argument("--out", type=Path, required=True)
    den.add_argument("--params", type=Path, required=True)
    den.add_argument("--workers", type=int, default=None)

    ev = sub.add_parser("eval", parents=[common], help="SSIM and RMSE of a volume against a reference")
    ev.add_argument("--in", dest="input", type=Path, required=True)
    ev.add_argument("--reference", type=Path, required=True)
    ev.add_argument("--out", type=Path, default=None, help="write the JSON report here as well")
    ev.add_argument("--data-range", type=float, default=None)

    sub.add_parser("shape-check", parents=[common], help="print the stage shape plan")

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every primitive")
    gc.add_argument("--only", nargs="*", default=None, help="case names to check")
    return parser


def _configs(args: argparse.Namespace, default_preset: str) -> Tuple[ModelConfig, TrainConfig]:
    overrides = load_config_file(args.config) if args.config else {}
    return build_configs(args.preset or default_preset, overrides, seed=args.seed)


def _gen_data(args, model_cfg: ModelConfig, train_cfg: TrainConfig) -> int:
    spec = PhantomSpec(
        side=args.side or 2 * model_cfg.patch_side,
        count=args.count,
        noise_sigma=args.noise_sigma,
        signal_noise=args.signal_noise,
        patch_side=model_cfg.patch_side,
        seed=train_cfg.seed,
    )
    clean, noisy = generate_phantoms(spec)
    save_volume(args.out / "clean.tdv", clean)
    save_volume(args.out / "noisy.tdv", noisy)
    print(f"wrote {spec.count} phantom pairs of {spec.side}x{spec.side} to {args.out}")
    return 0


def _train(args, model_cfg: ModelConfig, train_cfg: TrainConfig) -> int:
    clean = load_volume(args.input / "clean.tdv")
    noisy = load_volume(args.input / "noisy.tdv")
    result = train(pairs_from_volumes(noisy, clean), model_cfg, train_cfg, log_path=args.log)
    save_params(args.out, result.params)
    losses = result.history.losses
    print(f"trained {result.steps} steps: loss {losses[0]:.6e} -> {losses[-1]:.6e}")
    return 0


def _denoise(args, model_cfg: ModelConfig, workers: Optional[int]) -> int:
    params = load_params(args.params, model_cfg)
    volume = load_volume(args.input)
    save_volume(args.out, denoise_volume(volume, params, model_cfg, args.workers or workers))
    print(f"denoised {volume.count} images to {args.out}")
    return 0


def _eval(args) -> int:
    report = evaluate_volumes(load_volume(args.input), load_volume(args.reference), args.data_range)
    text = json.dumps(report.model_dump(), indent=2)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    print(text)
    return 0


def _gradcheck(args) -> int:
    results = run_suite(seed=args.seed or 0, names=args.only)
    for result in results:
        status = "ok" if result.passed else "FAILED"
        print(f"{result.name:<28} {result.max_error:.3e} {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"error: gradient check failed for {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        settings = get_settings()
        configure_logging(args.log_level or settings.log_level)
        default_preset = "paper" if args.command == "shape-check" else settings.preset
        model_cfg, train_cfg = _configs(args, default_preset)
        logger.info("%s started", args.command)
        if args.command == "gen-data":
            code = _gen_data(args, model_cfg, train_cfg)
        elif args.command == "train":
            code = _train(args, model_cfg, train_cfg)
        elif args.command == "denoise":
            code = _denoise(args, model_cfg, settings.workers)
        elif args.command == "eval":
            code = _eval(args)
        elif args.command == "shape-check":
            print(plan_shapes(model_cfg).table())
            code = 0
        else:
            code = _gradcheck(args)
    except HANDLED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logger.info("%s finished with exit code %d", args.command, code)
    return code


def run(argv: Optional[List[str]] = None) -> None:
    sys.exit(main(argv))
