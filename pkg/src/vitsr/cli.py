"""Command-line surface: one subcommand per pipeline phase plus upscale,
evaluate, and plot utilities.

Exit codes: 0 ok, 2 input validation or data problems, 3 missing
prerequisite (checkpoint), 4 configuration errors.

Dataset arguments accept either a path (directory of rasters, or class
subdirectories for pretrain-vit) or a synthetic spec "phantom:<n>:<size>"
for desk-scale runs without real data.
"""

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import srnet, train
from .checkpoint import require_checkpoint
from .data import degrade, load_labeled, load_slices, normalize, save_image, load_image, synth_phantom
from .errors import (ConfigurationError, DataError, DependencyError, DimensionError,
                     SamplingError, ValidationError)
from .metrics import bicubic_resize, evaluate_pair, write_metrics_csv


# ---------------------------------------------------------------------------
# config assembly: preset < config file < explicit flags

def _build_config(args) -> train.RunConfig:
    config = train.make_config(args.preset)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ValidationError(f"config file does not exist: {path}")
        config = train.apply_settings(config, train.parse_config_file(path))
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ValidationError(f"--seed must be a non-negative integer, got {args.seed}")
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    for flag, key in (("data", "data_path"), ("val", "val_path"), ("test", "test_path"),
                      ("scale", "scale"), ("lambda_vit", "lambda_vit"),
                      ("lambda_str", "lambda_str"), ("lambda_tex", "lambda_tex")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return replace(config, **overrides) if overrides else config


# ---------------------------------------------------------------------------
# dataset resolution

def _phantom_spec(value: str):
    if not value.startswith("phantom:"):
        return None
    parts = value.split(":")
    if len(parts) != 3:
        raise ValidationError(
            f"synthetic spec must look like phantom:<n>:<size>, got {value!r}")
    try:
        n, size = int(parts[1]), int(parts[2])
    except ValueError:
        raise ValidationError(
            f"synthetic spec must look like phantom:<n>:<size>, got {value!r}") from None
    if n < 1:
        raise ValidationError(f"synthetic spec needs n >= 1, got {value!r}")
    return n, size


def _resolve_images(value: str, flag: str, seed: int) -> list:
    if not value:
        raise ValidationError(f"missing dataset path: pass {flag}")
    spec = _phantom_spec(value)
    if spec:
        n, size = spec
        return [synth_phantom(seed + i, size) for i in range(n)]
    return [normalize(s) for s in load_slices(value).slices]


def _resolve_labeled(value: str, flag: str, seed: int, classes: int) -> list:
    """(image, label) tuples for the pretext phase."""
    if not value:
        raise ValidationError(f"missing dataset path: pass {flag}")
    spec = _phantom_spec(value)
    if spec:
        n, size = spec
        return [(synth_phantom(seed + c * n + i, size, family=c), c)
                for c in range(classes) for i in range(n)]
    sets = load_labeled(value)
    if len(sets) != classes:
        raise ConfigurationError(
            f"{flag} has {len(sets)} class subdirectories but the pretext head "
            f"is sized for vit_classes={classes}")
    return [(normalize(img), label)
            for label, ss in enumerate(sets) for img in ss.slices]


def _train_datasets(config: train.RunConfig, labeled: bool) -> dict:
    resolve = _resolve_labeled if labeled else _resolve_images
    extra = (config.vit_classes,) if labeled else ()
    datasets = {"train": resolve(config.data_path, "--data", config.seed, *extra)}
    if config.val_path:
        datasets["val"] = resolve(config.val_path, "--val", config.seed + 7000, *extra)
    if config.test_path:
        datasets["test"] = resolve(config.test_path, "--test", config.seed + 9000, *extra)
    return datasets


# ---------------------------------------------------------------------------
# checkpoint-backed generator

def _config_from_snapshot(out: Path) -> train.RunConfig:
    path = out / train.CONFIG_SNAPSHOT_NAME
    if not path.exists():
        raise DependencyError(
            f"no run snapshot at {path}; run train-sr into this directory first")
    return train.apply_settings(train.make_config("desk"), train.parse_config_file(path))


def _load_generator(out: Path):
    config = _config_from_snapshot(out)
    generator = srnet.Generator(config.gen_config(), np.random.default_rng(0))
    generator.load_state(require_checkpoint(out / train.CKPT_SR_GEN,
                                            "super-resolution generator"))
    generator.freeze()
    return generator, config


# ---------------------------------------------------------------------------
# subcommands

def _cmd_train(args, phase: str) -> int:
    config = _build_config(args)
    datasets = _train_datasets(config, labeled=(phase == "pretext"))
    record = train.run_phase(phase, config, datasets)
    out = Path(config.out_dir)
    print(f"{phase}: {len(record.epochs)} epochs, "
          f"final train loss {record.final_train_loss:.6f}")
    print(f"wrote {out / f'loss_{phase}.csv'}")
    return 0


def _cmd_upscale(args) -> int:
    m = args.scale
    if m < 2 or m & (m - 1):
        raise ConfigurationError(f"upscale factor must be a power-of-two >= 2, got {m}")
    out = Path(args.out if args.out is not None else "runs")
    generator, config = _load_generator(out)
    if config.scale != m:
        raise ConfigurationError(
            f"checkpoint in {out} was trained for {config.scale}x, requested {m}x")
    image = normalize(load_image(args.input))
    sr = srnet.sr_generate(image, generator).values
    save_image(args.output, np.clip(sr, 0.0, 1.0))
    print(f"upscaled {image.shape[0]}x{image.shape[1]} -> "
          f"{sr.shape[0]}x{sr.shape[1]} ({m}x)")
    print(f"wrote {args.output}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _build_config(args)
    images = _resolve_images(config.data_path, "--data", config.seed)
    m = config.scale
    if args.method == "checkpoint":
        generator, ck_config = _load_generator(Path(config.out_dir))
        if ck_config.scale != m:
            raise ConfigurationError(
                f"checkpoint in {config.out_dir} was trained for {ck_config.scale}x, "
                f"requested {m}x")
        recover = lambda lr: srnet.sr_generate(lr, generator).values
    elif args.method == "bicubic":
        recover = lambda lr: bicubic_resize(lr, m)
    else:  # identity: score the reference against itself (metric sanity floor)
        recover = None
    records, baseline = [], {"bicubic_psnr_db": [], "bicubic_ssim": [], "bicubic_nmse": []}
    for i, hr in enumerate(images):
        lr = degrade(hr, m)
        test = hr if recover is None else recover(lr)
        records.append(evaluate_pair(hr, test, m, pair_id=str(i)))
        if args.baseline:
            ref = evaluate_pair(hr, bicubic_resize(lr, m), m)
            baseline["bicubic_psnr_db"].append(ref.psnr_db)
            baseline["bicubic_ssim"].append(ref.ssim)
            baseline["bicubic_nmse"].append(ref.nmse)
    out_csv = Path(args.output) if args.output else Path(config.out_dir) / "metrics.csv"
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(records, out_csv,
                      extra_columns=baseline if args.baseline else None)
    mean_psnr = sum(r.psnr_db for r in records) / len(records)
    mean_ssim = sum(r.ssim for r in records) / len(records)
    mean_nmse = sum(r.nmse for r in records) / len(records)
    print(f"{args.method} on {len(records)} images at {m}x: "
          f"psnr {mean_psnr:.4f} dB, ssim {mean_ssim:.6f}, nmse {mean_nmse:.6f}")
    print(f"wrote {out_csv}")
    return 0


def _cmd_plot(args) -> int:
    try:
        import matplotlib
    except ImportError:
        raise DependencyError("matplotlib is required for plotting") from None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(args.csv)
    if not path.exists():
        raise ValidationError(f"CSV file does not exist: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path} holds no data rows")
    columns = list(rows[0].keys())
    rows = [r for r in rows if r[columns[0]] != "mean"]

    def numeric(name):
        try:
            return [float(r[name]) for r in rows]
        except ValueError:
            return None

    x = numeric(columns[0])
    x_label = columns[0]
    if x is None:
        x, x_label = list(range(len(rows))), "index"
    fig, ax = plt.subplots(figsize=(7, 4.5))
    plotted = 0
    for name in columns[1:]:
        series = numeric(name)
        if series is not None and all(np.isfinite(series)):
            ax.plot(x, series, marker=".", label=name)
            plotted += 1
    if not plotted:
        raise DataError(f"{path} has no finite numeric columns to plot")
    ax.set_xlabel(x_label)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    output = args.output or str(path.with_suffix(".png"))
    fig.savefig(output, dpi=120)
    plt.close(fig)
    print(f"wrote {output}")
    return 0


# ---------------------------------------------------------------------------
# parser

def _make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--seed", type=int, default=None, help="RNG seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--preset", choices=sorted(train.PRESETS), default="desk",
                        help="baseline hyperparameter set")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", default=None,
                      help="training images: path or phantom:<n>:<size>")
    data.add_argument("--val", default=None, help="validation images")
    data.add_argument("--test", default=None, help="test images")

    parser = argparse.ArgumentParser(prog="vitsr",
                                     description="MR super-resolution pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain-vit", parents=[common, data],
                   help="finetune the transformer on the organ pretext task")
    sub.add_parser("train-disentangle", parents=[common, data],
                   help="train the structure/texture autoencoder")
    p_sr = sub.add_parser("train-sr", parents=[common, data],
                          help="train the super-resolution GAN")
    p_sr.add_argument("--scale", type=int, default=None, help="upscale factor")
    p_sr.add_argument("--lambda-vit", dest="lambda_vit", type=float, default=None)
    p_sr.add_argument("--lambda-str", dest="lambda_str", type=float, default=None)
    p_sr.add_argument("--lambda-tex", dest="lambda_tex", type=float, default=None)
    p_up = sub.add_parser("upscale", parents=[common],
                          help="upscale one image with a trained generator")
    p_up.add_argument("--input", required=True, help="LR image file")
    p_up.add_argument("--output", required=True, help="HR image file to write")
    p_up.add_argument("--scale", type=int, required=True, help="upscale factor")
    p_ev = sub.add_parser("evaluate", parents=[common, data],
                          help="score a method against HR references")
    p_ev.add_argument("--scale", type=int, default=None, help="upscale factor")
    p_ev.add_argument("--method", choices=("identity", "bicubic", "checkpoint"),
                      default="bicubic")
    p_ev.add_argument("--baseline", action="store_true",
                      help="add bicubic reference columns")
    p_ev.add_argument("--output", default=None, help="metrics CSV path")
    p_pl = sub.add_parser("plot", parents=[common],
                          help="render a loss or metrics CSV to a PNG")
    p_pl.add_argument("--csv", required=True, help="CSV file to plot")
    p_pl.add_argument("--output", default=None, help="PNG path (default: CSV stem)")
    return parser


_PHASE_BY_COMMAND = {"pretrain-vit": "pretext", "train-disentangle": "disentangle",
                     "train-sr": "sr"}


def main(argv=None) -> int:
    args = _make_parser().parse_args(argv)
    try:
        if args.command in _PHASE_BY_COMMAND:
            return _cmd_train(args, _PHASE_BY_COMMAND[args.command])
        if args.command == "upscale":
            return _cmd_upscale(args)
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        return _cmd_plot(args)
    except (ValidationError, DataError, DimensionError, SamplingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def entrypoint():
    sys.exit(main())
