"""Command-line entry point.

Subcommands: extract-lbp, gen-mask, train, inpaint, evaluate, gradcheck.
Exit codes: 0 success, 1 runtime/numeric failure, 2 usage, 3 unreadable or
unusable file, 4 configuration violation. Failures print one line of the
form ``error: <category>: <message>`` to stderr.
"""

import argparse
import os
import sys


from .attention import AttentionConfig
from .checks import GRAD_TOLERANCE, format_suite, gradient_suite
from .config import (
    ConfigError,
    default_config,
    parse_bucket,
    parse_config,
    serialize_config,
    to_train_config,
)
from .lbp import GrayImage, extract_lbp
from .masking import centering_mask, irregular_mask, missing_ratio
from .metrics import MetricReport, l1_percent, psnr, ssim
from .networks import load_checkpoint
from .pngio import FileError, read_gray, read_image, read_mask, read_rgb, write_image, write_mask
from .tensor import DimensionError, NonFiniteError
from .training import (
    folder_stream,
    inpaint_image,
    repeat_first,
    synthetic_stream,
    trace_to_csv,
    train_joint_stage,
    train_lbp_stage,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_CONFIG = 4


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--config", default=None, help="path to a key = value config file")
    common.add_argument(
        "--deterministic", action="store_true", default=None,
        help="pin data order for bitwise-reproducible runs",
    )

    parser = argparse.ArgumentParser(
        prog="lbpinpaint",
        description="Two-stage structure-guided image inpainting, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-lbp", parents=[common], help="image PNG -> LBP code PNG")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("gen-mask", parents=[common], help="generate a mask PNG")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--centering", type=int, metavar="SIDE")
    kind.add_argument("--irregular", metavar="LO-HI", help="missing-ratio bucket, e.g. 20-30")
    p.add_argument("output")

    p = sub.add_parser("train", parents=[common], help="run both training stages")
    p.add_argument("--out-dir", default="run")

    p = sub.add_parser("inpaint", parents=[common], help="fill the hole of one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="metrics of output vs ground truth")
    p.add_argument("--output", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--hole-only", action="store_true", help="restrict l1/psnr to the hole")
    p.add_argument("--report", default=None, help="write a CSV report here")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--skip-end-to-end", action="store_true")
    return parser


def _load_config(args):
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise FileError(f"cannot read {args.config}: {e}") from e
        values = parse_config(text)
    else:
        values = default_config()
    if args.seed is not None:
        values["seed"] = args.seed
    if args.deterministic is not None:
        values["deterministic"] = args.deterministic
    return values


def _attention_from(values):
    return AttentionConfig(
        top_count=values["attention_top_count"],
        similarity_eps=values["attention_eps"],
        include_intra=values["attention_include_intra"],
    )


def cmd_extract_lbp(args):
    gray = read_gray(args.input)
    codes = extract_lbp(GrayImage(gray)).codes
    write_image(args.output, codes)
    return EXIT_OK


def cmd_gen_mask(args):
    seed = args.seed if args.seed is not None else 0
    if args.centering is not None:
        mask = centering_mask(args.height, args.width, args.centering)
    else:
        bucket = parse_bucket(args.irregular)
        mask = irregular_mask(args.height, args.width, seed, bucket)
    write_mask(args.output, mask)
    frac, bucket = missing_ratio(mask)
    label = f"{bucket.lower:g}-{bucket.upper:g}%" if bucket else "other"
    print(f"missing {100 * frac:.2f}% ({label})")
    return EXIT_OK


def _make_stream(values, cfg):
    side = values["mask_side"] if values["mask_side"] > 0 else None
    bucket = parse_bucket(values["mask_bucket"]) if values["mask_mode"] == "irregular" else None
    if values["data_dir"]:
        stream = folder_stream(
            values["data_dir"], cfg.image_size, cfg.seed,
            mask_mode=values["mask_mode"], hole_side=side, bucket=bucket,
        )
    else:
        stream = synthetic_stream(
            cfg.image_size, cfg.seed,
            mask_mode=values["mask_mode"], hole_side=side, bucket=bucket,
        )
    if values["overfit_single"]:
        stream = repeat_first(stream)
    return stream


def cmd_train(args):
    values = _load_config(args)
    cfg = to_train_config(values)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(values))

    stream = _make_stream(values, cfg)
    g1, d1, trace1 = train_lbp_stage(stream, cfg, out_dir=args.out_dir)
    with open(os.path.join(args.out_dir, "stage1_trace.csv"), "w", encoding="utf-8") as fh:
        fh.write(trace_to_csv(trace1))

    stream2 = _make_stream(values, cfg)
    g1, g2, d2, trace2 = train_joint_stage(stream2, g1, cfg, out_dir=args.out_dir)
    with open(os.path.join(args.out_dir, "stage2_trace.csv"), "w", encoding="utf-8") as fh:
        fh.write(trace_to_csv(trace2))
    print(f"trained: checkpoints and traces in {args.out_dir}")
    return EXIT_OK


def cmd_inpaint(args):
    values = _load_config(args)
    try:
        models = load_checkpoint(args.checkpoint)
    except OSError as e:
        raise FileError(f"cannot read {args.checkpoint}: {e}") from e
    except ValueError as e:
        raise FileError(f"unusable checkpoint {args.checkpoint}: {e}") from e
    for name in ("g1", "g2"):
        if name not in models:
            raise FileError(f"checkpoint {args.checkpoint} has no model {name!r}")
    image = read_rgb(args.image)
    mask = read_mask(args.mask)
    if mask.bits.shape != image.shape[:2]:
        raise ConfigError(
            f"mask {mask.bits.shape} does not match image {image.shape[:2]}"
        )
    out = inpaint_image(models["g1"], models["g2"], image, mask, _attention_from(values))
    write_image(args.out, out)
    return EXIT_OK


def cmd_evaluate(args):
    out_img = read_image(args.output)
    gt_img = read_image(args.truth)
    region = None
    if args.hole_only:
        if args.mask is None:
            raise ConfigError("--hole-only needs --mask")
        region = read_mask(args.mask).bits == 0
    report = MetricReport(
        l1_percent=l1_percent(out_img, gt_img, region=region),
        psnr_db=psnr(out_img, gt_img, region=region),
        ssim=ssim(out_img, gt_img),
    )
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(MetricReport.csv_header() + "\n" + report.csv_row() + "\n")
    print(report.table())
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradient_suite(include_end_to_end=not args.skip_end_to_end)
    print(format_suite(results))
    return EXIT_OK if all(err < GRAD_TOLERANCE for _, err in results) else EXIT_RUNTIME


HANDLERS = {
    "extract-lbp": cmd_extract_lbp,
    "gen-mask": cmd_gen_mask,
    "train": cmd_train,
    "inpaint": cmd_inpaint,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except FileError as e:
        print(f"error: file: {e}", file=sys.stderr)
        return EXIT_FILE
    except ConfigError as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DimensionError, ValueError) as e:
        print(f"error: config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as e:
        print(f"error: numeric: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
