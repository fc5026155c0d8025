"""Command-line entry point: ``padis <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import KINDS, synth_dataset
from .denoiser import save_checkpoint
from .errors import ConfigError, NumericalAbort
from .experiments import ABLATION_AXES, ablate, run_experiment, train_denoiser
from .imageio import read_image
from .metrics import psnr, psnr_for_table, ssim

log = logging.getLogger("padis")

OUT_ENV = "PADIS_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="top-level seed")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./padis_out)")
    p.add_argument("--checkpoint", help="trained denoiser checkpoint")
    p.add_argument("--oracle", action="store_true", help="use the analytic per-pixel Gaussian prior")
    p.add_argument("--threads", type=int, help="BLAS thread count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="padis", description="Patch diffusion priors for inverse problems.")
    sub = parser.add_subparsers(dest="verb", required=True)
    p = sub.add_parser("synth", help="write a synthetic dataset")
    _common(p)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--count", type=int)
    p.add_argument("--size", type=int)
    for verb, text in (("train", "train a patch denoiser"),
                       ("reconstruct", "run reconstructions and write metrics"),
                       ("generate", "draw unconditional samples")):
        _common(sub.add_parser(verb, help=text))
    p = sub.add_parser("ablate", help="sweep one setting and compare")
    _common(p)
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p = sub.add_parser("metrics", help="PSNR/SSIM of images against a reference")
    _common(p)
    p.add_argument("reference")
    p.add_argument("images", nargs="+")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.checkpoint:
        out["checkpoint"] = args.checkpoint
    if args.oracle:
        out["oracle"] = "true"
    return out


def _output_dir(args, cfg: ExperimentConfig) -> Path:
    root = args.out or cfg.out or os.environ.get(OUT_ENV) or "padis_out"
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _thread_limit(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _run(args) -> int:
    if args.verb == "metrics":
        ref = read_image(args.reference)
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["image", "psnr", "ssim"])
        for path in args.images:
            img = read_image(path)
            w.writerow([path, f"{psnr_for_table(psnr(img, ref)):.6f}", f"{ssim(img, ref):.6f}"])
        return EXIT_OK

    overrides = _overrides(args)
    if args.verb == "generate":
        overrides["problem"] = "generate"
    cfg = load_config(args.config, overrides)
    out = _output_dir(args, cfg)

    if args.verb == "synth":
        seed = args.seed if args.seed is not None else cfg.train_seed
        path = synth_dataset(args.kind or cfg.kind, args.count or cfg.train_count, args.size or cfg.N,
                             seed, out, channels=cfg.channels)
        print(path)
    elif args.verb == "train":
        if args.seed is not None:
            cfg = cfg.with_(train_seed_net=args.seed)
        ckpt = train_denoiser(cfg, log_path=out / "train_log.csv")
        save_checkpoint(out / "checkpoint.pdsn", ckpt)
        print(out / "checkpoint.pdsn")
    else:
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
        if args.verb == "ablate":
            ablate(cfg, args.axis, out)
            print(out / "ablation.csv")
        else:
            run_experiment(cfg, out)
            print(out / ("moments.csv" if cfg.problem == "generate" else "metrics.csv"))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(args.threads):
            return _run(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (NumericalAbort, OverflowError, FloatingPointError) as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
