"""Experiment orchestration: operators, priors, reconstruction runs, metric tables, ablations."""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .assemble import Assembler
from .baselines import DEFAULT_TV_LAMBDA, admm_tv, naive_baseline
from .config import ExperimentConfig
from .data import load_dataset, synth_images
from .denoiser import NetConfig, PatchDataset, TrainConfig, load_checkpoint, save_checkpoint, train
from .errors import ConfigError, NumericalAbort
from .grid import make_partition
from .imageio import write_image
from .metrics import psnr, psnr_for_table, ssim
from .operators import CTGeometry, Downsample, LinearOperator, NoPseudoInverse, ParallelBeamCT, UniformBlur, add_noise
from .samplers import SAMPLERS, SamplerConfig, generate
from .scoremodel import GaussianPrior, PixelGaussianOracle

log = logging.getLogger(__name__)

METRICS_HEADER = ["image_id", "method", "psnr", "ssim"]
TRACE_HEADER = ["t", "sigma", "residual", "psnr"]
ABLATION_HEADER = ["axis", "value", "method", "psnr", "ssim", "n_images"]
ABLATION_AXES = ("patch_size", "positional_encoding", "sampler", "dataset_size")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return "nan" if not np.isfinite(value) else f"{value:.6f}"
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def build_operator(cfg: ExperimentConfig) -> LinearOperator | None:
    shape = (cfg.channels, cfg.N, cfg.N)
    kind = cfg.kind_of_problem
    if kind == "ct":
        return ParallelBeamCT(cfg.N, CTGeometry(cfg.views, cfg.detectors))
    if kind == "deblur":
        return UniformBlur(shape, cfg.blur)
    if kind == "sr":
        return Downsample(shape, cfg.sr_factor)
    return None


def evaluation_images(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.dataset is not None:
        images, _ = load_dataset(cfg.dataset)
        images = images[:cfg.test_count]
    else:
        images, _ = synth_images(cfg.kind, cfg.test_count, cfg.N, cfg.test_seed, cfg.channels)
    if images.shape[1:] != (cfg.channels, cfg.N, cfg.N):
        raise ConfigError(f"test images have shape {images.shape[1:]}, config expects "
                          f"{(cfg.channels, cfg.N, cfg.N)}")
    return images


def training_images(cfg: ExperimentConfig, count: int | None = None) -> np.ndarray:
    count = cfg.train_count if count is None else count
    images, _ = synth_images(cfg.kind, count, cfg.N, cfg.train_seed, cfg.channels)
    return images


def oracle_prior(cfg: ExperimentConfig, floor: float = 1e-4) -> PixelGaussianOracle:
    """Per-pixel Gaussian fitted to the training images."""
    imgs = training_images(cfg)
    _, M = make_partition(cfg.N, cfg.P)
    return PixelGaussianOracle(GaussianPrior(imgs.mean(axis=0), np.maximum(imgs.var(axis=0), floor)), M)


def train_denoiser(cfg: ExperimentConfig, log_path=None, images: np.ndarray | None = None):
    images = training_images(cfg) if images is None else images
    dataset = PatchDataset(images, cfg.N, cfg.P)
    tcfg = TrainConfig(iterations=cfg.iterations, batch_size=cfg.batch_size, lr=cfg.lr,
                       ema_halflife=cfg.ema_halflife, patch_sizes=dict(cfg.patch_sizes), seed=cfg.train_seed_net)
    ncfg = NetConfig(channels=cfg.channels, width=cfg.width, depth=cfg.depth, positional=cfg.positional)
    try:
        return train(dataset, tcfg, ncfg, log_path=log_path)
    except ValueError as exc:
        if isinstance(exc, NumericalAbort):
            raise
        raise ConfigError(str(exc)) from exc


def build_assembler(cfg: ExperimentConfig, checkpoint=None):
    """Patch assembler over either the analytic oracle or a trained network."""
    if cfg.oracle:
        model = oracle_prior(cfg)
    else:
        if checkpoint is None:
            if cfg.checkpoint is None:
                raise ConfigError("no checkpoint given; set 'checkpoint' or use the oracle prior")
            checkpoint = load_checkpoint(cfg.checkpoint)
        if checkpoint.net_config.channels != cfg.channels:
            raise ConfigError("checkpoint channel count does not match the config")
        model = checkpoint.network(ema=True)
    return Assembler(model, cfg.N, cfg.P, cfg.channels, cfg.mode)


def sampler_config(cfg: ExperimentConfig, seed: int) -> SamplerConfig:
    return SamplerConfig(sigma_min=cfg.sigma_min, sigma_max=cfg.sigma_max, T=cfg.T, eps=cfg.eps,
                         zeta=cfg.zeta, r=cfg.r, seed=seed, clamp_border=cfg.clamp_border)


def _image_seeds(seed: int, count: int) -> list[tuple[int, int]]:
    """Per-image (measurement noise, sampler) seeds from one top-level seed."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(count):
        a, b = child.generate_state(2)
        out.append((int(a), int(b)))
    return out


def reconstruct_one(method: str, assembler, op: LinearOperator, y, cfg: ExperimentConfig,
                    seed: int, trace=None, truth=None) -> np.ndarray:
    if method in SAMPLERS:
        return SAMPLERS[method](assembler, op, y, sampler_config(cfg, seed), trace=trace, truth=truth)
    if method == "naive":
        return naive_baseline(y, cfg.problem, op)
    if method == "admm_tv":
        lam = cfg.tv_lambda if cfg.tv_lambda is not None else DEFAULT_TV_LAMBDA[cfg.kind_of_problem]
        return admm_tv(y, op, lam, iters=cfg.tv_iters)
    raise ConfigError(f"unknown method {method!r}")


def run_experiment(cfg: ExperimentConfig, out_dir, checkpoint=None) -> list[list]:
    """Reconstruct every test image with every configured method.

    Writes ``metrics.csv`` (per-image rows plus one ``mean`` row per method),
    ``images/<method>_<id>.pgm``, sampler traces and ``errors.log``. A method that
    fails on one image is logged and scored ``nan``; the run continues.
    """
    if cfg.problem == "generate":
        return run_generation(cfg, out_dir, checkpoint)
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)
    op = build_operator(cfg)
    images = evaluation_images(cfg)
    needs_prior = any(m in SAMPLERS for m in cfg.methods)
    assembler = build_assembler(cfg, checkpoint) if needs_prior else None
    ext = "pgm" if cfg.channels == 1 else "ppm"
    rows, errors = [], []
    scores: dict[str, list[tuple[float, float]]] = {m: [] for m in cfg.methods}
    for idx, (truth, (noise_seed, run_seed)) in enumerate(zip(images, _image_seeds(cfg.seed, len(images)))):
        y = add_noise(op.apply(truth), cfg.noise_sigma, np.random.default_rng(noise_seed))
        write_image(out / "images" / f"truth_{idx:03d}.{ext}", truth, bits=16)
        for method in cfg.methods:
            trace = [] if method in SAMPLERS else None
            try:
                x = reconstruct_one(method, assembler, op, y, cfg, run_seed, trace, truth)
            except (NumericalAbort, NoPseudoInverse) as exc:
                errors.append(f"image {idx} method {method}: {exc}")
                log.warning("image %d method %s failed: %s", idx, method, exc)
                rows.append([idx, method, float("nan"), float("nan")])
                continue
            x = np.clip(x, 0.0, 1.0)  # images live in [0, 1]; scores match the written files
            p, s = psnr_for_table(psnr(x, truth)), ssim(x, truth)
            scores[method].append((p, s))
            rows.append([idx, method, p, s])
            write_image(out / "images" / f"{method}_{idx:03d}.{ext}", x, bits=16)
            if trace:
                write_csv(out / "traces" / f"{method}_{idx:03d}.csv", TRACE_HEADER,
                          [[r["t"], r["sigma"], r["residual"], r["psnr"]] for r in trace])
    for method in cfg.methods:
        vals = np.array(scores[method]) if scores[method] else np.full((1, 2), np.nan)
        rows.append(["mean", method, float(vals[:, 0].mean()), float(vals[:, 1].mean())])
    write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    (out / "errors.log").write_text("".join(e + "\n" for e in errors))
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return rows


def run_generation(cfg: ExperimentConfig, out_dir, checkpoint=None) -> list[list]:
    """Unconditional samples plus a pixel-moment report against the training images."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    assembler = build_assembler(cfg, checkpoint)
    samples = []
    for idx, (_, run_seed) in enumerate(_image_seeds(cfg.seed, cfg.test_count)):
        x = generate(assembler, sampler_config(cfg, run_seed))
        samples.append(x)
        ext = "pgm" if cfg.channels == 1 else "ppm"
        write_image(out / "images" / f"sample_{idx:03d}.{ext}", x, bits=16)
    samples = np.array(samples)
    ref = training_images(cfg)
    rows = [
        ["sample", float(samples.mean()), float(samples.var(axis=0).mean())],
        ["reference", float(ref.mean()), float(ref.var(axis=0).mean())],
    ]
    write_csv(out / "moments.csv", ["source", "mean", "pixel_variance"], rows)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    return rows


def _mean_row(rows, method):
    for r in rows:
        if r[0] == "mean" and r[1] == method:
            return r[2], r[3]
    return float("nan"), float("nan")


def ablate(cfg: ExperimentConfig, axis: str, out_dir) -> list[list]:
    """Run one experiment per setting of ``axis``; writes ``ablation.csv``.

    Settings that change the prior (patch size, positional encoding, dataset size)
    train a fresh denoiser with the config's training parameters.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    defaults = {
        "patch_size": ("8", "16", "32", "56"),
        "positional_encoding": ("on", "off"),
        "sampler": ("padis", "langevin", "pc", "ddnm"),
        "dataset_size": ("10", "50", "200"),
    }
    values = cfg.ablate_values or defaults[axis]
    table = []
    for value in values:
        sub = out / f"{axis}_{value}"
        sub.mkdir(exist_ok=True)
        ckpt = None
        if axis == "sampler":
            run_cfg = cfg.with_(sampler=value, methods=(value,))
        elif axis == "patch_size":
            P = int(value)
            run_cfg = cfg.with_(P=P, patch_sizes={P: 1.0}, methods=(cfg.sampler,))
        elif axis == "positional_encoding":
            if value not in ("on", "off"):
                raise ConfigError("positional_encoding values must be 'on' or 'off'")
            run_cfg = cfg.with_(positional=value == "on", methods=(cfg.sampler,))
        else:
            run_cfg = cfg.with_(train_count=int(value), methods=(cfg.sampler,))
        if axis != "sampler" and not cfg.oracle:
            ckpt = train_denoiser(run_cfg, log_path=sub / "train_log.csv")
            save_checkpoint(sub / "checkpoint.pdsn", ckpt)
        rows = run_experiment(run_cfg, sub, checkpoint=ckpt)
        method = run_cfg.methods[0]
        p, s = _mean_row(rows, method)
        table.append([axis, value, method, p, s, sum(1 for r in rows if r[0] != "mean" and r[1] == method)])
    write_csv(out / "ablation.csv", ABLATION_HEADER, table)
    return table
