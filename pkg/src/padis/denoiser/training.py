"""Denoising score matching on randomly located, randomly sized patches of padded canvases."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NumericalAbort
from ..grid import make_partition, pad, positional_channels
from .net import NetConfig, PatchDenoiserNet, dsm_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    sigma_min: float = 0.002
    sigma_max: float = 40.0
    # patch side -> selection probability
    patch_sizes: dict = field(default_factory=lambda: {8: 0.3, 16: 0.7})
    batch_size: int = 32
    lr: float = 1e-3
    ema_halflife: float = 5_000.0  # in patches seen
    iterations: int = 5000
    seed: int = 0
    weighting: str = "none"
    divergence_factor: float = 1e3

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("need 0 < sigma_min < sigma_max")
        probs = np.array(list(self.patch_sizes.values()), dtype=np.float64)
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ValueError("patch size probabilities must be non-negative and sum to 1")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")

    def sizes_and_probs(self) -> tuple[np.ndarray, np.ndarray]:
        sizes = np.array([int(s) for s in self.patch_sizes], dtype=np.int64)
        probs = np.array([float(p) for p in self.patch_sizes.values()])
        return sizes, probs / probs.sum()

    def validate_for(self, net_config: NetConfig, canvas_size: int) -> None:
        sizes, _ = self.sizes_and_probs()
        if sizes.min() < net_config.min_patch:
            raise ValueError(f"patch size {sizes.min()} below the network minimum {net_config.min_patch}")
        if sizes.max() > canvas_size:
            raise ValueError(f"patch size {sizes.max()} larger than the {canvas_size}-pixel canvas")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch_sizes"] = {int(k): float(v) for k, v in self.patch_sizes.items()}
        return d


class PatchDataset:
    """Zero-padded training canvases sharing one image size and pad width."""

    def __init__(self, images: np.ndarray, N: int, P: int):
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[:, None]
        if images.shape[-2:] != (N, N):
            raise ValueError(f"images must be {N}x{N}, got {images.shape[-2:]}")
        self.N, self.P = int(N), int(P)
        self.k, self.M = make_partition(N, P)
        self.canvases = np.stack([pad(im, self.M) for im in images])

    @property
    def canvas_size(self) -> int:
        return self.canvases.shape[-1]

    @property
    def channels(self) -> int:
        return self.canvases.shape[1]

    def __len__(self) -> int:
        return len(self.canvases)

    def crop(self, index: int, location: tuple[int, int], size: int) -> np.ndarray:
        r, c = location
        return self.canvases[index, :, r:r + size, c:c + size]


def sample_training_patch(dataset: PatchDataset, config: TrainConfig, rng: np.random.Generator,
                          size: int | None = None):
    """One random patch: ``(patch, positional patch, size)``.

    The location is uniform over all positions that keep the patch inside the
    padded canvas, so patches regularly include zero padding.
    """
    if size is None:
        sizes, probs = config.sizes_and_probs()
        size = int(rng.choice(sizes, p=probs))
    L = dataset.canvas_size
    if size > L:
        raise ValueError(f"patch size {size} larger than canvas {L}")
    index = int(rng.integers(len(dataset)))
    r, c = (int(v) for v in rng.integers(0, L - size + 1, size=2))
    pos = positional_channels(L, [(r, c)], size)[0]
    return dataset.crop(index, (r, c), size).copy(), pos, size


def sample_training_batch(dataset: PatchDataset, config: TrainConfig, rng: np.random.Generator):
    """A batch sharing one patch side drawn from the configured distribution."""
    sizes, probs = config.sizes_and_probs()
    size = int(rng.choice(sizes, p=probs))
    patches, positions = [], []
    for _ in range(config.batch_size):
        patch, pos, _ = sample_training_patch(dataset, config, rng, size=size)
        patches.append(patch)
        positions.append(pos)
    sigma = np.exp(rng.uniform(np.log(config.sigma_min), np.log(config.sigma_max), size=config.batch_size))
    clean = np.stack(patches)
    noise = rng.standard_normal(clean.shape) * sigma[:, None, None, None]
    return clean, np.stack(positions), sigma, noise


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params, self.lr, self.betas, self.eps = params, lr, betas, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.betas
        corr1, corr2 = 1 - b1**self.t, 1 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(p.dtype)


@dataclass
class Checkpoint:
    net_config: NetConfig
    params: list[np.ndarray]
    ema_params: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    def network(self, ema: bool = True, dtype=None) -> PatchDenoiserNet:
        params = [p.copy() for p in (self.ema_params if ema else self.params)]
        net = PatchDenoiserNet(self.net_config, params)
        return net.astype(dtype) if dtype is not None else net


def train(dataset: PatchDataset, config: TrainConfig, net_config: NetConfig | None = None,
          log_path=None, callback=None) -> Checkpoint:
    """Train a patch denoiser with Adam; returns raw and EMA weights.

    Raises :class:`NumericalAbort` on a non-finite loss or when a step's loss
    exceeds ``divergence_factor`` times the first step's loss.
    """
    if net_config is None:
        net_config = NetConfig(channels=dataset.channels)
    if net_config.channels != dataset.channels:
        raise ValueError("network and dataset channel counts differ")
    config.validate_for(net_config, dataset.canvas_size)
    rng = np.random.default_rng(config.seed)
    net = PatchDenoiserNet.init(net_config, rng)
    ema = [p.copy() for p in net.params]
    beta = 0.5 ** (config.batch_size / config.ema_halflife)
    opt = Adam(net.params, config.lr)
    initial = None
    writer = fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "sigma_mean", "wall_ms"])
    try:
        start = time.perf_counter()
        for step in range(1, config.iterations + 1):
            clean, pos, sigma, noise = sample_training_batch(dataset, config, rng)
            try:
                loss, grads = dsm_loss(net, clean.astype(net.dtype), noise.astype(net.dtype), sigma, pos,
                                       weighting=config.weighting)
            except FloatingPointError as exc:
                raise NumericalAbort(f"training step {step}: {exc}") from exc
            if initial is None:
                initial = loss
            elif loss > config.divergence_factor * initial:
                raise NumericalAbort(f"training diverged at step {step}: loss {loss:.4g} > "
                                     f"{config.divergence_factor:g} x initial {initial:.4g}")
            opt.step(grads)
            if not all(np.all(np.isfinite(p)) for p in net.params):
                raise NumericalAbort(f"non-finite parameters after step {step}")
            for e, p in zip(ema, net.params):
                e *= beta
                e += (1 - beta) * p
            if writer is not None:
                writer.writerow([step, f"{loss:.8g}", f"{sigma.mean():.6g}",
                                 f"{(time.perf_counter() - start) * 1e3:.1f}"])
            if callback is not None:
                callback(step, loss)
            if step % 500 == 0:
                log.info("step %d loss %.5g", step, loss)
    finally:
        if fh is not None:
            fh.close()
    meta = {"seed": config.seed, "iterations": config.iterations, "N": dataset.N, "P": dataset.P,
            "train_config": config.to_dict()}
    return Checkpoint(net_config=net_config, params=[p.copy() for p in net.params], ema_params=ema, meta=meta)
