"""Fully convolutional patch denoiser ``D(x, sigma, pos)``."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nn import ACTIVATIONS, Conv3x3, Sequential


@dataclass(frozen=True)
class NetConfig:
    channels: int = 1
    width: int = 32
    depth: int = 5
    activation: str = "silu"
    # "edm": D = c_skip x + c_out F(c_in x, ...); "none": D = F(x, ...)
    precond: str = "edm"
    positional: bool = True
    sigma_data: float = 0.5

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 1 <= self.width <= 64:
            raise ValueError("width must lie in [1, 64]")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if self.precond not in ("edm", "none"):
            raise ValueError("precond must be 'edm' or 'none'")

    @property
    def in_channels(self) -> int:
        # image channels + x/y position + noise-level map
        return self.channels + 3

    @property
    def receptive_field(self) -> int:
        return 2 * self.depth + 1

    @property
    def min_patch(self) -> int:
        """Smallest accepted patch side: the receptive-field radius."""
        return self.depth

    def to_dict(self) -> dict:
        return asdict(self)


def _layer_shapes(cfg: NetConfig) -> list[tuple[int, int]]:
    chans = [cfg.in_channels] + [cfg.width] * (cfg.depth - 1) + [cfg.channels]
    return list(zip(chans[:-1], chans[1:]))


class PatchDenoiserNet:
    """Conv stack with positional and log-sigma input channels.

    Parameters live in :attr:`params` (declaration order: ``w0, b0, w1, b1, ...``)
    and are shared with the layers, so in-place updates take effect immediately.
    """

    def __init__(self, config: NetConfig, params: list[np.ndarray]):
        shapes = _layer_shapes(config)
        if len(params) != 2 * len(shapes):
            raise ValueError(f"expected {2 * len(shapes)} parameter arrays, got {len(params)}")
        for (cin, cout), w, b in zip(shapes, params[0::2], params[1::2]):
            if w.shape != (9 * cin, cout) or b.shape != (cout,):
                raise ValueError(f"bad parameter shapes {w.shape}, {b.shape} for layer {cin}->{cout}")
        self.config = config
        self.params = params
        layers = []
        for n, (w, b) in enumerate(zip(params[0::2], params[1::2])):
            layers.append(Conv3x3(w, b))
            if n < len(shapes) - 1:
                layers.append(ACTIVATIONS[config.activation]())
        self.body = Sequential(layers)

    @classmethod
    def init(cls, config: NetConfig, rng: np.random.Generator, dtype=np.float32,
             out_scale: float = 0.1) -> "PatchDenoiserNet":
        params = []
        shapes = _layer_shapes(config)
        for n, (cin, cout) in enumerate(shapes):
            std = np.sqrt(2.0 / (9 * cin))
            if n == len(shapes) - 1:
                std *= out_scale
            params.append((rng.standard_normal((9 * cin, cout)) * std).astype(dtype))
            params.append(np.zeros(cout, dtype=dtype))
        return cls(config, params)

    @classmethod
    def identity(cls, config: NetConfig, dtype=np.float64) -> "PatchDenoiserNet":
        """Exact identity on the image channels (needs ``relu``, ``precond='none'``, width >= 2C)."""
        if config.activation != "relu" or config.precond != "none" or config.width < 2 * config.channels:
            raise ValueError("identity net needs relu, precond='none' and width >= 2 * channels")
        C, center = config.channels, 4  # tap index of (1, 1)
        params = []
        shapes = _layer_shapes(config)
        for n, (cin, cout) in enumerate(shapes):
            w = np.zeros((9 * cin, cout), dtype=dtype)
            for c in range(C):
                if len(shapes) == 1:
                    w[center * cin + c, c] = 1.0
                elif n == 0:  # split into positive and negative parts
                    w[center * cin + c, c] = 1.0
                    w[center * cin + c, C + c] = -1.0
                elif n == len(shapes) - 1:
                    w[center * cin + c, c] = 1.0
                    w[center * cin + C + c, c] = -1.0
                else:
                    w[center * cin + c, c] = 1.0
                    w[center * cin + C + c, C + c] = 1.0
            params += [w, np.zeros(cout, dtype=dtype)]
        return cls(config, params)

    @property
    def dtype(self):
        return self.params[0].dtype

    def astype(self, dtype) -> "PatchDenoiserNet":
        return PatchDenoiserNet(self.config, [p.astype(dtype) for p in self.params])

    def copy(self) -> "PatchDenoiserNet":
        return PatchDenoiserNet(self.config, [p.copy() for p in self.params])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # -- forward / backward ----------------------------------------------------

    def _scalings(self, sigma: np.ndarray):
        sd = self.config.sigma_data
        if self.config.precond == "edm":
            c_skip = sd**2 / (sigma**2 + sd**2)
            c_out = sigma * sd / np.sqrt(sigma**2 + sd**2)
            c_in = 1.0 / np.sqrt(sigma**2 + sd**2)
            c_noise = np.log(sigma) / 4.0
        else:
            c_skip = np.zeros_like(sigma)
            c_out = np.ones_like(sigma)
            c_in = np.ones_like(sigma)
            c_noise = np.log(sigma)
        return c_skip, c_out, c_in, c_noise

    def _check(self, x: np.ndarray, pos: np.ndarray | None):
        if x.ndim != 4 or x.shape[1] != self.config.channels:
            raise ValueError(f"expected (B, {self.config.channels}, h, w) input, got {x.shape}")
        h, w = x.shape[-2:]
        if min(h, w) < self.config.min_patch:
            raise ValueError(f"patch side {min(h, w)} below minimum {self.config.min_patch}")
        if pos is not None and pos.shape != (x.shape[0], 2, h, w):
            raise ValueError(f"positional channels shape {pos.shape} does not match {x.shape}")

    def forward(self, x: np.ndarray, sigma, pos: np.ndarray | None) -> np.ndarray:
        """Denoised output, caching intermediate state for :meth:`backward`.

        ``sigma`` may be a scalar or a per-sample ``(B,)`` array.
        """
        self._check(x, pos)
        dt = self.dtype
        B, C, h, w = x.shape
        sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (B,))
        if np.any(sigma <= 0):
            raise ValueError("sigma must be positive")
        c_skip, c_out, c_in, c_noise = (s.astype(dt)[:, None, None, None] for s in self._scalings(sigma))
        xd = x.astype(dt, copy=False)
        inp = np.empty((B, h, w, C + 3), dtype=dt)
        inp[..., :C] = (c_in * xd).transpose(0, 2, 3, 1)
        if pos is None or not self.config.positional:
            inp[..., C:C + 2] = 0.0
        else:
            inp[..., C:C + 2] = pos.transpose(0, 2, 3, 1)
        inp[..., C + 2] = c_noise[:, 0, 0, 0][:, None, None]
        F = self.body.forward(inp).transpose(0, 3, 1, 2)
        self._cache = (c_skip, c_out, c_in)
        return c_skip * xd + c_out * F

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients for ``sum(grad_out * D)``; return its gradient w.r.t. ``x``."""
        c_skip, c_out, c_in = self._cache
        C = self.config.channels
        gF = (c_out * grad_out).transpose(0, 2, 3, 1)
        ginp = self.body.backward(np.ascontiguousarray(gF)).transpose(0, 3, 1, 2)
        return c_skip * grad_out + c_in * ginp[:, :C]

    def grads(self) -> list[np.ndarray]:
        return self.body.grads()

    # -- ScoreModel contract ---------------------------------------------------

    def denoise(self, x, sigma, pos=None):
        return self.forward(np.asarray(x), sigma, pos)

    def vjp(self, x, sigma, pos, v):
        self.forward(np.asarray(x), sigma, pos)
        return self.backward(np.asarray(v, dtype=self.dtype))


def dsm_loss(net: PatchDenoiserNet, clean: np.ndarray, noise: np.ndarray, sigma: np.ndarray,
             pos: np.ndarray | None, weighting: str = "none") -> tuple[float, list[np.ndarray]]:
    """Denoising score-matching loss ``mean ||D(x + n, sigma) - x||^2`` and its parameter gradients.

    ``noise`` is already scaled by ``sigma`` and touches the image channels only.
    ``weighting="edm"`` multiplies each sample's squared error by ``1 / c_out^2``.
    """
    B = clean.shape[0]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (B,))
    D = net.forward(clean + noise, sigma, pos)
    resid = D - clean.astype(net.dtype)
    if weighting == "edm":
        sd = net.config.sigma_data
        lam = ((sigma**2 + sd**2) / (sigma * sd) ** 2).astype(net.dtype)[:, None, None, None]
    elif weighting == "none":
        lam = np.ones((B, 1, 1, 1), dtype=net.dtype)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    n = resid.size
    loss = float(np.sum(lam * resid.astype(np.float64) ** 2) / n)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite DSM loss {loss}")
    net.backward((2.0 / n) * lam * resid)
    return loss, [g.copy() for g in net.grads()]
