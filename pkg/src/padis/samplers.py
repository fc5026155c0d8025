"""Noise schedules and the reconstruction loops.

All loops run on the full padded canvas and return its central ``N x N`` crop.
They reach the prior exclusively through an assembler (``plan``, ``denoise``,
``score``, ``denoise_vjp``), so a patch-based and a whole-canvas prior are
interchangeable. Forward operators act on the cropped image only.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import NumericalAbort
from .grid import crop
from .metrics import psnr
from .operators import LinearOperator, NoPseudoInverse, ddnm_project

RESIDUAL_FLOOR = 1e-8


@dataclass(frozen=True)
class NoiseSchedule:
    sigmas: np.ndarray  # ascending, sigma_1 < ... < sigma_T

    @property
    def T(self) -> int:
        return len(self.sigmas)

    def descending(self):
        """``(t, sigma_t)`` pairs from ``t = T`` down to ``1`` (1-based ``t``)."""
        for t in range(self.T, 0, -1):
            yield t, float(self.sigmas[t - 1])


def make_schedule(sigma_min: float, sigma_max: float, T: int) -> NoiseSchedule:
    """Geometric levels ``sigma_t = sigma_min (sigma_max / sigma_min)^((t-1)/(T-1))``."""
    if not 0 < sigma_min < sigma_max:
        raise ValueError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if T < 2:
        raise ValueError("a schedule needs T >= 2 levels")
    sigmas = sigma_min * (sigma_max / sigma_min) ** (np.arange(T) / (T - 1))
    sigmas[0], sigmas[-1] = sigma_min, sigma_max
    return NoiseSchedule(sigmas)


@dataclass(frozen=True)
class SamplerConfig:
    sigma_min: float = 0.002
    sigma_max: float = 10.0
    T: int = 200
    eps: float = 1.0
    zeta: float = 0.3
    r: float = 0.16
    seed: int = 0
    clamp_border: bool = False
    # corrector step: "snr" = 2 (r |z| / |s|)^2, "literal" = 2 r |z| / |s|
    pc_step: str = "snr"

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be non-negative")
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.pc_step not in ("snr", "literal"):
            raise ValueError("pc_step must be 'snr' or 'literal'")

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.sigma_min, self.sigma_max, self.T)

    def with_(self, **kw) -> "SamplerConfig":
        return replace(self, **kw)


class _Run:
    """Shared state handling for one sampler run."""

    def __init__(self, assembler, op: LinearOperator | None, y, cfg: SamplerConfig, trace, truth):
        self.asm, self.op, self.cfg = assembler, op, cfg
        self.y = None if y is None else np.asarray(y, dtype=np.float64)
        self.N, self.M = assembler.N, assembler.M
        self.rng = np.random.default_rng(cfg.seed)
        self.trace, self.truth = trace, truth
        self.x = cfg.schedule().sigmas[-1] * self.rng.standard_normal(assembler.canvas_shape)

    def inner(self, canvas):
        return crop(canvas, self.N, self.M)

    def lift(self, image):
        out = np.zeros(self.asm.canvas_shape)
        out[:, self.M:self.M + self.N, self.M:self.M + self.N] = image
        return out

    def residual(self, canvas):
        r = self.y - self.op.apply(self.inner(canvas))
        return r, max(float(np.linalg.norm(r)), RESIDUAL_FLOOR)

    def data_step(self):
        """``x <- x + zeta_i A^T (y - A x)`` with ``zeta_i = zeta / ||y - A x||``."""
        if self.op is None or self.cfg.zeta == 0:
            return
        r, nr = self.residual(self.x)
        self.x = self.x + (self.cfg.zeta / nr) * self.lift(self.op.adjoint(r))

    def finish_step(self, t, sigma, residual=None):
        if self.cfg.clamp_border:
            inner = self.inner(self.x).copy()
            self.x = self.lift(inner)
        if not np.all(np.isfinite(self.x)):
            raise NumericalAbort(f"non-finite sampler state at iteration t={t}, sigma={sigma:.4g}")
        if self.trace is not None:
            row = {"t": t, "sigma": sigma, "residual": residual, "psnr": None}
            if self.truth is not None:
                row["psnr"] = psnr(self.inner(self.x), self.truth)
            self.trace.append(row)


TraceList = list | None


def padis_reconstruct(assembler, op: LinearOperator | None, y, cfg: SamplerConfig,
                      trace: TraceList = None, truth=None) -> np.ndarray:
    """Patch-diffusion posterior sampling with a DPS data-consistency gradient.

    Each iteration draws one partition (via the assembler plan), computes the
    denoised canvas ``D`` and score, steps down the gradient of
    ``||y - A(D(x))||^2`` with step ``zeta / ||y - A(D(x))||``, then takes the
    Langevin move ``x + (alpha/2) s + sqrt(alpha) z`` with ``alpha = eps sigma^2``.
    """
    run = _Run(assembler, op, y, cfg, trace, truth)
    for t, sigma in cfg.schedule().descending():
        z = run.rng.standard_normal(run.x.shape)
        alpha = cfg.eps * sigma**2
        plan = assembler.plan(run.rng)
        D = assembler.denoise(run.x, sigma, plan)
        s = (D - run.x) / sigma**2
        res = None
        if op is not None and cfg.zeta > 0:
            r, res = run.residual(D)
            # grad ||y - A D(x)||^2 = -2 J_D^T A^T r
            g = assembler.denoise_vjp(run.x, sigma, plan, run.lift(op.adjoint(r)))
            run.x = run.x + (cfg.zeta / res) * 2.0 * g
        run.x = run.x + 0.5 * alpha * s + np.sqrt(alpha) * z
        run.finish_step(t, sigma, res)
    return run.inner(run.x).copy()


def generate(assembler, cfg: SamplerConfig, trace: TraceList = None) -> np.ndarray:
    """Unconditional sample: the PaDIS loop without data consistency."""
    return padis_reconstruct(assembler, None, None, cfg.with_(zeta=0.0), trace=trace)


def langevin_reconstruct(assembler, op: LinearOperator, y, cfg: SamplerConfig,
                         trace: TraceList = None, truth=None) -> np.ndarray:
    """Annealed Langevin dynamics with a gradient data step before each prior move."""
    run = _Run(assembler, op, y, cfg, trace, truth)
    for t, sigma in cfg.schedule().descending():
        z = run.rng.standard_normal(run.x.shape)
        alpha = cfg.eps * sigma**2
        plan = assembler.plan(run.rng)
        s = assembler.score(run.x, sigma, plan)
        run.data_step()
        run.x = run.x + 0.5 * alpha * s + np.sqrt(alpha) * z
        run.finish_step(t, sigma, run.residual(run.x)[1] if op is not None else None)
    return run.inner(run.x).copy()


def pc_reconstruct(assembler, op: LinearOperator | None, y, cfg: SamplerConfig,
                   trace: TraceList = None, truth=None) -> np.ndarray:
    """Reverse-diffusion predictor plus one Langevin corrector per level.

    The predictor moves from ``sigma_{i+1}`` to ``sigma_i``, so the loop runs over
    the ``T - 1`` transitions of the schedule. A data step follows the predictor
    and another follows the corrector. The corrector is skipped when the score
    vanishes.
    """
    run = _Run(assembler, op, y, cfg, trace, truth)
    sig = cfg.schedule().sigmas
    for t in range(cfg.T - 1, 0, -1):
        hi, lo = float(sig[t]), float(sig[t - 1])
        step = hi**2 - lo**2
        s_hi = assembler.score(run.x, hi, assembler.plan(run.rng))
        run.x = run.x + step * s_hi
        run.data_step()
        run.x = run.x + np.sqrt(step) * run.rng.standard_normal(run.x.shape)
        z = run.rng.standard_normal(run.x.shape)
        s = assembler.score(run.x, lo, assembler.plan(run.rng))
        s_norm = float(np.linalg.norm(s))
        if s_norm > 0:
            ratio = float(np.linalg.norm(z)) / s_norm
            eps_i = 2.0 * (cfg.r * ratio) ** 2 if cfg.pc_step == "snr" else 2.0 * cfg.r * ratio
            run.x = run.x + eps_i * s + np.sqrt(2.0 * eps_i) * z
        run.data_step()
        run.finish_step(t, lo, run.residual(run.x)[1] if op is not None else None)
    return run.inner(run.x).copy()


def ddnm_reconstruct(assembler, op: LinearOperator, y, cfg: SamplerConfig,
                     trace: TraceList = None, truth=None) -> np.ndarray:
    """Langevin sampling where each denoised estimate has its range space replaced by ``A^+ y``."""
    if not op.has_pinv:
        raise NoPseudoInverse(f"{type(op).__name__} has no pseudo-inverse; DDNM cannot be used")
    run = _Run(assembler, op, y, cfg, trace, truth)
    for t, sigma in cfg.schedule().descending():
        z = run.rng.standard_normal(run.x.shape)
        alpha = cfg.eps * sigma**2
        D = assembler.denoise(run.x, sigma, assembler.plan(run.rng))
        D[:, run.M:run.M + run.N, run.M:run.M + run.N] = ddnm_project(run.inner(D), run.y, op)
        s = (D - run.x) / sigma**2
        run.x = run.x + 0.5 * alpha * s + np.sqrt(alpha) * z
        run.finish_step(t, sigma, run.residual(D)[1])
    return run.inner(run.x).copy()


SAMPLERS: dict[str, Callable] = {
    "padis": padis_reconstruct,
    "langevin": langevin_reconstruct,
    "pc": pc_reconstruct,
    "ddnm": ddnm_reconstruct,
}
