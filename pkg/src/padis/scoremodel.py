"""Denoiser/score contract, Tweedie conversions and analytic oracle priors.

Every model works on batches: ``x`` is ``(B, C, h, w)``, ``pos`` is ``(B, 2, h, w)``
(x-coordinate channel first) or ``None``, and ``sigma`` is a positive float.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .grid import PartitionSpec, coordinate_index


@runtime_checkable
class ScoreModel(Protocol):
    def denoise(self, x: np.ndarray, sigma: float, pos: np.ndarray | None = None) -> np.ndarray: ...

    def vjp(self, x: np.ndarray, sigma: float, pos: np.ndarray | None, v: np.ndarray) -> np.ndarray: ...


def tweedie_score(D: np.ndarray, x: np.ndarray, sigma: float) -> np.ndarray:
    """Score of the noisy marginal from an MMSE denoiser output: ``(D - x) / sigma^2``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if np.shape(D) != np.shape(x):
        raise ValueError(f"shape mismatch {np.shape(D)} vs {np.shape(x)}")
    return (D - x) / sigma**2


def border_denoise(x_border: np.ndarray) -> np.ndarray:
    """The padding frame is identically zero, so its MMSE estimate is zero."""
    return np.zeros_like(x_border)


def border_score(x_border: np.ndarray, sigma: float) -> np.ndarray:
    return tweedie_score(border_denoise(x_border), x_border, sigma)


def vp_to_ve_sigma(alpha_t: float) -> float:
    """Noise level seen by a VE denoiser when fed ``x_t / sqrt(alpha_t)``."""
    if not 0.0 < alpha_t < 1.0:
        raise ValueError(f"alpha_t must lie in (0, 1), got {alpha_t}")
    return float(np.sqrt(1.0 - alpha_t) / np.sqrt(alpha_t))


def eps_to_score(eps: np.ndarray, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return -np.asarray(eps) / sigma


def score_to_eps(score: np.ndarray, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return -sigma * np.asarray(score)


# -- diagonal Gaussian ---------------------------------------------------------

@dataclass(frozen=True)
class GaussianPrior:
    """Independent per-pixel Gaussian ``N(mean, diag(var))``."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.broadcast_to(np.asarray(self.var, dtype=np.float64), mean.shape)
        if not np.all(var > 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    def score(self, x: np.ndarray, sigma: float) -> np.ndarray:
        """Analytic score of the prior convolved with ``N(0, sigma^2 I)``."""
        return -(x - self.mean) / (self.var + sigma**2)

    def denoise_vjp(self, v: np.ndarray, sigma: float) -> np.ndarray:
        return self.var / (self.var + sigma**2) * v

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        shape = self.mean.shape if size is None else (size, *self.mean.shape)
        return self.mean + np.sqrt(self.var) * rng.standard_normal(shape)


def gaussian_oracle_denoise(prior: GaussianPrior, x: np.ndarray, sigma: float) -> np.ndarray:
    """Posterior mean ``mu + var / (var + sigma^2) (x - mu)``."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.array(x, dtype=np.float64, copy=True)
    return prior.mean + prior.var / (prior.var + sigma**2) * (x - prior.mean)


# -- diagonal Gaussian mixture --------------------------------------------------

class GaussianMixture:
    """Mixture of at most 8 diagonal Gaussians over flat vectors of length ``d``."""

    max_components = 8

    def __init__(self, weights, means, variances):
        weights = np.asarray(weights, dtype=np.float64)
        means = np.atleast_2d(np.asarray(means, dtype=np.float64))
        variances = np.broadcast_to(np.asarray(variances, dtype=np.float64), means.shape).copy()
        if means.shape[0] != weights.shape[0]:
            raise ValueError("one weight per component required")
        if not 1 <= len(weights) <= self.max_components:
            raise ValueError(f"1..{self.max_components} components supported")
        if np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0):
            raise ValueError("weights must be positive and sum to 1")
        if np.any(variances <= 0):
            raise ValueError("variances must be positive")
        self.weights, self.means, self.variances = weights, means, variances

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def _parts(self, x: np.ndarray, sigma: float):
        # x: (B, d) -> responsibilities (B, K), per-component scores (B, K, d)
        tot = self.variances + sigma**2
        diff = x[:, None, :] - self.means[None]
        logp = (np.log(self.weights)[None]
                - 0.5 * np.sum(diff**2 / tot + np.log(2 * np.pi * tot), axis=-1))
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        return resp, -diff / tot, tot

    def score(self, x: np.ndarray, sigma: float) -> np.ndarray:
        resp, comp, _ = self._parts(x, sigma)
        return np.einsum("bk,bkd->bd", resp, comp)

    def log_density(self, x: np.ndarray, sigma: float) -> np.ndarray:
        tot = self.variances + sigma**2
        diff = x[:, None, :] - self.means[None]
        logp = (np.log(self.weights)[None]
                - 0.5 * np.sum(diff**2 / tot + np.log(2 * np.pi * tot), axis=-1))
        return logsumexp(logp, axis=1)

    def denoise(self, x: np.ndarray, sigma: float) -> np.ndarray:
        if sigma == 0:
            return x.copy()
        resp, _, tot = self._parts(x, sigma)
        post = self.means[None] + (self.variances / tot)[None] * (x[:, None, :] - self.means[None])
        return np.einsum("bk,bkd->bd", resp, post)

    def denoise_vjp(self, x: np.ndarray, sigma: float, v: np.ndarray) -> np.ndarray:
        resp, comp, tot = self._parts(x, sigma)
        gain = self.variances / tot
        post = self.means[None] + gain[None] * (x[:, None, :] - self.means[None])
        mean_score = np.einsum("bk,bkd->bd", resp, comp)
        # d resp_k / dx = resp_k (s_k - s_bar)
        direct = np.einsum("bk,kd->bd", resp, gain) * v
        proj = np.einsum("bkd,bd->bk", post, v)
        indirect = np.einsum("bk,bkd->bd", resp * proj, comp - mean_score[:, None, :])
        return direct + indirect

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal((size, self.dim))


# -- position-aware oracle models ----------------------------------------------

def decode_positions(pos: np.ndarray, canvas_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Canvas (row, col) index of every pixel from positional channels."""
    if pos is None:
        raise ValueError("oracle models need positional channels to locate the patch")
    cols = coordinate_index(pos[:, 0], canvas_size)
    rows = coordinate_index(pos[:, 1], canvas_size)
    return rows, cols


class PixelGaussianOracle:
    """Exact MMSE denoiser for a padded canvas whose inner image is a diagonal Gaussian.

    Independent pixels make this prior a product over every partition at once, so
    the same object serves as patch model and as whole-canvas model. Pixels outside
    the inner image (the zero padding) are denoised to zero.
    """

    def __init__(self, prior: GaussianPrior, pad: int):
        if prior.mean.ndim != 3 or prior.mean.shape[1] != prior.mean.shape[2]:
            raise ValueError("prior must be over (C, N, N) images")
        self.prior = prior
        self.channels, self.N = prior.mean.shape[0], prior.mean.shape[1]
        self.M = int(pad)
        self.canvas_size = self.N + 2 * self.M

    def _lookup(self, pos: np.ndarray):
        rows, cols = decode_positions(pos, self.canvas_size)
        r, c = rows - self.M, cols - self.M
        inside = (r >= 0) & (r < self.N) & (c >= 0) & (c < self.N)
        rc, cc = np.clip(r, 0, self.N - 1), np.clip(c, 0, self.N - 1)
        mean = np.where(inside[:, None], self.prior.mean[:, rc, cc].transpose(1, 0, 2, 3), 0.0)
        var = np.where(inside[:, None], self.prior.var[:, rc, cc].transpose(1, 0, 2, 3), 0.0)
        return mean, var

    def denoise(self, x, sigma, pos=None):
        mean, var = self._lookup(pos)
        return mean + var / (var + sigma**2) * (x - mean)

    def vjp(self, x, sigma, pos, v):
        _, var = self._lookup(pos)
        return var / (var + sigma**2) * v

    def canvas_prior(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance over the full canvas (zero on the padding)."""
        L, M, N = self.canvas_size, self.M, self.N
        mean = np.zeros((self.channels, L, L))
        var = np.zeros((self.channels, L, L))
        mean[:, M:M + N, M:M + N] = self.prior.mean
        var[:, M:M + N, M:M + N] = self.prior.var
        return mean, var


class PatchProductPrior:
    """Exact product-of-patches distribution aligned to one fixed partition.

    Each of the ``(k+1)^2`` patches carries its own Gaussian mixture over its
    ``C * P * P`` pixels; the border region is identically zero.
    """

    def __init__(self, spec: PartitionSpec, channels: int, factors: list[GaussianMixture]):
        d = channels * spec.P * spec.P
        if len(factors) != spec.n_patches:
            raise ValueError(f"need {spec.n_patches} factors, got {len(factors)}")
        if any(f.dim != d for f in factors):
            raise ValueError(f"every factor must have dimension {d}")
        self.spec, self.channels, self.factors = spec, channels, factors
        self._index = {loc: r for r, loc in enumerate(spec.locations())}

    @classmethod
    def random(cls, spec: PartitionSpec, channels: int, rng: np.random.Generator,
               components: int = 2) -> "PatchProductPrior":
        d = channels * spec.P * spec.P
        factors = []
        for _ in range(spec.n_patches):
            w = rng.uniform(0.5, 1.5, components)
            factors.append(GaussianMixture(w / w.sum(), rng.uniform(0.0, 1.0, (components, d)),
                                           rng.uniform(0.01, 0.1, (components, d))))
        return cls(spec, channels, factors)

    def _flat_indices(self, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        row, col = self.spec.locations()[r]
        cc, rr, kk = np.meshgrid(np.arange(self.channels), np.arange(row, row + self.spec.P),
                                 np.arange(col, col + self.spec.P), indexing="ij")
        return cc.ravel(), rr.ravel(), kk.ravel()

    def canvas_score(self, canvas: np.ndarray, sigma: float) -> np.ndarray:
        """Gradient of the log of the noisy whole-canvas density."""
        out = -canvas / sigma**2  # border: noisy zero
        for r, f in enumerate(self.factors):
            idx = self._flat_indices(r)
            out[idx] = f.score(canvas[idx][None], sigma)[0]
        return out

    def canvas_denoise(self, canvas: np.ndarray, sigma: float) -> np.ndarray:
        out = np.zeros_like(canvas)
        for r, f in enumerate(self.factors):
            idx = self._flat_indices(r)
            out[idx] = f.denoise(canvas[idx][None], sigma)[0]
        return out

    def canvas_log_density(self, canvas: np.ndarray, sigma: float) -> float:
        mask = self.spec.border_mask()
        border = canvas[:, mask]
        total = float(-0.5 * np.sum(border**2) / sigma**2 - 0.5 * border.size * np.log(2 * np.pi * sigma**2))
        for r, f in enumerate(self.factors):
            total += float(f.log_density(canvas[self._flat_indices(r)][None], sigma)[0])
        return total

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        L = self.spec.canvas_size
        canvas = np.zeros((self.channels, L, L))
        for r, f in enumerate(self.factors):
            canvas[self._flat_indices(r)] = f.sample(rng, 1)[0]
        return canvas

    def _factor_for(self, pos: np.ndarray, h: int) -> list[GaussianMixture]:
        rows, cols = decode_positions(pos, self.spec.canvas_size)
        if h != self.spec.P:
            raise ValueError(f"patch side {h} != {self.spec.P}")
        out = []
        for b in range(pos.shape[0]):
            loc = (int(rows[b, 0, 0]), int(cols[b, 0, 0]))
            if loc not in self._index:
                raise ValueError(f"patch at {loc} is not part of the prior's partition")
            out.append(self.factors[self._index[loc]])
        return out

    def patch_model(self) -> "_ProductPatchModel":
        return _ProductPatchModel(self)


class _ProductPatchModel:
    def __init__(self, prior: PatchProductPrior):
        self.prior = prior

    def denoise(self, x, sigma, pos=None):
        out = np.empty_like(x, dtype=np.float64)
        for b, f in enumerate(self.prior._factor_for(pos, x.shape[-1])):
            out[b] = f.denoise(x[b].reshape(1, -1), sigma).reshape(x[b].shape)
        return out

    def vjp(self, x, sigma, pos, v):
        out = np.empty_like(x, dtype=np.float64)
        for b, f in enumerate(self.prior._factor_for(pos, x.shape[-1])):
            out[b] = f.denoise_vjp(x[b].reshape(1, -1), sigma, v[b].reshape(1, -1)).reshape(x[b].shape)
        return out
