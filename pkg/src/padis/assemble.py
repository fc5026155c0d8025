"""Whole-canvas denoised estimates and scores built from patch-level model calls.

Assembly modes:

``padis_stochastic``
    one partition ``(i, j)`` drawn uniformly per call (the sampler default);
``padis_full_average``
    the ``1/M^2``-normalized average over every partition;
``overlap_average`` / ``overlap_stitch``
    a fixed overlapping patch grid over the inner image, blended by averaging or
    by letting the last patch in raster order win.

Samplers only ever talk to an :class:`Assembler`; a :class:`WholeCanvasAssembler`
feeds the full canvas to a model instead, with no sampler changes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    PartitionSpec,
    all_partitions,
    extract_patch_array,
    make_partition,
    positional_channels,
    scatter_patch_array,
)
from .scoremodel import ScoreModel, border_score, tweedie_score

MODES = ("padis_stochastic", "padis_full_average", "overlap_average", "overlap_stitch")


def _call(model: ScoreModel, patches: np.ndarray, sigma: float, pos: np.ndarray) -> np.ndarray:
    out = np.asarray(model.denoise(patches, sigma, pos))
    if out.shape != patches.shape:
        raise ValueError(f"model returned shape {out.shape} for input {patches.shape}")
    return out


def _partition_pos(spec: PartitionSpec) -> np.ndarray:
    return positional_channels(spec.canvas_size, spec.locations(), spec.P)


def assembled_denoise(canvas: np.ndarray, sigma: float, model: ScoreModel, spec: PartitionSpec) -> np.ndarray:
    """Per-patch denoised outputs at their locations; the border denoises to zero."""
    patches = extract_patch_array(canvas, spec)
    D = _call(model, patches, sigma, _partition_pos(spec))
    return scatter_patch_array(D.astype(np.float64, copy=False), spec,
                               out=np.zeros(canvas.shape, dtype=np.float64))


def assembled_score(canvas: np.ndarray, sigma: float, model: ScoreModel, spec: PartitionSpec) -> np.ndarray:
    """Patch Tweedie scores scattered to their locations plus the border score ``-x_B / sigma^2``."""
    patches = extract_patch_array(canvas, spec)
    D = _call(model, patches, sigma, _partition_pos(spec)).astype(np.float64, copy=False)
    score = np.zeros(canvas.shape, dtype=np.float64)
    scatter_patch_array(tweedie_score(D, patches, sigma), spec, out=score)
    mask = spec.border_mask()
    score[:, mask] = border_score(canvas[:, mask], sigma)
    return score


def assembled_denoise_vjp(canvas: np.ndarray, sigma: float, model: ScoreModel, spec: PartitionSpec,
                          v: np.ndarray) -> np.ndarray:
    """``v^T dD/dx`` for the assembled denoiser; block-diagonal over patches, zero on the border."""
    patches = extract_patch_array(canvas, spec)
    vp = extract_patch_array(v, spec)
    g = np.asarray(model.vjp(patches, sigma, _partition_pos(spec), vp), dtype=np.float64)
    return scatter_patch_array(g, spec, out=np.zeros(canvas.shape, dtype=np.float64))


def draw_partition(N: int, P: int, rng: np.random.Generator) -> PartitionSpec:
    k, M = make_partition(N, P)
    i, j = rng.integers(1, M + 1, size=2)
    return PartitionSpec(i=int(i), j=int(j), P=P, k=k, N=N)


def stochastic_partition_score(canvas: np.ndarray, sigma: float, model: ScoreModel, N: int, P: int,
                               rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int]]:
    spec = draw_partition(N, P, rng)
    return assembled_score(canvas, sigma, model, spec), (spec.i, spec.j)


def full_average_denoise(canvas, sigma, model, N, P):
    specs = list(all_partitions(N, P))
    total = np.zeros(canvas.shape, dtype=np.float64)
    for spec in specs:
        total += assembled_denoise(canvas, sigma, model, spec)
    return total / len(specs)


def full_average_score(canvas, sigma, model, N, P):
    """Partition-averaged score, ``(1/M^2) sum_{i,j} (s_B + sum_r s_r)``."""
    specs = list(all_partitions(N, P))
    total = np.zeros(canvas.shape, dtype=np.float64)
    for spec in specs:
        total += assembled_score(canvas, sigma, model, spec)
    return total / len(specs)


def full_average_denoise_vjp(canvas, sigma, model, N, P, v):
    specs = list(all_partitions(N, P))
    total = np.zeros(canvas.shape, dtype=np.float64)
    for spec in specs:
        total += assembled_denoise_vjp(canvas, sigma, model, spec, v)
    return total / len(specs)


# -- fixed overlapping grids ----------------------------------------------------

@dataclass(frozen=True)
class OverlapGrid:
    """Square patches with a fixed overlap, tiling ``[origin, origin + size)`` in both axes.

    Offsets step by ``P - overlap`` until the region is covered; the last patch may
    run past the region (and the canvas), where the input is read as zero.
    """

    origin: int
    size: int
    P: int
    overlap: int
    canvas_size: int

    def __post_init__(self):
        if not 0 <= self.overlap < self.P:
            raise ValueError(f"overlap must satisfy 0 <= overlap < P, got {self.overlap}")
        if self.origin < 0 or self.origin + self.size > self.canvas_size:
            raise ValueError("grid region does not fit the canvas")

    @property
    def stride(self) -> int:
        return self.P - self.overlap

    def offsets(self) -> list[int]:
        n = max(1, -(-(self.size - self.overlap) // self.stride))
        return [self.origin + a * self.stride for a in range(n)]

    def locations(self) -> list[tuple[int, int]]:
        offs = self.offsets()
        return [(r, c) for r in offs for c in offs]

    def coverage(self) -> np.ndarray:
        """Number of patches covering each canvas pixel (zero outside the region)."""
        L, P = self.canvas_size, self.P
        count = np.zeros((L, L), dtype=np.int64)
        for r, c in self.locations():
            count[r:min(r + P, L), c:min(c + P, L)] += 1
        return count * self.region_mask()

    def region_mask(self) -> np.ndarray:
        mask = np.zeros((self.canvas_size, self.canvas_size), dtype=bool)
        mask[self.origin:self.origin + self.size, self.origin:self.origin + self.size] = True
        return mask

    def weights(self, mode: str) -> np.ndarray:
        """Per-patch output weights ``(n_patches, P, P)`` in raster order."""
        locs = self.locations()
        P = self.P
        region = _extend(self.region_mask()[None].astype(np.float64), self)[0]
        w = np.zeros((len(locs), P, P))
        if mode == "overlap_average":
            cov = _extend(self.coverage()[None].astype(np.float64), self)[0]
            inv = np.divide(region, cov, out=np.zeros_like(cov), where=cov > 0)
            for n, (r, c) in enumerate(locs):
                w[n] = inv[r:r + P, c:c + P]
        elif mode == "overlap_stitch":
            owner = np.full(region.shape, -1, dtype=np.int64)
            for n, (r, c) in enumerate(locs):
                owner[r:r + P, c:c + P] = n
            for n, (r, c) in enumerate(locs):
                w[n] = (owner[r:r + P, c:c + P] == n) * region[r:r + P, c:c + P]
        else:
            raise ValueError(f"unknown overlap mode {mode!r}")
        return w


def _extent(grid: OverlapGrid) -> int:
    return max(grid.canvas_size, grid.offsets()[-1] + grid.P)


def _extend(canvas: np.ndarray, grid: OverlapGrid) -> np.ndarray:
    E = _extent(grid)
    out = np.zeros((canvas.shape[0], E, E), dtype=canvas.dtype)
    L = canvas.shape[-1]
    out[:, :L, :L] = canvas
    return out


def _gather(canvas: np.ndarray, grid: OverlapGrid) -> np.ndarray:
    ext = _extend(canvas, grid)
    P = grid.P
    return np.stack([ext[:, r:r + P, c:c + P] for r, c in grid.locations()])


def _spread(patches: np.ndarray, grid: OverlapGrid, channels: int) -> np.ndarray:
    E, L, P = _extent(grid), grid.canvas_size, grid.P
    out = np.zeros((channels, E, E))
    for p, (r, c) in zip(patches, grid.locations()):
        out[:, r:r + P, c:c + P] += p
    return out[:, :L, :L]


def overlap_denoise(canvas: np.ndarray, sigma: float, model: ScoreModel, grid: OverlapGrid, mode: str) -> np.ndarray:
    patches = _gather(canvas, grid)
    pos = positional_channels(grid.canvas_size, grid.locations(), grid.P)
    D = _call(model, patches, sigma, pos).astype(np.float64, copy=False)
    return _spread(D * grid.weights(mode)[:, None], grid, canvas.shape[0])


def overlap_average_denoise(canvas, sigma, model, grid):
    return overlap_denoise(canvas, sigma, model, grid, "overlap_average")


def overlap_stitch_denoise(canvas, sigma, model, grid):
    return overlap_denoise(canvas, sigma, model, grid, "overlap_stitch")


def overlap_denoise_vjp(canvas, sigma, model, grid, mode, v):
    patches = _gather(canvas, grid)
    pos = positional_channels(grid.canvas_size, grid.locations(), grid.P)
    vp = _gather(v, grid) * grid.weights(mode)[:, None]
    g = np.asarray(model.vjp(patches, sigma, pos, vp), dtype=np.float64)
    return _spread(g, grid, canvas.shape[0])


# -- sampler-facing interface ---------------------------------------------------

class Assembler:
    """Binds a patch model, canvas geometry and an assembly mode.

    ``plan(rng)`` fixes whatever randomness one iteration needs (the partition in
    stochastic mode); ``denoise``/``score``/``denoise_vjp`` then reuse that plan so
    the score and the data-consistency gradient see the same partition.
    """

    def __init__(self, model: ScoreModel, N: int, P: int, channels: int = 1,
                 mode: str = "padis_stochastic", overlap: int = 8):
        if mode not in MODES:
            raise ValueError(f"unknown assembler mode {mode!r}; expected one of {MODES}")
        self.model, self.N, self.P, self.channels, self.mode = model, int(N), int(P), int(channels), mode
        self.k, self.M = make_partition(self.N, self.P)
        self.canvas_size = self.N + 2 * self.M
        self.grid = None
        if mode.startswith("overlap"):
            self.grid = OverlapGrid(origin=self.M, size=self.N, P=self.P, overlap=overlap,
                                    canvas_size=self.canvas_size)

    @property
    def canvas_shape(self) -> tuple[int, int, int]:
        return self.channels, self.canvas_size, self.canvas_size

    def plan(self, rng: np.random.Generator):
        if self.mode == "padis_stochastic":
            return draw_partition(self.N, self.P, rng)
        return None

    def _spec(self, plan):
        if plan is None:
            raise ValueError("stochastic mode requires a plan from Assembler.plan()")
        return plan

    def denoise(self, canvas, sigma, plan=None):
        if self.mode == "padis_stochastic":
            return assembled_denoise(canvas, sigma, self.model, self._spec(plan))
        if self.mode == "padis_full_average":
            return full_average_denoise(canvas, sigma, self.model, self.N, self.P)
        return overlap_denoise(canvas, sigma, self.model, self.grid, self.mode)

    def score(self, canvas, sigma, plan=None):
        return tweedie_score(self.denoise(canvas, sigma, plan), canvas, sigma)

    def denoise_vjp(self, canvas, sigma, plan, v):
        if self.mode == "padis_stochastic":
            return assembled_denoise_vjp(canvas, sigma, self.model, self._spec(plan), v)
        if self.mode == "padis_full_average":
            return full_average_denoise_vjp(canvas, sigma, self.model, self.N, self.P, v)
        return overlap_denoise_vjp(canvas, sigma, self.model, self.grid, self.mode, v)


class WholeCanvasAssembler:
    """Feeds the entire canvas (with its full positional grid) to one model call."""

    mode = "whole"

    def __init__(self, model: ScoreModel, N: int, M: int, channels: int = 1):
        self.model, self.N, self.M, self.channels = model, int(N), int(M), int(channels)
        self.canvas_size = self.N + 2 * self.M
        self._pos = positional_channels(self.canvas_size, [(0, 0)], self.canvas_size)

    @property
    def canvas_shape(self) -> tuple[int, int, int]:
        return self.channels, self.canvas_size, self.canvas_size

    def plan(self, rng):
        return None

    def denoise(self, canvas, sigma, plan=None):
        return _call(self.model, canvas[None], sigma, self._pos)[0].astype(np.float64, copy=False)

    def score(self, canvas, sigma, plan=None):
        return tweedie_score(self.denoise(canvas, sigma), canvas, sigma)

    def denoise_vjp(self, canvas, sigma, plan, v):
        return np.asarray(self.model.vjp(canvas[None], sigma, self._pos, v[None])[0], dtype=np.float64)
