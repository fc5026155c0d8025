"""Zero-padded canvas geometry: partitions, patch extraction/scatter, positional arrays.

Images and canvases are ``(C, H, W)`` float arrays. Partition offsets ``i, j`` are
1-based; every array index used internally is 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np


def make_partition(N: int, P: int) -> tuple[int, int]:
    """Return ``(k, M)`` for an ``N x N`` image tiled by ``P x P`` patches.

    ``k = floor(N / P)`` and the zero-pad width is ``M = (k + 1) P - N``. When ``P``
    divides ``N`` this gives ``M = P``, which is accepted as is.
    """
    N, P = int(N), int(P)
    if P < 1 or P >= N:
        raise ValueError(f"patch size must satisfy 1 <= P < N, got P={P}, N={N}")
    k = N // P
    return k, (k + 1) * P - N


@dataclass(frozen=True)
class PartitionSpec:
    """One non-overlapping tiling of the padded canvas, selected by offsets ``(i, j)``."""

    i: int
    j: int
    P: int
    k: int
    N: int

    def __post_init__(self):
        k, M = make_partition(self.N, self.P)
        if k != self.k:
            raise ValueError(f"k={self.k} inconsistent with N={self.N}, P={self.P}")
        if not (1 <= self.i <= M and 1 <= self.j <= M):
            raise ValueError(f"offsets (i, j)=({self.i}, {self.j}) outside [1, {M}]")

    @classmethod
    def create(cls, N: int, P: int, i: int = 1, j: int = 1) -> "PartitionSpec":
        k, _ = make_partition(N, P)
        return cls(i=int(i), j=int(j), P=int(P), k=k, N=int(N))

    @property
    def M(self) -> int:
        return (self.k + 1) * self.P - self.N

    @property
    def canvas_size(self) -> int:
        return self.N + 2 * self.M

    @property
    def side(self) -> int:
        """Side of the square covered by the patches, ``(k + 1) P``."""
        return (self.k + 1) * self.P

    @property
    def origin(self) -> tuple[int, int]:
        return self.i - 1, self.j - 1

    @property
    def n_patches(self) -> int:
        return (self.k + 1) ** 2

    def locations(self) -> list[tuple[int, int]]:
        """Top-left canvas index of every patch, row-major over the patch grid."""
        r0, c0 = self.origin
        steps = range(self.k + 1)
        return [(r0 + a * self.P, c0 + b * self.P) for a in steps for b in steps]

    def patch_mask(self) -> np.ndarray:
        """Boolean ``(L, L)`` mask of pixels covered by some patch."""
        L = self.canvas_size
        mask = np.zeros((L, L), dtype=bool)
        r0, c0 = self.origin
        mask[r0:r0 + self.side, c0:c0 + self.side] = True
        return mask

    def border_mask(self) -> np.ndarray:
        return ~self.patch_mask()


def all_partitions(N: int, P: int) -> Iterator[PartitionSpec]:
    k, M = make_partition(N, P)
    for i in range(1, M + 1):
        for j in range(1, M + 1):
            yield PartitionSpec(i=i, j=j, P=P, k=k, N=N)


def as_chw(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        return image[None]
    if image.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W) image, got shape {image.shape}")
    return image


def pad(image: np.ndarray, M: int) -> np.ndarray:
    """Zero-pad an ``(C, N, N)`` image by ``M`` pixels on every side."""
    image = as_chw(image)
    return np.pad(image, ((0, 0), (M, M), (M, M)))


def crop(canvas: np.ndarray, N: int, M: int) -> np.ndarray:
    """Central ``N x N`` region of a padded canvas."""
    return canvas[..., M:M + N, M:M + N]


def embed(image: np.ndarray, M: int, canvas: np.ndarray | None = None) -> np.ndarray:
    """Write ``image`` into the center of ``canvas`` (a zero canvas if none is given)."""
    image = as_chw(image)
    N = image.shape[-1]
    if canvas is None:
        return pad(image, M)
    out = canvas.copy()
    out[..., M:M + N, M:M + N] = image
    return out


def _check_canvas(canvas: np.ndarray, spec: PartitionSpec) -> None:
    L = spec.canvas_size
    if canvas.ndim != 3 or canvas.shape[1:] != (L, L):
        raise ValueError(f"canvas shape {canvas.shape} does not match spec (C, {L}, {L})")


def extract_patch_array(canvas: np.ndarray, spec: PartitionSpec) -> np.ndarray:
    """All patches as one ``((k+1)^2, C, P, P)`` array, row-major order."""
    _check_canvas(canvas, spec)
    C = canvas.shape[0]
    r0, c0 = spec.origin
    n, P = spec.k + 1, spec.P
    square = canvas[:, r0:r0 + spec.side, c0:c0 + spec.side]
    # (C, n, P, n, P) -> (n, n, C, P, P)
    blocks = square.reshape(C, n, P, n, P).transpose(1, 3, 0, 2, 4)
    return blocks.reshape(n * n, C, P, P).copy()


def extract_patches(canvas: np.ndarray, spec: PartitionSpec) -> list[tuple[np.ndarray, tuple[int, int]]]:
    patches = extract_patch_array(canvas, spec)
    return list(zip(patches, spec.locations()))


def scatter_patch_array(patches: np.ndarray, spec: PartitionSpec, out: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`extract_patch_array`; pixels outside the patches are left as in ``out`` (zero by default)."""
    n, P = spec.k + 1, spec.P
    if patches.shape[0] != n * n or patches.shape[-2:] != (P, P):
        raise ValueError(f"expected {n * n} patches of side {P}, got {patches.shape}")
    C = patches.shape[1]
    L = spec.canvas_size
    if out is None:
        out = np.zeros((C, L, L), dtype=patches.dtype)
    r0, c0 = spec.origin
    square = patches.reshape(n, n, C, P, P).transpose(2, 0, 3, 1, 4).reshape(C, spec.side, spec.side)
    out[:, r0:r0 + spec.side, c0:c0 + spec.side] = square
    return out


def scatter_patches(patches: list[tuple[np.ndarray, tuple[int, int]]], spec: PartitionSpec,
                    out: np.ndarray | None = None) -> np.ndarray:
    return scatter_patch_array(np.stack([p for p, _ in patches]), spec, out=out)


@dataclass(frozen=True)
class BorderRegion:
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray  # (C, n_border)


def extract_border(canvas: np.ndarray, spec: PartitionSpec) -> BorderRegion:
    _check_canvas(canvas, spec)
    rows, cols = np.nonzero(spec.border_mask())
    return BorderRegion(rows=rows, cols=cols, values=canvas[:, rows, cols])


# -- positional encoding -----------------------------------------------------

@dataclass(frozen=True)
class PositionalGrid:
    xcoord: np.ndarray  # varies along columns
    ycoord: np.ndarray  # varies along rows

    @property
    def size(self) -> int:
        return self.xcoord.shape[0]


def coordinate(index, size: int):
    """Affine map of pixel index to ``[-1, 1]``, exact at both canvas edges."""
    return -1.0 + 2.0 * np.asarray(index, dtype=np.float64) / (size - 1)


def coordinate_index(value, size: int) -> np.ndarray:
    """Inverse of :func:`coordinate`, rounded to the nearest pixel index."""
    return np.rint((np.asarray(value, dtype=np.float64) + 1.0) * (size - 1) / 2.0).astype(np.int64)


def positional_grid(size: int) -> PositionalGrid:
    c = coordinate(np.arange(size), size)
    xcoord = np.broadcast_to(c[None, :], (size, size)).copy()
    ycoord = np.broadcast_to(c[:, None], (size, size)).copy()
    return PositionalGrid(xcoord=xcoord, ycoord=ycoord)


def positional_patch(grid: PositionalGrid, location: tuple[int, int], P: int) -> tuple[np.ndarray, np.ndarray]:
    r, c = location
    L = grid.size
    if r < 0 or c < 0 or r + P > L or c + P > L:
        raise ValueError(f"patch at {location} of side {P} does not fit a {L}x{L} canvas")
    return grid.xcoord[r:r + P, c:c + P].copy(), grid.ycoord[r:r + P, c:c + P].copy()


def positional_channels(size: int, locations, P: int) -> np.ndarray:
    """Positional patches for many locations as ``(n, 2, P, P)`` (x channel first).

    Locations may lie partly outside the canvas; coordinates are then extrapolated
    along the same affine map.
    """
    locs = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
    offs = np.arange(P)
    xs = coordinate(locs[:, 1, None] + offs[None, :], size)  # (n, P)
    ys = coordinate(locs[:, 0, None] + offs[None, :], size)
    out = np.empty((len(locs), 2, P, P))
    out[:, 0] = xs[:, None, :]
    out[:, 1] = ys[:, :, None]
    return out
