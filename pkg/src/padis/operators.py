"""Linear forward models: parallel-beam CT, box blur, average-pool downsampling.

Images are ``(C, N, N)`` arrays. CT needs ``C == 1`` and returns a ``(views, detectors)``
sinogram; blur and downsampling act on every channel independently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view


class NoPseudoInverse(NotImplementedError):
    pass


class LinearOperator:
    in_shape: tuple
    out_shape: tuple

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def pinv(self, y: np.ndarray) -> np.ndarray:
        raise NoPseudoInverse(f"{type(self).__name__} has no pseudo-inverse")

    @property
    def has_pinv(self) -> bool:
        return type(self).pinv is not LinearOperator.pinv

    def __call__(self, x):
        return self.apply(x)

    def self_check(self, rng: np.random.Generator | None = None, trials: int = 3,
                   rtol_linear: float = 1e-6, rtol_adjoint: float = 1e-4) -> None:
        """Raise ``AssertionError`` unless linearity and the adjoint identity hold on random inputs."""
        rng = np.random.default_rng(0) if rng is None else rng
        for _ in range(trials):
            x, z = rng.standard_normal(self.in_shape), rng.standard_normal(self.in_shape)
            a, b = rng.standard_normal(2)
            lhs = self.apply(a * x + b * z)
            rhs = a * self.apply(x) + b * self.apply(z)
            if np.linalg.norm(lhs - rhs) > rtol_linear * max(np.linalg.norm(rhs), 1e-30):
                raise AssertionError(f"{type(self).__name__} is not linear")
            y = rng.standard_normal(self.out_shape)
            ip1 = float(np.vdot(self.apply(x), y))
            ip2 = float(np.vdot(x, self.adjoint(y)))
            if abs(ip1 - ip2) > rtol_adjoint * max(abs(ip1), abs(ip2), 1e-30):
                raise AssertionError(f"{type(self).__name__}: <Ax,y>={ip1} but <x,A^T y>={ip2}")


class Identity(LinearOperator):
    def __init__(self, shape):
        self.in_shape = self.out_shape = tuple(shape)

    def apply(self, x):
        return np.array(x, dtype=np.float64, copy=True)

    def adjoint(self, y):
        return np.array(y, dtype=np.float64, copy=True)

    def pinv(self, y):
        return np.array(y, dtype=np.float64, copy=True)


# -- parallel-beam CT -------------------------------------------------------------

@dataclass(frozen=True)
class CTGeometry:
    views: int
    detectors: int
    spacing: float = 1.0
    angles: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.views < 1:
            raise ValueError("CT geometry needs at least one view")
        if self.angles is None:
            object.__setattr__(self, "angles", np.arange(self.views) * np.pi / self.views)
        elif len(self.angles) != self.views:
            raise ValueError("one angle per view required")

    def detector_positions(self) -> np.ndarray:
        return (np.arange(self.detectors) - (self.detectors - 1) / 2.0) * self.spacing


def _joseph_matrix(N: int, geom: CTGeometry) -> sp.csr_matrix:
    """Ray-driven projector: one linear interpolation per crossed row (or column)."""
    if geom.detectors * geom.spacing < np.sqrt(2) * N:
        raise ValueError("detector array does not cover the image diagonal")
    half = (N - 1) / 2.0
    centers = np.arange(N) - half  # x of column c; y of row r is -(r - half)
    s = geom.detector_positions()
    rows_out, cols_out, vals_out = [], [], []
    lines = np.arange(N)
    for v, theta in enumerate(geom.angles):
        c, sn = np.cos(theta), np.sin(theta)
        ray = v * geom.detectors + np.arange(geom.detectors)
        if abs(c) >= abs(sn):
            # step through rows: y fixed, solve for x
            y = -centers  # y of each row
            x = (s[:, None] - y[None, :] * sn) / c  # (D, N)
            frac_idx = x + half
            fixed = np.broadcast_to(lines[None, :], x.shape)
            step = 1.0 / abs(c)
            along_cols = True
        else:
            x = centers
            y = (s[:, None] - x[None, :] * c) / sn
            frac_idx = half - y
            fixed = np.broadcast_to(lines[None, :], y.shape)
            step = 1.0 / abs(sn)
            along_cols = False
        lo = np.floor(frac_idx).astype(np.int64)
        w_hi = frac_idx - lo
        for idx, w in ((lo, 1.0 - w_hi), (lo + 1, w_hi)):
            ok = (idx >= 0) & (idx < N) & (w > 0)
            r_ray = np.broadcast_to(ray[:, None], idx.shape)[ok]
            if along_cols:
                pix = fixed[ok] * N + idx[ok]
            else:
                pix = idx[ok] * N + fixed[ok]
            rows_out.append(r_ray)
            cols_out.append(pix)
            vals_out.append(w[ok] * step)
    mat = sp.coo_matrix((np.concatenate(vals_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
                        shape=(geom.views * geom.detectors, N * N))
    return mat.tocsr()


def _cg(matvec, b: np.ndarray, iters: int, x0: np.ndarray | None = None) -> np.ndarray:
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - matvec(x)
    p = r.copy()
    rs = float(np.vdot(r, r))
    for _ in range(iters):
        if rs == 0.0:
            break
        Ap = matvec(p)
        curv = float(np.vdot(p, Ap))
        if not curv > 0:  # p in the null space (or a non-PSD matvec): no further progress
            break
        alpha = rs / curv
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.vdot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


class ParallelBeamCT(LinearOperator):
    """Sparse Joseph-style parallel-beam projector; the adjoint is the exact transpose."""

    def __init__(self, N: int, geom: CTGeometry, pinv_iters: int = 20, check: bool = False):
        self.N, self.geom, self.pinv_iters = int(N), geom, int(pinv_iters)
        self.matrix = _joseph_matrix(self.N, geom)
        self._matrix_t = self.matrix.T.tocsr()
        self.in_shape = (1, self.N, self.N)
        self.out_shape = (geom.views, geom.detectors)
        if check:
            self.self_check()

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.in_shape:
            raise ValueError(f"expected image of shape {self.in_shape}, got {x.shape}")
        return (self.matrix @ x.ravel()).reshape(self.out_shape)

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.out_shape:
            raise ValueError(f"expected sinogram of shape {self.out_shape}, got {y.shape}")
        return (self._matrix_t @ y.ravel()).reshape(self.in_shape)

    def pinv(self, y):
        """Least-squares solution by conjugate gradients on ``A^T A x = A^T y``, started at zero."""
        return _cg(lambda x: self.adjoint(self.apply(x)), self.adjoint(y), self.pinv_iters)


def radon_apply(x: np.ndarray, geom: CTGeometry) -> np.ndarray:
    x = np.asarray(x)
    img = x if x.ndim == 3 else x[None]
    return ParallelBeamCT(img.shape[-1], geom).apply(img)


SINOGRAM_MAGIC = "PADIS-SINOGRAM"


def save_sinogram(path, sinogram: np.ndarray) -> None:
    """Raw little-endian float32 after a one-line text header ``PADIS-SINOGRAM <views> <detectors>``."""
    sinogram = np.asarray(sinogram)
    if sinogram.ndim != 2:
        raise ValueError("sinogram must be (views, detectors)")
    with open(path, "wb") as fh:
        fh.write(f"{SINOGRAM_MAGIC} {sinogram.shape[0]} {sinogram.shape[1]}\n".encode("ascii"))
        fh.write(sinogram.astype("<f4").tobytes())


def load_sinogram(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        body = fh.read()
    if len(header) != 3 or header[0] != SINOGRAM_MAGIC:
        raise ValueError(f"{path}: not a sinogram file")
    views, detectors = int(header[1]), int(header[2])
    if len(body) != 4 * views * detectors:
        raise ValueError(f"{path}: expected {views * detectors} float32 values, got {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(views, detectors).astype(np.float64)


def radon_adjoint(sinogram: np.ndarray, geom: CTGeometry, N: int) -> np.ndarray:
    return ParallelBeamCT(N, geom).adjoint(sinogram)


# -- box blur -------------------------------------------------------------------------

def _fold(z: np.ndarray, index: np.ndarray, n: int, axis: int) -> np.ndarray:
    """Adjoint of ``np.take(x, index, axis)``."""
    z = np.moveaxis(z, axis, 0)
    out = np.zeros((n, *z.shape[1:]), dtype=z.dtype)
    np.add.at(out, index, z)
    return np.moveaxis(out, 0, axis)


class UniformBlur(LinearOperator):
    """Mean over a ``K x K`` window with half-sample symmetric ("reflect") boundary."""

    def __init__(self, shape, K: int = 9, check: bool = False):
        K = int(K)
        if K < 1 or K % 2 == 0:
            raise ValueError(f"kernel side must be odd and positive, got {K}")
        self.K = K
        self.in_shape = self.out_shape = tuple(shape)
        C, H, W = self.in_shape
        r = K // 2
        self._idx = {ax: np.pad(np.arange(n), r, mode="symmetric") for ax, n in ((1, H), (2, W))}
        if check:
            self.self_check()

    def _box(self, x, axis):
        xp = np.take(x, self._idx[axis], axis=axis)
        return sliding_window_view(xp, self.K, axis=axis).sum(axis=-1) / self.K

    def _box_t(self, y, axis):
        K = self.K
        n = y.shape[axis]
        shape = list(y.shape)
        shape[axis] = n + K - 1
        zp = np.zeros(shape, dtype=np.float64)
        for t in range(K):
            sl = [slice(None)] * y.ndim
            sl[axis] = slice(t, t + n)
            zp[tuple(sl)] += y
        return _fold(zp / K, self._idx[axis], n, axis)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self._box(self._box(x, 1), 2)

    def adjoint(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self._box_t(self._box_t(y, 2), 1)


def blur_apply(x: np.ndarray, K: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    img = x if x.ndim == 3 else x[None]
    out = UniformBlur(img.shape, K).apply(img)
    return out if x.ndim == 3 else out[0]


# -- average-pool downsampling ---------------------------------------------------------

class Downsample(LinearOperator):
    """Mean over non-overlapping ``f x f`` blocks; the pseudo-inverse replicates each value."""

    def __init__(self, shape, factor: int = 4, check: bool = False):
        C, H, W = shape
        f = int(factor)
        if f < 1 or H % f or W % f:
            raise ValueError(f"factor {f} must divide the image side ({H}x{W})")
        self.f = f
        self.in_shape = (C, H, W)
        self.out_shape = (C, H // f, W // f)
        if check:
            self.self_check()

    def apply(self, x):
        C, H, W = self.in_shape
        f = self.f
        return np.asarray(x, dtype=np.float64).reshape(C, H // f, f, W // f, f).mean(axis=(2, 4))

    def pinv(self, y):
        f = self.f
        return np.repeat(np.repeat(np.asarray(y, dtype=np.float64), f, axis=1), f, axis=2)

    def adjoint(self, y):
        return self.pinv(y) / self.f**2


def downsample_apply(x: np.ndarray, factor: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    img = x if x.ndim == 3 else x[None]
    out = Downsample(img.shape, factor).apply(img)
    return out if x.ndim == 3 else out[0]


# -- measurements -------------------------------------------------------------------------

def add_noise(y: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("noise level must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    if sigma == 0:
        return y.copy()
    return y + sigma * rng.standard_normal(y.shape)


def ddnm_project(D: np.ndarray, y: np.ndarray, op: LinearOperator) -> np.ndarray:
    """Replace the range-space part of ``D`` with ``A^+ y``: ``A^+ y + D - A^+ A D``.

    Kept in this literal form because an iterative ``A^+`` (CT) is not exactly linear.
    """
    if not op.has_pinv:
        raise NoPseudoInverse(f"{type(op).__name__} has no pseudo-inverse; range-space projection unavailable")
    return op.pinv(y) + D - op.pinv(op.apply(D))
