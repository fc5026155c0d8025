"""Non-diffusion reference reconstructions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalAbort
from .operators import CTGeometry, Downsample, LinearOperator, ParallelBeamCT, _cg


def ramp_filter(sinogram: np.ndarray, spacing: float = 1.0) -> np.ndarray:
    """Ram-Lak filtering of each projection row in the frequency domain (zero-padded FFT)."""
    D = sinogram.shape[-1]
    n = max(64, 1 << int(np.ceil(np.log2(2 * D))))
    ramp = 2.0 * np.abs(np.fft.fftfreq(n))
    spec = np.fft.fft(sinogram, n=n, axis=-1) * ramp
    return np.real(np.fft.ifft(spec, axis=-1))[..., :D] / spacing


def fbp(sinogram: np.ndarray, geom: CTGeometry, N: int, op: ParallelBeamCT | None = None) -> np.ndarray:
    """Filtered back-projection onto an ``(1, N, N)`` image."""
    sinogram = np.asarray(sinogram, dtype=np.float64)
    if geom.views == 0 or sinogram.shape[0] == 0:
        raise ValueError("FBP needs at least one view")
    op = ParallelBeamCT(N, geom) if op is None else op
    return op.adjoint(ramp_filter(sinogram, geom.spacing)) * (np.pi / (2 * geom.views))


NAIVE_PROBLEMS = ("ct", "deblur", "sr")


def naive_baseline(y: np.ndarray, problem: str, op: LinearOperator | None = None) -> np.ndarray:
    """Trivial inverse: FBP for CT, the blurred image itself for deblurring, pixel replication for SR."""
    kind = problem.rstrip("0123456789")
    if kind == "ct":
        if not isinstance(op, ParallelBeamCT):
            raise ValueError("CT baseline needs the ParallelBeamCT operator")
        return fbp(y, op.geom, op.N, op)
    if kind == "deblur":
        return np.array(y, dtype=np.float64, copy=True)
    if kind == "sr":
        if not isinstance(op, Downsample):
            raise ValueError("SR baseline needs the Downsample operator")
        return op.pinv(y)
    raise ValueError(f"unknown problem {problem!r}; expected one of {NAIVE_PROBLEMS}")


# -- ADMM with anisotropic TV -------------------------------------------------------------

def grad2d(x: np.ndarray) -> np.ndarray:
    """Forward differences along rows and columns, zero at the far edge; returns ``(2, *x.shape)``."""
    g = np.zeros((2, *x.shape))
    g[0, ..., :-1, :] = x[..., 1:, :] - x[..., :-1, :]
    g[1, ..., :, :-1] = x[..., :, 1:] - x[..., :, :-1]
    return g


def grad2d_adjoint(g: np.ndarray) -> np.ndarray:
    gy, gx = g[0], g[1]
    out = np.zeros(gy.shape)
    out[..., :-1, :] -= gy[..., :-1, :]
    out[..., 1:, :] += gy[..., :-1, :]
    out[..., :, :-1] -= gx[..., :, :-1]
    out[..., :, 1:] += gx[..., :, :-1]
    return out


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def tv_objective(x, y, op: LinearOperator, lam: float) -> float:
    return 0.5 * float(np.sum((y - op.apply(x)) ** 2)) + lam * float(np.abs(grad2d(x)).sum())


@dataclass
class AdmmResult:
    x: np.ndarray
    objective: list[float] = field(default_factory=list)


def admm_tv(y: np.ndarray, op: LinearOperator, lam: float, iters: int = 100, rho: float = 1.0,
            cg_iters: int = 10, x0: np.ndarray | None = None, patience: int = 10,
            return_trace: bool = False):
    """Minimize ``0.5 ||y - A x||^2 + lam (|D_row x|_1 + |D_col x|_1)`` by ADMM on ``z = D x``.

    The x-update solves ``(A^T A + rho D^T D) x = A^T y + rho D^T (z - u)`` with a
    warm-started conjugate-gradient run. Raises ``NumericalAbort`` when the objective
    grows for ``patience`` consecutive outer iterations.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    y = np.asarray(y, dtype=np.float64)
    aty = op.adjoint(y)
    x = np.zeros(op.in_shape) if x0 is None else np.array(x0, dtype=np.float64)
    z = grad2d(x)
    u = np.zeros_like(z)
    normal = lambda v: op.adjoint(op.apply(v)) + rho * grad2d_adjoint(grad2d(v))  # noqa: E731
    trace: list[float] = []
    rising = 0
    for it in range(iters):
        x = _cg(normal, aty + rho * grad2d_adjoint(z - u), cg_iters, x0=x)
        gx = grad2d(x)
        z = soft_threshold(gx + u, lam / rho)
        u = u + gx - z
        obj = tv_objective(x, y, op, lam)
        if not np.isfinite(obj):
            raise NumericalAbort(f"ADMM-TV objective became non-finite at iteration {it}")
        rising = rising + 1 if trace and obj > trace[-1] else 0
        trace.append(obj)
        if rising >= patience:
            raise NumericalAbort(f"ADMM-TV diverging: objective rose {patience} iterations in a row (iteration {it})")
    return AdmmResult(x, trace) if return_trace else x


DEFAULT_TV_LAMBDA = {"ct": 0.001, "deblur": 0.002, "sr": 0.006}
