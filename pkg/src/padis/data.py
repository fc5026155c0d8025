"""Synthetic training and test images: ellipse phantoms and smooth random textures."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import read_image, write_image

KINDS = ("ct_phantom", "texture")


@dataclass(frozen=True)
class PhantomConfig:
    min_ellipses: int = 3
    max_ellipses: int = 8
    body_value: float = 0.6

    def __post_init__(self):
        if not 0 <= self.min_ellipses <= self.max_ellipses:
            raise ValueError("need 0 <= min_ellipses <= max_ellipses")

    def count_probabilities(self) -> dict[int, float]:
        n = self.max_ellipses - self.min_ellipses + 1
        return {c: 1.0 / n for c in range(self.min_ellipses, self.max_ellipses + 1)}


def _ellipse(xx, yy, cx, cy, a, b, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def ct_phantom(N: int, rng: np.random.Generator, config: PhantomConfig = PhantomConfig()) -> tuple[np.ndarray, int]:
    """Random head-like phantom in ``[0, 1]``: a bright shell, a body, and additive inner ellipses.

    Returns ``(image (1, N, N), number of inner ellipses)``.
    """
    yy, xx = np.mgrid[:N, :N]
    xx = (xx - (N - 1) / 2) / (N / 2)
    yy = (yy - (N - 1) / 2) / (N / 2)
    a = rng.uniform(0.70, 0.90)
    b = rng.uniform(0.80, 0.95)
    tilt = rng.uniform(-0.2, 0.2)
    img = np.zeros((N, N))
    outer = _ellipse(xx, yy, 0, 0, a, b, tilt)
    inner = _ellipse(xx, yy, 0, 0, a - 0.06, b - 0.06, tilt)
    img[outer] = 1.0
    img[inner] = config.body_value
    count = int(rng.integers(config.min_ellipses, config.max_ellipses + 1))
    for _ in range(count):
        r = rng.uniform(0, 0.55)
        phi = rng.uniform(0, 2 * np.pi)
        ea, eb = rng.uniform(0.05, 0.3, size=2)
        delta = rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.3)
        mask = _ellipse(xx, yy, r * a * np.cos(phi), r * b * np.sin(phi), ea, eb, rng.uniform(0, np.pi)) & inner
        img[mask] += delta
    return np.clip(img, 0.0, 1.0)[None], count


def texture(N: int, rng: np.random.Generator, channels: int = 1, smoothness: float = 3.0) -> np.ndarray:
    """Smooth random field rescaled to span ``[0, 1]`` per channel."""
    out = np.empty((channels, N, N))
    for c in range(channels):
        field = gaussian_filter(rng.standard_normal((N, N)), smoothness, mode="wrap")
        field += 0.5 * gaussian_filter(rng.standard_normal((N, N)), smoothness / 3, mode="wrap")
        lo, hi = field.min(), field.max()
        out[c] = (field - lo) / (hi - lo) if hi > lo else 0.5
    return out


def synth_images(kind: str, count: int, N: int, seed: int, channels: int = 1,
                 phantom: PhantomConfig = PhantomConfig()) -> tuple[np.ndarray, list[dict]]:
    """Deterministic stack ``(count, C, N, N)`` plus per-image metadata."""
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng(seed)
    images, meta = [], []
    for idx in range(count):
        if kind == "ct_phantom":
            img, n = ct_phantom(N, rng, phantom)
            meta.append({"id": idx, "ellipses": n})
        else:
            img = texture(N, rng, channels)
            meta.append({"id": idx})
        images.append(img)
    return np.stack(images), meta


def synth_dataset(kind: str, count: int, N: int, seed: int, out_dir: str | os.PathLike,
                  channels: int = 1, phantom: PhantomConfig = PhantomConfig()) -> Path:
    """Write ``count`` 16-bit PGM/PPM images plus ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, meta = synth_images(kind, count, N, seed, channels, phantom)
    ext = "pgm" if images.shape[1] == 1 else "ppm"
    for img, m in zip(images, meta):
        m["file"] = f"{m['id']:05d}.{ext}"
        write_image(out / m["file"], img, bits=16)
    manifest = {"kind": kind, "count": count, "N": N, "seed": seed, "channels": int(images.shape[1]),
                "phantom": asdict(phantom) if kind == "ct_phantom" else None, "images": meta}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_dataset(directory: str | os.PathLike) -> tuple[np.ndarray, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    images = np.stack([read_image(directory / m["file"]) for m in manifest["images"]])
    return images, manifest
