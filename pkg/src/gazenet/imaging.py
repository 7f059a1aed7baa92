"""Grayscale eye-image resampling and the resolution-degradation operators.

Images are 2-D uint8 arrays indexed (row, column); the canonical network
input is 60 wide by 36 high.  Four separable filters are supported:

  nearest   pick floor((i + 0.5) * in / out)
  bilinear  tent kernel, radius 1
  bicubic   Catmull-Rom cubic (a = -0.5), radius 2
  lanczos3  sinc-windowed sinc, radius 3

Source coordinates follow the pixel-center convention
src = (i + 0.5) * in / out - 0.5, edges handled by clamping tap indices, and
each output pixel's kernel weights are normalized to sum to one, so constant
images pass through every filter unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

NET_WIDTH = 60
NET_HEIGHT = 36

FILTERS = ("nearest", "bilinear", "bicubic", "lanczos3")

_CATROM_A = -0.5


def _kernel_bilinear(x):
    ax = np.abs(x)
    return np.where(ax < 1.0, 1.0 - ax, 0.0)


def _kernel_bicubic(x):
    ax = np.abs(x)
    a = _CATROM_A
    inner = (a + 2.0) * ax**3 - (a + 3.0) * ax**2 + 1.0
    outer = a * ax**3 - 5.0 * a * ax**2 + 8.0 * a * ax - 4.0 * a
    return np.where(ax < 1.0, inner, np.where(ax < 2.0, outer, 0.0))


def _kernel_lanczos3(x):
    ax = np.abs(x)
    return np.where(ax < 3.0, np.sinc(x) * np.sinc(x / 3.0), 0.0)


_KERNELS = {
    "bilinear": (_kernel_bilinear, 1),
    "bicubic": (_kernel_bicubic, 2),
    "lanczos3": (_kernel_lanczos3, 3),
}


@lru_cache(maxsize=256)
def _resample_matrix(n_in: int, n_out: int, filt: str) -> np.ndarray:
    """Dense (n_out, n_in) row-normalized weight matrix for one axis."""
    kernel, radius = _KERNELS[filt]
    mat = np.zeros((n_out, n_in))
    centers = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    for i, c in enumerate(centers):
        lo = int(np.floor(c)) - radius + 1
        taps = np.arange(lo, lo + 2 * radius)
        w = kernel(c - taps)
        # clamped edges: out-of-range taps contribute at the border pixel
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), w)
        mat[i] /= mat[i].sum()
    return mat


@lru_cache(maxsize=256)
def _nearest_index(n_in: int, n_out: int) -> np.ndarray:
    idx = np.floor((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.intp)
    return np.clip(idx, 0, n_in - 1)


def resize(img: np.ndarray, out_w: int, out_h: int, filt: str) -> np.ndarray:
    """Resample to out_w x out_h; result is uint8, clamped to [0, 255]."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"resize target must be at least 1x1, got {out_w}x{out_h}")
    if filt not in FILTERS:
        raise ValueError(f"unknown filter '{filt}' (choose from {', '.join(FILTERS)})")
    h, w = img.shape
    if filt == "nearest":
        return img[np.ix_(_nearest_index(h, out_h), _nearest_index(w, out_w))]
    mv = _resample_matrix(h, out_h, filt)
    mh = _resample_matrix(w, out_w, filt)
    out = mv @ img.astype(np.float64) @ mh.T
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def degrade(img: np.ndarray, target: tuple[int, int], filt: str) -> np.ndarray:
    """Simulate camera distance: downscale to `target` (w, h), then upscale
    back to the original size with the same filter."""
    h, w = img.shape
    tw, th = target
    if tw > w or th > h:
        raise ValueError(f"degrade target {tw}x{th} exceeds source {w}x{h}")
    small = resize(img, tw, th, filt)
    return resize(small, w, h, filt)


@dataclass
class AugmentConfig:
    """Random-resolution training augmentation.

    With probability `degrade_probability` an image is degraded through a
    uniformly chosen target resolution using `train_filter`; evaluation-time
    degradation uses `eval_filter`.
    """

    degrade_probability: float = 2.0 / 3.0
    target_resolutions: tuple = ((52, 31), (26, 16))
    train_filter: str = "nearest"
    eval_filter: str = "lanczos3"

    def __post_init__(self):
        if not 0.0 <= self.degrade_probability <= 1.0:
            raise ValueError("degrade_probability must be within [0, 1]")
        self.target_resolutions = tuple(tuple(t) for t in self.target_resolutions)
        for tw, th in self.target_resolutions:
            if tw > NET_WIDTH or th > NET_HEIGHT:
                raise ValueError(f"augment target {tw}x{th} exceeds {NET_WIDTH}x{NET_HEIGHT}")
        for f in (self.train_filter, self.eval_filter):
            if f not in FILTERS:
                raise ValueError(f"unknown filter '{f}'")

    def to_dict(self) -> dict:
        return {
            "degrade_probability": self.degrade_probability,
            "target_resolutions": [list(t) for t in self.target_resolutions],
            "train_filter": self.train_filter,
            "eval_filter": self.eval_filter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(**d)


def augment_sample(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Apply the degradation augmentation; deterministic given the rng state."""
    if cfg.degrade_probability > 0.0 and rng.random() < cfg.degrade_probability:
        target = cfg.target_resolutions[rng.integers(len(cfg.target_resolutions))]
        return degrade(img, target, cfg.train_filter)
    return img


def normalize_for_net(img: np.ndarray) -> np.ndarray:
    """uint8 image -> float32 plane in [-0.5, 0.5] for network input."""
    if img.shape != (NET_HEIGHT, NET_WIDTH):
        raise ValueError(
            f"network input must be {NET_WIDTH}x{NET_HEIGHT}, got {img.shape[1]}x{img.shape[0]}")
    return (img.astype(np.float32) / np.float32(255.0)) - np.float32(0.5)


def mirror_horizontal(img: np.ndarray) -> np.ndarray:
    """Reverse column order (left-right mirror)."""
    return np.ascontiguousarray(img[:, ::-1])
