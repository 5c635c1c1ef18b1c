"""Multiscale Difference-of-Gaussians filtering with learnable per-scale weights.

For ``N`` scales and base sigma ``sigma0`` the pairs are::

    sigma1_i = sigma0 * 2 ** (i / N)
    sigma2_i = sigma1_i * 2 ** (1 / N)          i = 1..N

and the weighted response is ``sum_i w_i * (G(x; sigma1_i) - G(x; sigma2_i))``.
Consecutive pairs share a boundary (``sigma2_i == sigma1_{i+1}``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from .core.module import Module
from .core.ops import conv2d
from .core.tensor import Tensor, index_select
from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    size: int
    weights: np.ndarray  # (size, size), sums to 1

    @property
    def profile(self) -> np.ndarray:
        """Normalized 1-D factor; ``weights == outer(profile, profile)``."""
        return _profile(self.sigma, self.size)


@lru_cache(maxsize=256)
def _profile(sigma: float, size: int) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - size // 2
    p = np.exp(-(r * r) / (2.0 * sigma * sigma))
    p /= p.sum()
    p.setflags(write=False)
    return p


def _check_kernel_args(sigma: float, size: int) -> None:
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    if int(size) != size or size < 1 or size % 2 == 0:
        raise ParameterError(f"kernel size must be a positive odd integer, got {size}")


def gaussian_kernel(sigma: float, size: int) -> GaussianKernel:
    """Sampled isotropic Gaussian on a ``size×size`` grid centred on the middle cell.

    The continuous density is evaluated at integer offsets and the result
    renormalized to unit sum; the ``1/(2*pi*sigma^2)`` prefactor cancels.
    """
    _check_kernel_args(sigma, size)
    r = np.arange(size, dtype=np.float64) - size // 2
    d2 = r[:, None] ** 2 + r[None, :] ** 2
    w = np.exp(-d2 / (2.0 * sigma * sigma)) / (2.0 * math.pi * sigma * sigma)
    w /= w.sum()
    return GaussianKernel(float(sigma), int(size), w)


def kernel_size_for(sigma: float, limit: Optional[int] = None) -> int:
    """``2*ceil(3*sigma)+1``, optionally capped to the largest odd size <= ``limit``."""
    k = 2 * math.ceil(3.0 * sigma) + 1
    if limit is not None:
        cap = limit if limit % 2 else limit - 1
        k = max(1, min(k, cap))
    return k


def _reflect_index(n: int, pad: int) -> np.ndarray:
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def gaussian_blur(x: Tensor, kernel: GaussianKernel) -> Tensor:
    """Per-channel Gaussian blur of ``x`` (``B×C×H×W``) with reflect padding.

    Implemented as a vertical then a horizontal depthwise pass with the
    normalized 1-D profile, which reproduces the 2-D kernel exactly.
    """
    if x.ndim != 4:
        raise ShapeError(f"gaussian_blur expects B×C×H×W, got {x.shape}")
    k = kernel.size
    if k == 1:
        return x
    _, C, H, W = x.shape
    pad = k // 2
    xp = index_select(x, 2, _reflect_index(H, pad))
    xp = index_select(xp, 3, _reflect_index(W, pad))
    prof = kernel.profile.astype(x.dtype)
    kv = Tensor(np.broadcast_to(prof.reshape(1, 1, k, 1), (C, 1, k, 1)).copy())
    kh = Tensor(np.broadcast_to(prof.reshape(1, 1, 1, k), (C, 1, 1, k)).copy())
    out = conv2d(xp, kv, groups=C)
    return conv2d(out, kh, groups=C)


def dog(x: Tensor, sigma1: float, sigma2: float, size: int) -> Tensor:
    """``G(x; sigma1) - G(x; sigma2)`` with a common kernel size."""
    return gaussian_blur(x, gaussian_kernel(sigma1, size)) - gaussian_blur(x, gaussian_kernel(sigma2, size))


def sigma_schedule(sigma0: float, n_scales: int) -> List[Tuple[float, float]]:
    if not sigma0 > 0:
        raise ParameterError(f"sigma0 must be positive, got {sigma0}")
    if int(n_scales) != n_scales or n_scales < 1:
        raise ParameterError(f"number of scales must be a positive integer, got {n_scales}")
    # shared boundaries keep sigma2_i and sigma1_{i+1} bit-identical
    bounds = [sigma0 * 2.0 ** (j / n_scales) for j in range(1, n_scales + 2)]
    return list(zip(bounds[:-1], bounds[1:]))


@dataclass
class DoGBank(Module):
    """Sigma schedule plus one learnable scalar weight per scale."""

    n_scales: int = 3
    sigma0: float = 0.8
    weights: List[Tensor] = field(default_factory=list)

    def __post_init__(self):
        self.pairs = sigma_schedule(self.sigma0, self.n_scales)
        if not self.weights:
            init = 1.0 / self.n_scales
            self.weights = [Tensor(np.float32(init), requires_grad=True) for _ in range(self.n_scales)]
        if len(self.weights) != self.n_scales:
            raise ParameterError(f"{len(self.weights)} weights for {self.n_scales} scales")

    def kernel_sizes(self, height: Optional[int] = None, width: Optional[int] = None) -> List[int]:
        limit = None if height is None else min(height, width if width is not None else height)
        return [kernel_size_for(s2, limit) for _, s2 in self.pairs]

    def set_weights(self, values) -> None:
        for w, v in zip(self.weights, values):
            w.data = np.asarray(v, dtype=w.dtype).reshape(w.shape)


def f_dog(x: Tensor, bank: DoGBank) -> Tensor:
    """Weighted multiscale DoG response; same shape as ``x``."""
    sizes = bank.kernel_sizes(x.shape[-2], x.shape[-1])
    out = None
    for w, (s1, s2), k in zip(bank.weights, bank.pairs, sizes):
        term = w * dog(x, s1, s2, k)
        out = term if out is None else out + term
    return out
