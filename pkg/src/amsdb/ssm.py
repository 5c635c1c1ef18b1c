"""Four-direction selective scanning over 2-D feature maps.

A ``B×D×H×W`` map is flattened into four traversal orders (row-major,
reversed row-major, column-major, reversed column-major), each order is run
through its own S6 recurrence, and the results are scattered back to 2-D
and summed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .core import scan as _scan
from .core.module import Module, param, trunc_normal
from .core.ops import conv2d, einsum, layer_norm, linear
from .core.tensor import (
    Tensor,
    broadcast_to,
    exp,
    index_select,
    neg,
    reshape,
    silu,
    softplus,
    stack,
    transpose,
)
from .errors import ShapeError

N_DIRECTIONS = 4


def scan_orders(height: int, width: int) -> List[np.ndarray]:
    """Flat-index permutation for each direction: ``z_v = flat(z)[order_v]``."""
    grid = np.arange(height * width).reshape(height, width)
    row = grid.ravel()
    col = grid.T.ravel()
    return [row, row[::-1].copy(), col, col[::-1].copy()]


@dataclass
class DirectionalSequences:
    """``sequences`` is ``B×4×L×D``; ``(height, width)`` allow inversion."""

    sequences: Tensor
    height: int
    width: int


def expand(z: Tensor) -> DirectionalSequences:
    if z.ndim != 4:
        raise ShapeError(f"expand expects B×D×H×W, got {z.shape}")
    B, D, H, W = z.shape
    flat = reshape(z, (B, D, H * W))
    seqs = stack([index_select(flat, 2, order) for order in scan_orders(H, W)], axis=1)
    return DirectionalSequences(transpose(seqs, (0, 1, 3, 2)), H, W)


def merge(seqs: DirectionalSequences) -> Tensor:
    y = seqs.sequences
    B, K, L, D = y.shape
    if K != N_DIRECTIONS or L != seqs.height * seqs.width:
        raise ShapeError(f"merge: sequences {y.shape} do not fit a {seqs.height}x{seqs.width} grid")
    y = transpose(y, (0, 1, 3, 2))
    out = None
    for v, order in enumerate(scan_orders(seqs.height, seqs.width)):
        yv = reshape(index_select(y, 1, [v]), (B, D, L))
        yv = index_select(yv, 2, np.argsort(order))
        out = yv if out is None else out + yv
    return reshape(out, (B, D, seqs.height, seqs.width))


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor) -> Tensor:
    """S6 recurrence on one ``L×E`` sequence (``A`` is ``E×S``, ``Bm``/``Cm`` are ``L×S``).

    Batched ``N×K×L×E`` inputs go straight to :func:`amsdb.core.scan.selective_scan`.
    """
    L, E = u.shape
    S = A.shape[-1]
    y = _scan.selective_scan(
        reshape(u, (1, 1, L, E)), reshape(delta, (1, 1, L, E)), reshape(A, (1, E, S)),
        reshape(Bm, (1, 1, L, S)), reshape(Cm, (1, 1, L, S)), reshape(D, (1, E)),
    )
    return reshape(y, (L, E))


def _inv_softplus(x: np.ndarray) -> np.ndarray:
    return x + np.log(-np.expm1(-x))


class S6Params(Module):
    """Independent S6 parameters for each of the four scan directions.

    ``A = -exp(A_log)`` keeps the continuous-time decay strictly negative and
    ``delta = softplus(dt_proj(x_proj(u)) + dt_bias)`` keeps step sizes positive.
    """

    def __init__(self, channels: int, state_dim: int, dt_rank: int, rng: np.random.Generator,
                 directions: int = N_DIRECTIONS):
        K, E, S, R = directions, channels, state_dim, dt_rank
        self.state_dim, self.dt_rank = S, R
        self.x_proj = param(trunc_normal(rng, (K, E, R + 2 * S), 0.02))
        bound = R ** -0.5
        self.dt_proj = param(rng.uniform(-bound, bound, size=(K, R, E)))
        dt = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=(K, E)))
        self.dt_bias = param(_inv_softplus(np.maximum(dt, 1e-4)))
        self.A_log = param(np.log(np.tile(np.arange(1, S + 1, dtype=np.float64), (K, E, 1))))
        self.D = param(np.ones((K, E)))

    def A(self) -> Tensor:
        return neg(exp(self.A_log))

    def scan(self, u: Tensor) -> Tensor:
        """``u`` is ``N×K×L×E``; returns the scanned sequences of the same shape."""
        N, K, L, E = u.shape
        R, S = self.dt_rank, self.state_dim
        proj = einsum("nkle,ker->nklr", u, self.x_proj)
        dt_in = index_select(proj, 3, np.arange(R))
        Bm = index_select(proj, 3, np.arange(R, R + S))
        Cm = index_select(proj, 3, np.arange(R + S, R + 2 * S))
        dt = einsum("nklr,kre->nkle", dt_in, self.dt_proj)
        delta = softplus(dt + broadcast_to(reshape(self.dt_bias, (1, K, 1, E)), (N, K, L, E)))
        return _scan.selective_scan(u, delta, self.A(), Bm, Cm, self.D)


def ss2d(x: Tensor, s6: S6Params) -> Tensor:
    """expand → per-direction scan → merge, for a ``B×E×H×W`` map."""
    seqs = expand(x)
    scanned = s6.scan(seqs.sequences)
    return merge(DirectionalSequences(scanned, seqs.height, seqs.width))


class VSSBlock(Module):
    """Pre-norm gated block around a four-direction selective scan.

    branch 1: linear → depthwise 3×3 → SiLU → scan/merge → norm
    branch 2: linear → SiLU
    out = x + linear(branch1 * branch2)
    """

    def __init__(self, dim: int, rng: np.random.Generator, state_dim: int = 8, expand_ratio: int = 2,
                 dt_rank: Optional[int] = None):
        E = expand_ratio * dim
        self.dim, self.inner = dim, E
        self.norm_gain = param(np.ones(dim))
        self.norm_bias = param(np.zeros(dim))
        self.in_proj = param(trunc_normal(rng, (dim, 2 * E), 0.02))
        self.conv_w = param(trunc_normal(rng, (E, 1, 3, 3), 0.02))
        self.conv_b = param(np.zeros(E))
        self.s6 = S6Params(E, state_dim, dt_rank or max(1, math.ceil(dim / 16)), rng)
        self.out_norm_gain = param(np.ones(E))
        self.out_norm_bias = param(np.zeros(E))
        self.out_proj = param(trunc_normal(rng, (E, dim), 0.02))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.dim:
            raise ShapeError(f"VSSBlock({self.dim}) got input {x.shape}")
        E = self.inner
        xl = transpose(x, (0, 2, 3, 1))
        h = layer_norm(xl, self.norm_gain, self.norm_bias)
        xz = linear(h, self.in_proj)
        x1 = transpose(index_select(xz, 3, np.arange(E)), (0, 3, 1, 2))
        gate = silu(index_select(xz, 3, np.arange(E, 2 * E)))
        x1 = silu(conv2d(x1, self.conv_w, self.conv_b, padding=1, groups=E))
        y = transpose(ss2d(x1, self.s6), (0, 2, 3, 1))
        y = layer_norm(y, self.out_norm_gain, self.out_norm_bias) * gate
        return x + transpose(linear(y, self.out_proj), (0, 3, 1, 2))
