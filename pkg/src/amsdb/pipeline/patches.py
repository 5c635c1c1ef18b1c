"""Overlapping patch grids, stitching, and paired augmentation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..errors import ParameterError, ShapeError


def axis_origins(length: int, size: int, stride: int) -> List[int]:
    """0, stride, 2·stride, ... plus a final origin clamped to ``length - size``."""
    if stride <= 0 or stride > size:
        raise ParameterError(f"stride must be in [1, {size}], got {stride}")
    if length < size:
        raise ShapeError(f"axis of length {length} is shorter than the patch size {size}")
    origins = list(range(0, length - size + 1, stride))
    if origins[-1] != length - size:
        origins.append(length - size)
    return origins


@dataclass(frozen=True)
class PatchGrid:
    height: int
    width: int
    size: int
    stride: int
    origins: Tuple[Tuple[int, int], ...]

    @classmethod
    def build(cls, height: int, width: int, size: int = 128, stride: int = 64) -> "PatchGrid":
        rows = axis_origins(height, size, stride)
        cols = axis_origins(width, size, stride)
        return cls(height, width, size, stride, tuple((r, c) for r in rows for c in cols))

    def __len__(self) -> int:
        return len(self.origins)

    def coverage(self) -> np.ndarray:
        cov = np.zeros((self.height, self.width), dtype=np.int32)
        for r, c in self.origins:
            cov[r:r + self.size, c:c + self.size] += 1
        return cov


def reflect_pad_to(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Reflect-pad the bottom/right edges of ``img`` (H×W or H×W×C) up to at least the given size."""
    ph, pw = max(0, height - img.shape[0]), max(0, width - img.shape[1])
    if not ph and not pw:
        return img
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, mode="reflect")


def extract_patches(img: np.ndarray, size: int = 128, stride: int = 64) -> Tuple[PatchGrid, np.ndarray]:
    """Cut ``img`` into a grid of ``size×size`` patches (``N×size×size[×C]``).

    Images smaller than ``size`` are reflect-padded first; the grid then
    describes the padded image.
    """
    if stride <= 0 or stride > size:
        raise ParameterError(f"stride must be in [1, {size}], got {stride}")
    img = reflect_pad_to(img, size, size)
    grid = PatchGrid.build(img.shape[0], img.shape[1], size, stride)
    patches = np.stack([img[r:r + size, c:c + size] for r, c in grid.origins])
    return grid, patches


def stitch(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Uniform per-pixel mean of all patches covering each pixel."""
    if len(patches) != len(grid):
        raise ShapeError(f"{len(patches)} patches for a grid of {len(grid)}")
    s = grid.size
    acc = np.zeros((grid.height, grid.width) + patches.shape[3:], dtype=np.float64)
    cnt = np.zeros((grid.height, grid.width), dtype=np.float64)
    for p, (r, c) in zip(patches, grid.origins):
        acc[r:r + s, c:c + s] += p
        cnt[r:r + s, c:c + s] += 1
    cnt = cnt.reshape(cnt.shape + (1,) * (acc.ndim - 2))
    return (acc / cnt).astype(np.float32)


def threshold(prob: np.ndarray, level: float = 0.5) -> np.ndarray:
    """Ink where ``prob >= level``."""
    return (prob >= level).astype(np.uint8)


def context_window(height: int, width: int, origin: Tuple[int, int], size: int, margin: int):
    """Bounds of a ``size + 2·margin`` window around a patch, clipped to the image."""
    r, c = origin
    r0, c0 = max(0, r - margin), max(0, c - margin)
    r1, c1 = min(height, r + size + margin), min(width, c + size + margin)
    return r0, r1, c0, c1


def augment(img: np.ndarray, gt: np.ndarray, rng: np.random.Generator, size: Optional[int] = None):
    """Identical random crop, flips and right-angle rotation applied to an image/GT pair.

    ``img`` is ``H×W×C`` and ``gt`` is ``H×W``; when the pair is larger than
    ``size`` a ``size×size`` window is cropped at random first.  Draws from
    ``rng`` happen in a fixed order, so a seeded generator gives a
    reproducible stream.
    """
    if img.shape[:2] != gt.shape[:2]:
        raise ShapeError(f"image {img.shape} and ground truth {gt.shape} differ")
    size = size or min(img.shape[:2])
    H, W = gt.shape
    r = int(rng.integers(0, H - size + 1))
    c = int(rng.integers(0, W - size + 1))
    img, gt = img[r:r + size, c:c + size], gt[r:r + size, c:c + size]
    if rng.random() < 0.5:
        img, gt = img[:, ::-1], gt[:, ::-1]
    if rng.random() < 0.5:
        img, gt = img[::-1], gt[::-1]
    k = int(rng.integers(0, 4))
    if k:
        img, gt = np.rot90(img, k, axes=(0, 1)), np.rot90(gt, k, axes=(0, 1))
    return np.ascontiguousarray(img), np.ascontiguousarray(gt)
