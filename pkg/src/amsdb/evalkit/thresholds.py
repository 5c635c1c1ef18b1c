"""Classical global and local thresholding baselines.

All take a grayscale image in [0, 1] and return uint8 ink masks (1 = ink,
i.e. pixels darker than the threshold).
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..errors import ParameterError, ShapeError


def _gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ShapeError(f"expected a non-empty 2-d grayscale image, got shape {img.shape}")
    return img


def to_bins(img) -> np.ndarray:
    """Quantise [0,1] values to the 256 histogram bins used by ``otsu``."""
    return np.clip(np.rint(_gray(img) * 255.0), 0, 255).astype(np.int64)


def otsu(img) -> Tuple[int, np.ndarray]:
    """Global threshold ``t`` (a bin index) maximising between-class variance.

    Classes are ``bin < t`` (ink) and ``bin >= t``; ties go to the lowest
    ``t``.  A constant image has zero variance everywhere, so the threshold
    is the constant's bin and nothing is ink.
    """
    bins = to_bins(img)
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]                      # pixels in bins < t, for t = 1..255
    s0 = np.cumsum(hist * levels)[:-1]
    w1 = total - w0
    s1 = (hist * levels).sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        var = w0 * w1 * (s0 / w0 - s1 / w1) ** 2 / (total * total)
    var = np.where((w0 > 0) & (w1 > 0), var, 0.0)
    if var.max() <= 0:
        t = int(bins.min())
    else:
        t = int(np.argmax(var)) + 1
    return t, (bins < t).astype(np.uint8)


def _check_window(w: int) -> int:
    w = int(w)
    if w < 3 or w % 2 == 0:
        raise ParameterError(f"window must be an odd integer >= 3, got {w}")
    return w


def window_sums(img: np.ndarray, w: int) -> np.ndarray:
    """Sum over the ``w×w`` window centred on each pixel (reflect padding), via an integral image."""
    r = w // 2
    p = np.pad(img, r, mode="reflect")
    ii = np.zeros((p.shape[0] + 1, p.shape[1] + 1), dtype=np.float64)
    ii[1:, 1:] = p.cumsum(0).cumsum(1)
    H, W = img.shape
    return ii[w:w + H, w:w + W] - ii[:H, w:w + W] - ii[w:w + H, :W] + ii[:H, :W]


def local_mean_std(img, w: int):
    img = _gray(img)
    w = _check_window(w)
    n = float(w * w)
    m = window_sums(img, w) / n
    var = window_sums(img * img, w) / n - m * m
    return m, np.sqrt(np.maximum(var, 0.0))


def sauvola(img, window: int = 25, k: float = 0.2, R: float = 0.5) -> np.ndarray:
    """Ink where ``v < m·(1 + k·(s/R − 1))`` over a ``window×window`` neighbourhood."""
    img = _gray(img)
    m, s = local_mean_std(img, window)
    t = m * (1.0 + k * (s / R - 1.0))
    return (img < t).astype(np.uint8)


def default_bradley_window(shape) -> int:
    """Roughly an eighth of the image width, forced odd and at least 3."""
    w = max(3, int(shape[1]) // 8)
    return w if w % 2 else w + 1


def bradley(img, window: Optional[int] = None, t_percent: float = 15.0) -> np.ndarray:
    """Ink where the value is ``t_percent`` below its local mean."""
    img = _gray(img)
    window = default_bradley_window(img.shape) if window is None else window
    w = _check_window(window)
    m = window_sums(img, w) / float(w * w)
    return (img < m * (1.0 - t_percent / 100.0)).astype(np.uint8)


METHODS = {"otsu": otsu, "sauvola": sauvola, "bradley": bradley}
