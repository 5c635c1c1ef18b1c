"""Procedural text-stroke documents with degradation, for desk-scale training runs."""
from __future__ import annotations

from pathlib import Path
from typing import List, Tuple

import numpy as np


def _segment_mask(h: int, w: int, p0, p1, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    (y0, x0), (y1, x1) = p0, p1
    dy, dx = y1 - y0, x1 - x0
    denom = dy * dy + dx * dx
    t = np.clip(((yy - y0) * dy + (xx - x0) * dx) / denom, 0, 1) if denom > 0 else np.zeros_like(yy)
    d2 = (yy - (y0 + t * dy)) ** 2 + (xx - (x0 + t * dx)) ** 2
    return d2 <= radius * radius


def _glyph(rng: np.random.Generator, h: int, w: int, top: float, left: float, size: float, radius: float) -> np.ndarray:
    """A letter-like polyline of 2-4 segments inside a ``size`` box."""
    mask = np.zeros((h, w), dtype=bool)
    pts = [(top + rng.uniform(0, size), left + rng.uniform(0, size * 0.7))]
    for _ in range(int(rng.integers(2, 5))):
        pts.append((top + rng.uniform(0, size), left + rng.uniform(0, size * 0.7)))
    for a, b in zip(pts[:-1], pts[1:]):
        mask |= _segment_mask(h, w, a, b, radius)
    return mask


def synth_document(rng: np.random.Generator, size: int = 128, noise: float = 0.08) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(gray, ink)``: a degraded page in [0,1] and its {0,1} ink mask."""
    h = w = size
    ink = np.zeros((h, w), dtype=bool)
    line_h = rng.uniform(14, 20)
    y = rng.uniform(2, 8)
    while y + line_h < h:
        x = rng.uniform(2, 8)
        glyph = line_h * rng.uniform(0.6, 0.85)
        radius = rng.uniform(0.8, 1.6)
        while x + glyph < w:
            if rng.uniform() < 0.85:
                ink |= _glyph(rng, h, w, y, x, glyph, radius)
            x += glyph * rng.uniform(0.7, 1.1)
        y += line_h
    yy, xx = np.mgrid[0:h, 0:w] / float(size)
    background = 0.78 + 0.12 * (rng.uniform(-1, 1) * yy + rng.uniform(-1, 1) * xx)
    for _ in range(int(rng.integers(1, 4))):
        cy, cx, r = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.25)
        background -= 0.12 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    ink_level = rng.uniform(0.12, 0.25)
    gray = np.where(ink, ink_level, background) + rng.normal(0, noise, size=(h, w))
    return np.clip(gray, 0, 1).astype(np.float32), ink.astype(np.uint8)


def write_corpus(out_dir, count: int = 8, size: int = 128, seed: int = 0, years=None,
                 noise: float = 0.08) -> Path:
    """Write ``count`` image/ground-truth pairs plus a manifest; returns the manifest path.

    Files are 8-bit PNGs; ground truth stores ink as black (0) on white (255).
    ``years`` cycles tags across records (default: every record tagged 2016).
    """
    from .io import atomic_write_text, write_binary, write_gray

    out = Path(out_dir)
    (out / "img").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    years = list(years) if years else [2016]
    lines: List[str] = []
    for i in range(count):
        gray, ink = synth_document(rng, size, noise)
        img_path = out / "img" / f"doc{i:03d}.png"
        gt_path = out / "gt" / f"doc{i:03d}.png"
        write_gray(img_path, gray)
        write_binary(gt_path, ink)
        lines.append(f"{years[i % len(years)]}\timg/{img_path.name}\tgt/{gt_path.name}")
    manifest = out / "corpus.manifest"
    atomic_write_text(manifest, "\n".join(lines) + "\n")
    return manifest
