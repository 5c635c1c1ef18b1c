"""Image files and dataset manifests.

Internally ink is 1 and pixel values live in [0, 1].  On disk, binary images
use the DIBCO convention: ink is black (0) and background white (255).
PNG and binary PGM/PPM (P5/P6) are read; binary outputs are written as PNG or
PGM depending on the suffix.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError, ParameterError

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


def _open(path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return img


def read_rgb(path) -> np.ndarray:
    """``H×W×3`` float32 in [0,1]; grayscale sources are replicated to three channels."""
    img = _open(path)
    if img.mode in ("L", "1", "P", "I;16", "I"):
        g = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
        return np.repeat(g[:, :, None], 3, axis=2)
    return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def read_gray(path) -> np.ndarray:
    """``H×W`` float32 luminance in [0,1]."""
    return np.asarray(_open(path).convert("L"), dtype=np.float32) / 255.0


def to_gray(rgb: np.ndarray) -> np.ndarray:
    if rgb.ndim == 2:
        return rgb
    return (rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114).astype(np.float32)


def read_binary(path) -> np.ndarray:
    """Ground truth as uint8 {0,1} with 1 = ink (dark pixels on disk)."""
    g = np.asarray(_open(path).convert("L"))
    return (g < 128).astype(np.uint8)


def _atomic_save(img: Image.Image, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        img.save(tmp, format=fmt)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_binary(path, ink: np.ndarray) -> None:
    ink = np.asarray(ink)
    if ink.ndim != 2:
        raise ParameterError(f"binary image must be 2-d, got {ink.shape}")
    _atomic_save(Image.fromarray(np.where(ink > 0, 0, 255).astype(np.uint8), mode="L"), path)


def write_gray(path, gray: np.ndarray) -> None:
    g = np.clip(np.rint(np.asarray(gray, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if g.ndim == 3:
        _atomic_save(Image.fromarray(g, mode="RGB"), path)
    else:
        _atomic_save(Image.fromarray(g, mode="L"), path)


def list_images(path) -> List[Path]:
    """A single image file, or every image in a directory sorted by name."""
    p = Path(path)
    if p.is_dir():
        return sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES)
    if not p.exists():
        raise DataError(f"no such file or directory: {p}")
    return [p]


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Record:
    year: str
    image: Path
    gt: Path


@dataclass
class DatasetIndex:
    records: List[Record] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def years(self) -> List[str]:
        return sorted({r.year for r in self.records})


def read_manifest(path, known_years: Optional[Iterable] = None) -> DatasetIndex:
    """Parse ``<year>TAB<degraded>TAB<gt>`` lines; relative paths resolve against the manifest."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    allowed = {str(y) for y in known_years} if known_years is not None else None
    base = path.parent
    records, seen = [], {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        year, img, gt = (p.strip() for p in parts)
        if allowed is not None and year not in allowed:
            raise DataError(f"{path}:{lineno}: year {year!r} not in configured corpus {sorted(allowed)}")
        rec = Record(year, _resolve(base, img), _resolve(base, gt))
        if rec in seen:
            raise DataError(f"{path}:{lineno}: duplicate record (first seen on line {seen[rec]})")
        seen[rec] = lineno
        records.append(rec)
    return DatasetIndex(records)


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else (base / q)


def write_manifest(path, records: Sequence[Record]) -> None:
    """Write records with absolute paths, so the manifest can live anywhere."""
    text = "".join(f"{r.year}\t{r.image.resolve()}\t{r.gt.resolve()}\n" for r in records)
    atomic_write_text(path, text)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
