"""Zhang-Suen thinning, vectorised over the whole image per sub-iteration."""
from __future__ import annotations

import numpy as np


def _neighbours(p: np.ndarray):
    """P2..P9 (clockwise from north) of every interior pixel of a zero-padded image."""
    return (
        p[:-2, 1:-1], p[:-2, 2:], p[1:-1, 2:], p[2:, 2:],
        p[2:, 1:-1], p[2:, :-2], p[1:-1, :-2], p[:-2, :-2],
    )


def skeletonize(img) -> np.ndarray:
    """Thin a binary image to a one-pixel-wide skeleton (uint8 {0,1})."""
    p = np.pad(np.asarray(img).astype(bool), 1).astype(np.uint8)
    while True:
        changed = False
        for first in (True, False):
            n = _neighbours(p)
            core = p[1:-1, 1:-1]
            b = sum(x.astype(np.int16) for x in n)
            ring = n + (n[0],)
            a = sum(((ring[i] == 0) & (ring[i + 1] == 1)).astype(np.int16) for i in range(8))
            p2, _, p4, _, p6, _, p8, _ = n
            if first:
                c1, c2 = p2 & p4 & p6, p4 & p6 & p8
            else:
                c1, c2 = p2 & p4 & p8, p2 & p6 & p8
            kill = (core == 1) & (b >= 2) & (b <= 6) & (a == 1) & (c1 == 0) & (c2 == 0)
            if kill.any():
                core[kill] = 0
                changed = True
        if not changed:
            return p[1:-1, 1:-1].copy()
