"""Differentiable selective scan backed by a compiled kernel when available.

Set ``AMSDB_PURE_PYTHON=1`` to force the numpy fallback.
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import ShapeError
from . import _scan_ref
from .tensor import Tensor, make_result

_kernels = {"python": _scan_ref}
try:
    if os.environ.get("AMSDB_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _scan as _compiled  # type: ignore[attr-defined]

    _kernels["compiled"] = _compiled
    BACKEND = "compiled"
except ImportError:
    BACKEND = "python"


def available_backends() -> list:
    return sorted(_kernels)


def set_backend(name: str) -> None:
    global BACKEND
    if name not in _kernels:
        raise ValueError(f"scan backend {name!r} unavailable; have {available_backends()}")
    BACKEND = name


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, Bm: Tensor, Cm: Tensor, D: Tensor,
                   backend: str | None = None) -> Tensor:
    """Run the S6 recurrence over ``u`` of shape ``(N, K, L, E)``.

    ``delta`` must already be positive; ``A`` is ``(K, E, S)``, ``Bm``/``Cm``
    are ``(N, K, L, S)``, ``D`` is ``(K, E)``.
    """
    N, K, L, E = u.shape
    S = A.shape[-1]
    if delta.shape != u.shape:
        raise ShapeError(f"delta {delta.shape} vs input {u.shape}")
    if A.shape != (K, E, S) or D.shape != (K, E):
        raise ShapeError(f"A {A.shape} / D {D.shape} incompatible with input {u.shape}")
    if Bm.shape != (N, K, L, S) or Cm.shape != (N, K, L, S):
        raise ShapeError(f"B {Bm.shape} / C {Cm.shape} expected {(N, K, L, S)}")
    kern = _kernels[backend or BACKEND]
    dtype = u.dtype
    arrays = [np.ascontiguousarray(t.data, dtype=dtype) for t in (u, delta, A, Bm, Cm, D)]
    y, h = kern.scan_forward(*arrays)

    def backward(g):
        return kern.scan_backward(np.ascontiguousarray(g, dtype=dtype), *arrays, h)

    return make_result(np.asarray(y), (u, delta, A, Bm, Cm, D), backward, "selective_scan")
