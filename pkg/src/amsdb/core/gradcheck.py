"""Central finite-difference checks of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor, mul, reduce_sum


def _project(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Reduce any output to a scalar through fixed random weights."""
    if out.size == 1:
        return reduce_sum(out)
    w = Tensor(rng.standard_normal(out.shape).astype(out.dtype))
    return reduce_sum(mul(out, w))


def _stencil(f: Callable[[], float], flat: np.ndarray, i: int, h: float) -> float:
    """Fourth-order central difference of ``f`` along coordinate ``i`` of ``flat``.

    Truncation error is O(h^4), which lets ``h`` be large enough that
    round-off in ``f`` stays negligible even for tiny derivatives.
    """
    old = flat[i]
    vals = []
    for step in (2 * h, h, -h, -2 * h):
        flat[i] = old + step
        vals.append(f())
    flat[i] = old
    f2p, f1p, f1m, f2m = vals
    return (-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * h)


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float) -> np.ndarray:
    flat = x.reshape(-1)
    if not isinstance(x, np.ndarray) or not np.shares_memory(flat, x):
        raise ValueError("numeric_grad needs an ndarray it can perturb in place")
    g = np.zeros(x.shape, dtype=np.float64)
    gf = g.reshape(-1)
    for i in range(flat.size):
        gf[i] = _stencil(f, flat, i, eps)
    return g


ZERO_GRAD = 1e-9


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``‖a−b‖ / max(‖a‖, ‖b‖)``.

    When both gradients are numerically zero (norms below ``ZERO_GRAD``) the
    ratio is meaningless, so the absolute difference is returned instead.
    """
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = float(np.linalg.norm(a - b))
    if denom < ZERO_GRAD:
        return diff
    return diff / denom


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-3,
                    seed: int = 0, max_entries: int = 0) -> Dict[int, float]:
    """Relative error between analytic and numeric gradients, per input index.

    ``fn(*inputs)`` may return any shape; it is contracted against fixed
    random weights.  ``max_entries > 0`` checks only that many randomly
    chosen coordinates of each input, which keeps large models tractable.
    """
    seed_out = np.random.default_rng(seed)
    proj_state = seed_out.bit_generator.state

    def scalar() -> Tensor:
        rng = np.random.default_rng()
        rng.bit_generator.state = proj_state
        return _project(fn(*inputs), rng)

    for t in inputs:
        t.grad = None
    scalar().backward()
    analytic = [np.zeros(t.shape) if t.grad is None else np.array(t.grad, dtype=np.float64) for t in inputs]

    def value() -> float:
        return float(scalar().data)

    pick = np.random.default_rng(seed + 1)
    errors = {}
    for k, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        if max_entries and t.size > max_entries:
            idx = pick.choice(t.size, size=max_entries, replace=False)
            flat = t.data.reshape(-1)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                num[j] = _stencil(value, flat, i, eps)
            errors[k] = relative_error(analytic[k].reshape(-1)[idx], num)
        else:
            errors[k] = relative_error(analytic[k], numeric_grad(value, t.data, eps))
    return errors
