"""Layer-level differentiable operations: matmul, convolution, normalization, losses."""
from __future__ import annotations

from typing import Optional, Tuple, Union

import numpy as np

from ..errors import ParameterError, ShapeError
from .tensor import Tensor, _sigmoid, make_result

IntPair = Union[int, Tuple[int, int]]


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return make_result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x[..., in] @ weight[in, out] + bias[out]``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, weight.shape[0])
    out = x2 @ weight.data
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear: bias {bias.shape} vs {weight.shape[1]} outputs")
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        return (gx, gw) if bias is None else (gx, gw, g2.sum(axis=0))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "linear")


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every input index must survive in the output or the other operand."""
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        stray = set(own) - set(other) - set(out_sub)
        if stray:
            raise ParameterError(f"einsum index {sorted(stray)} appears in only one operand")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)

    def backward(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True)
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True)
        return ga, gb

    return make_result(out, (a, b), backward, "einsum")


def _pair(v: IntPair) -> Tuple[int, int]:
    return (v, v) if isinstance(v, int) else (int(v[0]), int(v[1]))


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: IntPair = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding.

    ``x`` is ``B×C_in×H×W`` and ``weight`` is ``C_out×(C_in/groups)×kh×kw``.
    Only dense (``groups=1``) and depthwise (``groups=C_in=C_out``) layouts
    are supported.  Dense convolutions run as a single channels-last im2col
    GEMM; depthwise ones accumulate one tap at a time.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    Co, Cg, kh, kw = weight.shape
    ph, pw = _pair(padding)
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    if groups == 1:
        if Cg != C:
            raise ShapeError(f"conv2d: input has {C} channels, kernel expects {Cg}")
    elif groups == C and Co == C and Cg == 1:
        pass
    else:
        raise ParameterError(f"unsupported grouping groups={groups} for kernel {weight.shape} and input {x.shape}")
    if H + 2 * ph < kh or W + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {H + 2 * ph}x{W + 2 * pw}")
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    wd = weight.data
    rows = [slice(i, i + stride * (Ho - 1) + 1, stride) for i in range(kh)]
    cols = [slice(j, j + stride * (Wo - 1) + 1, stride) for j in range(kw)]
    depthwise = groups != 1

    if depthwise:
        out = np.zeros((B, C, Ho, Wo), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                out += xp[:, :, rows[i], cols[j]] * wd[:, 0, i, j][None, :, None, None]
    else:
        # channels-last im2col: one GEMM of (B·Ho·Wo, kh·kw·C) by (kh·kw·C, Co)
        xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
        win = np.lib.stride_tricks.sliding_window_view(xl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
        colmat = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * C)
        wmat = np.ascontiguousarray(wd.transpose(2, 3, 1, 0)).reshape(kh * kw * C, Co)
        out = np.ascontiguousarray((colmat @ wmat).reshape(B, Ho, Wo, Co).transpose(0, 3, 1, 2))
    if bias is not None:
        if bias.shape != (Co,):
            raise ShapeError(f"conv2d: bias {bias.shape} vs {Co} output channels")
        out += bias.data[None, :, None, None]

    def backward(g):
        if depthwise:
            gxp = np.zeros_like(xp)
            gw = np.zeros_like(wd)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, rows[i], cols[j]] += g * wd[:, 0, i, j][None, :, None, None]
                    gw[:, 0, i, j] = np.einsum("bchw,bchw->c", g, xp[:, :, rows[i], cols[j]])
        else:
            gl = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, Co)
            gw = np.ascontiguousarray((colmat.T @ gl).reshape(kh, kw, C, Co).transpose(3, 2, 0, 1))
            if stride == 1 and ph < kh and pw < kw:
                # input gradient as a correlation of the padded output gradient with the flipped kernel
                lo_h, lo_w = kh - 1 - ph, kw - 1 - pw
                gpad = np.pad(gl.reshape(B, Ho, Wo, Co), ((0, 0), (lo_h, lo_h), (lo_w, lo_w), (0, 0)))
                gwin = np.lib.stride_tricks.sliding_window_view(gpad, (kh, kw), axis=(1, 2))
                gcm = np.ascontiguousarray(gwin.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * Co)
                wflip = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)).reshape(kh * kw * Co, C)
                gx = (gcm @ wflip).reshape(B, H, W, C).transpose(0, 3, 1, 2)
                grads = (np.ascontiguousarray(gx), gw)
                return grads if bias is None else grads + (g.sum(axis=(0, 2, 3)),)
            gcol = (gl @ wmat.T).reshape(B, Ho, Wo, kh, kw, C)
            gxl = np.zeros((B,) + xp.shape[2:] + (C,), dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxl[:, rows[i], cols[j]] += gcol[:, :, :, i, j]
            gxp = gxl.transpose(0, 3, 1, 2)
        gx = gxp[:, :, ph:ph + H, pw:pw + W] if ph or pw else gxp
        grads = (np.ascontiguousarray(gx), gw)
        if bias is not None:
            grads = grads + (g.sum(axis=(0, 2, 3)),)
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv2d")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    D = x.shape[-1]
    if gain.shape != (D,) or bias.shape != (D,):
        raise ShapeError(f"layer_norm: last dim {D} vs gain {gain.shape} / bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gain.data + bias.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        ggain = (g * xhat).sum(axis=red)
        gbias = g.sum(axis=red)
        gx_hat = g * gain.data
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return make_result(out.astype(x.dtype, copy=False), (x, gain, bias), backward, "layer_norm")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the two trailing axes."""
    if factor == 1:
        return x
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)
    lead = x.shape[:-2]
    H, W = x.shape[-2:]

    def backward(g):
        return (g.reshape(lead + (H, factor, W, factor)).sum(axis=(-3, -1)),)

    return make_result(out, (x,), backward, "upsample")


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping mean pooling of the two trailing axes."""
    if factor == 1:
        return x
    H, W = x.shape[-2:]
    if H % factor or W % factor:
        raise ShapeError(f"avg_pool2d: {H}x{W} not divisible by {factor}")
    lead = x.shape[:-2]
    out = x.data.reshape(lead + (H // factor, factor, W // factor, factor)).mean(axis=(-3, -1))
    scale = x.dtype.type(1.0 / (factor * factor))

    def backward(g):
        return ((g * scale).repeat(factor, axis=-2).repeat(factor, axis=-1),)

    return make_result(out.astype(x.dtype, copy=False), (x,), backward, "avg_pool")


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against a {0,1} target."""
    if logits.shape != target.shape:
        raise ShapeError(f"bce: logits {logits.shape} vs target {target.shape}")
    z = logits.data
    t = target.astype(z.dtype, copy=False)
    n = z.dtype.type(z.size)
    loss = (np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def backward(g):
        return (g * (_sigmoid(z) - t) / n,)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward, "bce")
