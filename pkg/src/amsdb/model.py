"""U-shaped binarisation network: selective-scan encoder, residual up-sampling
decoder with a segmentation head per scale, and DoG-filtered skip connections.

Layout for ``dims=(16, 32)``, ``patch_size=4`` and a 128×128 input::

    patch embed 4×4/4      → 32×32×16   stage 1 (VSS blocks)   ─ skip 1
    merge 2×2/2            → 16×16×32   stage 2 (VSS blocks)   ─ skip 2
    decoder  16×16 (skip 2, no upsample) → head @ 1/8
             32×32 (skip 1)              → head @ 1/4
             64×64 (image guide)         → head @ 1/2
             128×128 (image guide)       → head @ 1/1

The two full-resolution recovery stages concatenate the mean-pooled input
image in place of an encoder skip, so fine strokes lost to the 4×4 patch
embedding can be restored.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core.module import Module, param, trunc_normal
from .core.ops import avg_pool2d, bce_with_logits, conv2d, layer_norm, upsample_nearest
from .core.tensor import Tensor, concat, sigmoid, silu, transpose
from .dog import DoGBank, f_dog
from .errors import ConfigError, ShapeError
from .ssm import VSSBlock


class SkipMode(str, enum.Enum):
    PLAIN = "plain"
    DOG = "dog"
    DOG_RESIDUAL = "dog_residual"


@dataclass
class ModelConfig:
    in_channels: int = 3
    dims: Sequence[int] = (16, 32)
    depths: Sequence[int] = (1, 1)
    patch_size: int = 4
    state_dim: int = 8
    expand_ratio: int = 2
    skip_mode: str = SkipMode.DOG_RESIDUAL.value
    dog_scales: int = 3
    dog_sigma0: float = 0.8
    refine_dims: Optional[Sequence[int]] = None

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.depths = [int(d) for d in self.depths]
        if not self.dims or len(self.dims) != len(self.depths):
            raise ConfigError(f"dims {self.dims} and depths {self.depths} must be non-empty and equal length")
        if any(d < 1 for d in self.dims) or any(d < 0 for d in self.depths):
            raise ConfigError("dims must be positive and depths non-negative")
        if self.patch_size < 1 or self.patch_size & (self.patch_size - 1):
            raise ConfigError(f"patch_size must be a power of two, got {self.patch_size}")
        try:
            self.skip_mode = SkipMode(self.skip_mode).value
        except ValueError as exc:
            raise ConfigError(f"unknown skip mode {self.skip_mode!r}") from exc
        if self.dog_scales < 1 or not self.dog_sigma0 > 0:
            raise ConfigError("dog_scales must be >= 1 and dog_sigma0 > 0")
        n_refine = int(math.log2(self.patch_size))
        if self.refine_dims is None:
            self.refine_dims = [max(8, self.dims[0] >> (j + 1)) for j in range(n_refine)]
        self.refine_dims = [int(d) for d in self.refine_dims]
        if len(self.refine_dims) != n_refine:
            raise ConfigError(f"refine_dims needs {n_refine} entries for patch_size {self.patch_size}")

    @property
    def downsample_factor(self) -> int:
        return self.patch_size * 2 ** (len(self.dims) - 1)

    @property
    def num_scales(self) -> int:
        return len(self.dims) + len(self.refine_dims)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys {sorted(extra)}")
        return cls(**d)


@dataclass
class ModelOutput:
    logits: List[Tensor] = field(default_factory=list)  # finest first

    @property
    def prediction(self) -> Tensor:
        return sigmoid(self.logits[0])


def _conv_param(rng, cout, cin, k):
    return param(trunc_normal(rng, (cout, cin, k, k), 1.0 / math.sqrt(cin * k * k)))


class PatchEmbed(Module):
    def __init__(self, cin: int, dim: int, factor: int, rng):
        self.factor = factor
        self.weight = param(trunc_normal(rng, (dim, cin, factor, factor), 0.02))
        self.bias = param(np.zeros(dim))
        self.norm_gain = param(np.ones(dim))
        self.norm_bias = param(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        h = conv2d(x, self.weight, self.bias, stride=self.factor)
        h = layer_norm(transpose(h, (0, 2, 3, 1)), self.norm_gain, self.norm_bias)
        return transpose(h, (0, 3, 1, 2))


class Stage(Module):
    def __init__(self, cin: int, dim: int, depth: int, factor: int, config: ModelConfig, rng):
        self.embed = PatchEmbed(cin, dim, factor, rng)
        self.blocks = [VSSBlock(dim, rng, config.state_dim, config.expand_ratio) for _ in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        x = self.embed(x)
        for block in self.blocks:
            x = block(x)
        return x


class UpBlock(Module):
    """Upsample (when needed) → concat skip → two 3×3 conv+SiLU with a 1×1 residual → head."""

    def __init__(self, cin: int, cskip: int, cout: int, rng):
        cz = cin + cskip
        self.conv1_w = _conv_param(rng, cout, cz, 3)
        self.conv1_b = param(np.zeros(cout))
        self.conv2_w = _conv_param(rng, cout, cout, 3)
        self.conv2_b = param(np.zeros(cout))
        self.res_w = _conv_param(rng, cout, cz, 1)
        self.res_b = param(np.zeros(cout))
        self.head_w = _conv_param(rng, 1, cout, 1)
        self.head_b = param(np.zeros(1))

    def __call__(self, d: Tensor, skip: Tensor) -> Tensor:
        (h, w), (sh, sw) = d.shape[-2:], skip.shape[-2:]
        if (sh, sw) == (2 * h, 2 * w):
            d = upsample_nearest(d, 2)
        elif (sh, sw) != (h, w):
            raise ShapeError(f"skip {sh}x{sw} is neither equal to nor twice decoder input {h}x{w}")
        if d.shape[0] != skip.shape[0]:
            raise ShapeError(f"batch mismatch {d.shape[0]} vs {skip.shape[0]}")
        z = concat([d, skip], axis=1)
        y = silu(conv2d(z, self.conv1_w, self.conv1_b, padding=1))
        y = silu(conv2d(y, self.conv2_w, self.conv2_b, padding=1))
        return y + conv2d(z, self.res_w, self.res_b)

    def head(self, y: Tensor) -> Tensor:
        return conv2d(y, self.head_w, self.head_b)


def skip_transform(feature: Tensor, mode, bank: Optional[DoGBank]) -> Tensor:
    mode = SkipMode(mode)
    if mode is SkipMode.PLAIN:
        return feature
    if bank is None:
        raise ConfigError(f"skip mode {mode.value!r} needs a DoG bank")
    response = f_dog(feature, bank)
    return response if mode is SkipMode.DOG else feature + response


class AMSDBNet(Module):
    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        c = config
        self.stages = []
        cin = c.in_channels
        for i, (dim, depth) in enumerate(zip(c.dims, c.depths)):
            self.stages.append(Stage(cin, dim, depth, c.patch_size if i == 0 else 2, c, rng))
            cin = dim
        # one bank per encoder depth, deepest first
        self.dog_banks = []
        if c.skip_mode != SkipMode.PLAIN.value:
            self.dog_banks = [DoGBank(c.dog_scales, c.dog_sigma0) for _ in c.dims]
        self.up_blocks = []
        cur = c.dims[-1]
        for dim in reversed(c.dims):
            self.up_blocks.append(UpBlock(cur, dim, dim, rng))
            cur = dim
        for rdim in c.refine_dims:
            self.up_blocks.append(UpBlock(cur, c.in_channels, rdim, rng))
            cur = rdim

    def encode(self, x: Tensor) -> List[Tensor]:
        c = self.config
        if x.ndim != 4 or x.shape[1] != c.in_channels:
            raise ShapeError(f"expected B×{c.in_channels}×H×W input, got {x.shape}")
        H, W = x.shape[-2:]
        f = c.downsample_factor
        if H % f or W % f:
            raise ShapeError(f"input {H}x{W} not divisible by the downsample factor {f}; pad first")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats

    def __call__(self, x: Tensor) -> ModelOutput:
        feats = self.encode(x)
        mode = self.config.skip_mode
        logits = []
        d = feats[-1]
        n_enc = len(feats)
        for j, block in enumerate(self.up_blocks):
            if j < n_enc:
                depth = n_enc - 1 - j
                bank = self.dog_banks[depth] if self.dog_banks else None
                skip = skip_transform(feats[depth], mode, bank)
            else:
                r = self.config.patch_size >> (j - n_enc + 1)
                skip = avg_pool2d(x, r)
            d = block(d, skip)
            logits.append(block.head(d))
        return ModelOutput(logits[::-1])

    forward = __call__


def downsample_target(target: np.ndarray, factor: int) -> np.ndarray:
    """Majority vote over ``factor×factor`` cells (ties go to ink)."""
    if factor == 1:
        return target
    B, H, W = target.shape
    cells = target.reshape(B, H // factor, factor, W // factor, factor).mean(axis=(2, 4))
    return (cells >= 0.5).astype(target.dtype)


def default_scale_weights(n: int) -> List[float]:
    return [0.5 ** s for s in range(n)]


def dice_loss(prob: Tensor, target: np.ndarray, smooth: float = 1.0) -> Tensor:
    t = Tensor(target.astype(prob.dtype))
    inter = (prob * t).sum()
    return 1.0 - (2.0 * inter + smooth) / (prob.sum() + float(t.data.sum()) + smooth)


def loss(output: ModelOutput, target: np.ndarray, scale_weights: Optional[Sequence[float]] = None,
         terms: Optional[Dict[str, float]] = None) -> Tensor:
    """Deep-supervision BCE + Dice over every head.

    ``target`` is ``B×H×W`` in {0,1}; head ``s`` sees it majority-downsampled
    to its own resolution.  Heads with zero weight are skipped entirely.
    """
    weights = list(scale_weights) if scale_weights is not None else default_scale_weights(len(output.logits))
    if len(weights) != len(output.logits):
        raise ShapeError(f"{len(weights)} scale weights for {len(output.logits)} heads")
    target = np.asarray(target, dtype=np.float32)
    H, W = output.logits[0].shape[-2:]
    if target.ndim != 3 or target.shape[1:] != (H, W) or target.shape[0] != output.logits[0].shape[0]:
        raise ShapeError(f"target {target.shape} does not match prediction {output.logits[0].shape}")
    total = None
    for lam, logit in zip(weights, output.logits):
        if lam == 0:
            continue
        factor = H // logit.shape[-2]
        t = downsample_target(target, factor)
        z = logit.reshape(t.shape)
        bce = bce_with_logits(z, t)
        dl = dice_loss(sigmoid(z), t)
        if terms is not None:
            terms[f"bce@{factor}"] = bce.item()
            terms[f"dice@{factor}"] = dl.item()
        term = lam * (bce + dl)
        total = term if total is None else total + term
    if total is None:
        raise ConfigError("all scale weights are zero")
    return total
