"""Sliding-window inference: pad, cut into patches, predict, stitch, threshold, crop."""
from __future__ import annotations

from typing import Tuple

import numpy as np

from ..core.tensor import Tensor, no_grad, sigmoid
from ..errors import ConfigError, ShapeError
from ..model import AMSDBNet, ModelConfig
from .checkpoint import Checkpoint, load_into
from .patches import extract_patches, reflect_pad_to, stitch, threshold

PATCH_SIZE = 128


def model_from_checkpoint(ckpt: Checkpoint) -> AMSDBNet:
    model = AMSDBNet(ModelConfig.from_dict(ckpt.config))
    load_into(model, ckpt.params)
    return model


def predict_patches(model: AMSDBNet, patches: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Ink probabilities for ``N×P×P×C`` patches, as ``N×P×P``."""
    out = []
    with no_grad():
        for i in range(0, len(patches), batch_size):
            x = np.ascontiguousarray(patches[i:i + batch_size].transpose(0, 3, 1, 2), dtype=np.float32)
            prob = sigmoid(model(Tensor(x)).logits[0])
            out.append(prob.data[:, 0])
    return np.concatenate(out, axis=0)


def predict_probability(model: AMSDBNet, image: np.ndarray, stride: int = 64,
                        patch_size: int = PATCH_SIZE, batch_size: int = 16) -> np.ndarray:
    """Stitched ``H×W`` ink probability for an ``H×W×C`` image."""
    if image.ndim != 3 or image.shape[2] != model.config.in_channels:
        raise ShapeError(f"expected H×W×{model.config.in_channels} image, got {image.shape}")
    f = model.config.downsample_factor
    if patch_size % f:
        raise ConfigError(f"patch size {patch_size} is not a multiple of the downsample factor {f}")
    H, W = image.shape[:2]
    padded = reflect_pad_to(image, max(H, patch_size), max(W, patch_size))
    grid, patches = extract_patches(padded, patch_size, stride)
    prob = stitch(predict_patches(model, patches, batch_size), grid)
    return prob[:H, :W]


def infer(model_or_ckpt, image: np.ndarray, stride: int = 64, patch_size: int = PATCH_SIZE,
          batch_size: int = 16) -> Tuple[np.ndarray, np.ndarray]:
    """``(probability, binary)`` for one image; binary is uint8 with 1 = ink."""
    model = model_from_checkpoint(model_or_ckpt) if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    prob = predict_probability(model, image, stride, patch_size, batch_size)
    return prob, threshold(prob)
