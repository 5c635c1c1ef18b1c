"""Deterministic patch-based training loop."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.optim import Adam
from ..core.tensor import Tensor
from ..errors import DataError, NumericError, ParameterError
from ..evalkit.metrics import UndefinedMetricError, f_measure
from ..model import AMSDBNet, ModelConfig, loss
from .checkpoint import Checkpoint
from .infer import PATCH_SIZE, predict_probability
from .io import DatasetIndex, read_binary, read_rgb
from .patches import PatchGrid, augment, context_window, reflect_pad_to, threshold

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    stride: int = 64
    patch_size: int = PATCH_SIZE
    context: int = 16          # extra pixels around each patch for random cropping
    augment: bool = True
    val_fraction: float = 0.0
    eval_every: int = 50
    scale_weights: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.steps < 0:
            raise ParameterError("steps must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ParameterError("val_fraction must be in [0, 1)")
        if self.lr < 0:
            raise ParameterError("lr must be >= 0")
        if self.eval_every < 1:
            raise ParameterError("eval_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale_weights"] = list(self.scale_weights) if self.scale_weights is not None else None
        return d


@dataclass
class LogRow:
    step: int
    loss: float
    val_fm: Optional[float] = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: List[LogRow] = field(default_factory=list)
    val_records: List[int] = field(default_factory=list)

    def csv(self) -> str:
        lines = ["step,loss,val_FM"]
        for r in self.log:
            fm = "" if r.val_fm is None else f"{r.val_fm:.4f}"
            lines.append(f"{r.step},{r.loss:.6f},{fm}")
        return "\n".join(lines) + "\n"


def load_pairs(index: DatasetIndex) -> List[Tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for rec in index:
        img, gt = read_rgb(rec.image), read_binary(rec.gt)
        if img.shape[:2] != gt.shape:
            raise DataError(f"{rec.image} is {img.shape[:2]} but its ground truth {rec.gt} is {gt.shape}")
        pairs.append((img, gt))
    return pairs


def _split_validation(n: int, fraction: float, rng: np.random.Generator) -> Tuple[List[int], List[int]]:
    n_val = int(round(fraction * n))
    n_val = min(n_val, n - 1)
    order = rng.permutation(n)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def _batch_stream(n: int, batch: int, rng: np.random.Generator):
    """Endless stream of index batches drawn from successive shuffles of ``range(n)``."""
    buf: List[int] = []
    while True:
        while len(buf) < batch:
            buf.extend(rng.permutation(n).tolist())
        yield buf[:batch]
        buf = buf[batch:]


def checkpoint_of(model: AMSDBNet, opt: Optional[Adam], seed: int, step: int, meta=None) -> Checkpoint:
    names = [n for n, _ in model.named_parameters()]
    params = {n: p.data.copy() for n, p in model.named_parameters()}
    optimizer = None
    if opt is not None:
        optimizer = {}
        for n, m, v in zip(names, opt.state.m, opt.state.v):
            optimizer[f"m.{n}"] = m.copy()
            optimizer[f"v.{n}"] = v.copy()
    return Checkpoint(
        config=model.config.to_dict(), params=params, optimizer=optimizer,
        optimizer_step=opt.state.t if opt is not None else 0, seed=seed, step=step, meta=meta or {},
    )


def validation_fm(model: AMSDBNet, pairs, stride: int, patch_size: int) -> Optional[float]:
    scores = []
    for img, gt in pairs:
        pred = threshold(predict_probability(model, img, stride, patch_size))
        try:
            scores.append(f_measure(pred, gt)[2])
        except UndefinedMetricError:
            continue
    return float(np.mean(scores)) if scores else None


def train(model_config: ModelConfig, cfg: TrainConfig, index: DatasetIndex,
          pairs: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None) -> TrainResult:
    """Train from scratch; identical inputs and seed give bit-identical results."""
    if len(index) == 0 and not pairs:
        raise DataError("training index is empty")
    pairs = pairs if pairs is not None else load_pairs(index)
    if model_config.downsample_factor > cfg.patch_size or cfg.patch_size % model_config.downsample_factor:
        raise ParameterError(f"patch size {cfg.patch_size} incompatible with downsample factor "
                             f"{model_config.downsample_factor}")

    model = AMSDBNet(model_config, np.random.default_rng(cfg.seed))
    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    train_ids, val_ids = _split_validation(len(pairs), cfg.val_fraction, data_rng)

    size = cfg.patch_size
    padded, samples = [], []
    for i in train_ids:
        img, gt = pairs[i]
        H, W = gt.shape
        img_p = reflect_pad_to(img, max(H, size), max(W, size))
        gt_p = reflect_pad_to(gt, max(H, size), max(W, size))
        padded.append((img_p, gt_p))
        grid = PatchGrid.build(gt_p.shape[0], gt_p.shape[1], size, cfg.stride)
        samples.extend((len(padded) - 1, o) for o in grid.origins)
    val_pairs = [pairs[i] for i in val_ids]

    opt = Adam(model.parameters(), lr=cfg.lr)
    stream = _batch_stream(len(samples), min(cfg.batch_size, len(samples)), data_rng)
    rows: List[LogRow] = []
    for step in range(1, cfg.steps + 1):
        ids = next(stream)
        xs, ys = [], []
        for sid in ids:
            k, origin = samples[sid]
            img, gt = padded[k]
            if cfg.augment:
                r0, r1, c0, c1 = context_window(gt.shape[0], gt.shape[1], origin, size, cfg.context)
                x, y = augment(img[r0:r1, c0:c1], gt[r0:r1, c0:c1], data_rng, size)
            else:
                r, c = origin
                x, y = img[r:r + size, c:c + size], gt[r:r + size, c:c + size]
            xs.append(x.transpose(2, 0, 1))
            ys.append(y)
        x = Tensor(np.ascontiguousarray(np.stack(xs), dtype=np.float32))
        y = np.stack(ys).astype(np.float32)
        try:
            value = loss(model(x), y, cfg.scale_weights)
            value.backward()
        except NumericError as exc:
            raise NumericError(f"non-finite value at step {step} (batch samples {ids}): {exc}") from exc
        lval = value.item()
        if not np.isfinite(lval):
            raise NumericError(f"non-finite loss {lval} at step {step} (batch samples {ids})")
        for name, p in model.named_parameters():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for {name} at step {step} (batch samples {ids})")
        opt.step()
        opt.zero_grad()
        row = LogRow(step, lval)
        if val_pairs and (step % cfg.eval_every == 0 or step == cfg.steps):
            row.val_fm = validation_fm(model, val_pairs, cfg.stride, size)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            log.info("step %d loss %.5f val_FM %s", step, lval, row.val_fm)
        rows.append(row)

    meta = {"train": cfg.to_dict(), "val_records": val_ids}
    return TrainResult(checkpoint_of(model, opt, cfg.seed, cfg.steps, meta), rows, val_ids)
