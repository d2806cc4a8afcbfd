"""Masked smooth-L1 objective, Adam, per-epoch exponential decay and the training loop."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, restore_model, save_checkpoint, snapshot
from .data import AugmentConfig, NormalizationStats, atomic_write_bytes, augment_sample, network_input
from .errors import ConfigurationError, NoValidPixelsError
from .model import UsamNet, forward
from .tensor import Tensor, backward

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    base_lr: float = 1e-3
    lr_decay: float = 0.9
    batch_size: int = 2
    smooth_l1_beta: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    # stop after this many optimizer steps in total (None: run every epoch)
    max_steps: Optional[int] = None
    # batches per epoch; None means one pass over the data.  Larger values cycle
    # through reshuffled passes, which lets tiny datasets follow a per-epoch schedule.
    steps_per_epoch: Optional[int] = None
    shuffle: bool = True

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigurationError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigurationError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigurationError("steps_per_epoch must be positive")
        if self.smooth_l1_beta <= 0:
            raise ConfigurationError(f"smooth_l1_beta must be positive, got {self.smooth_l1_beta}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("augment"), dict):
            d["augment"] = AugmentConfig(**d["augment"])
        return cls(**d)


def smooth_l1_masked_loss(pred: Tensor, target: np.ndarray, valid_mask: np.ndarray, beta: float = 1.0) -> Tensor:
    """Mean smooth-L1 (Huber) loss over valid pixels only."""
    target = np.asarray(target)
    valid = np.asarray(valid_mask, dtype=bool)
    if pred.shape != target.shape or pred.shape != valid.shape:
        raise ConfigurationError(f"pred {pred.shape}, target {target.shape} and mask {valid.shape} must agree")
    if beta <= 0:
        raise ConfigurationError(f"beta must be positive, got {beta}")
    n = int(valid.sum())
    if n == 0:
        raise NoValidPixelsError("loss has no valid pixels")
    dtype = pred.dtype.type
    d = np.where(valid, pred.data - target.astype(pred.dtype), dtype(0))
    ad = np.abs(d)
    small = ad < beta
    per_pixel = np.where(small, 0.5 * d * d / dtype(beta), ad - dtype(0.5 * beta))
    loss = per_pixel[valid].sum(dtype=pred.dtype) / dtype(n)

    def backward_fn(g):
        grad = np.where(small, d / dtype(beta), np.sign(d)) * valid
        return ((grad * (g / dtype(n))).astype(pred.dtype),)

    return Tensor._from_op(np.asarray(loss, dtype=pred.dtype), (pred,), backward_fn)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params, grads and optimizer state must have the same length")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    return config.base_lr * config.lr_decay**epoch


@dataclass
class LossRecord:
    epoch: int
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_log: list
    skipped: list = field(default_factory=list)  # (epoch, batch_index) of all-invalid batches


def write_loss_log(records: Sequence[LossRecord], path, append: bool = False) -> None:
    """Write (or extend) the CSV loss log atomically."""
    path = Path(path)
    buf = io.StringIO()
    if append and path.exists():
        buf.write(path.read_text())
    else:
        buf.write("epoch,step,lr,loss\n")
    writer = csv.writer(buf, lineterminator="\n")
    for r in records:
        writer.writerow([r.epoch, r.step, repr(r.lr), repr(r.loss)])
    atomic_write_bytes(path, buf.getvalue().encode())


def read_loss_log(path) -> list:
    with open(path, newline="") as fh:
        return [LossRecord(int(r["epoch"]), int(r["step"]), float(r["lr"]), float(r["loss"])) for r in csv.DictReader(fh)]


def _epoch_order(config: TrainConfig, epoch: int, n: int, length: int) -> np.ndarray:
    """Sample indices for one epoch: whole (reshuffled) passes over the data, cut to ``length``."""
    passes = -(-length // n)
    if not config.shuffle:
        return np.tile(np.arange(n), passes)[:length]
    return np.concatenate([np.random.default_rng([config.seed, epoch, k]).permutation(n) for k in range(passes)])[:length]


def train_epochs(
    model: UsamNet,
    samples: Sequence,
    config: TrainConfig,
    resume: Optional[Checkpoint] = None,
    checkpoint_dir=None,
    stats: NormalizationStats = NormalizationStats(),
    on_step: Optional[Callable[[LossRecord], None]] = None,
) -> TrainResult:
    """Train ``model`` on in-memory ``samples``.

    Each batch is augmented, normalized, concatenated into the network input
    and pushed through forward/loss/backward/Adam.  All randomness derives from
    ``config.seed`` plus the epoch and sample index, so a run resumed from a
    checkpoint replays exactly what the uninterrupted run would have done.
    When ``checkpoint_dir`` is given a checkpoint is written after every epoch
    (``epoch_XXX.ckpt``) and on early stop (``last.ckpt``).
    """
    if not samples:
        raise ConfigurationError("training needs at least one sample")
    params = model.parameters()
    if resume is not None:
        restore_model(model, resume)
        adam = AdamState([a.copy() for a in resume.adam.m], [a.copy() for a in resume.adam.v], resume.adam.t)
        epoch, batch_index, step = resume.epoch, resume.batch_index, resume.step
    else:
        adam = AdamState.zeros_like(params)
        epoch, batch_index, step = 0, 0, 0
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    use_seg = model.config.use_segmentation
    n = len(samples)
    batches_per_epoch = config.steps_per_epoch or -(-n // config.batch_size)
    epoch_len = n if config.steps_per_epoch is None else batches_per_epoch * config.batch_size
    log, skipped = [], []

    def done() -> bool:
        return config.max_steps is not None and step >= config.max_steps

    while epoch < config.epochs and not done():
        order = _epoch_order(config, epoch, n, epoch_len)
        lr = lr_at_epoch(config, epoch)
        while batch_index < batches_per_epoch and not done():
            idx = order[batch_index * config.batch_size : (batch_index + 1) * config.batch_size]
            batch = [augment_sample(samples[i], config.augment, [config.seed, epoch, int(i)]) for i in idx]
            x = network_input(batch, use_seg, stats)
            target = np.stack([s.disparity_gt for s in batch])
            valid = np.stack([s.valid_mask for s in batch])
            batch_index += 1
            if not valid.any():
                logger.warning("epoch %d batch %d has no valid pixels; skipped", epoch, batch_index - 1)
                skipped.append((epoch, batch_index - 1))
                continue
            pred = forward(model, x, "train")
            loss = smooth_l1_masked_loss(pred, target, valid, config.smooth_l1_beta)
            model.zero_grad()
            backward(loss)
            adam_step(params, [p.grad for p in params], adam, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
            step += 1
            record = LossRecord(epoch, step, lr, loss.item())
            log.append(record)
            if on_step is not None:
                on_step(record)
        if batch_index >= batches_per_epoch:
            epoch, batch_index = epoch + 1, 0
            if ckpt_dir is not None:
                save_checkpoint(snapshot(model, adam, epoch, batch_index, step, config), ckpt_dir / f"epoch_{epoch:03d}.ckpt")
    final = snapshot(model, adam, epoch, batch_index, step, config)
    if ckpt_dir is not None:
        save_checkpoint(final, ckpt_dir / "last.ckpt")
    return TrainResult(final, log, skipped)
