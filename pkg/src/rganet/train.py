"""Deterministic training loop.

Batch order and augmentation draws are pure functions of (seed, step), so a
run resumed from a checkpoint replays exactly what the uninterrupted run did.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import checkpoint
from .augment import AugmentConfig, PairedSample, augment, mixup
from .losses import DEFAULT_LAMBDA, loss_total
from .metrics import metrics as image_metrics
from .network import ModelConfig, init_params, rganet_forward
from .optim import OptimizerState, ScheduleConfig, lr_at, optimizer_step
from .params import ParamStore
from .tensor import Tape, Tensor, backward

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-4
    eta_min: float = 1e-6
    warmup_steps: int = 500
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = DEFAULT_LAMBDA
    checkpoint_every: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.lr, self.eta_min, self.steps, min(self.warmup_steps, self.steps - 1))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "augment" in d and isinstance(d["augment"], dict):
            d["augment"] = AugmentConfig(**d["augment"])
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class LogRow:
    step: int
    lr: float
    l2: float
    ssim_term: float
    total: float

    def tsv(self) -> str:
        return f"{self.step}\t{self.lr!r}\t{self.l2!r}\t{self.ssim_term!r}\t{self.total!r}"


@dataclass
class TrainResult:
    params: ParamStore
    optimizer: OptimizerState
    log: List[LogRow]


def batch_indices(step: int, n: int, batch: int, seed: int) -> List[int]:
    """Sample indices for ``step``; epochs are seeded permutations laid end to end."""
    out = []
    for pos in range(step * batch, (step + 1) * batch):
        epoch, k = divmod(pos, n)
        out.append(int(np.random.default_rng([seed, 0, epoch]).permutation(n)[k]))
    return out


def make_batch(dataset: Sequence[PairedSample], step: int, hyper: TrainConfig, seed: int,
               dtype=np.float32):
    idx = batch_indices(step, len(dataset), hyper.batch_size, seed)
    rng = np.random.default_rng([seed, 1, step])
    inputs, targets = [], []
    for i in idx:
        s = augment(dataset[i], hyper.augment, rng)
        if hyper.augment.mixup_enabled and len(dataset) > 1:
            other = augment(dataset[int(rng.integers(0, len(dataset)))], hyper.augment, rng)
            if other.input_image.shape == s.input_image.shape:
                s = mixup(s, other, rng, hyper.augment.mixup_beta_param)
        inputs.append(s.input_image)
        targets.append(s.target_image)
    return np.stack(inputs).astype(dtype), np.stack(targets).astype(dtype)


def train_step(params: ParamStore, cfg: ModelConfig, state: OptimizerState, x: np.ndarray,
               y: np.ndarray, lr: float, lam: float):
    with Tape() as tape:
        pred = rganet_forward(Tensor(x), cfg, params, train=True)
        loss = loss_total(pred, y, lam)
    if not math.isfinite(loss.total):
        raise TrainingDiverged(f"loss became {loss.total} at step {state.step}")
    backward(tape, loss.tensor, params.tensors())
    optimizer_step(params, state, lr)
    return loss


def train(cfg: ModelConfig, dataset: Sequence[PairedSample], hyper: TrainConfig, seed: int = 0,
          params: Optional[ParamStore] = None, optimizer: Optional[OptimizerState] = None,
          stop_at: Optional[int] = None, log_path=None, checkpoint_path=None,
          on_step: Optional[Callable[[LogRow], None]] = None) -> TrainResult:
    """Train for ``hyper.steps`` total optimizer steps.

    Passing ``params``/``optimizer`` from a checkpoint resumes at
    ``optimizer.step``. ``stop_at`` ends early without changing the schedule.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    if params is None:
        params = init_params(cfg, seed)
    if optimizer is None:
        optimizer = OptimizerState.for_params(params)
    optimizer.lr_base, optimizer.beta1, optimizer.beta2 = hyper.lr, hyper.beta1, hyper.beta2
    optimizer.eps, optimizer.weight_decay = hyper.eps, hyper.weight_decay
    sched = hyper.schedule()
    end = hyper.steps if stop_at is None else min(stop_at, hyper.steps)
    rows: List[LogRow] = []
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "a" if optimizer.step else "w")
    try:
        while optimizer.step < end:
            step = optimizer.step
            lr = lr_at(step, sched)
            x, y = make_batch(dataset, step, hyper, seed)
            loss = train_step(params, cfg, optimizer, x, y, lr, hyper.lam)
            row = LogRow(step, lr, loss.l2, loss.ssim_term, loss.total)
            rows.append(row)
            if log_file:
                log_file.write(row.tsv() + "\n")
                log_file.flush()
            if on_step:
                on_step(row)
            if step % 100 == 0:
                log.info("step %d lr %.3g loss %.5f", step, lr, loss.total)
            if checkpoint_path and hyper.checkpoint_every and optimizer.step % hyper.checkpoint_every == 0:
                checkpoint.save_checkpoint(checkpoint_path, cfg, params, optimizer)
    finally:
        if log_file:
            log_file.close()
    if checkpoint_path:
        checkpoint.save_checkpoint(checkpoint_path, cfg, params, optimizer)
    return TrainResult(params, optimizer, rows)


def restore(cfg: ModelConfig, params: ParamStore, images: np.ndarray, batch: int = 4) -> np.ndarray:
    """Inference on (n, 3, h, w) images; output clamped to [0, 1]."""
    out = []
    for i in range(0, len(images), batch):
        out.append(rganet_forward(images[i:i + batch].astype(params.tensors()[0].dtype),
                                  cfg, params, train=False).data)
    return np.concatenate(out)


def evaluate(cfg: ModelConfig, params: ParamStore, samples: Sequence[PairedSample],
             lam: float = DEFAULT_LAMBDA) -> dict:
    """Mean metrics and loss of restored vs. target, plus the smoky-input baseline."""
    x = np.stack([s.input_image for s in samples])
    y = np.stack([s.target_image for s in samples])
    pred = restore(cfg, params, x)
    res = {"restored": image_metrics(pred, y), "input": image_metrics(x, y)}
    res["restored"]["loss"] = float(np.mean([loss_total(pred[i:i + 1].astype(np.float64),
                                                        y[i:i + 1].astype(np.float64), lam).total
                                             for i in range(len(pred))]))
    res["input"]["loss"] = float(np.mean([loss_total(x[i:i + 1].astype(np.float64),
                                                     y[i:i + 1].astype(np.float64), lam).total
                                          for i in range(len(x))]))
    return res
