"""Dual-path self-supervised training loop."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..autodiff import ParamStore, Tensor, take_batch
from ..autodiff.layers import BN_MOMENTUM
from .data import PairedPatchSet
from .loss import ha2ha_loss, total_loss
from .model import UNetConfig, init_unet, unet_forward
from .optim import AdamW, PlateauSchedule


class TrainingDivergedError(RuntimeError):
    """The training loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    lambda_c: float = 0.5
    lambda_1: float = 1e-5
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 0.0
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    max_epochs: int = 50
    patch: int = 64
    stride: Optional[int] = None
    augment: bool = True
    allow_rot90: bool = False
    precise_bn: bool = True  # recompute BN running stats over the data after training
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.lambda_c <= 1:
            raise ValueError("lambda_c must be in [0, 1]")
        if self.lambda_1 < 0:
            raise ValueError("lambda_1 must be >= 0")
        for name in ("lr", "beta1", "beta2", "plateau_factor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ValueError("Adam betas must be < 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.plateau_patience < 1:
            raise ValueError("plateau_patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patch < 1:
            raise ValueError("batch_size, max_epochs and patch must be >= 1")

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        """Full-scale settings (batch 256, patch 128)."""
        return cls(batch_size=256, patch=128)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    loss: float


def batch_loss(
    unet_cfg: UNetConfig, params: ParamStore, a: np.ndarray, b: np.ndarray, cfg: TrainConfig
) -> Tensor:
    """Total loss for one (B, P, P) batch of pairs.

    Both observations go through the network as a single 2B batch so the two
    paths share parameters and batch statistics.
    """
    n = a.shape[0]
    x = np.concatenate([a, b])[:, None].astype(params.dtype, copy=False)
    out = unet_forward(unet_cfg, params, Tensor(x), "train")
    o1, o2 = take_batch(out, 0, n), take_batch(out, n, 2 * n)
    y1, y2 = Tensor(x[:n]), Tensor(x[n:])
    return total_loss(ha2ha_loss(o1, o2, y1, y2, cfg.lambda_c), params, cfg.lambda_1)


def recalibrate_batch_norm(
    unet_cfg: UNetConfig, params: ParamStore, dataset: PairedPatchSet, batch_size: int
) -> ParamStore:
    """Replace batch-norm running statistics by their average over the data.

    The momentum average only reflects the last few batches; with small,
    heterogeneous batches the deep-layer statistics swing widely, so
    inference-mode outputs drift from what training optimized. Batches are
    formed as in training (a and b together, 2B patches) in dataset order,
    and each contributes equally. Parameters are untouched.
    """
    keys = sorted(k[: -len("running_mean")] for k in params.buffers if k.endswith("running_mean"))
    if not keys:
        return params
    sums = {k: [0.0, 0.0] for k in keys}
    count = 0
    n = len(dataset)
    for start in range(0, n, batch_size):
        a, b = dataset.a[start : start + batch_size], dataset.b[start : start + batch_size]
        if a.shape[0] * a.shape[1] * a.shape[2] < 2:
            continue
        for k in keys:
            params.buffers[k + "running_mean"] = np.zeros_like(params.buffers[k + "running_mean"])
            params.buffers[k + "running_var"] = np.zeros_like(params.buffers[k + "running_var"])
        x = np.concatenate([a, b])[:, None].astype(params.dtype, copy=False)
        unet_forward(unet_cfg, params, Tensor(x), "train")
        # from zeroed buffers the momentum update leaves exactly m * batch statistic
        for k in keys:
            sums[k][0] = sums[k][0] + params.buffers[k + "running_mean"] / BN_MOMENTUM
            sums[k][1] = sums[k][1] + params.buffers[k + "running_var"] / BN_MOMENTUM
        count += 1
    if count == 0:
        raise ValueError("no usable batch for batch-norm recalibration")
    for k in keys:
        dtype = params.buffers[k + "running_mean"].dtype
        params.buffers[k + "running_mean"] = (sums[k][0] / count).astype(dtype)
        params.buffers[k + "running_var"] = (sums[k][1] / count).astype(dtype)
    return params


def train(
    dataset: PairedPatchSet,
    unet_cfg: UNetConfig,
    cfg: TrainConfig,
    params: Optional[ParamStore] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[ParamStore, list[EpochRecord]]:
    """Train the network on paired patches.

    Parameters
    ----------
    dataset
        Normalized patch pairs; (a, b) play the roles of (Y1, Y2).
    unet_cfg, cfg
        Architecture and optimization settings.
    params
        Optional starting parameters (default: fresh init seeded by ``cfg.seed``).
    on_epoch
        Callback receiving each epoch's record.

    Returns
    -------
    (params, history)
        Trained parameters with their batch-norm running statistics
        (recomputed over the whole dataset when ``cfg.precise_bn``), and one
        record per epoch with the learning rate used and the mean batch loss.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if params is None:
        params = init_unet(unet_cfg, seed=cfg.seed)
    opt = AdamW(params, cfg.lr, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    sched = PlateauSchedule(cfg.lr, cfg.plateau_factor, cfg.plateau_patience)
    rng = np.random.default_rng([cfg.seed, 1])
    history: list[EpochRecord] = []
    n = len(dataset)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n)
        lr = opt.lr
        losses, weights = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size * dataset.a.shape[1] * dataset.a.shape[2] < 2:
                continue
            params.zero_grad()
            loss = batch_loss(unet_cfg, params, dataset.a[idx], dataset.b[idx], cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"loss became {value} at epoch {epoch}")
            loss.backward()
            opt.step()
            losses.append(value)
            weights.append(idx.size)
        mean_loss = float(np.average(losses, weights=weights))
        rec = EpochRecord(epoch, lr, mean_loss)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        opt.lr = sched.step(mean_loss)
    params.zero_grad()
    if cfg.precise_bn:
        recalibrate_batch_norm(unet_cfg, params, dataset, cfg.batch_size)
    return params, history
