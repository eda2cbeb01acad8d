"""U-Net assembled from the autodiff primitives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import (
    ParamStore,
    Tensor,
    batch_norm,
    bilinear_up2,
    concat_channels,
    conv2d,
    leaky_relu,
    max_pool2,
)

MODES = ("train", "infer")


@dataclass(frozen=True)
class UNetConfig:
    """``levels`` counts pooling steps; channel width at depth d is
    ``base * 2**d`` with the bottleneck at depth ``levels``. ``zero_head``
    starts the 1x1 output conv at zero so the untrained net predicts 0, the
    conditional mean of pure noise."""

    levels: int = 4
    base: int = 16
    in_channels: int = 1
    out_channels: int = 1
    slope: float = 0.1
    zero_head: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base < 1 or self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if not 0 <= self.slope < 1:
            raise ValueError("leaky slope must be in [0, 1)")

    @property
    def multiple(self) -> int:
        return 2**self.levels

    def widths(self) -> list[int]:
        return [self.base * 2**d for d in range(self.levels + 1)]


def _block_specs(cfg: UNetConfig) -> list[tuple[str, int, int]]:
    """(prefix, in, out) for every double-conv block in forward order."""
    w = cfg.widths()
    specs = []
    cin = cfg.in_channels
    for d in range(cfg.levels):
        specs.append((f"enc{d}", cin, w[d]))
        cin = w[d]
    specs.append(("mid", w[cfg.levels - 1], w[cfg.levels]))
    for d in reversed(range(cfg.levels)):
        specs.append((f"dec{d}", w[d + 1] + w[d], w[d]))
    return specs


def param_count(cfg: UNetConfig) -> int:
    """Trainable scalars: per 3x3 conv 9*in*out + out (bias), per batch norm
    2*out, final 1x1 conv base*out + out."""
    n = 0
    for _, cin, cout in _block_specs(cfg):
        n += 9 * cin * cout + cout + 2 * cout
        n += 9 * cout * cout + cout + 2 * cout
    n += cfg.base * cfg.out_channels + cfg.out_channels
    return n


def init_unet(cfg: UNetConfig, seed: int = 0, dtype=np.float32) -> ParamStore:
    """Kaiming-normal conv weights (fan-in, leaky gain), zero biases,
    batch-norm gamma 1 and beta 0. The head weight is zeroed when
    ``cfg.zero_head`` is set."""
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    gain = np.sqrt(2.0 / (1.0 + cfg.slope**2))

    def conv(name, cin, cout, k):
        std = gain / np.sqrt(cin * k * k)
        store.add(f"{name}.w", rng.standard_normal((cout, cin, k, k)) * std, regularized=True)
        store.add(f"{name}.b", np.zeros(cout), regularized=True)

    def bn(name, c):
        store.add(f"{name}.gamma", np.ones(c))
        store.add(f"{name}.beta", np.zeros(c))
        store.add_buffer(f"{name}.running_mean", np.zeros(c))
        store.add_buffer(f"{name}.running_var", np.ones(c))
        store.add_buffer(f"{name}.num_batches", 0.0)

    for prefix, cin, cout in _block_specs(cfg):
        conv(f"{prefix}.conv1", cin, cout, 3)
        bn(f"{prefix}.bn1", cout)
        conv(f"{prefix}.conv2", cout, cout, 3)
        bn(f"{prefix}.bn2", cout)
    conv("head", cfg.base, cfg.out_channels, 1)
    if cfg.zero_head:
        store["head.w"].data[...] = 0
    return store


def _double_conv(x: Tensor, p: ParamStore, prefix: str, training: bool, slope: float) -> Tensor:
    for i in (1, 2):
        x = conv2d(x, p[f"{prefix}.conv{i}.w"], p[f"{prefix}.conv{i}.b"])
        bn = f"{prefix}.bn{i}"
        x = batch_norm(x, p[f"{bn}.gamma"], p[f"{bn}.beta"], p.buffers, f"{bn}.", training)
        x = leaky_relu(x, slope)
    return x


def unet_forward(cfg: UNetConfig, params: ParamStore, x: Tensor | np.ndarray, mode: str = "train") -> Tensor:
    """Forward pass on (B, C, H, W); H and W must be divisible by 2**levels."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=params.dtype))
    if x.data.ndim != 4:
        raise ValueError(f"expected a (B, C, H, W) input, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % cfg.multiple or w % cfg.multiple:
        raise ValueError(f"spatial dims {(h, w)} must be divisible by {cfg.multiple}")
    training = mode == "train"
    skips = []
    for d in range(cfg.levels):
        x = _double_conv(x, params, f"enc{d}", training, cfg.slope)
        skips.append(x)
        x = max_pool2(x)
    x = _double_conv(x, params, "mid", training, cfg.slope)
    for d in reversed(range(cfg.levels)):
        x = concat_channels(bilinear_up2(x), skips[d])
        x = _double_conv(x, params, f"dec{d}", training, cfg.slope)
    return conv2d(x, params["head.w"], params["head.b"])
