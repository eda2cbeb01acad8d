"""Full-frame inference with per-frame normalization and reflect padding."""

from __future__ import annotations

import numpy as np

from ..autodiff import NoRunningStatsError, ParamStore
from ..pipeline import RfEnsemble
from .data import shared_scale
from .model import UNetConfig, unet_forward


def _check_trained(params: ParamStore) -> None:
    counts = [v for k, v in params.buffers.items() if k.endswith("num_batches")]
    if not counts or min(float(c) for c in counts) < 1:
        raise NoRunningStatsError("parameters have no batch-norm statistics; train first")


def _pad_amount(n: int, multiple: int) -> tuple[int, int]:
    extra = (-n) % multiple
    return extra // 2, extra - extra // 2


def _reflect_pad(frames: np.ndarray, pads) -> np.ndarray:
    # numpy reflect needs pad < size; fall back to symmetric tiling for tiny frames
    out = frames
    for axis, (lo, hi) in zip((1, 2), pads):
        width = [(0, 0)] * 3
        width[axis] = (lo, hi)
        mode = "reflect" if max(lo, hi) < out.shape[axis] else "symmetric"
        out = np.pad(out, width, mode=mode)
    return out


def denoise_frames(unet_cfg: UNetConfig, params: ParamStore, frames: np.ndarray, batch: int = 8) -> np.ndarray:
    """Denoise a (T, H, W) stack frame by frame; each frame is scaled by its
    own 99th-percentile magnitude and restored afterwards."""
    _check_trained(params)
    frames = np.asarray(frames)
    if frames.ndim == 2:
        return denoise_frames(unet_cfg, params, frames[None], batch)[0]
    n_t, h, w = frames.shape
    scales = np.array([shared_scale(f) for f in frames])
    norm = frames / scales[:, None, None]
    pads = (_pad_amount(h, unet_cfg.multiple), _pad_amount(w, unet_cfg.multiple))
    padded = _reflect_pad(norm, pads).astype(params.dtype)
    out = np.empty((n_t, h, w))
    for s in range(0, n_t, batch):
        y = unet_forward(unet_cfg, params, padded[s : s + batch, None], "infer").data[:, 0]
        out[s : s + batch] = y[:, pads[0][0] : pads[0][0] + h, pads[1][0] : pads[1][0] + w]
    return out * scales[:, None, None]


def denoise_frame(unet_cfg: UNetConfig, params: ParamStore, frame: np.ndarray) -> np.ndarray:
    """Denoise one (H, W) frame."""
    return denoise_frames(unet_cfg, params, np.asarray(frame)[None])[0]


def denoise_ensemble(unet_cfg: UNetConfig, params: ParamStore, ens: RfEnsemble, batch: int = 8) -> RfEnsemble:
    return RfEnsemble(denoise_frames(unet_cfg, params, ens.samples, batch), ens.meta, ens.provenance)
