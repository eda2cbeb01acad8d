"""CNR, SNR and BNP on power Doppler maps with explicit ROI masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .doppler import DopplerMap
from .phantom import RoiSet

BNP_FLOOR_DB = -300.0


class MetricUndefinedError(ValueError):
    """A metric's precondition does not hold (zero spread, no contrast, ...)."""


@dataclass(frozen=True)
class RoiStats:
    blood_mean: float
    background_mean: float
    noise_mean: float
    noise_std: float


@dataclass(frozen=True)
class MetricRow:
    cnr: float
    snr: float
    bnp: float


def roi_stats(dmap: DopplerMap | np.ndarray, rois: RoiSet) -> RoiStats:
    """Means over each mask and the population std over the noise mask."""
    values = dmap.intensity if isinstance(dmap, DopplerMap) else np.asarray(dmap, dtype=float)
    for name in ("blood", "background", "noise"):
        mask = getattr(rois, name)
        if mask.shape != values.shape:
            raise ValueError(f"{name} mask shape {mask.shape} != map shape {values.shape}")
        if not mask.any():
            raise MetricUndefinedError(f"{name} mask is empty")
    noise = values[rois.noise]
    return RoiStats(
        float(values[rois.blood].mean()),
        float(values[rois.background].mean()),
        float(noise.mean()),
        float(noise.std()),
    )


def cnr(stats: RoiStats) -> float:
    if stats.noise_std <= 0:
        raise MetricUndefinedError("noise standard deviation is zero")
    diff = stats.blood_mean - stats.background_mean
    if diff <= 0:
        raise MetricUndefinedError("no contrast: blood mean does not exceed background")
    return 10.0 * np.log10(diff / stats.noise_std)


def snr(stats: RoiStats) -> float:
    if stats.noise_std <= 0:
        raise MetricUndefinedError("noise standard deviation is zero")
    if stats.blood_mean <= 0:
        raise MetricUndefinedError("blood mean is not positive")
    return 10.0 * np.log10(stats.blood_mean / stats.noise_std)


def bnp(stats: RoiStats) -> float:
    """Background noise power in dB; a zero noise mean maps to -300 dB."""
    if stats.noise_mean <= 0:
        return BNP_FLOOR_DB
    return 10.0 * np.log10(stats.noise_mean)


def _safe(fn, stats):
    try:
        return fn(stats)
    except MetricUndefinedError:
        return float("nan")


def evaluate_map(dmap: DopplerMap, rois: RoiSet) -> MetricRow:
    """All three metrics on the max-normalized map; undefined values are NaN."""
    stats = roi_stats(dmap.normalized(), rois)
    return MetricRow(_safe(cnr, stats), _safe(snr, stats), bnp(stats))
