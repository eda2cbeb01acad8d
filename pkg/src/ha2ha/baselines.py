"""Reference methods: conventional power Doppler, Angular Processing and
spatiotemporal non-local means on axial-temporal planes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .doppler import DopplerMap, power_doppler, power_doppler_ap
from .pipeline import (
    AngleRfCube,
    RfEnsemble,
    SvdFilterConfig,
    compound,
    hilbert_analytic,
    lateral_interpolate,
    split_angles,
    svd_clutter_filter,
)

_MAD_TO_SIGMA = 1.0 / (np.sqrt(2.0) * 0.6745)


def conventional(cube: AngleRfCube, cfg: SvdFilterConfig, interp: int = 1) -> DopplerMap:
    """Power Doppler from the full-angle compound after SVD filtering."""
    ens = svd_clutter_filter(lateral_interpolate(compound(cube), interp), cfg)
    return power_doppler(hilbert_analytic(ens))


def angular_processing(cube: AngleRfCube, cfg: SvdFilterConfig, interp: int = 1) -> DopplerMap:
    """Half-angle subsets compounded and filtered separately, then combined by
    conjugate multiplication."""
    even, odd = split_angles(cube)
    iq = []
    for sub in (odd, even):
        ens = svd_clutter_filter(lateral_interpolate(compound(sub), interp), cfg)
        iq.append(hilbert_analytic(ens))
    return power_doppler_ap(iq[0], iq[1])


@dataclass(frozen=True)
class StNlmConfig:
    """Window sizes are (axial pixels, temporal frames); both must be odd.

    ``h`` is the smoothing parameter in RF amplitude units; when ``None`` it is
    ``h_factor`` times the estimated noise sigma. ``noise_sigma`` overrides the
    MAD-based noise estimate.
    """

    similarity: tuple = (11, 11)
    search: tuple = (23, 23)
    h: Optional[float] = None
    h_factor: float = 1.0
    noise_sigma: Optional[float] = None

    def __post_init__(self):
        for w in self.similarity + self.search:
            if w < 1 or w % 2 == 0:
                raise ValueError("window sizes must be odd and positive")
        if any(s < p for s, p in zip(self.search, self.similarity)):
            raise ValueError("search window must be at least the similarity window")
        if self.h is not None and self.h <= 0:
            raise ValueError("h must be positive")
        if self.h_factor <= 0:
            raise ValueError("h_factor must be positive")

    @classmethod
    def default_windows(cls) -> "StNlmConfig":
        # search = twice the 11-sample similarity window, rounded up to odd
        sim = 11
        search = 2 * sim + 1
        return cls(similarity=(sim, sim), search=(search, search))


def estimate_noise_sigma(samples: np.ndarray, time_axis: int = 0) -> float:
    """MAD of first-order temporal differences, scaled to a Gaussian sigma."""
    d = np.diff(samples, axis=time_axis).ravel()
    mad = np.median(np.abs(d - np.median(d)))
    return float(mad * _MAD_TO_SIGMA)


def _box_mean(a: np.ndarray, ry: int, rx: int) -> np.ndarray:
    """Mean over (2ry+1, 2rx+1) windows on the last two axes, 'valid' mode."""
    c = np.cumsum(np.cumsum(a, axis=-2), axis=-1)
    c = np.pad(c, [(0, 0)] * (a.ndim - 2) + [(1, 0), (1, 0)])
    wy, wx = 2 * ry + 1, 2 * rx + 1
    s = c[..., wy:, wx:] - c[..., :-wy, wx:] - c[..., wy:, :-wx] + c[..., :-wy, :-wx]
    return s / (wy * wx)


def nlm_planes(planes: np.ndarray, cfg: StNlmConfig, sigma: float, h: float) -> np.ndarray:
    """Non-local means over a stack of 2-D planes (..., rows, cols).

    Weight between pixels p and q: exp(-max(d2 - 2 sigma^2, 0) / h^2) where d2
    is the mean squared difference of their similarity patches. Borders use
    mirror padding.
    """
    n_r, n_c = planes.shape[-2:]
    pr, pc = cfg.similarity[0] // 2, cfg.similarity[1] // 2
    sr, sc = cfg.search[0] // 2, cfg.search[1] // 2
    if cfg.search[0] > n_r or cfg.search[1] > n_c:
        raise ValueError(f"search window {cfg.search} larger than plane {(n_r, n_c)}")
    lead = [(0, 0)] * (planes.ndim - 2)
    padded = np.pad(planes, lead + [(sr + pr, sr + pr), (sc + pc, sc + pc)], mode="symmetric")
    # centre region with patch margin
    center = padded[..., sr : sr + n_r + 2 * pr, sc : sc + n_c + 2 * pc]
    num = np.zeros(planes.shape)
    den = np.zeros(planes.shape)
    bias = 2.0 * sigma**2
    inv_h2 = 1.0 / h**2
    for dr in range(-sr, sr + 1):
        for dc in range(-sc, sc + 1):
            shifted = padded[..., sr + dr : sr + dr + n_r + 2 * pr, sc + dc : sc + dc + n_c + 2 * pc]
            d2 = _box_mean((center - shifted) ** 2, pr, pc)
            w = np.exp(-np.maximum(d2 - bias, 0.0) * inv_h2)
            num += w * shifted[..., pr : pr + n_r, pc : pc + n_c]
            den += w
    return num / den


def st_nlm(ens: RfEnsemble, cfg: StNlmConfig) -> RfEnsemble:
    """Spatiotemporal NLM: each lateral column's axial-temporal plane is
    filtered independently."""
    n_t, n_z, n_x = ens.samples.shape
    if cfg.search[0] > n_z or cfg.search[1] > n_t:
        raise ValueError(f"search window {cfg.search} exceeds the (axial, time) plane {(n_z, n_t)}")
    sigma = cfg.noise_sigma if cfg.noise_sigma is not None else estimate_noise_sigma(ens.samples)
    h = cfg.h if cfg.h is not None else cfg.h_factor * sigma
    if h <= 0:
        raise ValueError("smoothing parameter resolved to zero; set StNlmConfig.h")
    planes = np.transpose(ens.samples, (2, 1, 0))  # (lateral, axial, time)
    out = nlm_planes(planes, cfg, sigma, h)
    return RfEnsemble(np.ascontiguousarray(np.transpose(out, (2, 1, 0))), ens.meta, ens.provenance)


def st_nlm_power(cube: AngleRfCube, cfg: SvdFilterConfig, nlm: StNlmConfig, interp: int = 1) -> DopplerMap:
    ens = svd_clutter_filter(lateral_interpolate(compound(cube), interp), cfg)
    return power_doppler(hilbert_analytic(st_nlm(ens, nlm)))
