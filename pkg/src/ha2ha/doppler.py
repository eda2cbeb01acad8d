"""Power Doppler, Angular-Processing power and Kasai color Doppler."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pipeline import IqEnsemble, RfMeta


@dataclass
class DopplerMap:
    intensity: np.ndarray
    meta: RfMeta = field(default_factory=RfMeta)

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=float)
        if not np.all(np.isfinite(self.intensity)) or np.any(self.intensity < 0):
            raise ValueError("Doppler intensity must be finite and nonnegative")

    def normalized(self) -> "DopplerMap":
        peak = self.intensity.max()
        if peak <= 0:
            return DopplerMap(np.zeros_like(self.intensity), self.meta)
        return DopplerMap(self.intensity / peak, self.meta)


@dataclass
class VelocityMap:
    velocity: np.ndarray
    v_nyq: float
    meta: RfMeta = field(default_factory=RfMeta)


def power_doppler(iq: IqEnsemble) -> DopplerMap:
    """Mean of |s|^2 over the ensemble, per pixel."""
    s = iq.samples
    if s.shape[0] < 1:
        raise ValueError("need at least one frame")
    return DopplerMap(np.mean(s.real**2 + s.imag**2, axis=0), iq.meta)


def lag_one_autocorrelation(s: np.ndarray) -> np.ndarray:
    """R1 = sum_t s(t+1) conj(s(t)) along axis 0."""
    return np.sum(s[1:] * np.conj(s[:-1]), axis=0)


def color_doppler(iq: IqEnsemble) -> VelocityMap:
    """Kasai lag-one autocorrelation velocity estimate.

    ``v = v_nyq * arg(R1) / pi`` with ``v_nyq = c * PRF / (4 f0)``; pixels with
    ``R1 == 0`` get zero velocity. Positive velocities move toward the probe.
    """
    if iq.samples.shape[0] < 2:
        raise ValueError("color Doppler needs at least two frames")
    r1 = lag_one_autocorrelation(iq.samples)
    v_nyq = iq.meta.nyquist_velocity
    vel = np.where(np.abs(r1) > 0, v_nyq * np.angle(r1) / np.pi, 0.0)
    return VelocityMap(vel, v_nyq, iq.meta)


def power_doppler_ap(odd: IqEnsemble, even: IqEnsemble) -> DopplerMap:
    """Angular-Processing power: time-mean of Re{s_odd conj(s_even)}, with
    negative (incoherent) results clamped to zero."""
    if odd.samples.shape != even.samples.shape:
        raise ValueError(f"shape mismatch {odd.samples.shape} vs {even.samples.shape}")
    prod = np.mean((odd.samples * np.conj(even.samples)).real, axis=0)
    return DopplerMap(np.maximum(prod, 0.0), odd.meta)


def log_compress(dmap: DopplerMap, dynamic_range_db: float = 40.0) -> np.ndarray:
    """Max-normalized dB image mapped to uint8 gray levels over [-DR, 0] dB.

    An all-zero map gives an all-zero image.
    """
    if dynamic_range_db <= 0:
        raise ValueError("dynamic range must be positive")
    inten = dmap.intensity
    peak = inten.max()
    if peak <= 0:
        return np.zeros(inten.shape, dtype=np.uint8)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(inten / peak)
    db = np.clip(db, -dynamic_range_db, 0.0)
    return np.round(255.0 * (db + dynamic_range_db) / dynamic_range_db).astype(np.uint8)


def velocity_colormap(vmap: VelocityMap) -> np.ndarray:
    """Bidirectional red/blue RGB image: red positive, blue negative, black zero."""
    frac = np.clip(vmap.velocity / vmap.v_nyq, -1.0, 1.0)
    rgb = np.zeros(frac.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.round(255.0 * np.clip(frac, 0, None))
    rgb[..., 2] = np.round(255.0 * np.clip(-frac, 0, None))
    return rgb


def spurious_velocity_power_db(dmap: DopplerMap, vmap: VelocityMap, mask: np.ndarray) -> float:
    """Power-weighted velocity energy inside ``mask``, in dB.

    mean over mask of (P / max P) * (v / v_nyq)^2. Weighting by the
    max-normalized Doppler power reflects how strongly a spurious velocity
    shows up in a power-weighted color display.
    """
    p = dmap.normalized().intensity[mask]
    v = vmap.velocity[mask] / vmap.v_nyq
    value = float(np.mean(p * v**2))
    return 10.0 * np.log10(value) if value > 0 else -300.0
