"""Shared RF signal chain: angle split, compounding, interpolation, SVD clutter
filtering and analytic-signal conversion.

Array layouts
-------------
AngleRfCube.samples : (n_angle, n_time, n_axial, n_lateral), real
RfEnsemble.samples  : (n_time, n_axial, n_lateral), real
IqEnsemble.samples  : (n_time, n_axial, n_lateral), complex
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

PROVENANCES = ("full", "even", "odd")


class SvdConvergenceError(RuntimeError):
    """Raised when the clutter-filter SVD fails to converge."""


@dataclass(frozen=True)
class RfMeta:
    """Acquisition metadata carried alongside every RF array."""

    f0: float = 5.208e6
    fs: float = 20.832e6
    prf: float = 500.0
    c: float = 1540.0
    pitch_axial: float = 1540.0 / (2 * 20.832e6)
    pitch_lateral: float = 1540.0 / (2 * 20.832e6)

    @property
    def nyquist_velocity(self) -> float:
        return self.c * self.prf / (4.0 * self.f0)


@dataclass
class AngleRfCube:
    samples: np.ndarray
    angles: tuple
    meta: RfMeta = field(default_factory=RfMeta)
    subset: str = "full"

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 4 or min(self.samples.shape) < 1:
            raise ValueError(f"cube must be 4-D with nonzero dims, got {self.samples.shape}")
        self.angles = tuple(float(a) for a in self.angles)
        if len(self.angles) != self.samples.shape[0]:
            raise ValueError("angle list length does not match n_angle")
        if any(b <= a for a, b in zip(self.angles, self.angles[1:])):
            raise ValueError("angle list must be strictly increasing")
        if self.subset not in PROVENANCES:
            raise ValueError(f"unknown subset tag {self.subset!r}")

    @property
    def n_angle(self) -> int:
        return self.samples.shape[0]


@dataclass
class RfEnsemble:
    samples: np.ndarray
    meta: RfMeta = field(default_factory=RfMeta)
    provenance: str = "full"

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 3 or min(self.samples.shape) < 1:
            raise ValueError(f"ensemble must be 3-D with nonzero dims, got {self.samples.shape}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def shape(self) -> tuple:
        return self.samples.shape


@dataclass
class IqEnsemble:
    samples: np.ndarray
    meta: RfMeta = field(default_factory=RfMeta)
    provenance: str = "full"

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 3:
            raise ValueError(f"IQ ensemble must be 3-D, got {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("IQ ensemble contains non-finite values")

    @property
    def shape(self) -> tuple:
        return self.samples.shape


@dataclass(frozen=True)
class SvdFilterConfig:
    """Truncated-SVD clutter filter cutoffs.

    ``k_low`` leading singular components are zeroed; when ``k_high`` is set,
    components with index >= ``k_high`` are zeroed as well.
    """

    k_low: int
    k_high: Optional[int] = None

    def __post_init__(self):
        if self.k_low < 0:
            raise ValueError("k_low must be >= 0")
        if self.k_high is not None and self.k_high <= self.k_low:
            raise ValueError("k_high must exceed k_low")

    def check(self, n_time: int, n_pixels: int) -> None:
        rank = min(n_time, n_pixels)
        if self.k_low >= rank:
            raise ValueError(f"k_low={self.k_low} must be < min(n_time, n_pixels)={rank}")


def split_angles(cube: AngleRfCube) -> tuple[AngleRfCube, AngleRfCube]:
    """Split a cube into its even-indexed and odd-indexed angle subsets.

    The even-indexed subset (angles 0, 2, 4, ...) comes first; downstream it
    becomes Y1.
    """
    if cube.n_angle < 2:
        raise ValueError("need at least two angles to form a pair")
    even = AngleRfCube(cube.samples[0::2], cube.angles[0::2], cube.meta, "even")
    odd = AngleRfCube(cube.samples[1::2], cube.angles[1::2], cube.meta, "odd")
    return even, odd


def compound(cube: AngleRfCube) -> RfEnsemble:
    """Coherent compounding: pixelwise mean over the angle axis."""
    return RfEnsemble(cube.samples.mean(axis=0), cube.meta, cube.subset)


def lateral_interpolate(ens: RfEnsemble, factor: int) -> RfEnsemble:
    """Upsample the lateral axis by an integer factor with linear interpolation.

    Output column ``j`` sits at input position ``j / factor``; positions past
    the last input column replicate it.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"interpolation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return ens
    n_lat = ens.samples.shape[2]
    pos = np.arange(n_lat * factor) / factor
    left = np.minimum(np.floor(pos).astype(int), n_lat - 1)
    right = np.minimum(left + 1, n_lat - 1)
    frac = pos - left
    frac[left == n_lat - 1] = 0.0
    s = ens.samples
    out = s[:, :, left] * (1.0 - frac) + s[:, :, right] * frac
    meta = replace(ens.meta, pitch_lateral=ens.meta.pitch_lateral / factor)
    return RfEnsemble(out, meta, ens.provenance)


def casorati(samples: np.ndarray) -> np.ndarray:
    """(time, axial, lateral) -> (pixels, time) matrix."""
    n_t = samples.shape[0]
    return samples.reshape(n_t, -1).T


def svd_clutter_filter(ens: RfEnsemble, cfg: SvdFilterConfig) -> RfEnsemble:
    """Zero the leading ``k_low`` (and trailing ``>= k_high``) singular
    components of the pixels-by-time Casorati matrix."""
    n_t, n_z, n_x = ens.samples.shape
    cfg.check(n_t, n_z * n_x)
    if cfg.k_low == 0 and cfg.k_high is None:
        return RfEnsemble(ens.samples.copy(), ens.meta, ens.provenance)
    s = casorati(ens.samples)
    try:
        u, sv, vt = np.linalg.svd(s, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(str(exc)) from exc
    keep = np.ones(sv.shape, dtype=bool)
    keep[: cfg.k_low] = False
    if cfg.k_high is not None:
        keep[cfg.k_high :] = False
    filtered = (u[:, keep] * sv[keep]) @ vt[keep]
    out = filtered.T.reshape(n_t, n_z, n_x)
    return RfEnsemble(out, ens.meta, ens.provenance)


def singular_values(ens: RfEnsemble) -> np.ndarray:
    """Singular value spectrum of the Casorati matrix (descending)."""
    try:
        return np.linalg.svd(casorati(ens.samples), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(str(exc)) from exc


def analytic_signal(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """FFT analytic signal: DC and Nyquist kept, positive bins doubled,
    negative bins zeroed."""
    n = x.shape[axis]
    spec = np.fft.fft(x, axis=axis)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1 : n // 2] = 2.0
    else:
        h[1 : (n + 1) // 2] = 2.0
    shape = [1] * x.ndim
    shape[axis] = n
    return np.fft.ifft(spec * h.reshape(shape), axis=axis)


def hilbert_analytic(ens: RfEnsemble) -> IqEnsemble:
    """Analytic signal along the axial axis of every (time, lateral) column."""
    if ens.samples.shape[1] < 8:
        raise ValueError("hilbert_analytic needs at least 8 axial samples")
    return IqEnsemble(analytic_signal(ens.samples, axis=1), ens.meta, ens.provenance)


def prepare_pair(
    cube: AngleRfCube, cfg: SvdFilterConfig, interp: int = 1
) -> tuple[RfEnsemble, RfEnsemble]:
    """Build the (Y1, Y2) half-angle training pair from one acquisition.

    Each angle subset is compounded, laterally interpolated and clutter
    filtered on its own, with the same filter configuration.
    """
    even, odd = split_angles(cube)
    y1 = svd_clutter_filter(lateral_interpolate(compound(even), interp), cfg)
    y2 = svd_clutter_filter(lateral_interpolate(compound(odd), interp), cfg)
    return y1, y2


def full_angle_ensemble(
    cube: AngleRfCube, cfg: SvdFilterConfig, interp: int = 1
) -> RfEnsemble:
    """Compounded, interpolated and filtered full-angle blood ensemble."""
    return svd_clutter_filter(lateral_interpolate(compound(cube), interp), cfg)
