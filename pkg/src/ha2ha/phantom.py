"""Synthetic per-angle beamformed RF phantom with known blood, tissue and noise.

Every angle observes the same tissue and blood signal; only the additive
Gaussian noise differs between angles. Blood is a frozen band-limited speckle
field advected axially by a per-pixel velocity; tissue is strong static
speckle with a slow multiplicative modulation (rank one in the Casorati
sense).

Sign convention: a positive velocity is motion toward the probe (decreasing
depth), which yields a positive Doppler phase shift.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np
from scipy.ndimage import binary_dilation, gaussian_filter1d

from .pipeline import AngleRfCube, RfMeta

# RNG stream ids; streams are keyed by index, never by execution order.
_TISSUE_STREAM = 0
_VESSEL_STREAM = 1
_NOISE_STREAM = 2

DEFAULT_ANGLES = tuple(float(a) for a in range(-9, 10, 2))
DC_SWEEP_ANGLES = (-7.5, -4.5, -1.5, 1.5, 4.5, 7.5)


@dataclass(frozen=True)
class VesselSpec:
    """Straight vessel segment in pixel coordinates (axial, lateral).

    ``peak_velocity`` is the axial velocity on the centerline in m/s.
    """

    start: tuple
    end: tuple
    radius: float
    peak_velocity: float
    profile: str = "parabolic"
    amplitude: float = 1.0

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("vessel radius must be >= 1 pixel")
        if self.profile not in ("plug", "parabolic"):
            raise ValueError(f"unknown velocity profile {self.profile!r}")


_REFERENCE_GRID = 128


def default_vessels(n_axial: int = _REFERENCE_GRID, n_lateral: int = _REFERENCE_GRID) -> tuple:
    """Four straight vessels laid out on a 128x128 grid and rescaled to
    ``(n_axial, n_lateral)``; radii follow the smaller scale, floored at 1.
    Lumens stay ~10 rows below the top edge so the circular axial Hilbert
    transform does not wrap vessel energy into the deep noise strip."""
    sz, sx = n_axial / _REFERENCE_GRID, n_lateral / _REFERENCE_GRID
    sr = min(sz, sx)
    layout = (
        ((15.0, 34.0), (88.0, 38.0), 5.0, 0.015),
        ((14.0, 88.0), (86.0, 80.0), 4.0, -0.010),
        ((24.0, 58.0), (80.0, 64.0), 2.5, 0.008),
        ((16.0, 112.0), (84.0, 117.0), 3.0, 0.012),
    )
    return tuple(
        VesselSpec((a[0] * sz, a[1] * sx), (b[0] * sz, b[1] * sx), max(r * sr, 1.0), v)
        for a, b, r, v in layout
    )


@dataclass(frozen=True)
class PhantomSpec:
    n_axial: int = 128
    n_lateral: int = 128
    n_frames: int = 64
    f0: float = 5.208e6
    fs: float = 20.832e6
    bandwidth: float = 0.6
    prf: float = 500.0
    c: float = 1540.0
    pitch: Optional[float] = None
    angles: tuple = DEFAULT_ANGLES
    vessels: Optional[tuple] = None  # None: default_vessels scaled to the grid
    tissue_amplitude: float = 30.0
    tissue_mod_freq: float = 2.0
    tissue_mod_depth: float = 0.02
    noise_sigma: Union[float, tuple] = 1.4
    noise_depth_gain: float = 0.0
    duty_cycle: float = 1.0
    lateral_psf_sigma: float = 2.5
    noise_strip_rows: int = 24
    vessel_guard: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n_axial < 32 or self.n_lateral < 32:
            raise ValueError("phantom grid must be at least 32x32")
        if self.fs < 2 * self.f0:
            raise ValueError("fs must be >= 2*f0")
        if self.prf <= 0 or self.n_frames < 1:
            raise ValueError("prf must be > 0 and n_frames >= 1")
        if not 0 < self.duty_cycle <= 1:
            raise ValueError("duty cycle must lie in (0, 1]")
        if np.any(np.asarray(self.sigmas) < 0):
            raise ValueError("noise sigma must be >= 0")
        if len(self.sigmas) != len(self.angles):
            raise ValueError("need one noise sigma per angle")
        if not 0 <= self.noise_strip_rows < self.n_axial:
            raise ValueError("noise strip must leave part of the field")
        for v in self.vessel_list:
            if abs(v.peak_velocity) >= self.nyquist_velocity:
                raise ValueError(
                    f"vessel velocity {v.peak_velocity} m/s exceeds the Nyquist "
                    f"velocity {self.nyquist_velocity:.5f} m/s"
                )

    @property
    def sigmas(self) -> tuple:
        if np.ndim(self.noise_sigma) == 0:
            return (float(self.noise_sigma),) * len(self.angles)
        return tuple(float(s) for s in self.noise_sigma)

    @property
    def vessel_list(self) -> tuple:
        if self.vessels is None:
            return default_vessels(self.n_axial, self.n_lateral)
        return tuple(self.vessels)

    @property
    def nyquist_velocity(self) -> float:
        return self.c * self.prf / (4.0 * self.f0)

    @property
    def meta(self) -> RfMeta:
        pitch = self.pitch if self.pitch is not None else self.c / (2.0 * self.fs)
        return RfMeta(self.f0, self.fs, self.prf, self.c, pitch, pitch)

    @property
    def carrier(self) -> float:
        """Axial RF carrier in cycles per axial sample."""
        return self.f0 / self.fs


@dataclass
class RoiSet:
    """Pairwise-disjoint masks; a mask may be empty (e.g. no vessels), in
    which case metrics that need it are undefined."""

    blood: np.ndarray
    background: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        masks = [np.asarray(m, dtype=bool) for m in (self.blood, self.background, self.noise)]
        self.blood, self.background, self.noise = masks
        if not (masks[0].shape == masks[1].shape == masks[2].shape):
            raise ValueError("ROI masks must share one shape")
        if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
            raise ValueError("ROI masks must be pairwise disjoint")


@dataclass
class GroundTruth:
    blood: np.ndarray  # X, (time, axial, lateral)
    tissue: np.ndarray  # T, (time, axial, lateral)
    velocity: np.ndarray  # (axial, lateral), m/s
    rois: RoiSet
    meta: RfMeta


def _segment_distance(zz, xx, start, end):
    """Distance from each pixel to a segment, plus the clamped projection."""
    p0 = np.asarray(start, dtype=float)
    d = np.asarray(end, dtype=float) - p0
    length2 = float(d @ d)
    if length2 == 0:
        t = np.zeros_like(zz, dtype=float)
    else:
        t = np.clip(((zz - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / length2, 0.0, 1.0)
    dz = zz - (p0[0] + t * d[0])
    dx = xx - (p0[1] + t * d[1])
    return np.hypot(dz, dx)


def _velocity_profile(dist, vessel: VesselSpec):
    inside = dist <= vessel.radius
    if vessel.profile == "plug":
        shape = inside.astype(float)
    else:
        shape = np.where(inside, 1.0 - (dist / vessel.radius) ** 2, 0.0)
    return vessel.peak_velocity * shape


def _pulse_spectrum(n: int, spec: PhantomSpec) -> np.ndarray:
    """DFT of a Gaussian-modulated cosine pulse centred on sample 0 (circular)."""
    k0 = spec.carrier
    sigma_k = spec.bandwidth * k0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    sigma_z = 1.0 / (2.0 * np.pi * sigma_k)
    z = np.arange(n)
    z = np.where(z > n // 2, z - n, z).astype(float)
    pulse = np.exp(-0.5 * (z / sigma_z) ** 2) * np.cos(2.0 * np.pi * k0 * z)
    return np.fft.fft(pulse)


def _speckle_field(rng, n_z: int, n_x: int, spec: PhantomSpec, axial_pulse: bool = True) -> np.ndarray:
    """Unit-RMS band-limited speckle, periodic along axial.

    With ``axial_pulse=False`` only the lateral PSF is applied (moving
    scatterers; the pulse is applied after advection).
    """
    field_ = rng.standard_normal((n_z, n_x))
    if axial_pulse:
        field_ = np.fft.ifft(np.fft.fft(field_, axis=0) * _pulse_spectrum(n_z, spec)[:, None], axis=0).real
    if spec.lateral_psf_sigma > 0:
        field_ = gaussian_filter1d(field_, spec.lateral_psf_sigma, axis=1, mode="wrap")
    return field_ / np.sqrt(np.mean(field_**2))


def _advect(field_: np.ndarray, rows, cols, shift) -> np.ndarray:
    """Band-limited evaluation of ``field_[rows + shift, cols]``.

    ``field_`` is periodic along axis 0; ``rows``/``cols`` are integer pixel
    indices and ``shift`` a real axial offset in samples, all broadcastable.
    Evaluated exactly from the column DFTs (trigonometric interpolation).
    """
    n = field_.shape[0]
    spec = np.fft.rfft(field_, axis=0)  # (n//2+1, n_x)
    k = np.arange(spec.shape[0])
    w = np.full(k.shape, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    spec = spec * w[:, None] / n
    pos = rows + shift
    out = np.empty(np.broadcast(pos, cols).shape)
    pos = np.broadcast_to(pos, out.shape)
    colb = np.broadcast_to(cols, out.shape)
    for col in np.unique(colb):
        sel = colb == col
        phase = np.exp(2j * np.pi * np.outer(pos[sel], k) / n)
        out[sel] = (phase @ spec[:, col]).real
    return out


def _pulse_echo(blood: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    """Convolve advected, lumen-windowed scatterers with the axial pulse.

    Zero-padded (no wrap) and scaled to unit gain on white scatterers, so
    the result is band-limited everywhere including the lumen edges.
    """
    n_z = blood.shape[1]
    n = 2 * n_z
    p = _pulse_spectrum(n, spec)
    gain = np.sqrt(np.mean(np.abs(p) ** 2))
    return np.fft.ifft(np.fft.fft(blood, n=n, axis=1) * (p / gain)[None, :, None], axis=1).real[:, :n_z]


def _geometry(spec: PhantomSpec):
    zz, xx = np.meshgrid(np.arange(spec.n_axial, dtype=float), np.arange(spec.n_lateral, dtype=float), indexing="ij")
    strip = np.zeros((spec.n_axial, spec.n_lateral), dtype=bool)
    if spec.noise_strip_rows:
        strip[-spec.noise_strip_rows :, :] = True
    return zz, xx, strip


def _signals(spec: PhantomSpec):
    """Noise-free tissue and blood ensembles (before duty-cycle scaling)."""
    n_t, n_z, n_x = spec.n_frames, spec.n_axial, spec.n_lateral
    zz, xx, strip = _geometry(spec)
    frames = np.arange(n_t, dtype=float)
    # axial samples travelled per frame for 1 m/s toward the probe
    samples_per_mps = 2.0 * spec.fs / (spec.c * spec.prf)

    blood = np.zeros((n_t, n_z, n_x))
    velocity = np.zeros((n_z, n_x))
    lumen = np.zeros((n_z, n_x))
    blood_mask = np.zeros((n_z, n_x), dtype=bool)
    period = 2 * n_z
    for i, vessel in enumerate(spec.vessel_list):
        dist = _segment_distance(zz, xx, vessel.start, vessel.end)
        window = np.clip(vessel.radius + 0.5 - dist, 0.0, 1.0)
        inside = dist <= vessel.radius
        if (inside & strip).any():
            raise ValueError(f"vessel {i} intersects the noise-only strip")
        vel = _velocity_profile(dist, vessel)
        velocity = np.where(inside, vel, velocity)
        blood_mask |= inside
        lumen = np.maximum(lumen, window)

        rng = np.random.default_rng([spec.seed, _VESSEL_STREAM, i])
        speckle = _speckle_field(rng, period, n_x, spec, axial_pulse=False)
        rz, rx = np.nonzero(window > 0)
        shift = samples_per_mps * vel[rz, rx][None, :] * frames[:, None]
        values = _advect(speckle, rz[None, :].astype(float), rx[None, :], shift)
        blood[:, rz, rx] += vessel.amplitude * window[rz, rx] * values

    blood = _pulse_echo(blood, spec)

    rng = np.random.default_rng([spec.seed, _TISSUE_STREAM])
    tissue0 = spec.tissue_amplitude * _speckle_field(rng, period, n_x, spec)[:n_z]
    tissue0 = tissue0 * (1.0 - lumen) * (~strip)
    modulation = 1.0 + spec.tissue_mod_depth * np.sin(2.0 * np.pi * spec.tissue_mod_freq * frames / spec.prf)
    tissue = tissue0[None, :, :] * modulation[:, None, None]

    guard = blood_mask.copy()
    if spec.vessel_guard:
        guard = binary_dilation(blood_mask, iterations=spec.vessel_guard)
    background = ~guard & ~strip
    noise_mask = strip.copy()
    if not noise_mask.any():
        # no strip configured: fall back to the deepest vessel-free rows
        noise_mask[-4:, :] = True
        noise_mask &= ~guard
        background &= ~noise_mask
    rois = RoiSet(blood_mask, background, noise_mask)
    return blood, tissue, velocity, rois


def derive_seed(base: int, index: int) -> int:
    """Deterministic noise seed for realization ``index``."""
    return int(np.random.SeedSequence([int(base), int(index)]).generate_state(1, np.uint32)[0])


def _noise(spec: PhantomSpec, noise_seed: int) -> np.ndarray:
    n_a = len(spec.angles)
    out = np.empty((n_a, spec.n_frames, spec.n_axial, spec.n_lateral))
    gain = np.exp(spec.noise_depth_gain * np.arange(spec.n_axial) / spec.n_axial)[:, None]
    for a, sigma in enumerate(spec.sigmas):
        for t in range(spec.n_frames):
            rng = np.random.default_rng([noise_seed, _NOISE_STREAM, a, t])
            out[a, t] = sigma * gain * rng.standard_normal((spec.n_axial, spec.n_lateral))
    return out


def _assemble(spec, blood, tissue, noise_seed):
    signal = spec.duty_cycle * (blood + tissue)
    samples = _noise(spec, noise_seed)
    samples += signal[None]
    return AngleRfCube(samples, spec.angles, spec.meta, "full")


def render_phantom(spec: PhantomSpec, noise_seed: Optional[int] = None) -> tuple[AngleRfCube, GroundTruth]:
    """Render the per-angle RF cube and its ground truth.

    ``RF[a, t] = DC * (T[t] + X[t]) + N_a[t]`` with independent zero-mean
    Gaussian ``N_a``. The returned ``GroundTruth`` holds the DC-scaled X and T.
    ``noise_seed`` defaults to ``spec.seed``.
    """
    blood, tissue, velocity, rois = _signals(spec)
    seed = spec.seed if noise_seed is None else noise_seed
    cube = _assemble(spec, blood, tissue, seed)
    gt = GroundTruth(spec.duty_cycle * blood, spec.duty_cycle * tissue, velocity, rois, spec.meta)
    return cube, gt


class NoiseRealizations(Sequence):
    """Lazy sequence of cubes sharing X and T, each with fresh noise.

    Realization ``i`` equals ``render_phantom(spec, derive_seed(spec.seed, i))``.
    Cubes are rendered on access so large ``m`` stays within memory.
    """

    def __init__(self, spec: PhantomSpec, m: int):
        if m < 1:
            raise ValueError("need at least one realization")
        self.spec = spec
        self._m = int(m)
        self._blood, self._tissue, _, _ = _signals(spec)

    def __len__(self) -> int:
        return self._m

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._m))]
        if i < 0:
            i += self._m
        if not 0 <= i < self._m:
            raise IndexError(i)
        return _assemble(self.spec, self._blood, self._tissue, derive_seed(self.spec.seed, i))


def noise_realizations(spec: PhantomSpec, m: int) -> NoiseRealizations:
    return NoiseRealizations(spec, m)


def noise_free(spec: PhantomSpec) -> PhantomSpec:
    return replace(spec, noise_sigma=0.0)


def compounded_snr_db(spec: PhantomSpec, gt: Optional[GroundTruth] = None) -> float:
    """Per-sample blood-to-noise power ratio of the full-angle compound, in
    the blood mask."""
    if gt is None:
        _, gt = render_phantom(noise_free(spec))
    p_blood = np.mean(gt.blood[:, gt.rois.blood] ** 2)
    sig = np.asarray(spec.sigmas)
    p_noise = np.sum(sig**2) / len(sig) ** 2
    return float(10 * np.log10(p_blood / p_noise))
