"""Paired half-angle patch datasets and shared-transform augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..pipeline import RfEnsemble

SCALE_FLOOR = 1e-12
SCALE_PERCENTILE = 99.0

TRANSFORMS = ("identity", "hflip", "vflip", "rot180")
ROT90_TRANSFORMS = ("rot90", "rot270")


@dataclass(frozen=True)
class PatchProvenance:
    frame: int
    offset: tuple
    transform: str = "identity"
    source: int = 0


@dataclass
class PairedPatchSet:
    """Stacks of normalized patch pairs, shape (N, P, P), with per-pair scale."""

    a: np.ndarray
    b: np.ndarray
    scales: np.ndarray
    provenance: list = field(default_factory=list)

    def __post_init__(self):
        if self.a.shape != self.b.shape or self.a.ndim != 3:
            raise ValueError(f"patch stacks must share a (N, P, P) shape, got {self.a.shape} / {self.b.shape}")
        if self.scales.shape != (self.a.shape[0],) or np.any(self.scales <= 0):
            raise ValueError("one positive scale per pair is required")
        if self.provenance and len(self.provenance) != len(self.scales):
            raise ValueError("provenance length mismatch")

    def __len__(self) -> int:
        return self.a.shape[0]

    @staticmethod
    def concat(sets: list["PairedPatchSet"]) -> "PairedPatchSet":
        if not sets:
            raise ValueError("nothing to concatenate")
        return PairedPatchSet(
            np.concatenate([s.a for s in sets]),
            np.concatenate([s.b for s in sets]),
            np.concatenate([s.scales for s in sets]),
            [p for s in sets for p in s.provenance],
        )


def shared_scale(*arrays: np.ndarray) -> float:
    """99th percentile of |values| over all arrays, floored at 1e-12."""
    vals = np.concatenate([np.abs(a).ravel() for a in arrays])
    return float(max(np.percentile(vals, SCALE_PERCENTILE), SCALE_FLOOR))


def tile_offsets(n_rows: int, n_cols: int, patch: int, stride: int) -> list[tuple[int, int]]:
    """Top-left corners of full tiles; partial border tiles are dropped."""
    if patch < 1 or stride < 1:
        raise ValueError("patch and stride must be positive")
    if n_rows < patch or n_cols < patch:
        raise ValueError(f"frame {(n_rows, n_cols)} is smaller than one {patch}x{patch} patch")
    return [(r, c) for r in range(0, n_rows - patch + 1, stride) for c in range(0, n_cols - patch + 1, stride)]


def apply_transform(img: np.ndarray, name: str) -> np.ndarray:
    """Geometric transform on the last two axes."""
    if name == "identity":
        return img
    if name == "hflip":
        return img[..., :, ::-1]
    if name == "vflip":
        return img[..., ::-1, :]
    if name == "rot180":
        return img[..., ::-1, ::-1]
    if name == "rot90":
        return np.rot90(img, 1, axes=(-2, -1))
    if name == "rot270":
        return np.rot90(img, -1, axes=(-2, -1))
    raise ValueError(f"unknown transform {name!r}")


def augment(pair: tuple[np.ndarray, np.ndarray], rng: np.random.Generator, allow_rot90: bool = False):
    """Apply one randomly drawn transform to both patches.

    Returns (a, b, transform name). 90/270-degree rotations are drawn only
    when ``allow_rot90`` is set and the patches are square.
    """
    a, b = pair
    choices = TRANSFORMS
    if allow_rot90:
        if a.shape[-1] != a.shape[-2]:
            raise ValueError("90-degree rotations need square patches")
        choices = TRANSFORMS + ROT90_TRANSFORMS
    name = choices[int(rng.integers(len(choices)))]
    return np.ascontiguousarray(apply_transform(a, name)), np.ascontiguousarray(apply_transform(b, name)), name


def build_pairs(
    y1: RfEnsemble,
    y2: RfEnsemble,
    patch: int = 64,
    stride: int | None = None,
    frame_subsample: int = 1,
    augment_seed: int | None = None,
    allow_rot90: bool = False,
    source: int = 0,
) -> PairedPatchSet:
    """Tile every ``frame_subsample``-th (axial, lateral) frame of the two
    ensembles into co-located patch pairs, each divided by a shared scale.

    With ``augment_seed`` set, each pair receives one random shared
    transform, recorded in its provenance.
    """
    if y1.shape != y2.shape:
        raise ValueError(f"ensemble shapes differ: {y1.shape} vs {y2.shape}")
    if frame_subsample < 1:
        raise ValueError("frame_subsample must be >= 1")
    stride = patch if stride is None else stride
    n_t, n_z, n_x = y1.shape
    offsets = tile_offsets(n_z, n_x, patch, stride)
    rng = np.random.default_rng(augment_seed) if augment_seed is not None else None
    a_list, b_list, scales, prov = [], [], [], []
    for t in range(0, n_t, frame_subsample):
        for r, c in offsets:
            pa = y1.samples[t, r : r + patch, c : c + patch]
            pb = y2.samples[t, r : r + patch, c : c + patch]
            s = shared_scale(pa, pb)
            pa, pb = pa / s, pb / s
            name = "identity"
            if rng is not None:
                pa, pb, name = augment((pa, pb), rng, allow_rot90)
            a_list.append(pa)
            b_list.append(pb)
            scales.append(s)
            prov.append(PatchProvenance(t, (r, c), name, source))
    return PairedPatchSet(
        np.stack(a_list).astype(np.float32),
        np.stack(b_list).astype(np.float32),
        np.asarray(scales),
        prov,
    )
