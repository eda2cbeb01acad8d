"""File formats: URFC RF containers, checkpoints, PGM/PPM images, ROI
sidecars, metric tables and loss logs.

URFC layout (little-endian)::

    b"URFC" | u8 version (1) | u8 flags | u8 provenance | u8 reserved
    u32 n_angle | u32 n_time | u32 n_axial | u32 n_lateral
    f32 f0, fs, prf, c, pitch_axial, pitch_lateral
    f32 angles[n_angle]            (cubes only)
    f32 payload, lateral fastest, then axial, time, angle;
    complex payloads interleave (real, imag) per sample.

Flag bits: 1 = complex samples, 2 = ensemble (no angle axis, n_angle = 1).
"""

from __future__ import annotations

import csv
import io as _io
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .autodiff import ParamStore
from .metrics import MetricRow
from .phantom import RoiSet
from .pipeline import PROVENANCES, AngleRfCube, IqEnsemble, RfEnsemble, RfMeta

URFC_MAGIC = b"URFC"
URFC_VERSION = 1
FLAG_COMPLEX = 1
FLAG_ENSEMBLE = 2
MAX_ELEMENTS = 1 << 40

_HEAD = struct.Struct("<4sBBBB4I6f")

PathLike = Union[str, os.PathLike]
UrfcData = Union[AngleRfCube, RfEnsemble, IqEnsemble]


class UrfcError(ValueError):
    """Malformed URFC file."""


class BadMagicError(UrfcError):
    pass


class VersionMismatchError(UrfcError):
    pass


class TruncatedPayloadError(UrfcError):
    pass


class DimensionOverflowError(UrfcError):
    pass


def _meta_values(meta: RfMeta) -> tuple:
    return (meta.f0, meta.fs, meta.prf, meta.c, meta.pitch_axial, meta.pitch_lateral)


def urfc_bytes(data: UrfcData) -> bytes:
    if isinstance(data, AngleRfCube):
        flags, samples, angles, prov = 0, data.samples, data.angles, data.subset
        if np.iscomplexobj(samples):
            raise TypeError("angle cubes must be real")
    elif isinstance(data, (RfEnsemble, IqEnsemble)):
        flags, samples, angles, prov = FLAG_ENSEMBLE, data.samples[None], (), data.provenance
        if isinstance(data, IqEnsemble) or np.iscomplexobj(samples):
            flags |= FLAG_COMPLEX
    else:
        raise TypeError(f"cannot store {type(data).__name__} as URFC")
    dims = samples.shape
    if any(d > 0xFFFFFFFF for d in dims):
        raise DimensionOverflowError(f"dimension exceeds u32: {dims}")
    head = _HEAD.pack(URFC_MAGIC, URFC_VERSION, flags, PROVENANCES.index(prov), 0, *dims, *_meta_values(data.meta))
    head += np.asarray(angles, dtype="<f4").tobytes()
    if flags & FLAG_COMPLEX:
        payload = np.ascontiguousarray(samples, dtype="<c8").view("<f4")
    else:
        payload = np.ascontiguousarray(samples, dtype="<f4")
    return head + payload.tobytes()


def parse_urfc(blob: bytes) -> UrfcData:
    if len(blob) < 4 or blob[:4] != URFC_MAGIC:
        raise BadMagicError("not a URFC file (bad magic)")
    if len(blob) < 5:
        raise TruncatedPayloadError("header truncated")
    if blob[4] != URFC_VERSION:
        raise VersionMismatchError(f"URFC version {blob[4]} is not supported (expected {URFC_VERSION})")
    if len(blob) < _HEAD.size:
        raise TruncatedPayloadError("header truncated")
    _, _, flags, prov, _, *rest = _HEAD.unpack_from(blob, 0)
    dims, meta_vals = tuple(rest[:4]), rest[4:]
    if prov >= len(PROVENANCES):
        raise UrfcError(f"unknown provenance code {prov}")
    n_el = 1
    for d in dims:
        n_el *= d
    if n_el > MAX_ELEMENTS:
        raise DimensionOverflowError(f"dims {dims} exceed the supported element count")
    ensemble = bool(flags & FLAG_ENSEMBLE)
    cplx = bool(flags & FLAG_COMPLEX)
    if ensemble and dims[0] != 1:
        raise UrfcError("ensemble files must have n_angle = 1")
    n_ang_stored = 0 if ensemble else dims[0]
    pos = _HEAD.size
    if len(blob) < pos + 4 * n_ang_stored:
        raise TruncatedPayloadError("angle list truncated")
    angles = np.frombuffer(blob, dtype="<f4", count=n_ang_stored, offset=pos)
    pos += 4 * n_ang_stored
    n_vals = n_el * (2 if cplx else 1)
    expected = pos + 4 * n_vals
    if len(blob) < expected:
        raise TruncatedPayloadError(f"payload holds {(len(blob) - pos) // 4} of {n_vals} values")
    if len(blob) > expected:
        raise UrfcError("trailing bytes after payload")
    raw = np.frombuffer(blob, dtype="<f4", count=n_vals, offset=pos)
    samples = raw.view("<c8") if cplx else raw
    samples = samples.reshape(dims).astype(np.complex64 if cplx else np.float32)
    meta = RfMeta(*(float(v) for v in meta_vals))
    provenance = PROVENANCES[prov]
    if ensemble:
        cls = IqEnsemble if cplx else RfEnsemble
        return cls(samples[0], meta, provenance)
    if cplx:
        raise UrfcError("complex angle cubes are not supported")
    return AngleRfCube(samples, tuple(float(a) for a in angles), meta, provenance)


def write_urfc(data: UrfcData, path: PathLike) -> None:
    Path(path).write_bytes(urfc_bytes(data))


def read_urfc(path: PathLike) -> UrfcData:
    return parse_urfc(Path(path).read_bytes())


def write_map(values: np.ndarray, path: PathLike, meta: RfMeta | None = None) -> None:
    """Store a 2-D map as a single-frame real ensemble."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("maps must be 2-D")
    write_urfc(RfEnsemble(values[None], meta or RfMeta()), path)


def read_map(path: PathLike) -> np.ndarray:
    data = read_urfc(path)
    if not isinstance(data, RfEnsemble) or data.shape[0] != 1:
        raise UrfcError("file does not hold a single-frame real map")
    return data.samples[0]


# checkpoints
def save_checkpoint(params: ParamStore, path: PathLike) -> None:
    Path(path).write_bytes(params.to_bytes())


def load_checkpoint(path: PathLike, dtype=np.float32) -> ParamStore:
    return ParamStore.from_bytes(Path(path).read_bytes(), dtype)


# images
def write_pgm(path: PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("PGM needs a 2-D uint8 array")
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def write_ppm(path: PathLike, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("PPM needs an (H, W, 3) uint8 array")
    h, w, _ = img.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def _netpbm_header(blob: bytes, magic: bytes) -> tuple[int, int, int, int]:
    if blob[:2] != magic:
        raise ValueError(f"expected a {magic.decode()} image")
    fields, pos = [], 2
    while len(fields) < 3:
        while blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(blob[start:pos]))
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    return w, h, maxval, pos + 1


def read_pgm(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    w, h, _, pos = _netpbm_header(blob, b"P5")
    if len(blob) < pos + w * h:
        raise ValueError("PGM payload truncated")
    return np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w).copy()


def read_ppm(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    w, h, _, pos = _netpbm_header(blob, b"P6")
    if len(blob) < pos + 3 * w * h:
        raise ValueError("PPM payload truncated")
    return np.frombuffer(blob, dtype=np.uint8, count=3 * w * h, offset=pos).reshape(h, w, 3).copy()


# ROI sidecars
ROI_NAMES = ("blood", "background", "noise")


def write_rois(rois: RoiSet, directory: PathLike) -> None:
    """One binary PGM per mask (255 inside)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ROI_NAMES:
        write_pgm(d / f"{name}.pgm", getattr(rois, name).astype(np.uint8) * 255)


def read_rois(directory: PathLike) -> RoiSet:
    d = Path(directory)
    masks = {}
    for name in ROI_NAMES:
        p = d / f"{name}.pgm"
        if not p.exists():
            raise FileNotFoundError(f"missing ROI mask {p}")
        masks[name] = read_pgm(p) > 127
    return RoiSet(**masks)


# reports
def _fmt(x: float) -> str:
    return "nan" if np.isnan(x) else f"{x:.2f}"


def format_metric_table(rows: Sequence[tuple[str, MetricRow]], label: str = "method") -> str:
    """Fixed-width table with one row per (label, metrics) entry."""
    width = max([len(label)] + [len(name) for name, _ in rows])
    lines = [f"{label:<{width}}  {'CNR_dB':>8}  {'SNR_dB':>8}  {'BNP_dB':>8}"]
    for name, r in rows:
        lines.append(f"{name:<{width}}  {_fmt(r.cnr):>8}  {_fmt(r.snr):>8}  {_fmt(r.bnp):>8}")
    return "\n".join(lines) + "\n"


def metric_csv(rows: Iterable[tuple], header: Sequence[str]) -> str:
    """Comma-separated rows; MetricRow entries expand to cnr, snr, bnp with
    six decimals."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        out = []
        for item in row:
            if isinstance(item, MetricRow):
                out += [f"{item.cnr:.6f}", f"{item.snr:.6f}", f"{item.bnp:.6f}"]
            elif isinstance(item, float):
                out.append(f"{item:.6f}")
            else:
                out.append(str(item))
        writer.writerow(out)
    return buf.getvalue()


def format_loss_log(history) -> str:
    lines = ["epoch lr loss"]
    for rec in history:
        lines.append(f"{rec.epoch} {rec.lr:.6g} {rec.loss:.8f}")
    return "\n".join(lines) + "\n"


def parse_loss_log(text: str) -> list[tuple[int, float, float]]:
    out = []
    for line in text.strip().splitlines()[1:]:
        e, lr, loss = line.split()
        out.append((int(e), float(lr), float(loss)))
    return out
