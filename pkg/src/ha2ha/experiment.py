"""End-to-end comparison: train once on phantom pairs, then evaluate the
conventional, AP, ST-NLM and HA2HA maps on a held-out phantom and across a
duty-cycle sweep."""

from __future__ import annotations

import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import io as fio
from .autodiff import ParamStore
from .baselines import angular_processing, st_nlm
from .config import ExperimentConfig, dump_config
from .denoiser import (
    EpochRecord,
    PairedPatchSet,
    build_pairs,
    denoise_ensemble,
    init_unet,
    train,
)
from .doppler import (
    DopplerMap,
    color_doppler,
    log_compress,
    power_doppler,
    spurious_velocity_power_db,
    velocity_colormap,
)
from .metrics import MetricRow, evaluate_map
from .phantom import GroundTruth, PhantomSpec, derive_seed, noise_free, render_phantom
from .pipeline import AngleRfCube, RfEnsemble, full_angle_ensemble, hilbert_analytic, prepare_pair

FAILURE_MARKER = "FAILED"


@dataclass
class MethodOutput:
    power: DopplerMap
    ensemble: Optional[RfEnsemble]  # filtered RF used for CDI; None for AP


@dataclass
class ExperimentReport:
    metrics: dict = field(default_factory=dict)  # method -> MetricRow
    sweep: list = field(default_factory=list)  # (dc, method, MetricRow)
    fidelity: dict = field(default_factory=dict)  # quantity -> value
    cdi: dict = field(default_factory=dict)  # method -> spurious velocity power (dB)
    history: list = field(default_factory=list)
    params: Optional[ParamStore] = None
    outputs: dict = field(default_factory=dict)  # method -> MethodOutput (held-out phantom)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalized cross-correlation."""
    a = np.ravel(a) - np.mean(a)
    b = np.ravel(b) - np.mean(b)
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    return float(np.dot(a, b) / den) if den > 0 else 0.0


def training_set(cfg: ExperimentConfig) -> PairedPatchSet:
    """Half-angle patch pairs from the training phantoms (each seed gives new
    speckle and noise)."""
    sets = []
    for i, seed in enumerate(cfg.train_seeds):
        cube, _ = render_phantom(replace(cfg.phantom, seed=int(seed)))
        y1, y2 = prepare_pair(cube, cfg.svd, cfg.interp)
        sets.append(
            build_pairs(
                y1,
                y2,
                cfg.train.patch,
                cfg.train.stride,
                cfg.frame_subsample,
                augment_seed=derive_seed(cfg.train.seed, i) if cfg.train.augment else None,
                allow_rot90=cfg.train.allow_rot90,
                source=i,
            )
        )
    return PairedPatchSet.concat(sets)


def train_model(cfg: ExperimentConfig, log: Callable[[str], None] = lambda s: None):
    ds = training_set(cfg)
    log(f"training on {len(ds)} patch pairs")
    params = init_unet(cfg.unet, seed=cfg.train.seed)
    params, history = train(
        ds,
        cfg.unet,
        cfg.train,
        params=params,
        on_epoch=lambda r: log(f"epoch {r.epoch} lr {r.lr:.3g} loss {r.loss:.6f}"),
    )
    return params, history


def run_methods(
    cube: AngleRfCube, cfg: ExperimentConfig, params: Optional[ParamStore], methods=None
) -> dict:
    """Power Doppler map (and filtered RF where defined) for every method."""
    methods = cfg.methods if methods is None else methods
    out = {}
    full = None
    if any(m in methods for m in ("conventional", "stnlm", "ha2ha")):
        full = full_angle_ensemble(cube, cfg.svd, cfg.interp)
    for m in methods:
        if m == "conventional":
            out[m] = MethodOutput(power_doppler(hilbert_analytic(full)), full)
        elif m == "ap":
            out[m] = MethodOutput(angular_processing(cube, cfg.svd, cfg.interp), None)
        elif m == "stnlm":
            ens = st_nlm(full, cfg.stnlm)
            out[m] = MethodOutput(power_doppler(hilbert_analytic(ens)), ens)
        elif m == "ha2ha":
            if params is None:
                raise ValueError("ha2ha requires trained parameters")
            ens = denoise_ensemble(cfg.unet, params, full)
            out[m] = MethodOutput(power_doppler(hilbert_analytic(ens)), ens)
    return out


def _rois_for_interp(gt: GroundTruth, interp: int):
    if interp == 1:
        return gt.rois
    raise ValueError("metric ROIs are defined on the native grid; use interp = 1 for evaluation")


def _evaluate(cfg, params, spec: PhantomSpec):
    cube, gt = render_phantom(spec)
    outputs = run_methods(cube, cfg, params)
    rois = _rois_for_interp(gt, cfg.interp)
    return outputs, {m: evaluate_map(o.power, rois) for m, o in outputs.items()}, gt


def sweep_spec(cfg: ExperimentConfig, dc: float) -> PhantomSpec:
    s = cfg.sweep
    return replace(cfg.phantom, angles=tuple(s.angles), noise_sigma=s.noise_sigma, duty_cycle=dc, seed=s.seed)


def _write_images(out: Path, tag: str, outputs: dict, dr: float) -> None:
    img = out / "images"
    img.mkdir(parents=True, exist_ok=True)
    for m, o in outputs.items():
        gray = log_compress(o.power, dr)
        fio.write_pgm(img / f"{tag}_{m}_power.pgm", gray)
        if o.ensemble is not None:
            vmap = color_doppler(hilbert_analytic(o.ensemble))
            rgb = velocity_colormap(vmap).astype(np.uint16) * gray[..., None] // 255
            fio.write_ppm(img / f"{tag}_{m}_cdi.ppm", rgb.astype(np.uint8))


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: Optional[str] = None,
    params: Optional[ParamStore] = None,
    log: Callable[[str], None] = lambda s: None,
) -> ExperimentReport:
    """Run the full comparison and write every artifact under ``out_dir``
    (default ``cfg.output_dir``).

    Outputs: config.ini, metrics.txt/.csv, dc_sweep.txt/.csv, cdi.csv,
    fidelity.csv, loss_log.txt, model.ckpt and images/*.pgm|ppm. On error a
    ``FAILED`` file with the traceback is written and the error re-raised.
    Pass ``params`` to skip training and reuse a model.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILURE_MARKER
    if marker.exists():
        marker.unlink()
    report = ExperimentReport()
    try:
        (out / "config.ini").write_text(dump_config(cfg))
        if "ha2ha" in cfg.methods:
            if params is None:
                params, report.history = train_model(cfg, log)
                (out / "loss_log.txt").write_text(fio.format_loss_log(report.history))
            fio.save_checkpoint(params, out / "model.ckpt")
        report.params = params

        log("evaluating held-out phantom")
        outputs, rows, gt = _evaluate(cfg, params, cfg.phantom)
        report.metrics = rows
        report.outputs = outputs
        table = [(m, rows[m]) for m in cfg.methods]
        (out / "metrics.txt").write_text(fio.format_metric_table(table))
        (out / "metrics.csv").write_text(fio.metric_csv(table, ["method", "cnr_db", "snr_db", "bnp_db"]))
        _write_images(out, "heldout", outputs, cfg.dynamic_range_db)

        for m, o in outputs.items():
            if o.ensemble is not None:
                vmap = color_doppler(hilbert_analytic(o.ensemble))
                report.cdi[m] = spurious_velocity_power_db(o.power, vmap, gt.rois.noise)
        (out / "cdi.csv").write_text(
            fio.metric_csv([(m, float(v)) for m, v in report.cdi.items()], ["method", "spurious_velocity_power_db"])
        )

        if "ha2ha" in outputs:
            clean_cube, _ = render_phantom(noise_free(cfg.phantom))
            ref = full_angle_ensemble(clean_cube, cfg.svd, cfg.interp).samples
            noisy = outputs["conventional"].ensemble if "conventional" in outputs else None
            if noisy is None:
                noisy = full_angle_ensemble(render_phantom(cfg.phantom)[0], cfg.svd, cfg.interp)
            den = outputs["ha2ha"].ensemble.samples
            mse_in = float(np.mean((noisy.samples - ref) ** 2))
            mse_out = float(np.mean((den - ref) ** 2))
            report.fidelity = {
                "ncc_input": ncc(noisy.samples, ref),
                "ncc_denoised": ncc(den, ref),
                "mse_input": mse_in,
                "mse_denoised": mse_out,
                "mse_ratio": mse_out / mse_in if mse_in > 0 else float("nan"),
            }
            (out / "fidelity.csv").write_text(
                fio.metric_csv([(k, float(v)) for k, v in report.fidelity.items()], ["quantity", "value"])
            )

        if cfg.sweep is not None:
            for dc in cfg.sweep.duty_cycles:
                log(f"DC sweep: {dc}")
                outputs_dc, rows_dc, _ = _evaluate(cfg, params, sweep_spec(cfg, dc))
                for m in cfg.methods:
                    report.sweep.append((dc, m, rows_dc[m]))
                _write_images(out, f"dc{dc:g}", outputs_dc, cfg.dynamic_range_db)
            sweep_rows = [(f"{m}@DC={dc:g}", r) for dc, m, r in report.sweep]
            (out / "dc_sweep.txt").write_text(fio.format_metric_table(sweep_rows, "method@DC"))
            (out / "dc_sweep.csv").write_text(
                fio.metric_csv([(dc, m, r) for dc, m, r in report.sweep], ["dc", "method", "cnr_db", "snr_db", "bnp_db"])
            )
    except BaseException:
        marker.write_text(traceback.format_exc())
        raise
    return report
