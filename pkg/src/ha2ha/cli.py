"""Command-line interface.

Every subcommand accepts ``--config`` (INI file; defaults apply when
omitted) and ``--seed``. Exit status: 0 success, 2 usage or configuration
error, 1 any other failure (one-line diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io as fio
from .baselines import angular_processing, conventional, st_nlm_power
from .config import ConfigError, ExperimentConfig, load_config
from .denoiser import denoise_ensemble
from .doppler import DopplerMap, color_doppler, log_compress, power_doppler, velocity_colormap
from .experiment import run_experiment, train_model
from .metrics import evaluate_map
from .phantom import noise_free, render_phantom
from .pipeline import AngleRfCube, IqEnsemble, RfEnsemble, full_angle_ensemble, hilbert_analytic, prepare_pair


class UsageError(Exception):
    """Bad arguments or inputs detected after parsing; exit status 2."""


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help="master seed (re-keys phantom, training and sweep seeds)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ha2ha", description="Half-angle self-supervised Doppler RF denoising")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a phantom angle cube")
    _common(p)
    p.add_argument("--out", required=True, help="output URFC cube")
    p.add_argument("--rois", help="directory for ROI mask sidecars")
    p.add_argument("--noise-free", action="store_true")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--dc", type=float, help="duty cycle in (0, 1]")

    p = sub.add_parser("pipeline", help="compound, filter and split a cube into Y1/Y2 (and the full ensemble)")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out-y1", required=True)
    p.add_argument("--out-y2", required=True)
    p.add_argument("--out-full")

    p = sub.add_parser("train", help="train the denoiser on the configured training phantoms")
    _common(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("denoise", help="denoise a filtered RF ensemble frame by frame")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="URFC RF ensemble (or angle cube, compounded first)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("doppler", help="power or color Doppler from an RF ensemble")
    _common(p)
    p.add_argument("kind", choices=("power", "color"))
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="URFC map")
    p.add_argument("--image", help="PGM (power) or PPM (color) output")
    p.add_argument("--dr", type=float, help="display dynamic range in dB")

    p = sub.add_parser("baseline", help="reference power Doppler methods on an angle cube")
    _common(p)
    p.add_argument("method", choices=("ap", "stnlm", "conventional"))
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image")
    p.add_argument("--dr", type=float)

    p = sub.add_parser("metrics", help="CNR/SNR/BNP of a power Doppler map")
    _common(p)
    p.add_argument("--map", required=True, help="URFC map")
    p.add_argument("--rois", required=True, help="ROI sidecar directory")
    p.add_argument("--csv", action="store_true", help="print CSV instead of a table")

    p = sub.add_parser("experiment", help="full comparison with DC sweep")
    _common(p)
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--epochs", type=int)
    return parser


def _config(args) -> ExperimentConfig:
    if args.config:
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            raise UsageError(str(exc)) from None
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    epochs = getattr(args, "epochs", None)
    if epochs is not None:
        if epochs < 1:
            raise UsageError("--epochs must be >= 1")
        cfg = replace(cfg, train=replace(cfg.train, max_epochs=epochs))
    return cfg


def _read(path: str):
    if not Path(path).is_file():
        raise UsageError(f"input file not found: {path}")
    return fio.read_urfc(path)


def _as_ensemble(data, cfg: ExperimentConfig) -> RfEnsemble:
    if isinstance(data, AngleRfCube):
        return full_angle_ensemble(data, cfg.svd, cfg.interp)
    if isinstance(data, RfEnsemble):
        return data
    raise UsageError("expected a real RF cube or ensemble")


def _cube(data) -> AngleRfCube:
    if not isinstance(data, AngleRfCube):
        raise UsageError("expected a URFC angle cube")
    return data


def _save_power(dmap: DopplerMap, args, dr: float) -> None:
    fio.write_map(dmap.intensity.astype(np.float32), args.out, dmap.meta)
    if args.image:
        fio.write_pgm(args.image, log_compress(dmap, dr))


def cmd_simulate(args, cfg):
    spec = cfg.phantom
    if args.noise_sigma is not None:
        spec = replace(spec, noise_sigma=args.noise_sigma)
    if args.dc is not None:
        spec = replace(spec, duty_cycle=args.dc)
    if args.noise_free:
        spec = noise_free(spec)
    cube, gt = render_phantom(spec)
    cube.samples = cube.samples.astype(np.float32)
    fio.write_urfc(cube, args.out)
    if args.rois:
        fio.write_rois(gt.rois, args.rois)


def cmd_pipeline(args, cfg):
    cube = _cube(_read(args.input))
    y1, y2 = prepare_pair(cube, cfg.svd, cfg.interp)
    fio.write_urfc(y1, args.out_y1)
    fio.write_urfc(y2, args.out_y2)
    if args.out_full:
        fio.write_urfc(full_angle_ensemble(cube, cfg.svd, cfg.interp), args.out_full)


def cmd_train(args, cfg):
    params, history = train_model(cfg, log=lambda s: print(s, file=sys.stderr))
    fio.save_checkpoint(params, args.out)
    if args.loss_log:
        Path(args.loss_log).write_text(fio.format_loss_log(history))


def cmd_denoise(args, cfg):
    if not Path(args.model).is_file():
        raise UsageError(f"model file not found: {args.model}")
    params = fio.load_checkpoint(args.model)
    ens = _as_ensemble(_read(args.input), cfg)
    fio.write_urfc(denoise_ensemble(cfg.unet, params, ens), args.out)


def cmd_doppler(args, cfg):
    data = _read(args.input)
    iq = data if isinstance(data, IqEnsemble) else hilbert_analytic(_as_ensemble(data, cfg))
    dr = args.dr if args.dr is not None else cfg.dynamic_range_db
    if args.kind == "power":
        _save_power(power_doppler(iq), args, dr)
    else:
        vmap = color_doppler(iq)
        fio.write_map(vmap.velocity.astype(np.float32), args.out, vmap.meta)
        if args.image:
            fio.write_ppm(args.image, velocity_colormap(vmap))


def cmd_baseline(args, cfg):
    cube = _cube(_read(args.input))
    if args.method == "conventional":
        dmap = conventional(cube, cfg.svd, cfg.interp)
    elif args.method == "ap":
        dmap = angular_processing(cube, cfg.svd, cfg.interp)
    else:
        dmap = st_nlm_power(cube, cfg.svd, cfg.stnlm, cfg.interp)
    _save_power(dmap, args, args.dr if args.dr is not None else cfg.dynamic_range_db)


def cmd_metrics(args, cfg):
    if not Path(args.map).is_file():
        raise UsageError(f"map file not found: {args.map}")
    if not Path(args.rois).is_dir():
        raise UsageError(f"ROI directory not found: {args.rois}")
    values = fio.read_map(args.map)
    rois = fio.read_rois(args.rois)
    row = evaluate_map(DopplerMap(np.maximum(values, 0)), rois)
    name = Path(args.map).stem
    if args.csv:
        sys.stdout.write(fio.metric_csv([(name, row)], ["map", "cnr_db", "snr_db", "bnp_db"]))
    else:
        sys.stdout.write(fio.format_metric_table([(name, row)], "map"))


def cmd_experiment(args, cfg):
    out = args.out or cfg.output_dir
    report = run_experiment(cfg, out, log=lambda s: print(s, file=sys.stderr))
    sys.stdout.write(fio.format_metric_table([(m, report.metrics[m]) for m in cfg.methods]))


COMMANDS = {
    "simulate": cmd_simulate,
    "pipeline": cmd_pipeline,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "doppler": cmd_doppler,
    "baseline": cmd_baseline,
    "metrics": cmd_metrics,
    "experiment": cmd_experiment,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"ha2ha {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # one-line diagnostic for any runtime failure
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"ha2ha {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
