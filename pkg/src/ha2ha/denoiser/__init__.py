"""Half-angle self-supervised U-Net denoiser."""

from .data import PairedPatchSet, PatchProvenance, augment, apply_transform, build_pairs, shared_scale, tile_offsets
from .infer import denoise_ensemble, denoise_frame, denoise_frames
from .loss import ha2ha_loss, mae, total_loss
from .model import UNetConfig, init_unet, param_count, unet_forward
from .optim import AdamW, PlateauSchedule, adamw_update, plateau_schedule
from .train import EpochRecord, TrainConfig, TrainingDivergedError, batch_loss, recalibrate_batch_norm, train

__all__ = [
    "PairedPatchSet",
    "PatchProvenance",
    "augment",
    "apply_transform",
    "build_pairs",
    "shared_scale",
    "tile_offsets",
    "denoise_ensemble",
    "denoise_frame",
    "denoise_frames",
    "ha2ha_loss",
    "mae",
    "total_loss",
    "UNetConfig",
    "init_unet",
    "param_count",
    "unet_forward",
    "AdamW",
    "PlateauSchedule",
    "adamw_update",
    "plateau_schedule",
    "EpochRecord",
    "TrainConfig",
    "TrainingDivergedError",
    "batch_loss",
    "recalibrate_batch_norm",
    "train",
]
