"""Diffusion-based synthesis and restoration of multichannel 1-D biomedical signals."""

from .diffusion_math import NoiseSchedule, build_schedule
from .denoiser import Condition, UNet1D, UNetConfig, build_model
from .data import CorruptionSpec, SignalSet, corrupt, gen_simulated, load_csv, write_csv
from .checkpoint import Checkpoint
from .engine import (GuidanceConfig, TrainConfig, fine_tune, restore, sample_label_conditional,
                     sample_signal_conditional, sample_unconditional, train)
from .metrics import discriminative_score, evaluate, wavelet_coherence_score

__version__ = "0.1.0"

__all__ = [
    "NoiseSchedule", "build_schedule", "Condition", "UNet1D", "UNetConfig", "build_model",
    "CorruptionSpec", "SignalSet", "corrupt", "gen_simulated", "load_csv", "write_csv",
    "Checkpoint", "GuidanceConfig", "TrainConfig", "fine_tune", "restore",
    "sample_label_conditional", "sample_signal_conditional", "sample_unconditional", "train",
    "discriminative_score", "evaluate", "wavelet_coherence_score",
]
