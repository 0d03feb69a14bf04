"""IncepSE: an Inception-style 1D CNN with squeeze-and-excitation gating for
multi-label ECG classification, built on a small numpy reverse-mode autodiff
engine.

Typical use::

    from incepse import IncepSEConfig, SynthSpec, TrainConfig, fit, synth_dataset

    data = synth_dataset(SynthSpec(num_records=200, classes=3, seconds=2), seed=0)
    report = fit(TrainConfig.for_task("super", epochs=3), data, IncepSEConfig(depth=2))
"""

from .autodiff import GradientMap, ShapeError, Tape, TapeError, Tensor, build_tensor
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (Dataset, ECGRecord, ManifestError, SynthSpec, TaskSpec, batches, get_task, load_manifest,
                   split_folds, synth_dataset, write_manifest)
from .metrics import UndefinedMetricError, auroc_binary, macro_auroc
from .model import IncepSEConfig, ModelParams, count_parameters, init_params, model_forward
from .signal import BandpassSpec, apply_zero_phase, design_bandpass, lead_stats, standardize
from .training import TrainConfig, TrainReport, TrainingDiverged, fit, predict_logits

__version__ = "0.1.0"

__all__ = [
    "GradientMap", "ShapeError", "Tape", "TapeError", "Tensor", "build_tensor",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
    "Dataset", "ECGRecord", "ManifestError", "SynthSpec", "TaskSpec", "batches", "get_task", "load_manifest",
    "split_folds", "synth_dataset", "write_manifest",
    "UndefinedMetricError", "auroc_binary", "macro_auroc",
    "IncepSEConfig", "ModelParams", "count_parameters", "init_params", "model_forward",
    "BandpassSpec", "apply_zero_phase", "design_bandpass", "lead_stats", "standardize",
    "TrainConfig", "TrainReport", "TrainingDiverged", "fit", "predict_logits",
]
