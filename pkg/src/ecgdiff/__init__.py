"""Desk-scale laboratory for drug-induced ECG synthesis and evaluation."""

__version__ = "0.1.0"

from .ode import (
    DrugEffectSpec,
    EcgSignal,
    OdeState,
    SimConfig,
    WaveParams,
    apply_drug_effect,
    baseline,
    derivatives,
    euler_step,
    load_drug_config,
    simulate,
)
from .autodiff import Tape, Tensor
from .optim import ParameterStore, adam_step
from .diffusion import NoiseSchedule, q_sample, reverse_step_mean, sample, training_loss
from .model import EpsPredictor, ModelConfig, dca, make_variant, time_embedding
from .delineation import (
    FiducialPoints,
    IntervalReport,
    classify_normality,
    delineate,
    detect_r_peaks,
    interval_report,
    qtc_bazett,
)
from .metrics import ConcordanceResult, composite_concordance, concordance, frechet_distance, rmse
from .features import SignalFeatureExtractor
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "__version__",
    "WaveParams", "SimConfig", "OdeState", "EcgSignal", "DrugEffectSpec",
    "derivatives", "baseline", "euler_step", "simulate", "apply_drug_effect", "load_drug_config",
    "Tape", "Tensor", "ParameterStore", "adam_step",
    "NoiseSchedule", "q_sample", "reverse_step_mean", "sample", "training_loss",
    "ModelConfig", "EpsPredictor", "dca", "make_variant", "time_embedding",
    "FiducialPoints", "IntervalReport", "detect_r_peaks", "delineate",
    "qtc_bazett", "classify_normality", "interval_report",
    "frechet_distance", "rmse", "concordance", "composite_concordance", "ConcordanceResult",
    "SignalFeatureExtractor",
    "Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint",
]
