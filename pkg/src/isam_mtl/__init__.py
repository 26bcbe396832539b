"""Spiking variational encoder with per-subject Hebbian associative memories for EEG classification."""

from .amm import AMMatrix, bam_retrieve, classify, hebbian_fit, reverse_feature
from .data import SynthSpec, TrialSet, import_csv, read_container, synthesize, write_container, zscore
from .model import EncoderConfig, SpikingVAE
from .pipeline import (
    EvalReport, ExperimentConfig, ablation_run, evaluate, few_shot, fit_stage2, run_pipeline, train_stage1,
)
from .spiking import LIFParams, lif_backward, lif_simulate

__version__ = "0.1.0"

__all__ = [
    "AMMatrix", "EncoderConfig", "EvalReport", "ExperimentConfig", "LIFParams", "SpikingVAE", "SynthSpec",
    "TrialSet", "ablation_run", "bam_retrieve", "classify", "evaluate", "few_shot", "fit_stage2", "hebbian_fit",
    "import_csv", "lif_backward", "lif_simulate", "read_container", "reverse_feature", "run_pipeline",
    "synthesize", "train_stage1", "write_container", "zscore",
]
