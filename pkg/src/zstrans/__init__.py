"""Unsupervised zero-shot image-to-image translation.

Training, inference, and evaluation for translating images between
visual domains never seen during training: two encoders align
domain-specific features across the image and attribute modalities
under an adversarial objective, a content encoder and an AdaIN-
conditioned generator disentangle what is preserved from what is
transferred, and zero-shot protocols quantify how well the learned
feature space generalizes to held-out domains.
"""

__version__ = "0.1.0"

from .config import LossWeights, NetConfig, TrainConfig
from .data import DomainDataset, DomainSplit, PairBatch, Sample, load_dataset, save_dataset
from .losses import LossReport, compose_objectives
from .networks import (ModelBundle, adaptive_instance_norm, build_bundle,
                       translate_attr, translate_vision)
from .synthetic import SyntheticSpec, make_synthetic
from .training import TrainState, lr_schedule, train

__all__ = [
    "LossWeights", "NetConfig", "TrainConfig",
    "DomainDataset", "DomainSplit", "PairBatch", "Sample",
    "load_dataset", "save_dataset",
    "LossReport", "compose_objectives",
    "ModelBundle", "adaptive_instance_norm", "build_bundle",
    "translate_attr", "translate_vision",
    "SyntheticSpec", "make_synthetic",
    "TrainState", "lr_schedule", "train",
    "__version__",
]
