"""Real-time hair segmentation and matting with MobileNet encoder-decoders, in numpy."""
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data import Dataset, Sample, SynthConfig, generate_synthetic, load_dataset
from .guided_filter import GuidedFilterParams, guided_filter, refine_mask
from .losses import LossConfig, combined_loss, gradient_consistency_loss
from .metrics import evaluate_dataset, format_table
from .model import Model, ModelSpec, build_model
from .optim import Adadelta
from .train import fit

__all__ = [
    "Adadelta",
    "Dataset",
    "GuidedFilterParams",
    "LossConfig",
    "Model",
    "ModelSpec",
    "Sample",
    "SynthConfig",
    "build_model",
    "combined_loss",
    "evaluate_dataset",
    "fit",
    "format_table",
    "generate_synthetic",
    "gradient_consistency_loss",
    "guided_filter",
    "load_checkpoint",
    "load_dataset",
    "read_checkpoint",
    "refine_mask",
    "save_checkpoint",
]
