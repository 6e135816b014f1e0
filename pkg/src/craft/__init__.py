"""Complementary item recommendation with a conditional adversarial feature transformer."""

__version__ = "0.1.0"

from .data import PRESETS, PairDataset, SyntheticSpec, dataset_load, dataset_save, load_spec, synth_generate
from .model import CraftModel, Discriminator, TrainConfig, Transformer, load_checkpoint, save_checkpoint, train
from .retrieval import KnnIndex, index_build, knn_query, recommend

__all__ = [
    "PRESETS", "PairDataset", "SyntheticSpec", "dataset_load", "dataset_save", "load_spec", "synth_generate",
    "CraftModel", "Discriminator", "TrainConfig", "Transformer", "load_checkpoint", "save_checkpoint", "train",
    "KnnIndex", "index_build", "knn_query", "recommend",
]
