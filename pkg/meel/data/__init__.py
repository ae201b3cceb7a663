from .dataset import SPLITS, Dataset, export_dataset, load_dataset
from .features import read_features, write_features
from .synthetic import generate_synthetic, synthetic_maps

__all__ = [
    "SPLITS",
    "Dataset",
    "export_dataset",
    "generate_synthetic",
    "load_dataset",
    "read_features",
    "synthetic_maps",
    "write_features",
]
