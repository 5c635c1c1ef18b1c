from .checkpoint import Checkpoint, load_checkpoint, load_into, save_checkpoint
from .infer import infer, model_from_checkpoint
from .io import DatasetIndex, Record, read_manifest, write_manifest
from .patches import PatchGrid, augment, extract_patches, stitch, threshold
from .split import leave_one_out_split
from .train import TrainConfig, TrainResult, train

__all__ = [
    "Checkpoint", "load_checkpoint", "load_into", "save_checkpoint", "infer", "model_from_checkpoint",
    "DatasetIndex", "Record", "read_manifest", "write_manifest", "PatchGrid", "augment",
    "extract_patches", "stitch", "threshold", "leave_one_out_split", "TrainConfig", "TrainResult", "train",
]
