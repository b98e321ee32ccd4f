"""Desk-scale small-object detector with a scale-sequence fusion neck,
a stride-4 detection branch, Soft-NMS post-processing, and a full
training/evaluation harness."""

from .boxes import Detection, GroundTruth
from .model import Detector, ModelConfig, decode, load_checkpoint, save_checkpoint
from .postprocess import SuppressionConfig, hard_nms, iou, soft_nms, suppress
from .train import TrainConfig, evaluate, lr_schedule, train

__all__ = [
    "Detection", "GroundTruth", "Detector", "ModelConfig", "decode",
    "load_checkpoint", "save_checkpoint", "SuppressionConfig", "hard_nms",
    "iou", "soft_nms", "suppress", "TrainConfig", "evaluate", "lr_schedule",
    "train",
]

__version__ = "0.1.0"
