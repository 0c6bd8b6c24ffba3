"""Weakly supervised 3D visual grounding on synthetic scenes."""

from .config import TrainConfig, load_bundled
from .geometry import AxisAlignedBox, box_iou, nms
from .synth import DetectorSimConfig, GenConfig, generate_corpus
from .train import train
from .evaluate import evaluate
from .model import GroundingModel, load_checkpoint, save_checkpoint

__all__ = ["AxisAlignedBox", "DetectorSimConfig", "GenConfig", "GroundingModel", "TrainConfig",
           "box_iou", "evaluate", "generate_corpus", "load_bundled", "load_checkpoint", "nms",
           "save_checkpoint", "train"]
