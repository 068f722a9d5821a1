"""Tracking by detection with a learned accept/reject template-update agent."""
from .agent import AgentNet, load_checkpoint, save_checkpoint
from .datasets import SequenceData, SynthConfig, generate_synthetic, load_sequence, write_sequence
from .estimator import TemplateTracker
from .geometry import BitMask, Box, box_iou, mask_iou
from .pipeline import Tracker, TrackerConfig, TrainConfig, run_sequence, train
from .proposals import DetectorScript, Proposal, ScriptedDetector
from .template import Action, Image

__version__ = "0.1.0"

__all__ = [
    "Action", "AgentNet", "BitMask", "Box", "DetectorScript", "Image", "Proposal", "ScriptedDetector",
    "SequenceData", "SynthConfig", "TemplateTracker", "Tracker", "TrackerConfig", "TrainConfig",
    "box_iou", "generate_synthetic", "load_checkpoint", "load_sequence", "mask_iou", "run_sequence",
    "save_checkpoint", "train", "write_sequence",
]
