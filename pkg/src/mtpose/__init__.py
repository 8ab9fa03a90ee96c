"""Metamorphic robustness testing for hand pose estimation models."""

from mtpose.adapters import AdapterConfig, Prediction
from mtpose.dataset import (
    BoundingBox,
    DatasetManifest,
    HandLandmarks,
    ImageBuffer,
    crop_square_patch,
    load_manifest,
    resize,
    tight_bbox,
)
from mtpose.metrics import ConfusionCounts, MetricRecord, classify, iou, mean_ed
from mtpose.runner import RunConfig, RunRecord, run
from mtpose.testgen import GenerationConfig, build_suite
from mtpose.transforms import adjust_gamma, build_motion_kernel, correlate, occlude
from mtpose.verify import MRVerdict, VerifyConfig, spearman, verify_all

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig", "BoundingBox", "ConfusionCounts", "DatasetManifest", "GenerationConfig",
    "HandLandmarks", "ImageBuffer", "MRVerdict", "MetricRecord", "Prediction", "RunConfig",
    "RunRecord", "VerifyConfig", "adjust_gamma", "build_motion_kernel", "build_suite", "classify",
    "correlate", "crop_square_patch", "iou", "load_manifest", "mean_ed", "occlude", "resize", "run",
    "spearman", "tight_bbox", "verify_all",
]
