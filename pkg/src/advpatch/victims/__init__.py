"""Victim models: depth estimation and semantic segmentation."""

from .models import (ConvNet, DisparityConvention, LayerSpec, MDEModel,
                     SSModel, VictimError, image_to_batch, load_checkpoint,
                     predict_disparity, predict_semantics, save_checkpoint,
                     to_dtype)
from .training import (GROUND_CLASSES, mde_ground_rel_error, predict_depth_map,
                       predict_label_map, ss_accuracy, ss_road_iou, train_mde,
                       train_ss)

__all__ = [
    "ConvNet", "DisparityConvention", "LayerSpec", "MDEModel", "SSModel",
    "VictimError", "image_to_batch", "load_checkpoint", "predict_disparity",
    "predict_semantics", "save_checkpoint", "to_dtype",
    "GROUND_CLASSES", "mde_ground_rel_error", "predict_depth_map",
    "predict_label_map", "ss_accuracy", "ss_road_iou", "train_mde", "train_ss",
]
