"""Oriented object detection in polar coordinates.

Boxes are represented by a pole point (the centroid), one shared radius
and the two smallest corner angles; the network regresses those three
numbers per object on a stride-4 grid next to a per-class center heatmap.
"""

from .encoding import (EncodedSample, GridConfig, encode_regression,
                       gaussian_heatmap, pole_cell)
from .evaluation import (ClassEval, EvalReport, PRPoint, average_precision,
                         evaluate, match_detections, mean_ap,
                         precision_recall_curve)
from .geometry import (PolarBox, Point2, QuadBox, intersection_area,
                       normalize_angle, oriented_nms, polar_to_quad,
                       polygon_area, quad_to_polar, rotated_iou, signed_area)
from .losses import (LossConfig, LossValue, pole_focal_loss, polar_ring_loss,
                     ring_area, smooth_l1, total_loss, total_regression_loss)
from .postprocess import (DecodeResult, Detection, PolePoint, binarize,
                          connected_components, decode_detections,
                          decode_poles, extract_pole_points, topk_extract)
from .synthdata import (SceneSpec, generate_dataset, generate_scene, read_pgm,
                        write_dataset, write_pgm)
from .toynet import (Adam, ToyNet, TrainConfig, TrainingSample,
                     compute_batch_loss, image_to_input, load_checkpoint,
                     predict_planes, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "ClassEval", "DecodeResult", "Detection", "EncodedSample",
    "EvalReport", "GridConfig", "LossConfig", "LossValue", "PRPoint",
    "Point2", "PolarBox", "PolePoint", "QuadBox", "SceneSpec", "ToyNet",
    "TrainConfig", "TrainingSample", "average_precision", "binarize",
    "compute_batch_loss", "connected_components", "decode_detections",
    "decode_poles", "encode_regression", "evaluate", "extract_pole_points",
    "gaussian_heatmap", "generate_dataset", "generate_scene", "image_to_input",
    "intersection_area", "load_checkpoint", "match_detections", "mean_ap",
    "normalize_angle", "oriented_nms", "polar_to_quad", "pole_cell",
    "pole_focal_loss", "polar_ring_loss", "polygon_area",
    "precision_recall_curve", "predict_planes", "quad_to_polar", "read_pgm",
    "ring_area", "rotated_iou", "save_checkpoint", "signed_area", "smooth_l1",
    "topk_extract", "total_loss", "total_regression_loss", "train",
    "write_dataset", "write_pgm",
]
