"""Crowded-detection toolkit.

Core pieces: per-proposal ground-truth set assignment, a minimum-cost
set-matching loss over slot predictions, Set NMS (plus classic and soft
NMS), detection metrics (AP, log-average miss rate, Jaccard index,
crowd/sparse recall), JSONL scene I/O, and a seeded synthetic crowded-scene
harness for end-to-end studies.
"""

__version__ = "0.1.0"

from .assignment import (BACKGROUND_CLASS, GroundTruth, GtSet,
                         GtSetOverflowError, build_gt_set,
                         max_gt_set_cardinality, pad_to_k, truncate_top_k)
from .emd import (EmdConfig, EmdMatch, PredictionSet, SlotPrediction,
                  cls_loss, emd_loss, emd_match, pair_cost_matrix, reg_loss,
                  smooth_l1)
from .geometry import (BBox, BoxDelta, GeometryError, boxes_to_array,
                       decode_delta, encode_delta, iou, iou_matrix)
from .metrics import (EvalConfig, EvalReport, RecallStats, average_precision,
                      best_ji, crowd_flags, density_stats, evaluate,
                      jaccard_index, match_greedy, mr2, recall_split)
from .scene_io import (PredictionRecord, SceneFileError, SceneRecord,
                       iter_scene_file, parse_prediction_file,
                       parse_scene_file, write_prediction_file,
                       write_scene_file)
from .suppression import (BenchReport, Detection, SuppressionConfig,
                          bench_suppression, make_box_cloud, nms, set_nms,
                          soft_nms, suppress)
from .synth import (DetectorSimParams, SceneGenerationError, SceneParams,
                    StudyRow, build_scenes, derive_seed, generate_scene,
                    run_study, simulate_detector)

__all__ = [
    "__version__",
    "BACKGROUND_CLASS", "GroundTruth", "GtSet", "GtSetOverflowError",
    "build_gt_set", "max_gt_set_cardinality", "pad_to_k", "truncate_top_k",
    "EmdConfig", "EmdMatch", "PredictionSet", "SlotPrediction", "cls_loss",
    "emd_loss", "emd_match", "pair_cost_matrix", "reg_loss", "smooth_l1",
    "BBox", "BoxDelta", "GeometryError", "boxes_to_array", "decode_delta",
    "encode_delta", "iou", "iou_matrix",
    "EvalConfig", "EvalReport", "RecallStats", "average_precision", "best_ji",
    "crowd_flags", "density_stats", "evaluate", "jaccard_index",
    "match_greedy", "mr2", "recall_split",
    "PredictionRecord", "SceneFileError", "SceneRecord", "iter_scene_file",
    "parse_prediction_file", "parse_scene_file", "write_prediction_file",
    "write_scene_file",
    "BenchReport", "Detection", "SuppressionConfig", "bench_suppression",
    "make_box_cloud", "nms", "set_nms", "soft_nms", "suppress",
    "DetectorSimParams", "SceneGenerationError", "SceneParams", "StudyRow",
    "build_scenes", "derive_seed", "generate_scene", "run_study",
    "simulate_detector",
]
