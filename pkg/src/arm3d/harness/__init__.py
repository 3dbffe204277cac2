from .backbone import BackboneConfig, ProposalSeeds, backbone_stub
from .detector import Detection, detection_head, init_detector_params, make_detections
from .evaluation import EvalReport, average_precision, evaluate_map
from .losses import (DEFAULT_LAMBDAS, LossBreakdown, loss_total,
                     loss_weighted_bce, smooth_l1, softmax_cross_entropy)
from .synthetic import (GeneratedScene, IntendedPair, SyntheticConfig,
                        audit_dataset, generate_dataset, generate_scene)
from .training import (Dataset, DatasetEntry, SceneSample, eval_scene,
                       evaluate_split, prepare_sample, prepare_samples,
                       train_run, train_step)

__all__ = [
    "BackboneConfig", "ProposalSeeds", "backbone_stub", "Detection",
    "detection_head", "init_detector_params", "make_detections", "EvalReport",
    "average_precision", "evaluate_map", "DEFAULT_LAMBDAS", "LossBreakdown",
    "loss_total", "loss_weighted_bce", "smooth_l1", "softmax_cross_entropy",
    "GeneratedScene", "IntendedPair", "SyntheticConfig", "audit_dataset",
    "generate_dataset", "generate_scene", "Dataset", "DatasetEntry",
    "SceneSample", "eval_scene", "evaluate_split", "prepare_sample",
    "prepare_samples", "train_run", "train_step",
]
