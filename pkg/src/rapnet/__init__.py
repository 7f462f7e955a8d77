"""Temporal action proposal generation with a relation-aware pyramid network.

Desk-scale and self-contained: a float64 autodiff tensor core (compiled conv
kernels when available), the network, anchor clustering and label
assignment, losses, two-stage proposal refinement, and AR@AN/AUC evaluation.
"""

from .anchors import AnchorSet, assign_actionness_labels, assign_proposal_labels, cluster_anchors, iou
from .backend import backend_name
from .evalkit import EvalCurve, build_curve, recall_at
from .losses import LossConfig, LossReport
from .network import NetworkConfig, RapNet
from .postprocess import ScoredInterval, adjust_boundaries, rank_proposals, soft_nms, tag_group
from .relation import RelationAwareModule
from .tensor import Tensor
from .train import TrainConfig, generate_proposals, train

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "EvalCurve", "LossConfig", "LossReport", "NetworkConfig",
    "RapNet", "RelationAwareModule", "ScoredInterval", "Tensor", "TrainConfig",
    "adjust_boundaries", "assign_actionness_labels", "assign_proposal_labels",
    "backend_name", "build_curve", "cluster_anchors", "generate_proposals",
    "iou", "rank_proposals", "recall_at", "soft_nms", "tag_group", "train",
    "__version__",
]
