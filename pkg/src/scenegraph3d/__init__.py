"""Scene-graph prediction, fusion and layout generation."""

from .config import DEFAULTS, OBJECT_CLASSES, PREDICATES, load_config
from .data import DatasetError, EntityInput, SceneRecord, read_dataset
from .datagen import SynthConfig, observe, synth_dataset
from .fusion import SceneGraphFuser, fuse_graph, fuse_value
from .generator import SceneGraphVAE
from .geometry import Obb, neighbor_graph, obb_distance, obb_overlap, pose_descriptor
from .graph import SceneGraph, SceneGraphEdge, SceneGraphNode
from .metrics import ConstraintReport, RecallReport, annotate_gt_predicates, eval_constraints, recall
from .pipeline import PipelineError, run_pipeline
from .predictor import SceneGraphPredictor
from .shapes import ShapeCatalog, assemble, export_scene

__version__ = "0.1.0"

__all__ = [
    "ConstraintReport", "DEFAULTS", "DatasetError", "EntityInput", "OBJECT_CLASSES", "Obb",
    "PREDICATES", "PipelineError", "RecallReport", "SceneGraph", "SceneGraphEdge",
    "SceneGraphFuser", "SceneGraphNode", "SceneGraphPredictor", "SceneGraphVAE", "SceneRecord",
    "ShapeCatalog", "SynthConfig", "annotate_gt_predicates", "assemble", "eval_constraints",
    "export_scene", "fuse_graph", "fuse_value", "load_config", "neighbor_graph", "observe",
    "obb_distance", "obb_overlap", "pose_descriptor", "read_dataset", "recall", "run_pipeline",
    "synth_dataset",
]
