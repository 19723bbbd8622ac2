"""Frames in, OBJ scene out: predict, fuse, generate, export."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .fusion import SceneGraphFuser
from .generator import SceneGraphVAE
from .graph import SceneGraph, dumps
from .nn.checkpoint import atomic_write_text
from .predictor import SceneGraphPredictor
from .shapes import ShapeCatalog, assemble, export_scene

STAGES = ("predict", "fuse", "generate", "export")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineResult:
    global_graph: SceneGraph
    layout: dict
    timings: Dict[str, float] = field(default_factory=dict)


class _Stage:
    def __init__(self, name: str, timings: Dict[str, float]):
        self.name, self.timings = name, timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def run_pipeline(frames: Sequence[dict], predictor: SceneGraphPredictor, generator: SceneGraphVAE,
                 catalog: ShapeCatalog, mode: str = "sample", seed: int = 0,
                 out_path: Optional[str] = None, fmt: str = "obj") -> PipelineResult:
    """Run all stages; nothing is written unless every earlier stage succeeded.

    Entity ids are assumed stable across frames, so each local node is fused
    into the global node with the same id.
    """
    timings: Dict[str, float] = {}
    with _Stage("predict", timings):
        if not frames:
            raise ValueError("no frames to process")
        locals_: List[SceneGraph] = [predictor.predict_scene(f["entities"]) for f in frames]
    with _Stage("fuse", timings):
        fuser = SceneGraphFuser()
        for g in locals_:
            fuser.partial_fit(g)
        global_graph = fuser.global_graph_
    with _Stage("generate", timings):
        layout = generator.generate(global_graph, mode=mode, seed=seed)
    with _Stage("export", timings):
        scene = assemble(layout, catalog)
        if out_path is not None:
            export_scene(scene, out_path, fmt)
    return PipelineResult(global_graph, layout, timings)


def write_outputs(result: PipelineResult, graph_path: str, layout_path: str,
                  timings_path: Optional[str] = None) -> None:
    atomic_write_text(graph_path, result.global_graph.to_json())
    atomic_write_text(layout_path, dumps(result.layout))
    if timings_path is not None:
        atomic_write_text(timings_path, dumps(result.timings))
