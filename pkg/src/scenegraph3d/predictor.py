"""Estimator wrapper and training loop for the scene-graph predictor."""

from __future__ import annotations

import logging
import time
from typing import List, Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .data import SceneRecord
from .graph import SceneGraph
from .nn.checkpoint import CheckpointError, load_params, read_checkpoint, save_params
from .nn.layers import init_parameters
from .sgp import GraphTensors, SgpModel, build_graph_tensors, sgp_loss, to_scene_graph
from .training import (MetricsLog, adam_state_tensors, cosine_lr, epoch_batches, make_adam,
                       restore_adam, set_lr, single_threaded, split_adam_tensors)
from .validation import check_entities, check_records, check_vocab

log = logging.getLogger(__name__)


class SceneGraphPredictor(BaseEstimator):
    """Predicts object classes and pairwise predicates for a set of entities.

    ``fit`` takes :class:`SceneRecord` objects; ``predict`` takes scenes given
    as records or entity lists and returns one :class:`SceneGraph` per scene.
    """

    def __init__(self, model_dim: int = 256, image_proj_dim: int = 256, point_dim: int = 256,
                 heads: int = 4, layers: int = 2, margin: float = 0.5, lr: float = 1e-3,
                 lr_min_ratio: float = 0.05,
                 epochs: int = 20, batch_size: int = 8, seed: int = 0,
                 objects: Optional[Sequence[str]] = None,
                 predicates: Optional[Sequence[str]] = None):
        self.model_dim = model_dim
        self.image_proj_dim = image_proj_dim
        self.point_dim = point_dim
        self.heads = heads
        self.layers = layers
        self.margin = margin
        self.lr = lr
        self.lr_min_ratio = lr_min_ratio
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.objects = objects
        self.predicates = predicates

    # -- construction -----------------------------------------------------------

    def _build(self, image_dim: int, objects, predicates) -> None:
        self.objects_ = list(objects)
        self.predicates_ = list(predicates)
        self.image_dim_ = int(image_dim)
        self.model_ = SgpModel(image_dim, len(objects), len(predicates), self.model_dim,
                               self.image_proj_dim, self.point_dim, self.heads, self.layers)
        init_parameters(self.model_, self.seed)

    def _tensors(self, rec: SceneRecord):
        g = rec.graph
        pairs = g.edge_keys()
        gt = build_graph_tensors(rec.entities, self.margin, pairs)
        obj_t = torch.as_tensor([g.nodes[nid].label for nid in gt.ids])
        pred_t = torch.as_tensor([g.edges[k].label for k in pairs], dtype=torch.int64)
        return gt, obj_t, pred_t

    def _batch_loss(self, cached, idx) -> torch.Tensor:
        total = 0.0
        for k in idx:
            gt, obj_t, pred_t = cached[k]
            obj_logits, pred_logits, _, _ = self.model_(gt)
            total = total + sgp_loss(obj_logits, pred_logits, obj_t, pred_t)
        return total / len(idx)

    # -- training ---------------------------------------------------------------

    def fit(self, records, y=None, validation=None, log_path=None, checkpoint_path=None,
            resume_from=None) -> "SceneGraphPredictor":
        records = check_records(records)
        vocab_src = records[0].graph
        objects = self.objects or vocab_src.objects
        predicates = self.predicates or vocab_src.predicates
        for r in records + list(validation or []):
            check_vocab(r.graph, objects, predicates, f"scene {r.scene_id}")
        with single_threaded():
            self._build(records[0].entities[0].image_feat.shape[0], objects, predicates)
            opt = make_adam(self.model_, self.lr)
            start_epoch = 0
            if resume_from is not None:
                start_epoch = self._restore(resume_from, opt)
            cached = [self._tensors(r) for r in records]
            mlog = MetricsLog(log_path)
            self.history_: List[dict] = []
            best = -np.inf
            for epoch in range(start_epoch, self.epochs):
                t0 = time.perf_counter()
                losses = []
                batches = epoch_batches(len(cached), self.batch_size, self.seed, epoch)
                for b, idx in enumerate(batches):
                    set_lr(opt, cosine_lr(epoch * len(batches) + b, self.epochs * len(batches),
                                          self.lr, self.lr_min_ratio))
                    opt.zero_grad()
                    loss = self._batch_loss(cached, idx)
                    loss.backward()
                    opt.step()
                    losses.append(loss.item())
                row = {"epoch": epoch, "loss": float(np.mean(losses)), "step_losses": losses,
                       "train": self._recall(records).to_dict(),
                       "seconds": time.perf_counter() - t0}
                if validation:
                    row["val"] = self._recall(validation).to_dict()
                mlog.append(row)
                self.history_.append(row)
                score = (row["val"] if validation else row["train"])["recall_obj"]
                score += (row["val"] if validation else row["train"])["recall_pred"]
                if checkpoint_path is not None and score > best:
                    best = score
                    self.save(checkpoint_path, opt, epoch + 1)
                log.info("sgp epoch %d loss %.4f", epoch, row["loss"])
            self.optimizer_ = opt
            self.epochs_done_ = self.epochs
        return self

    def _restore(self, path, opt) -> int:
        tensors, meta = read_checkpoint(path)
        if meta.get("kind") != "sgp":
            raise CheckpointError(f"{path} is not a predictor checkpoint")
        params, adam = split_adam_tensors(tensors)
        load_params(self.model_, params)
        restore_adam(self.model_, opt, adam)
        return int(meta.get("epoch", 0))

    def _recall(self, records) -> metrics.RecallReport:
        rep = metrics.RecallReport.empty(self.objects_, self.predicates_)
        for r in records:
            rep = rep + metrics.recall(self._predict_one(r.entities, r.graph.edge_keys()), r.graph)
        return rep

    # -- inference ----------------------------------------------------------------

    def _predict_one(self, entities, pairs=None) -> SceneGraph:
        entities = check_entities(entities)
        if entities[0].image_feat.shape[0] != self.image_dim_:
            raise ValueError(f"image features have {entities[0].image_feat.shape[0]} dims, "
                             f"model expects {self.image_dim_}")
        g: GraphTensors = build_graph_tensors(entities, self.margin, pairs)
        with torch.no_grad():
            obj_logits, pred_logits, x, e = self.model_(g)
        return to_scene_graph(g, entities, self.objects_, self.predicates_,
                              obj_logits, pred_logits, x, e)

    def predict_scene(self, entities) -> SceneGraph:
        check_is_fitted(self, "model_")
        return self._predict_one(entities)

    def predict(self, scenes) -> List[SceneGraph]:
        check_is_fitted(self, "model_")
        return [self._predict_one(s) for s in scenes]

    def score(self, records, y=None) -> float:
        """Top-1 object recall over ``records``."""
        check_is_fitted(self, "model_")
        return self._recall(check_records(records)).recall_obj

    # -- persistence ----------------------------------------------------------------

    def save(self, path, optimizer=None, epoch: Optional[int] = None) -> None:
        check_is_fitted(self, "model_")
        meta = {"kind": "sgp", "params": self.get_params(), "objects": self.objects_,
                "predicates": self.predicates_, "image_dim": self.image_dim_,
                "epoch": self.epochs if epoch is None else epoch}
        meta["params"]["objects"] = list(self.objects_)
        meta["params"]["predicates"] = list(self.predicates_)
        extra = adam_state_tensors(self.model_, optimizer) if optimizer is not None else None
        save_params(self.model_, path, meta, extra)

    @classmethod
    def load(cls, path) -> "SceneGraphPredictor":
        tensors, meta = read_checkpoint(path)
        if meta.get("kind") != "sgp":
            raise CheckpointError(f"{path} is not a predictor checkpoint")
        est = cls(**meta["params"])
        est._build(meta["image_dim"], meta["objects"], meta["predicates"])
        params, _ = split_adam_tensors(tensors)
        load_params(est.model_, params)
        return est
