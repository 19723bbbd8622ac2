"""Estimator wrapper and training loop for the scene-graph VAE."""

from __future__ import annotations

import logging
import time
from typing import List, Mapping, Optional, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .graph import SceneGraph
from .nn.checkpoint import CheckpointError, load_params, read_checkpoint, save_params
from .nn.layers import init_parameters
from .nn.ops import DTYPE
from .training import (MetricsLog, adam_state_tensors, cosine_lr, epoch_batches, make_adam,
                       restore_adam, set_lr, single_threaded, split_adam_tensors)
from .vae import (ContextEmbedder, GraphBatch, SceneVAEModel, decoded_obbs, extend_graph,
                  kl_divergence, vae_loss)
from .validation import check_graph, check_records, check_vocab

log = logging.getLogger(__name__)

MODES = ("reconstruct", "sample")


class SceneGraphVAE(BaseEstimator):
    """Generates per-node boxes and shape codes from a scene graph.

    ``fit`` takes records carrying ground-truth graphs and shape codes;
    ``generate`` returns a layout dict ``{"nodes": [{id, class, obb,
    shape_code}]}`` for one graph.
    """

    def __init__(self, model_dim: int = 256, embed_dim: int = 128, latent_dim: int = 64,
                 shape_dim: int = 8, yaw_bins: int = 24, gcn_layers: int = 5,
                 lambda_recon: float = 1.0, lambda_kl: float = 0.1, lr: float = 1e-3,
                 lr_min_ratio: float = 0.05,
                 epochs: int = 350, batch_size: int = 8, seed: int = 0,
                 objects: Optional[Sequence[str]] = None,
                 predicates: Optional[Sequence[str]] = None):
        self.model_dim = model_dim
        self.embed_dim = embed_dim
        self.latent_dim = latent_dim
        self.shape_dim = shape_dim
        self.yaw_bins = yaw_bins
        self.gcn_layers = gcn_layers
        self.lambda_recon = lambda_recon
        self.lambda_kl = lambda_kl
        self.lr = lr
        self.lr_min_ratio = lr_min_ratio
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.objects = objects
        self.predicates = predicates

    # -- construction -----------------------------------------------------------

    def _build(self, objects, predicates) -> None:
        self.objects_ = list(objects)
        self.predicates_ = list(predicates)
        self.embedder_ = ContextEmbedder(self.embed_dim, self.seed)
        self.model_ = SceneVAEModel(len(self.objects_), len(self.predicates_), self.model_dim,
                                    self.embed_dim, self.latent_dim, self.shape_dim,
                                    self.yaw_bins, self.gcn_layers)
        init_parameters(self.model_, self.seed)
        self.class_shape_mean_ = np.zeros((len(self.objects_), self.shape_dim))

    def _set_statistics(self, records) -> None:
        boxes = np.array([[*n.obb.dims, *n.obb.centroid]
                          for r in records for n in r.graph.nodes.values()])
        std = boxes.std(axis=0)
        with torch.no_grad():
            self.model_.box_mean.copy_(torch.as_tensor(boxes.mean(axis=0), dtype=DTYPE))
            self.model_.box_std.copy_(torch.as_tensor(np.where(std > 1e-6, std, 1.0), dtype=DTYPE))
        sums = np.zeros((len(self.objects_), self.shape_dim))
        counts = np.zeros(len(self.objects_))
        for r in records:
            for nid in r.graph.node_ids():
                c = r.graph.nodes[nid].label
                sums[c] += r.shape_codes[nid]
                counts[c] += 1
        self.class_shape_mean_ = sums / np.maximum(counts, 1)[:, None]

    def _batch(self, graph: SceneGraph, shape_codes=None) -> GraphBatch:
        if shape_codes is None:
            shape_codes = {nid: self.class_shape_mean_[graph.nodes[nid].label] for nid in graph.node_ids()}
        ext = extend_graph(graph, shape_codes, self.embedder_, self.objects_, self.yaw_bins)
        return GraphBatch.from_extended(ext)

    # -- training ---------------------------------------------------------------

    def fit(self, records, y=None, log_path=None, checkpoint_path=None,
            resume_from=None) -> "SceneGraphVAE":
        records = check_records(records)
        objects = self.objects or records[0].graph.objects
        predicates = self.predicates or records[0].graph.predicates
        for r in records:
            check_vocab(r.graph, objects, predicates, f"scene {r.scene_id}")
            if len(r.graph.nodes) == 0:
                raise ValueError(f"scene {r.scene_id} has an empty graph")
        with single_threaded():
            self._build(objects, predicates)
            self._set_statistics(records)
            opt = make_adam(self.model_, self.lr)
            start_epoch = 0
            if resume_from is not None:
                start_epoch = self._restore(resume_from, opt)
            cached = [self._batch(r.graph, r.shape_codes) for r in records]
            mlog = MetricsLog(log_path)
            self.history_: List[dict] = []
            best = np.inf
            for epoch in range(start_epoch, self.epochs):
                t0 = time.perf_counter()
                gen = torch.Generator().manual_seed(int(self.seed) * 100003 + epoch)
                rows = []
                batches = epoch_batches(len(cached), self.batch_size, self.seed, epoch)
                for b, idx in enumerate(batches):
                    set_lr(opt, cosine_lr(epoch * len(batches) + b, self.epochs * len(batches),
                                          self.lr, self.lr_min_ratio))
                    opt.zero_grad()
                    g = GraphBatch.collate([cached[k] for k in idx])
                    eps = torch.randn((g.classes.shape[0], self.latent_dim), generator=gen, dtype=DTYPE)
                    boxes, yaw, shapes, mu, logvar = self.model_(g, eps)
                    kl_nodes = kl_divergence(mu, logvar)
                    if bool((kl_nodes < 0).any()):
                        raise FloatingPointError(f"negative KL at epoch {epoch}")
                    loss, recon, kl = vae_loss(boxes, yaw, shapes, g, mu, logvar, self.model_,
                                               self.lambda_recon, self.lambda_kl)
                    loss.backward()
                    opt.step()
                    rows.append((loss.item(), recon.item(), kl.item()))
                arr = np.array(rows)
                row = {"epoch": epoch, "loss": float(arr[:, 0].mean()), "recon": float(arr[:, 1].mean()),
                       "kl": float(arr[:, 2].mean()), "step_losses": arr[:, 0].tolist(),
                       "step_recon": arr[:, 1].tolist(), "step_kl": arr[:, 2].tolist(),
                       "seconds": time.perf_counter() - t0}
                mlog.append(row)
                self.history_.append(row)
                if checkpoint_path is not None and row["loss"] < best:
                    best = row["loss"]
                    self.save(checkpoint_path, opt, epoch + 1)
                log.info("vae epoch %d loss %.4f", epoch, row["loss"])
            self.optimizer_ = opt
        return self

    def _restore(self, path, opt) -> int:
        tensors, meta = read_checkpoint(path)
        if meta.get("kind") != "vae":
            raise CheckpointError(f"{path} is not a generator checkpoint")
        params, adam = split_adam_tensors(tensors)
        load_params(self.model_, params)
        restore_adam(self.model_, opt, adam)
        self.class_shape_mean_ = np.asarray(meta["class_shape_mean"], dtype=np.float64)
        return int(meta.get("epoch", 0))

    # -- generation -------------------------------------------------------------

    def generate(self, graph: SceneGraph, mode: str = "sample", seed: int = 0,
                 shape_codes: Optional[Mapping[int, Sequence[float]]] = None) -> dict:
        """Decode a layout for ``graph``.

        ``reconstruct`` encodes the graph's own boxes and decodes the posterior
        mean; ``sample`` decodes z ~ N(0, I) drawn from ``seed``. Missing shape
        codes fall back to the per-class training mean.
        """
        check_is_fitted(self, "model_")
        graph = check_graph(graph)
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
        if len(graph.nodes) == 0:
            raise ValueError("cannot generate a layout for an empty graph")
        check_vocab(graph, self.objects_, self.predicates_)
        g = self._batch(graph, shape_codes)
        n = g.classes.shape[0]
        with single_threaded(), torch.no_grad():
            if mode == "reconstruct":
                z, _ = self.model_.encode(g)
            else:
                z = torch.randn((n, self.latent_dim), generator=torch.Generator().manual_seed(int(seed)),
                                dtype=DTYPE)
            boxes, yaw, shapes = self.model_.decode(z, g)
        obbs = decoded_obbs(boxes, yaw, self.yaw_bins)
        ids = graph.node_ids()
        return {"nodes": [{"id": nid, "class": graph.class_name(nid), "obb": obb.to_dict(),
                           "shape_code": [float(v) for v in s]}
                          for nid, obb, s in zip(ids, obbs, shapes.numpy())]}

    def predict(self, graphs, mode: str = "reconstruct", seed: int = 0) -> List[dict]:
        return [self.generate(g, mode, seed) for g in graphs]

    # -- persistence ------------------------------------------------------------

    def save(self, path, optimizer=None, epoch: Optional[int] = None) -> None:
        check_is_fitted(self, "model_")
        params = self.get_params()
        params["objects"], params["predicates"] = list(self.objects_), list(self.predicates_)
        meta = {"kind": "vae", "params": params, "epoch": self.epochs if epoch is None else epoch,
                "class_shape_mean": self.class_shape_mean_.tolist()}
        extra = adam_state_tensors(self.model_, optimizer) if optimizer is not None else None
        save_params(self.model_, path, meta, extra)

    @classmethod
    def load(cls, path) -> "SceneGraphVAE":
        tensors, meta = read_checkpoint(path)
        if meta.get("kind") != "vae":
            raise CheckpointError(f"{path} is not a generator checkpoint")
        est = cls(**meta["params"])
        est._build(meta["params"]["objects"], meta["params"]["predicates"])
        params, _ = split_adam_tensors(tensors)
        load_params(est.model_, params)
        est.class_shape_mean_ = np.asarray(meta["class_shape_mean"], dtype=np.float64)
        return est
