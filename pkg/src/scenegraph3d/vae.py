"""Graph VAE that turns a scene graph into boxes and shape codes.

Encoder: per-node layout and shape embeddings are summed and passed through
a joint shape-and-layout (JSL) block: a fused GCN stage, then a
layout-centric GCN stage re-conditioned on the raw box parameters. Two
blocks are stacked with an additive skip connection, and an MLP over the
result plus the yaw-bin one-hot gives per-node mean and log-variance.

Decoder: a GCN over latent + class context feeds two MLPs (box size and
position; yaw-bin logits); a separate single MLP predicts the shape code.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .geometry import Obb
from .graph import SceneGraph
from .nn import ops
from .nn.layers import GCNLayer, LayerNorm, Linear, MLP
from .nn.ops import DTYPE, ShapeError

LOGVAR_CLAMP = 10.0
MIN_DECODED_DIM = 0.01


# -- context embeddings --------------------------------------------------------------


class ContextEmbedder:
    """Frozen seeded token table; phrases embed to the unit-norm token mean.

    Each token's row is drawn from a generator seeded by (table seed, token
    hash), so a row never depends on which other tokens were seen first.
    """

    def __init__(self, dim: int = 128, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._rows: Dict[str, np.ndarray] = {}

    @staticmethod
    def tokenize(text: str) -> List[str]:
        return text.lower().split()

    def token(self, tok: str) -> np.ndarray:
        if tok not in self._rows:
            h = int.from_bytes(hashlib.sha256(tok.encode("utf-8")).digest()[:8], "little")
            rng = np.random.default_rng([self.seed, h])
            row = rng.standard_normal(self.dim)
            row.setflags(write=False)
            self._rows[tok] = row
        return self._rows[tok]

    def embed(self, text: str) -> np.ndarray:
        toks = self.tokenize(text)
        if not toks:
            raise ValueError("cannot embed an empty phrase")
        v = np.mean([self.token(t) for t in toks], axis=0)
        return v / np.linalg.norm(v)


# -- yaw bins --------------------------------------------------------------------------


def yaw_to_bin(yaw: float, bins: int = 24) -> int:
    """Bin k covers [k*w - w/2, k*w + w/2) with w = 2*pi/bins."""
    w = 2 * math.pi / bins
    return int(math.floor(yaw / w + 0.5)) % bins


def bin_to_yaw(k: int, bins: int = 24) -> float:
    return (k % bins) * 2 * math.pi / bins


# -- extended graph ----------------------------------------------------------------------


@dataclass
class ExtendedGraph:
    ids: List[int]
    classes: np.ndarray  # (n,) int
    node_context: np.ndarray  # (n, E)
    box: np.ndarray  # (n, 6) dims then centroid, meters
    yaw_bin: np.ndarray  # (n,) int
    shape: np.ndarray  # (n, S)
    edges: np.ndarray  # (m, 2) row indices
    predicates: np.ndarray  # (m,) int
    edge_context: np.ndarray  # (m, E)

    def __len__(self) -> int:
        return len(self.ids)


def extend_graph(graph: SceneGraph, shape_codes: Mapping[int, Sequence[float]],
                 embedder: ContextEmbedder, objects: Optional[Sequence[str]] = None,
                 yaw_bins: int = 24) -> ExtendedGraph:
    """Attach context embeddings and shape codes to a scene graph.

    ``objects`` is the model vocabulary; graph classes outside it are rejected.
    """
    objects = list(objects) if objects is not None else list(graph.objects)
    ids = graph.node_ids()
    names = [graph.class_name(nid) for nid in ids]
    unknown = sorted({n for n in names if n not in objects})
    if unknown:
        raise KeyError(f"classes not in vocabulary: {unknown}")
    missing = [nid for nid in ids if nid not in shape_codes]
    if missing:
        raise KeyError(f"nodes without shape codes: {missing}")
    row = {nid: k for k, nid in enumerate(ids)}
    keys = graph.edge_keys()
    shape_dim = len(next(iter(shape_codes.values()))) if shape_codes else 0
    return ExtendedGraph(
        ids=ids,
        classes=np.array([objects.index(n) for n in names], dtype=np.int64),
        node_context=np.array([embedder.embed(n) for n in names]).reshape(len(ids), embedder.dim),
        box=np.array([[*graph.nodes[nid].obb.dims, *graph.nodes[nid].obb.centroid] for nid in ids]
                     ).reshape(len(ids), 6),
        yaw_bin=np.array([yaw_to_bin(graph.nodes[nid].obb.yaw, yaw_bins) for nid in ids], dtype=np.int64),
        shape=np.array([np.asarray(shape_codes[nid], dtype=np.float64) for nid in ids]
                       ).reshape(len(ids), shape_dim),
        edges=np.array([[row[s], row[o]] for s, o in keys], dtype=np.int64).reshape(-1, 2),
        predicates=np.array([graph.edges[k].label for k in keys], dtype=np.int64),
        edge_context=np.array([embedder.embed(f"{graph.class_name(s)} {graph.predicate_name((s, o))} "
                                              f"{graph.class_name(o)}") for s, o in keys]
                              ).reshape(len(keys), embedder.dim),
    )


@dataclass
class GraphBatch:
    """Torch view of one extended graph."""

    classes: torch.Tensor
    node_context: torch.Tensor
    box: torch.Tensor
    yaw_bin: torch.Tensor
    shape: torch.Tensor
    edges: torch.Tensor
    predicates: torch.Tensor
    edge_context: torch.Tensor
    node_weight: torch.Tensor  # per-node loss weight; sums to 1 over the batch

    @classmethod
    def from_extended(cls, ext: ExtendedGraph) -> "GraphBatch":
        f = lambda a: torch.as_tensor(a, dtype=DTYPE)  # noqa: E731
        i = lambda a: torch.as_tensor(a, dtype=torch.int64)  # noqa: E731
        n = max(len(ext), 1)
        return cls(i(ext.classes), f(ext.node_context), f(ext.box), i(ext.yaw_bin), f(ext.shape),
                   i(ext.edges), i(ext.predicates), f(ext.edge_context),
                   torch.full((len(ext),), 1.0 / n, dtype=DTYPE))

    @classmethod
    def collate(cls, graphs: Sequence["GraphBatch"]) -> "GraphBatch":
        """Disjoint union; each graph keeps equal total weight in the loss."""
        offsets = np.cumsum([0] + [g.classes.shape[0] for g in graphs[:-1]])
        cat = lambda name: torch.cat([getattr(g, name) for g in graphs])  # noqa: E731
        return cls(cat("classes"), cat("node_context"), cat("box"), cat("yaw_bin"), cat("shape"),
                   torch.cat([g.edges + int(o) for g, o in zip(graphs, offsets)]),
                   cat("predicates"), cat("edge_context"), cat("node_weight") / len(graphs))


# -- network ---------------------------------------------------------------------------


class Embedding(nn.Module):
    def __init__(self, n: int, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(n, dim, dtype=DTYPE))

    def forward(self, idx: torch.Tensor) -> torch.Tensor:
        return ops.gather_rows(self.weight, idx)


class GCNStack(nn.Module):
    """GCN layers, each followed by layer norm on node and edge states."""

    def __init__(self, node_in: int, dim: int, layers: int):
        super().__init__()
        self.layers = nn.ModuleList(
            GCNLayer(node_in if k == 0 else dim, dim, hidden_dim=dim, out_dim=dim)
            for k in range(layers))
        self.node_norms = nn.ModuleList(LayerNorm(dim) for _ in range(layers))
        self.edge_norms = nn.ModuleList(LayerNorm(dim) for _ in range(layers))

    def forward(self, x, e, edges):
        for layer, nn_, en in zip(self.layers, self.node_norms, self.edge_norms):
            x, e = layer(x, e, edges)
            x = nn_(x)
            if e.shape[0]:
                e = en(e)
        return x, e


class JSLBlock(nn.Module):
    """Fused shape+layout GCN stage followed by a layout-centric GCN stage."""

    def __init__(self, dim: int, box_dim: int, layers: int = 5):
        super().__init__()
        self.dim = dim
        self.fused = GCNStack(dim, dim, layers)
        self.box_proj = Linear(box_dim, dim)
        self.layout = GCNStack(2 * dim, dim, layers)

    def forward(self, layout_emb, edge_in, box, edges, shape_emb=None):
        if shape_emb is not None and shape_emb.shape != layout_emb.shape:
            raise ShapeError(f"jsl_block: shape embedding {tuple(shape_emb.shape)} vs layout "
                             f"embedding {tuple(layout_emb.shape)}")
        x = layout_emb if shape_emb is None else layout_emb + shape_emb
        x, e = self.fused(x, edge_in, edges)
        x = ops.concat([x, self.box_proj(box)])
        return self.layout(x, e, edges)


class SceneVAEModel(nn.Module):
    def __init__(self, n_objects: int, n_predicates: int, model_dim: int = 256,
                 embed_dim: int = 128, latent_dim: int = 64, shape_dim: int = 8,
                 yaw_bins: int = 24, gcn_layers: int = 5):
        super().__init__()
        d, c = model_dim, 2 * embed_dim
        self.yaw_bins, self.latent_dim, self.shape_dim = yaw_bins, latent_dim, shape_dim
        box_dim = 6 + yaw_bins
        self.register_buffer("box_mean", torch.zeros(6, dtype=DTYPE))
        self.register_buffer("box_std", torch.ones(6, dtype=DTYPE))
        # encoder
        self.enc_obj = Embedding(n_objects, embed_dim)
        self.enc_pred = Embedding(n_predicates, embed_dim)
        self.layout_in = Linear(c + box_dim, d)
        self.shape_in = Linear(c + shape_dim, d)
        self.edge_in = Linear(c, d)
        self.block1 = JSLBlock(d, box_dim, gcn_layers)
        self.block2 = JSLBlock(d, box_dim, gcn_layers)
        self.posterior = MLP([d + yaw_bins, d, 2 * latent_dim])
        # decoder
        self.dec_obj = Embedding(n_objects, embed_dim)
        self.dec_pred = Embedding(n_predicates, embed_dim)
        self.dec_node_in = Linear(latent_dim + c, d)
        self.dec_edge_in = Linear(c, d)
        self.dec_gcn = GCNStack(d, d, gcn_layers)
        self.box_head = MLP([d, d, 6])
        self.yaw_head = MLP([d, d, yaw_bins])
        self.shape_head = MLP([latent_dim + c, d, shape_dim])

    # box params: (dims, centroid) in meters <-> normalized
    def normalize_box(self, box):
        return (box - self.box_mean) / self.box_std

    def denormalize_box(self, box_n):
        return box_n * self.box_std + self.box_mean

    def _yaw_onehot(self, g: GraphBatch):
        return torch.nn.functional.one_hot(g.yaw_bin, self.yaw_bins).to(DTYPE)

    def encoder_features(self, g: GraphBatch):
        cls_ctx = ops.concat([self.enc_obj(g.classes), g.node_context])
        box = ops.concat([self.normalize_box(g.box), self._yaw_onehot(g)])
        layout = self.layout_in(ops.concat([cls_ctx, box]))
        shape = self.shape_in(ops.concat([cls_ctx, g.shape]))
        e = self.edge_in(ops.concat([self.enc_pred(g.predicates), g.edge_context]))
        h1, e1 = self.block1(layout, e, box, g.edges, shape_emb=shape)
        h2, _ = self.block2(h1, e1, box, g.edges)
        return h1 + h2

    def encode(self, g: GraphBatch):
        if g.classes.shape[0] == 0:
            raise ValueError("cannot encode an empty graph")
        h = self.encoder_features(g)
        out = self.posterior(ops.concat([h, self._yaw_onehot(g)]))
        mu = out[:, :self.latent_dim]
        logvar = out[:, self.latent_dim:].clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar

    def decode(self, z, g: GraphBatch):
        if z.shape[0] != g.classes.shape[0]:
            raise ShapeError(f"decode: {z.shape[0]} latents for {g.classes.shape[0]} nodes")
        cond = ops.concat([self.dec_obj(g.classes), g.node_context])
        zc = ops.concat([z, cond])
        x = self.dec_node_in(zc)
        e = self.dec_edge_in(ops.concat([self.dec_pred(g.predicates), g.edge_context]))
        x, _ = self.dec_gcn(x, e, g.edges)
        raw = self.box_head(x)
        dims = ops.softplus(raw[:, :3]) + MIN_DECODED_DIM
        centroid_n = raw[:, 3:]
        centroid = centroid_n * self.box_std[3:] + self.box_mean[3:]
        return ops.concat([dims, centroid]), self.yaw_head(x), self.shape_head(zc)

    def forward(self, g: GraphBatch, eps: Optional[torch.Tensor] = None):
        mu, logvar = self.encode(g)
        if eps is None:
            eps = torch.zeros_like(mu)
        z = mu + torch.exp(0.5 * logvar) * eps
        boxes, yaw_logits, shapes = self.decode(z, g)
        return boxes, yaw_logits, shapes, mu, logvar


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-node KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims."""
    return 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar).sum(dim=-1)


def vae_loss(pred_boxes, pred_yaw_logits, pred_shapes, gt: GraphBatch, mu, logvar,
             model: SceneVAEModel, lambda_recon: float = 1.0, lambda_kl: float = 0.1):
    """Returns (total, recon, kl); box L1 is measured in normalized units.

    Node terms are averaged with ``gt.node_weight`` (the plain node mean for a
    single graph, the mean of per-graph means for a collated batch).
    """
    n = gt.classes.shape[0]
    if not (pred_boxes.shape[0] == pred_yaw_logits.shape[0] == pred_shapes.shape[0] == mu.shape[0] == n):
        raise ShapeError("vae_loss: node counts of predictions and targets differ")
    shape_l1 = (pred_shapes - gt.shape).abs().sum(dim=-1)
    box_l1 = (model.normalize_box(pred_boxes) - model.normalize_box(gt.box)).abs().sum(dim=-1)
    logp = ops.log_softmax(pred_yaw_logits)
    yaw_ce = -logp.gather(1, gt.yaw_bin.view(-1, 1)).squeeze(1)
    recon = (gt.node_weight * (shape_l1 + box_l1 + yaw_ce)).sum()
    kl = (gt.node_weight * kl_divergence(mu, logvar)).sum()
    return lambda_recon * recon + lambda_kl * kl, recon, kl


def decoded_obbs(boxes: torch.Tensor, yaw_logits: torch.Tensor, bins: int) -> List[Obb]:
    b = boxes.detach().numpy()
    k = yaw_logits.detach().numpy().argmax(axis=1)  # first maximum = lowest bin on ties
    return [Obb(tuple(row[3:6]), tuple(row[0:3]), bin_to_yaw(int(kk), bins)) for row, kk in zip(b, k)]
