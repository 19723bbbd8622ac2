"""Scene-graph prediction network.

Nodes fuse an image feature with a sigmoid-gated point feature plus box
parameters; directed edges are built from both endpoint features and the
pose descriptor. Message passing uses cross-check feature attention: the
attention weight for edge (i, j) sums attention read from both endpoints
through the shared edge feature, and the message to i is that weight times
N_j. The last round refines node and edge states with a GRU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .data import EntityInput
from .geometry import neighbor_graph, pose_descriptor
from .graph import SceneGraph, SceneGraphEdge, SceneGraphNode
from .nn import ops
from .nn.layers import GRUCell, LayerNorm, Linear, MLP, attention
from .nn.ops import DTYPE, ShapeError

BOX_FEATURES = 7  # dims (3), centroid (3), yaw (1)


class PointEncoder(nn.Module):
    """Shared per-point MLP followed by max pooling over points."""

    def __init__(self, out_dim: int = 256, hidden: Sequence[int] = (64, 128)):
        super().__init__()
        self.mlp = MLP([3, *hidden, out_dim], final_activation=True)

    def forward(self, points: torch.Tensor, center: torch.Tensor) -> torch.Tensor:
        if points.shape[-2] < 8:
            raise ValueError(f"point encoder needs >= 8 points, got {points.shape[-2]}")
        return self.mlp(points - center.unsqueeze(-2)).max(dim=-2).values


class NodeFeaturizer(nn.Module):
    """Image projection plus gated point feature, concatenated with box params."""

    def __init__(self, image_dim: int, image_proj_dim: int = 256, point_dim: int = 256):
        super().__init__()
        self.image_proj = Linear(image_dim, image_proj_dim)
        self.points = PointEncoder(point_dim)
        self.point_proj = Linear(point_dim, image_proj_dim)
        self.gate = Linear(point_dim, image_proj_dim)
        self.out_dim = image_proj_dim + BOX_FEATURES

    def forward(self, image: torch.Tensor, points: torch.Tensor, box: torch.Tensor) -> torch.Tensor:
        p = self.points(points, box[:, 3:6])
        fused = self.image_proj(image) + ops.sigmoid(self.gate(p)) * self.point_proj(p)
        return ops.concat([fused, box])


class CrossCheckAttention(nn.Module):
    """Feature-wise multi-head attention l(Q, K, V) shared by both directions.

    Each head treats its d_k projected features as d_k scalar tokens, so the
    softmax runs over feature positions of the key (edge) vector.
    """

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"ccfa: model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads, self.d_k = dim, heads, dim // heads
        self.query = Linear(dim, dim)
        self.key = Linear(dim, dim)
        self.value = Linear(dim, dim)
        self.out = Linear(dim, dim)

    def attend(self, q_in, k_in, v_in) -> torch.Tensor:
        m = q_in.shape[0]
        shape = (m, self.heads, self.d_k, 1)
        q = self.query(q_in).reshape(shape)
        k = self.key(k_in).reshape(shape)
        v = self.value(v_in).reshape(shape)
        out, _ = attention(q, k, v, scale=1.0 / math.sqrt(self.d_k))
        return self.out(out.reshape(m, self.dim))

    def forward(self, n_src, e, n_dst) -> torch.Tensor:
        """W_ij = l(N_i, E_ij, N_j) + l(N_j, E_ij, N_i)."""
        return self.attend(n_src, e, n_dst) + self.attend(n_dst, e, n_src)


class CCFALayer(nn.Module):
    def __init__(self, dim: int, heads: int, final: bool = False, gru: GRUCell | None = None):
        super().__init__()
        self.dim, self.final = dim, final
        self.attn = CrossCheckAttention(dim, heads)
        self.edge_update = MLP([3 * dim, dim, dim])
        if not final:
            self.node_update = MLP([2 * dim, dim, dim])
            self.node_norm = LayerNorm(dim)
            self.edge_norm = LayerNorm(dim)
        self._gru = [gru]  # shared with the owning model; kept out of this module's params

    def forward(self, x: torch.Tensor, e: torch.Tensor, edges: torch.Tensor):
        n = x.shape[0]
        if edges.shape[0]:
            if int(edges.max()) >= n or int(edges.min()) < 0:
                raise IndexError(f"ccfa: edge index out of range for {n} nodes")
            src, dst = edges[:, 0], edges[:, 1]
            n_i, n_j = ops.gather_rows(x, src), ops.gather_rows(x, dst)
            w = self.attn(n_i, e, n_j)
            msg = ops.hadamard(w, n_j)
            agg = ops.scatter_mean_rows(msg, src, n)
            e_msg = self.edge_update(ops.concat([n_i, e, n_j]))
        else:
            agg = x.new_zeros(x.shape)
            e_msg = e
        if self.final:
            gru = self._gru[0]
            return gru(x, agg), (gru(e, e_msg) if edges.shape[0] else e)
        x_new = self.node_norm(x + self.node_update(ops.concat([x, agg])))
        return x_new, (self.edge_norm(e + e_msg) if edges.shape[0] else e)


@dataclass
class GraphTensors:
    """Featurization inputs for one scene."""

    ids: List[int]
    image: torch.Tensor
    points: torch.Tensor
    box: torch.Tensor
    edges: torch.Tensor  # (m, 2) row indices
    pose: torch.Tensor  # (m, 6)


def box_vector(obb) -> List[float]:
    return [*obb.dims, *obb.centroid, obb.yaw]


def build_graph_tensors(entities: Sequence[EntityInput], margin: float,
                        pairs: Sequence[Tuple[int, int]] | None = None) -> GraphTensors:
    ids = [e.id for e in entities]
    row = {nid: k for k, nid in enumerate(ids)}
    if pairs is None:
        pairs = neighbor_graph([e.obb for e in entities], ids, margin)
    # pad short clouds by repeating their own points; max-pooling ignores duplicates
    n_pts = max(len(e.points) for e in entities)
    pts = np.stack([np.resize(e.points, (n_pts, 3)) for e in entities])
    edges = np.array([[row[s], row[o]] for s, o in pairs], dtype=np.int64).reshape(-1, 2)
    pose = np.array([pose_descriptor(entities[s].obb, entities[o].obb) for s, o in edges]).reshape(-1, 6)
    return GraphTensors(
        ids=ids,
        image=torch.as_tensor(np.stack([e.image_feat for e in entities]), dtype=DTYPE),
        points=torch.as_tensor(pts, dtype=DTYPE),
        box=torch.as_tensor([box_vector(e.obb) for e in entities], dtype=DTYPE),
        edges=torch.as_tensor(edges),
        pose=torch.as_tensor(pose, dtype=DTYPE),
    )


class SgpModel(nn.Module):
    def __init__(self, image_dim: int, n_objects: int, n_predicates: int, model_dim: int = 256,
                 image_proj_dim: int = 256, point_dim: int = 256, heads: int = 4, layers: int = 2):
        super().__init__()
        self.featurize = NodeFeaturizer(image_dim, image_proj_dim, point_dim)
        f = self.featurize.out_dim
        self.edge_mlp = MLP([2 * f + 6, model_dim, model_dim])
        self.edge_norm = LayerNorm(model_dim)
        self.node_in = Linear(f, model_dim)
        self.node_norm = LayerNorm(model_dim)
        self.gru = GRUCell(model_dim, model_dim)
        self.ccfa = nn.ModuleList(
            CCFALayer(model_dim, heads, final=(k == layers - 1), gru=self.gru) for k in range(layers))
        self.object_head = MLP([model_dim, model_dim, n_objects])
        self.predicate_head = MLP([model_dim, model_dim, n_predicates])

    def edge_features(self, nodes: torch.Tensor, edges: torch.Tensor, pose: torch.Tensor):
        if edges.shape[0] == 0:
            return nodes.new_zeros((0, self.edge_mlp.sizes[-1]))
        pair = ops.concat([ops.gather_rows(nodes, edges[:, 0]), ops.gather_rows(nodes, edges[:, 1]), pose])
        return self.edge_norm(self.edge_mlp(pair))

    def forward(self, g: GraphTensors):
        """Object logits (n, C_obj), predicate logits (m, C_pred), final node states."""
        raw = self.featurize(g.image, g.points, g.box)
        e = self.edge_features(raw, g.edges, g.pose)
        x = self.node_norm(self.node_in(raw))
        for layer in self.ccfa:
            x, e = layer(x, e, g.edges)
        return self.object_head(x), self.predicate_head(e), x, e


def cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    logp = ops.log_softmax(logits, dim=-1)
    return -logp.gather(1, target.view(-1, 1)).mean()


def sgp_loss(obj_logits, pred_logits, obj_target, pred_target) -> torch.Tensor:
    """Mean node cross-entropy plus mean edge cross-entropy (edges optional)."""
    if obj_logits.shape[0] != obj_target.shape[0] or pred_logits.shape[0] != pred_target.shape[0]:
        raise ShapeError("sgp_loss: prediction and target topology differ")
    loss = cross_entropy(obj_logits, obj_target)
    if pred_target.shape[0]:
        loss = loss + cross_entropy(pred_logits, pred_target)
    return loss


def distribution_loss(obj_probs: np.ndarray, pred_probs: np.ndarray,
                      obj_target: Sequence[int], pred_target: Sequence[int]) -> float:
    """The same loss evaluated on already-normalized distributions."""
    node = -np.mean(np.log(np.asarray(obj_probs)[np.arange(len(obj_target)), obj_target]))
    if len(pred_target) == 0:
        return float(node)
    edge = -np.mean(np.log(np.asarray(pred_probs)[np.arange(len(pred_target)), pred_target]))
    return float(node + edge)


def to_scene_graph(g: GraphTensors, entities: Sequence[EntityInput], objects, predicates,
                   obj_logits, pred_logits, x, e) -> SceneGraph:
    obj_p = ops.softmax(obj_logits.detach()).numpy()
    pred_p = ops.softmax(pred_logits.detach()).numpy()
    xs, es = x.detach().numpy(), e.detach().numpy()
    out = SceneGraph(list(objects), list(predicates))
    for k, ent in enumerate(entities):
        out.add_node(SceneGraphNode(ent.id, obj_p[k] / obj_p[k].sum(), ent.obb, xs[k].copy(), 1.0))
    for r, (s, o) in enumerate(g.edges.tolist()):
        out.add_edge(SceneGraphEdge(g.ids[s], g.ids[o], pred_p[r] / pred_p[r].sum(), es[r].copy(), 1.0))
    return out
