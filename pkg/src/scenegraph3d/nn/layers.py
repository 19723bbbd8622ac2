"""Neural building blocks shared by the predictor and the generator."""

from __future__ import annotations

import math
from typing import Sequence

import torch
from torch import nn

from . import ops
from .ops import DTYPE, ShapeError


def init_parameters(module: nn.Module, seed: int) -> None:
    """Seeded fan-in uniform init for every parameter, in registration order.

    Matrices get U(-sqrt(6/fan_in), sqrt(6/fan_in)); vectors (biases, gains)
    keep whatever their owning layer declared via ``_init_value``, else 0.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.dim() >= 2:
                fan_in = p.shape[-1]
                bound = math.sqrt(6.0 / fan_in)
                p.copy_((torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 - 1) * bound)
            else:
                p.fill_(getattr(p, "_init_value", 0.0))


class Linear(nn.Module):
    def __init__(self, n_in: int, n_out: int, bias: bool = True):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.weight = nn.Parameter(torch.zeros(n_out, n_in, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(n_out, dtype=DTYPE)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(
                f"linear: input shape {tuple(x.shape)} vs weight shape {tuple(self.weight.shape)}")
        y = ops.matmul(x, self.weight.T)
        return y + self.bias if self.bias is not None else y


class LayerNorm(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim, dtype=DTYPE))
        self.gain._init_value = 1.0
        self.bias = nn.Parameter(torch.zeros(dim, dtype=DTYPE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return ops.layer_norm(x, self.gain, self.bias)


_ACTIVATIONS = {"relu": ops.relu, "tanh": ops.tanh, "sigmoid": ops.sigmoid, "none": lambda x: x}


class MLP(nn.Module):
    """Linear layers with an activation between them.

    ``final_activation`` controls whether the last layer is also activated.
    """

    def __init__(self, sizes: Sequence[int], activation: str = "relu",
                 final_activation: bool = False):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("MLP needs at least input and output sizes")
        self.sizes = list(sizes)
        self.layers = nn.ModuleList(Linear(a, b) for a, b in zip(sizes[:-1], sizes[1:]))
        self.activation = activation
        self.final_activation = final_activation

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        act = _ACTIVATIONS[self.activation]
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            x = layer(x)
            if k < last or self.final_activation:
                x = act(x)
        return x


class GCNLayer(nn.Module):
    """Triple message-passing layer over directed edges.

    For every edge (s, o), an MLP reads (x_s, e_so, x_o) and emits a message
    for s, a new edge feature and a message for o. Each node becomes
    relu(self_transform(x) + mean of its incoming messages); nodes without
    edges keep only the self transform.
    """

    def __init__(self, node_dim: int, edge_dim: int, hidden_dim: int | None = None,
                 out_dim: int | None = None):
        super().__init__()
        hidden_dim = hidden_dim or node_dim
        out_dim = out_dim or node_dim
        self.node_dim, self.edge_dim, self.out_dim = node_dim, edge_dim, out_dim
        self.message = MLP([2 * node_dim + edge_dim, hidden_dim, 2 * out_dim + edge_dim])
        self.self_transform = Linear(node_dim, out_dim)

    def forward(self, x: torch.Tensor, e: torch.Tensor, edges: torch.Tensor):
        n = x.shape[0]
        if x.shape[-1] != self.node_dim:
            raise ShapeError(f"gcn_layer: node features {tuple(x.shape)}, expected width {self.node_dim}")
        if e.shape[0] != edges.shape[0]:
            raise ShapeError(f"gcn_layer: {e.shape[0]} edge features for {edges.shape[0]} edges")
        out = self.self_transform(x)
        if edges.shape[0] == 0:
            return ops.relu(out), e
        src, dst = edges[:, 0], edges[:, 1]
        triple = ops.concat([ops.gather_rows(x, src), e, ops.gather_rows(x, dst)])
        msg = self.message(triple)
        d = self.out_dim
        to_src, new_e, to_dst = msg[:, :d], msg[:, d:d + self.edge_dim], msg[:, d + self.edge_dim:]
        incoming = ops.scatter_mean_rows(
            torch.cat([to_src, to_dst]), torch.cat([src, dst]), n)
        # mean over zero messages is zero, so isolated nodes see only the self term
        return ops.relu(out + incoming), ops.relu(new_e)


class GRUCell(nn.Module):
    """Gated recurrent unit: h' = (1 - u) * h + u * candidate."""

    def __init__(self, input_dim: int, hidden_dim: int):
        super().__init__()
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        self.x2h = Linear(input_dim, 3 * hidden_dim)
        self.h2h = Linear(hidden_dim, 3 * hidden_dim)

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        if h.shape[-1] != self.hidden_dim or x.shape[-1] != self.input_dim:
            raise ShapeError(
                f"gru_cell: hidden {tuple(h.shape)} / input {tuple(x.shape)} vs cell "
                f"({self.hidden_dim}, {self.input_dim})")
        d = self.hidden_dim
        gx, gh = self.x2h(x), self.h2h(h)
        reset = ops.sigmoid(gx[..., :d] + gh[..., :d])
        update = ops.sigmoid(gx[..., d:2 * d] + gh[..., d:2 * d])
        candidate = ops.tanh(gx[..., 2 * d:] + reset * gh[..., 2 * d:])
        return (1.0 - update) * h + update * candidate


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
              scale: float | None = None):
    """Scaled dot-product attention over the second-to-last axis.

    Returns (output, weights); weights rows sum to one.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(
            f"attention: q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    weights = ops.softmax(ops.matmul(q, k.transpose(-1, -2)) * scale, dim=-1)
    return ops.matmul(weights, v), weights


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, n, d = x.shape
    if d % heads:
        raise ShapeError(f"multi_head_attention: model dim {d} not divisible by {heads} heads")
    return x.reshape(*lead, n, heads, d // heads).transpose(-2, -3)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, h, n, dk = x.shape
    return x.transpose(-2, -3).reshape(*lead, n, h * dk)


def multi_head_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int):
    """Projection-free multi-head attention on (..., seq, dim) inputs."""
    out, w = attention(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads))
    return merge_heads(out), w


class MultiHeadAttention(nn.Module):
    """Projected multi-head attention with a linear output mix."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"multi_head_attention: model dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.query = Linear(dim, dim)
        self.key = Linear(dim, dim)
        self.value = Linear(dim, dim)
        self.out = Linear(dim, dim)

    def forward(self, q, k, v):
        o, _ = multi_head_attention(self.query(q), self.key(k), self.value(v), self.heads)
        return self.out(o)
