"""Central finite-difference checks for every trainable operation (float64)."""

import numpy as np
import pytest
import torch

from scenegraph3d.nn import ops
from scenegraph3d.nn.gradcheck import check_gradients, relative_error
from scenegraph3d.nn.layers import (GCNLayer, GRUCell, LayerNorm, MLP, MultiHeadAttention,
                                   attention, init_parameters, multi_head_attention)
from scenegraph3d.nn.ops import NonFiniteError, ShapeError
from scenegraph3d.sgp import CCFALayer, GraphTensors, SgpModel, sgp_loss
from scenegraph3d.vae import GraphBatch, JSLBlock, SceneVAEModel, vae_loss

TOL = 1e-4


def rand(*shape, seed=0, grad=True):
    g = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=g, dtype=torch.float64).requires_grad_(grad)


def projected(out, seed=99):
    """Scalar loss with a fixed random projection so every output entry matters."""
    return (out * rand(*out.shape, seed=seed, grad=False)).sum()


def params(module):
    return list(module.parameters())


EDGES = torch.tensor([[0, 1], [1, 0], [1, 2], [3, 1]])


# -- core ops -----------------------------------------------------------------------------

@pytest.mark.parametrize("name,fn,shapes", [
    ("matmul", lambda a, b: ops.matmul(a, b), [(3, 4), (4, 2)]),
    ("add", lambda a, b: ops.add(a, b), [(3, 4), (3, 4)]),
    ("hadamard", lambda a, b: ops.hadamard(a, b), [(3, 4), (3, 4)]),
    ("scale", lambda a: ops.scale(a, 2.5), [(3, 4)]),
    ("concat", lambda a, b: ops.concat([a, b]), [(3, 2), (3, 5)]),
    ("slice_cols", lambda a: ops.slice_cols(a, 1, 3), [(3, 4)]),
    ("relu", lambda a: ops.relu(a), [(3, 4)]),
    ("sigmoid", lambda a: ops.sigmoid(a), [(3, 4)]),
    ("tanh", lambda a: ops.tanh(a), [(3, 4)]),
    ("softmax", lambda a: ops.softmax(a), [(3, 4)]),
    ("log_softmax", lambda a: ops.log_softmax(a), [(3, 4)]),
    ("layer_norm", lambda a, g, b: ops.layer_norm(a, g, b), [(3, 4), (4,), (4,)]),
    ("gather_rows", lambda a: ops.gather_rows(a, torch.tensor([2, 0, 2])), [(3, 4)]),
    ("scatter_add_rows", lambda a: ops.scatter_add_rows(a, torch.tensor([1, 1, 0]), 3), [(3, 4)]),
    ("scatter_mean_rows", lambda a: ops.scatter_mean_rows(a, torch.tensor([1, 1, 0]), 3), [(3, 4)]),
    ("mean", lambda a: ops.mean(a, dim=0), [(3, 4)]),
    ("sum", lambda a: ops.sum(a, dim=1), [(3, 4)]),
    ("softplus", lambda a: ops.softplus(a), [(3, 4)]),
])
def test_core_op_gradients(name, fn, shapes):
    xs = [rand(*s, seed=k) for k, s in enumerate(shapes)]
    assert check_gradients(lambda: projected(fn(*xs)), xs) < TOL


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        ops.matmul(rand(2, 3), rand(2, 3))
    with pytest.raises(ShapeError, match="add"):
        ops.add(rand(2, 3), rand(3, 2))


def test_debug_mode_catches_non_finite():
    x = torch.tensor([1.0, float("inf")], dtype=torch.float64)
    ops.relu(x)  # debug off: passes through
    with ops.debug_mode(True):
        with pytest.raises(NonFiniteError):
            ops.relu(x)


def test_softmax_stable_for_large_logits():
    p = ops.softmax(torch.tensor([[1000.0, 1000.0, -1000.0]], dtype=torch.float64))
    assert torch.allclose(p, torch.tensor([[0.5, 0.5, 0.0]], dtype=torch.float64))


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([0.0]))[0] == 0.0


def test_gradcheck_detects_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x ** 2

        @staticmethod
        def backward(ctx, g):
            return g  # wrong on purpose

    x = rand(4)
    assert check_gradients(lambda: Bad.apply(x).sum(), [x]) > 0.1


# -- layers -------------------------------------------------------------------------------

def test_mlp_gradients():
    m = MLP([5, 6, 3]); init_parameters(m, 1)
    x = rand(4, 5)
    assert check_gradients(lambda: projected(m(x)), [x] + params(m)) < TOL


def test_layer_norm_module_gradients():
    m = LayerNorm(6); init_parameters(m, 1)
    x = rand(4, 6)
    assert check_gradients(lambda: projected(m(x)), [x] + params(m)) < TOL


def test_gcn_layer_gradients():
    m = GCNLayer(4, 3, hidden_dim=5, out_dim=4); init_parameters(m, 2)
    x, e = rand(4, 4, seed=1), rand(4, 3, seed=2)

    def loss():
        xo, eo = m(x, e, EDGES)
        return projected(xo, 5) + projected(eo, 6)
    assert check_gradients(loss, [x, e] + params(m)) < TOL


def test_gru_cell_gradients():
    m = GRUCell(3, 4); init_parameters(m, 3)
    h, x = rand(5, 4, seed=1), rand(5, 3, seed=2)
    assert check_gradients(lambda: projected(m(h, x)), [h, x] + params(m)) < TOL


def test_attention_gradients():
    q, k, v = rand(2, 3, 4, seed=1), rand(2, 5, 4, seed=2), rand(2, 5, 3, seed=3)
    assert check_gradients(lambda: projected(attention(q, k, v)[0]), [q, k, v]) < TOL
    assert check_gradients(lambda: projected(multi_head_attention(q, k, k, 2)[0]), [q, k]) < TOL


def test_multi_head_attention_module_gradients():
    m = MultiHeadAttention(4, 2); init_parameters(m, 4)
    q, kv = rand(3, 4, seed=1), rand(5, 4, seed=2)
    assert check_gradients(lambda: projected(m(q, kv, kv)), [q, kv] + params(m)) < TOL


@pytest.mark.parametrize("final", [False, True])
def test_ccfa_layer_gradients(final):
    gru = GRUCell(4, 4)
    m = CCFALayer(4, 2, final=final, gru=gru)
    init_parameters(m, 5); init_parameters(gru, 6)
    x, e = rand(4, 4, seed=1), rand(4, 4, seed=2)

    def loss():
        xo, eo = m(x, e, EDGES)
        return projected(xo, 7) + projected(eo, 8)
    assert check_gradients(loss, [x, e] + params(m) + (params(gru) if final else [])) < TOL


def test_two_stacked_ccfa_layers_gradients():
    gru = GRUCell(4, 4)
    layers = [CCFALayer(4, 2, final=False, gru=gru), CCFALayer(4, 2, final=True, gru=gru)]
    for k, layer in enumerate(layers):
        init_parameters(layer, 10 + k)
    init_parameters(gru, 12)
    x, e = rand(4, 4, seed=1), rand(4, 4, seed=2)

    def loss():
        xo, eo = x, e
        for layer in layers:
            xo, eo = layer(xo, eo, EDGES)
        return projected(xo, 3) + projected(eo, 4)
    ps = [x, e] + params(gru) + [p for layer in layers for p in layer.parameters()]
    assert check_gradients(loss, ps) < TOL


def test_jsl_block_gradients():
    m = JSLBlock(4, 3, layers=2); init_parameters(m, 7)
    lay, shp, e, box = rand(4, 4, seed=1), rand(4, 4, seed=2), rand(4, 4, seed=3), rand(4, 3, seed=4)

    def loss():
        xo, eo = m(lay, e, box, EDGES, shape_emb=shp)
        return projected(xo, 5) + projected(eo, 6)
    assert check_gradients(loss, [lay, shp, e, box] + params(m), max_entries=12) < TOL


# -- full models -------------------------------------------------------------------------

def tiny_sgp_inputs():
    g = torch.Generator().manual_seed(0)
    return GraphTensors(
        ids=[0, 1, 2, 3],
        image=torch.randn(4, 5, generator=g, dtype=torch.float64),
        points=torch.randn(4, 10, 3, generator=g, dtype=torch.float64),
        box=torch.rand(4, 7, generator=g, dtype=torch.float64) + 0.5,
        edges=EDGES,
        pose=torch.randn(4, 6, generator=g, dtype=torch.float64),
    )


def test_sgp_model_gradients():
    m = SgpModel(5, 3, 4, model_dim=4, image_proj_dim=4, point_dim=4, heads=2, layers=2)
    init_parameters(m, 8)
    g = tiny_sgp_inputs()
    obj_t, pred_t = torch.tensor([0, 2, 1, 2]), torch.tensor([3, 0, 1, 2])

    def loss():
        o, p, _, _ = m(g)
        return sgp_loss(o, p, obj_t, pred_t)
    assert check_gradients(loss, params(m), max_entries=6) < TOL


def tiny_vae_batch():
    g = torch.Generator().manual_seed(1)
    return GraphBatch(
        classes=torch.tensor([0, 1, 2, 1]),
        node_context=torch.randn(4, 3, generator=g, dtype=torch.float64),
        box=torch.rand(4, 6, generator=g, dtype=torch.float64) + 0.3,
        yaw_bin=torch.tensor([0, 5, 2, 3]),
        shape=torch.randn(4, 2, generator=g, dtype=torch.float64),
        edges=EDGES,
        predicates=torch.tensor([0, 1, 3, 2]),
        edge_context=torch.randn(4, 3, generator=g, dtype=torch.float64),
        node_weight=torch.full((4,), 0.25, dtype=torch.float64),
    )


def test_vae_model_gradients():
    m = SceneVAEModel(3, 4, model_dim=4, embed_dim=3, latent_dim=3, shape_dim=2, yaw_bins=6,
                      gcn_layers=2)
    init_parameters(m, 9)
    g = tiny_vae_batch()
    eps = rand(4, 3, seed=11, grad=False)

    def loss():
        boxes, yaw, shapes, mu, logvar = m(g, eps)
        return vae_loss(boxes, yaw, shapes, g, mu, logvar, m)[0]
    assert check_gradients(loss, params(m), max_entries=4) < TOL
