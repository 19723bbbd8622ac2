"""Float64 tensor ops, layers, checkpoints and gradient checking."""

from .checkpoint import CheckpointError, load_params, read_checkpoint, save_params, write_checkpoint
from .gradcheck import check_gradients
from .layers import (GCNLayer, GRUCell, Linear, MLP, MultiHeadAttention, attention,
                     init_parameters, multi_head_attention)
from .ops import DTYPE, NonFiniteError, ShapeError, debug_mode, set_debug

__all__ = [
    "CheckpointError", "DTYPE", "GCNLayer", "GRUCell", "Linear", "MLP", "MultiHeadAttention",
    "NonFiniteError", "ShapeError", "attention", "check_gradients", "debug_mode",
    "init_parameters", "load_params", "multi_head_attention", "read_checkpoint",
    "save_params", "set_debug", "write_checkpoint",
]
