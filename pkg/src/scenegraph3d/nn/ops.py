"""Shape-checked tensor ops on top of torch autograd.

Everything runs in float64. With debug mode on, every op verifies that its
output is finite.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Sequence

import torch

DTYPE = torch.float64

_DEBUG = False


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def set_debug(flag: bool) -> None:
    global _DEBUG
    _DEBUG = bool(flag)


@contextmanager
def debug_mode(flag: bool = True):
    prev = _DEBUG
    set_debug(flag)
    try:
        yield
    finally:
        set_debug(prev)


def _checked(name: str, out: torch.Tensor) -> torch.Tensor:
    if _DEBUG and not torch.isfinite(out).all():
        raise NonFiniteError(f"{name} produced NaN/Inf")
    return out


def _shape_error(op: str, a: torch.Tensor, b: torch.Tensor) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


def tensor(data, requires_grad: bool = False) -> torch.Tensor:
    return torch.as_tensor(data, dtype=DTYPE).clone().requires_grad_(requires_grad)


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise _shape_error("matmul", a, b)
    return _checked("matmul", a @ b)


def _broadcast(op: str, a: torch.Tensor, b: torch.Tensor) -> None:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise _shape_error(op, a, b) from None


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _broadcast("add", a, b)
    return _checked("add", a + b)


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Elementwise (Hadamard) product."""
    _broadcast("mul", a, b)
    return _checked("mul", a * b)


hadamard = mul


def scale(a: torch.Tensor, s: float) -> torch.Tensor:
    return _checked("scale", a * s)


def concat(parts: Sequence[torch.Tensor], dim: int = -1) -> torch.Tensor:
    ref = parts[0]
    for p in parts[1:]:
        if p.dim() != ref.dim() or any(
                x != y for k, (x, y) in enumerate(zip(p.shape, ref.shape))
                if k != dim % ref.dim()):
            raise _shape_error("concat", ref, p)
    return _checked("concat", torch.cat(list(parts), dim=dim))


def slice_cols(a: torch.Tensor, start: int, stop: int) -> torch.Tensor:
    if not 0 <= start <= stop <= a.shape[-1]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for shape {tuple(a.shape)}")
    return a[..., start:stop]


def relu(a: torch.Tensor) -> torch.Tensor:
    return _checked("relu", torch.relu(a))


def sigmoid(a: torch.Tensor) -> torch.Tensor:
    return _checked("sigmoid", torch.sigmoid(a))


def tanh(a: torch.Tensor) -> torch.Tensor:
    return _checked("tanh", torch.tanh(a))


def softmax(a: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Max-shifted softmax."""
    shifted = a - a.max(dim=dim, keepdim=True).values.detach()
    e = torch.exp(shifted)
    return _checked("softmax", e / e.sum(dim=dim, keepdim=True))


def log_softmax(a: torch.Tensor, dim: int = -1) -> torch.Tensor:
    shifted = a - a.max(dim=dim, keepdim=True).values.detach()
    return _checked("log_softmax", shifted - torch.log(torch.exp(shifted).sum(dim=dim, keepdim=True)))


def layer_norm(a: torch.Tensor, gain: torch.Tensor | None = None,
               bias: torch.Tensor | None = None, eps: float = 1e-5) -> torch.Tensor:
    mu = a.mean(dim=-1, keepdim=True)
    var = ((a - mu) ** 2).mean(dim=-1, keepdim=True)
    out = (a - mu) / torch.sqrt(var + eps)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return _checked("layer_norm", out)


def _check_index(op: str, index: torch.Tensor, n: int) -> None:
    if index.numel() and (int(index.min()) < 0 or int(index.max()) >= n):
        raise IndexError(f"{op}: index out of range for {n} rows")


def gather_rows(a: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    _check_index("gather_rows", index, a.shape[0])
    return a.index_select(0, index)


def scatter_add_rows(src: torch.Tensor, index: torch.Tensor, n: int) -> torch.Tensor:
    """Sum rows of ``src`` into ``n`` output rows selected by ``index``."""
    if src.shape[0] != index.shape[0]:
        raise ShapeError(f"scatter_add_rows: {src.shape[0]} rows but {index.shape[0]} indices")
    _check_index("scatter_add_rows", index, n)
    out = src.new_zeros((n,) + tuple(src.shape[1:]))
    return _checked("scatter_add_rows", out.index_add(0, index, src))


def scatter_mean_rows(src: torch.Tensor, index: torch.Tensor, n: int) -> torch.Tensor:
    """Mean of the rows sent to each target; targets with no rows get zeros."""
    total = scatter_add_rows(src, index, n)
    count = torch.zeros(n, dtype=src.dtype).index_add(
        0, index, torch.ones(index.shape[0], dtype=src.dtype))
    return total / count.clamp(min=1.0).unsqueeze(-1)


def mean(a: torch.Tensor, dim=None) -> torch.Tensor:
    return a.mean() if dim is None else a.mean(dim=dim)


def sum(a: torch.Tensor, dim=None) -> torch.Tensor:  # noqa: A001 - op name
    return a.sum() if dim is None else a.sum(dim=dim)


def softplus(a: torch.Tensor) -> torch.Tensor:
    return _checked("softplus", torch.nn.functional.softplus(a))
