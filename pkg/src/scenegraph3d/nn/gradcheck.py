"""Central finite-difference gradient checking.

The numeric side never touches autograd: it only evaluates the loss under
``torch.no_grad`` at perturbed points.
"""

from __future__ import annotations

from typing import Callable, Iterable, List, Sequence

import numpy as np
import torch


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps entries whose true gradient is zero (e.g. a bias that
    every softmax score shares) from dividing round-off by round-off: with
    eps = 1e-5 the central difference carries ~1e-11 absolute noise.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(loss_fn: Callable[[], torch.Tensor], t: torch.Tensor,
                 indices: Sequence[int], eps: float = 1e-5) -> np.ndarray:
    flat = t.data.view(-1)
    out = np.empty(len(indices))
    with torch.no_grad():
        for k, i in enumerate(indices):
            orig = flat[i].item()
            flat[i] = orig + eps
            plus = float(loss_fn())
            flat[i] = orig - eps
            minus = float(loss_fn())
            flat[i] = orig
            out[k] = (plus - minus) / (2 * eps)
    return out


def check_gradients(loss_fn: Callable[[], torch.Tensor], tensors: Iterable[torch.Tensor],
                    eps: float = 1e-5, max_entries: int | None = None,
                    seed: int = 0) -> float:
    """Max relative error between autograd and central differences.

    ``max_entries`` caps how many entries per tensor are probed (chosen with a
    seeded RNG); ``None`` probes every entry.
    """
    tensors: List[torch.Tensor] = list(tensors)
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(tensors, grads):
        n = t.numel()
        if max_entries is None or n <= max_entries:
            idx = np.arange(n)
        else:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        analytic = (np.zeros(n) if g is None else g.detach().reshape(-1).numpy())[idx]
        numeric = numeric_grad(loss_fn, t, idx.tolist(), eps)
        worst = max(worst, float(relative_error(analytic, numeric).max(initial=0.0)))
    return worst
