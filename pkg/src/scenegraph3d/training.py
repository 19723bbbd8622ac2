"""Training-loop helpers shared by both estimators."""

from __future__ import annotations

import json
import math
import os
from contextlib import contextmanager
from typing import Dict, List

import numpy as np
import torch

from .graph import dumps


@contextmanager
def single_threaded():
    """Pin torch to one thread so reductions run in a fixed order."""
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(prev)


def make_adam(model: torch.nn.Module, lr: float) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def adam_state_tensors(model: torch.nn.Module, opt: torch.optim.Adam) -> Dict[str, torch.Tensor]:
    out = {}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if st:
            out[f"adam/{name}/exp_avg"] = st["exp_avg"]
            out[f"adam/{name}/exp_avg_sq"] = st["exp_avg_sq"]
            out[f"adam/{name}/step"] = torch.as_tensor(float(st["step"]), dtype=torch.float64)
    return out


def split_adam_tensors(tensors: Dict[str, np.ndarray]):
    params = {k: v for k, v in tensors.items() if not k.startswith("adam/")}
    adam = {k[len("adam/"):]: v for k, v in tensors.items() if k.startswith("adam/")}
    return params, adam


def restore_adam(model: torch.nn.Module, opt: torch.optim.Adam, adam: Dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        if f"{name}/step" not in adam:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(np.asarray(adam[f"{name}/step"]).reshape(-1)[0])),
            "exp_avg": torch.as_tensor(adam[f"{name}/exp_avg"], dtype=p.dtype).clone(),
            "exp_avg_sq": torch.as_tensor(adam[f"{name}/exp_avg_sq"], dtype=p.dtype).clone(),
        }


def cosine_lr(step: int, total: int, lr: float, min_ratio: float) -> float:
    """Cosine decay from ``lr`` to ``lr * min_ratio`` over ``total`` steps."""
    if total <= 1:
        return lr
    frac = min(max(step / (total - 1), 0.0), 1.0)
    lo = lr * min_ratio
    return lo + 0.5 * (lr - lo) * (1.0 + math.cos(math.pi * frac))


def set_lr(opt: torch.optim.Optimizer, lr: float) -> None:
    for group in opt.param_groups:
        group["lr"] = lr


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Shuffled mini-batches that depend only on (seed, epoch)."""
    order = np.random.default_rng([seed, epoch]).permutation(n)
    return [order[k:k + batch_size] for k in range(0, n, batch_size)]


class MetricsLog:
    """Append-only JSONL log; ``None`` path disables writing but keeps rows."""

    def __init__(self, path=None):
        self.path = None if path is None else os.fspath(path)
        self.rows: List[dict] = []

    def append(self, row: dict) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(dumps(row) + "\n")
                fh.flush()

    @staticmethod
    def read(path) -> List[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]


def smoothed(values, window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.concatenate([[0.0], v]))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)
