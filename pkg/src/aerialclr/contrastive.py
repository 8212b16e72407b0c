"""Momentum-contrast core: InfoNCE loss, key queue, momentum update.

The queue is a fixed-capacity FIFO of L2-normalized key embeddings.  Until
it has been filled once, only the filled prefix serves as negatives, so
early losses see fewer negatives rather than stale garbage.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def info_nce_logits(q: torch.Tensor, k_pos: torch.Tensor,
                    negatives: torch.Tensor, tau: float) -> torch.Tensor:
    """Per-sample logits [sim(q, k_pos), sim(q, n_1), ..., sim(q, n_K)] / tau.

    The positive sits in column 0; negatives are shared across the batch.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if q.shape != k_pos.shape:
        raise ValueError(f"q {tuple(q.shape)} vs k_pos {tuple(k_pos.shape)}")
    l_pos = (q * k_pos).sum(dim=1, keepdim=True)
    if negatives.numel() == 0:
        logits = l_pos
    else:
        logits = torch.cat([l_pos, q @ negatives.t()], dim=1)
    return logits / tau


def info_nce_loss(q: torch.Tensor, k_pos: torch.Tensor,
                  negatives: torch.Tensor, tau: float) -> torch.Tensor:
    """Mean cross-entropy with the positive as class 0."""
    logits = info_nce_logits(q, k_pos, negatives, tau)
    labels = torch.zeros(q.shape[0], dtype=torch.long, device=q.device)
    return F.cross_entropy(logits, labels)


class FeatureQueue(nn.Module):
    """FIFO buffer of normalized key embeddings with warm-fill semantics."""

    def __init__(self, capacity: int, dim: int, dtype=torch.float32):
        super().__init__()
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self.register_buffer("feats", torch.zeros(capacity, dim, dtype=dtype))
        self.register_buffer("ptr", torch.zeros((), dtype=torch.long))
        self.register_buffer("fill", torch.zeros((), dtype=torch.long))

    @torch.no_grad()
    def push(self, keys: torch.Tensor):
        """Enqueue a batch of keys, overwriting the oldest entries when full."""
        n = keys.shape[0]
        if n > self.capacity:
            raise ValueError(f"push of {n} keys exceeds capacity {self.capacity}")
        if keys.shape[1] != self.dim:
            raise ValueError(f"key dim {keys.shape[1]} != queue dim {self.dim}")
        norms = keys.norm(dim=1)
        if not torch.allclose(norms, torch.ones_like(norms), atol=1e-4):
            raise ValueError("queue keys must be unit-normalized")
        keys = keys.detach().to(self.feats.dtype)
        ptr = int(self.ptr)
        end = ptr + n
        if end <= self.capacity:
            self.feats[ptr:end] = keys
        else:
            first = self.capacity - ptr
            self.feats[ptr:] = keys[:first]
            self.feats[:end - self.capacity] = keys[first:]
        self.ptr.fill_(end % self.capacity)
        self.fill.fill_(min(self.capacity, int(self.fill) + n))

    def negatives(self) -> torch.Tensor:
        """Current contents, oldest first; shorter than capacity while warming."""
        fill = int(self.fill)
        if fill < self.capacity:
            return self.feats[:fill]
        ptr = int(self.ptr)
        if ptr == 0:
            return self.feats
        return torch.cat([self.feats[ptr:], self.feats[:ptr]], dim=0)

    def __len__(self):
        return int(self.fill)


@torch.no_grad()
def momentum_update(query: nn.Module, key: nn.Module, m: float):
    """theta_k <- m * theta_k + (1 - m) * theta_q over all parameters."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {m}")
    for p_q, p_k in zip(query.parameters(), key.parameters(), strict=True):
        p_k.mul_(m).add_(p_q.detach(), alpha=1.0 - m)
