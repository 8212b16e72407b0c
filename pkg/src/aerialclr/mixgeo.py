"""Geometric loss weighting and batch-level image mixtures.

The geometric strategy trains the color view and the rotated view against
the same key with a fixed weight gamma on the color branch.  The mixture
strategy replaces that, on a random subset of batches, with two convex
pixel mixtures of the rotated view: one with the plain base crop, one with
the color view.  The mixing factor is drawn once per batch and reused as
the loss weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .contrastive import info_nce_loss


@dataclass
class MixConfig:
    gamma: float = 0.9   # weight on the color view in the geometric loss
    p: float = 0.3       # per-batch probability of mixing
    alpha: float = 1.0   # Beta(alpha, alpha) concentration for the factor

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def geo_weighted_loss(loss_color: torch.Tensor, loss_rot: torch.Tensor,
                      gamma: float) -> torch.Tensor:
    """gamma-weighted sum; gamma multiplies the color-view term."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must be in [0, 1], got {gamma}")
    return gamma * loss_color + (1.0 - gamma) * loss_rot


def sample_mix_draw(rng: np.random.Generator, alpha: float, p: float) -> dict:
    """One per-batch mixture decision.

    Draws the gate first; the Beta factor is only consumed from the stream
    on batches that actually mix.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    if rng.random() < p:
        return {"mixed": True, "lam": float(rng.beta(alpha, alpha))}
    return {"mixed": False, "lam": None}


def mix_images(base: torch.Tensor, v_color: torch.Tensor, v_rot: torch.Tensor,
               lam: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Convex pixel mixtures of the rotated view with base and color views."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must be in [0, 1], got {lam}")
    ggm = lam * v_rot + (1.0 - lam) * base
    gcm = lam * v_rot + (1.0 - lam) * v_color
    return ggm, gcm


def mixture_loss(q_ggm: torch.Tensor, q_gcm: torch.Tensor, k_pos: torch.Tensor,
                 negatives: torch.Tensor, lam: float, tau: float) -> torch.Tensor:
    """Mixing factor reused as the weight between the two mixture losses."""
    return (lam * info_nce_loss(q_ggm, k_pos, negatives, tau)
            + (1.0 - lam) * info_nce_loss(q_gcm, k_pos, negatives, tau))
