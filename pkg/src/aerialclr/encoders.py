"""Backbones and projection heads for the contrastive models.

Two backbones are provided: a small strided CNN sized for quick CPU runs on
small patches, and torchvision's ResNet-50 for full-scale training.  Both
end in global average pooling.  On top sits a shared hidden projection layer
and two linear output heads, one for instance-level embeddings (used against
the key encoder and queue) and one for group-level embeddings (used against
per-batch centroids).  Embeddings are L2-normalized.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class DeskCNN(nn.Module):
    """Four strided conv blocks with group norm, for small square patches."""

    def __init__(self, widths=(24, 48, 96, 128), groups=(4, 8, 8, 8)):
        super().__init__()
        blocks = []
        in_ch = 3
        for w, g in zip(widths, groups):
            blocks += [
                nn.Conv2d(in_ch, w, kernel_size=3, stride=2, padding=1, bias=False),
                nn.GroupNorm(g, w),
                nn.ReLU(inplace=True),
            ]
            in_ch = w
        self.features = nn.Sequential(*blocks)
        self.out_dim = in_ch

    def forward(self, x):
        h = self.features(x)
        return h.mean(dim=(2, 3))


def _resnet50_backbone():
    from torchvision.models import resnet50

    net = resnet50(weights=None)
    out_dim = net.fc.in_features
    net.fc = nn.Identity()
    net.out_dim = out_dim
    return net


class EncoderWithHeads(nn.Module):
    """Backbone + shared hidden layer + instance and group output heads."""

    def __init__(self, backbone: nn.Module, feat_dim: int = 128,
                 hidden_dim: int = 2048):
        super().__init__()
        self.backbone = backbone
        self.neck = nn.Sequential(
            nn.Linear(backbone.out_dim, hidden_dim),
            nn.ReLU(inplace=True),
        )
        self.head_instance = nn.Linear(hidden_dim, feat_dim)
        self.head_group = nn.Linear(hidden_dim, feat_dim)
        self.feat_dim = feat_dim

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Backbone features after global average pooling (pre-projection)."""
        return self.backbone(x)

    def forward(self, x: torch.Tensor, branch: str = "instance"):
        h = self.neck(self.pooled(x))
        if branch == "instance":
            return F.normalize(self.head_instance(h), dim=1)
        if branch == "group":
            return F.normalize(self.head_group(h), dim=1)
        if branch == "both":
            return (F.normalize(self.head_instance(h), dim=1),
                    F.normalize(self.head_group(h), dim=1))
        raise ValueError(f"unknown branch {branch!r}")


BACKBONES = ("desk_cnn", "resnet50")


def build_encoder(arch: str = "desk_cnn", feat_dim: int = 128,
                  hidden_dim: int = 2048, seed: int | None = None) -> EncoderWithHeads:
    """Construct an encoder; parameter init is reproducible given seed."""
    if seed is not None:
        torch.manual_seed(seed)
    if arch == "desk_cnn":
        backbone = DeskCNN()
    elif arch == "resnet50":
        backbone = _resnet50_backbone()
    else:
        raise ValueError(f"unknown backbone {arch!r}; choose from {BACKBONES}")
    return EncoderWithHeads(backbone, feat_dim=feat_dim, hidden_dim=hidden_dim)


def make_key_encoder(query: EncoderWithHeads) -> EncoderWithHeads:
    """Frozen structural copy of the query encoder, initialized equal to it."""
    import copy

    key = copy.deepcopy(query)
    for p in key.parameters():
        p.requires_grad_(False)
    return key
