"""Frozen-feature evaluation, fine-tuning, and the weighted kNN classifier.

The linear probe trains a single linear layer on frozen backbone GAP
features with a cosine-decayed learning rate.  Fine-tuning continues
training the whole encoder end to end.  Both report top-1 accuracy plus
precision and recall of the foreground class; when a model predicts no
positives at all, foreground precision is reported as 0 with a flag rather
than being dropped.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .config import EvalConfig
from .tiling import BACKGROUND, FOREGROUND, DatasetManifest, stratified_keep_indices
from .trainer import cosine_lr, encode_pooled

log = logging.getLogger(__name__)

CLASS_TO_INT = {BACKGROUND: 0, FOREGROUND: 1}
INT_TO_CLASS = {v: k for k, v in CLASS_TO_INT.items()}


# ---------------------------------------------------------------------------
# weighted kNN
# ---------------------------------------------------------------------------


def weighted_knn_predict(bank: torch.Tensor, bank_labels: np.ndarray,
                         query: torch.Tensor, k: int = 20,
                         t: float = 0.02) -> np.ndarray:
    """Cosine-similarity kNN with exp(sim / t) vote weights.

    bank and query rows must be L2-normalized.  Returns integer class
    predictions for each query row.
    """
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    if len(bank) == 0:
        raise ValueError("empty feature bank")
    k_eff = min(k, len(bank))
    labels = torch.as_tensor(np.asarray(bank_labels), dtype=torch.long)
    n_classes = int(labels.max()) + 1
    sims = query @ bank.t()
    top_sim, top_idx = sims.topk(k_eff, dim=1)
    weights = torch.exp(top_sim / t)
    votes = torch.zeros(query.shape[0], n_classes, dtype=weights.dtype)
    votes.scatter_add_(1, labels[top_idx], weights)
    return votes.argmax(dim=1).numpy()


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class EvalMetrics:
    top1: float
    prec_fg: float
    rec_fg: float
    zero_positive_predictions: bool = False


def classification_metrics(true: np.ndarray, pred: np.ndarray) -> EvalMetrics:
    """Top-1 accuracy plus foreground precision/recall (class 1 positive)."""
    true = np.asarray(true)
    pred = np.asarray(pred)
    if true.shape != pred.shape:
        raise ValueError(f"shape mismatch {true.shape} vs {pred.shape}")
    if true.size == 0:
        raise ValueError("no samples to score")
    top1 = float((true == pred).mean())
    pred_pos = pred == 1
    true_pos = true == 1
    n_pred_pos = int(pred_pos.sum())
    n_true_pos = int(true_pos.sum())
    if n_true_pos == 0:
        raise ValueError("no foreground samples in the evaluation set")
    recall = float((pred_pos & true_pos).sum() / n_true_pos)
    if n_pred_pos == 0:
        log.warning("model predicted zero positives; foreground precision "
                    "reported as 0")
        return EvalMetrics(top1=top1, prec_fg=0.0, rec_fg=recall,
                           zero_positive_predictions=True)
    precision = float((pred_pos & true_pos).sum() / n_pred_pos)
    return EvalMetrics(top1=top1, prec_fg=precision, rec_fg=recall)


# ---------------------------------------------------------------------------
# dataset assembly for evaluation
# ---------------------------------------------------------------------------


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < size or w < size:
        raise ValueError(f"image {w}x{h} smaller than crop {size}")
    y = (h - size) // 2
    x = (w - size) // 2
    return img[y:y + size, x:x + size]


def eval_split_arrays(patches, split: str, crop: int):
    """(records, uint8 stack, int labels) for one labeled split."""
    records = [r for r in patches.manifest.by_split(split)]
    if not records:
        raise ValueError(f"split {split!r} is empty")
    arrays = np.stack([center_crop(patches.get(r), crop) for r in records])
    labels = np.array([CLASS_TO_INT[r.label] for r in records])
    return records, arrays, labels


def subsample_training_split(records, labels, fraction: float, seed: int):
    """Class-stratified retention of a label fraction of the train split."""
    if fraction >= 1.0:
        return list(range(len(records)))
    rng = np.random.default_rng(seed)
    str_labels = [INT_TO_CLASS[int(l)] for l in labels]
    return stratified_keep_indices(str_labels, fraction, rng)


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------


def train_linear_probe(train_feats: torch.Tensor, train_labels: np.ndarray,
                       epochs: int, batch: int, lr0: float, seed: int,
                       n_classes: int = 2) -> torch.nn.Linear:
    """SGD on a single linear layer over frozen, precomputed features."""
    torch.manual_seed(seed)
    head = torch.nn.Linear(train_feats.shape[1], n_classes).to(train_feats.dtype)
    opt = torch.optim.SGD(head.parameters(), lr=lr0, momentum=0.9)
    labels = torch.as_tensor(train_labels, dtype=torch.long)
    n = len(train_feats)
    order_rng = np.random.default_rng(seed)
    steps_per_epoch = max(1, math.ceil(n / batch))
    total = steps_per_epoch * epochs
    step = 0
    for _ in range(epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, batch):
            idx = torch.as_tensor(order[start:start + batch])
            logits = head(train_feats[idx])
            loss = F.cross_entropy(logits, labels[idx])
            for g in opt.param_groups:
                g["lr"] = cosine_lr(step, total, lr0)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
    return head


def linear_probe(model: torch.nn.Module, patches, ev: EvalConfig,
                 norm_mean, norm_std, seed: int = 0,
                 test_split: str = "test") -> tuple[EvalMetrics, list, np.ndarray, np.ndarray]:
    """Frozen-feature probe; returns metrics plus per-patch predictions.

    Pooled features are standardized per dimension with train-split
    statistics before the linear head, so low-variance feature directions
    still contribute to the decision.
    """
    rec_tr, arr_tr, lab_tr = eval_split_arrays(patches, "train", ev.eval_crop)
    rec_te, arr_te, lab_te = eval_split_arrays(patches, test_split, ev.eval_crop)
    keep = subsample_training_split(rec_tr, lab_tr, ev.label_fraction, seed)
    arr_tr, lab_tr = arr_tr[keep], lab_tr[keep]
    feats_tr = encode_pooled(model, arr_tr, norm_mean, norm_std, l2=False)
    feats_te = encode_pooled(model, arr_te, norm_mean, norm_std, l2=False)
    mu = feats_tr.mean(dim=0, keepdim=True)
    sd = feats_tr.std(dim=0, keepdim=True).clamp_min(1e-6)
    feats_tr = (feats_tr - mu) / sd
    feats_te = (feats_te - mu) / sd
    head = train_linear_probe(feats_tr, lab_tr, ev.probe_epochs, ev.probe_batch,
                              ev.probe_lr, seed)
    with torch.no_grad():
        pred = head(feats_te).argmax(dim=1).numpy()
    return classification_metrics(lab_te, pred), rec_te, lab_te, pred


# ---------------------------------------------------------------------------
# fine-tuning
# ---------------------------------------------------------------------------


def finetune(model: torch.nn.Module, patches, ev: EvalConfig, norm_mean, norm_std,
             seed: int = 0, test_split: str = "test"):
    """End-to-end training of backbone + linear classifier on labeled crops."""
    from . import augment as aug_mod

    rec_tr, arr_tr, lab_tr = eval_split_arrays(patches, "train", ev.eval_crop)
    rec_te, arr_te, lab_te = eval_split_arrays(patches, test_split, ev.eval_crop)
    keep = subsample_training_split(rec_tr, lab_tr, ev.label_fraction, seed)
    arr_tr, lab_tr = arr_tr[keep], lab_tr[keep]

    torch.manual_seed(seed)
    head = torch.nn.Linear(model.backbone.out_dim, 2)
    params = list(model.parameters()) + list(head.parameters())
    opt = torch.optim.SGD(params, lr=ev.finetune_lr, momentum=0.9, weight_decay=1e-4)
    labels = torch.as_tensor(lab_tr, dtype=torch.long)
    rng = np.random.default_rng(seed)
    n = len(arr_tr)
    steps_per_epoch = max(1, math.ceil(n / ev.finetune_batch))
    total = steps_per_epoch * ev.finetune_epochs
    step = 0
    model.train()
    for _ in range(ev.finetune_epochs):
        order = rng.permutation(n)
        for start in range(0, n, ev.finetune_batch):
            idx = order[start:start + ev.finetune_batch]
            batch = arr_tr[idx]
            flip = rng.random(len(idx)) < 0.5
            batch = np.stack([b[:, ::-1] if fl else b for b, fl in zip(batch, flip)])
            x = torch.from_numpy(
                aug_mod.normalize_stack(batch, norm_mean, norm_std))
            logits = head(model.pooled(x))
            loss = F.cross_entropy(logits, labels[torch.as_tensor(idx)])
            for g in opt.param_groups:
                g["lr"] = cosine_lr(step, total, ev.finetune_lr)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
    model.eval()
    feats_te = encode_pooled(model, arr_te, norm_mean, norm_std, l2=False)
    with torch.no_grad():
        pred = head(feats_te).argmax(dim=1).numpy()
    return classification_metrics(lab_te, pred), rec_te, lab_te, pred


# ---------------------------------------------------------------------------
# kNN evaluation over a labeled split
# ---------------------------------------------------------------------------


def knn_evaluate(model: torch.nn.Module, patches, ev: EvalConfig, norm_mean,
                 norm_std, k: int = 20, t: float = 0.02, seed: int = 0,
                 test_split: str = "test"):
    rec_tr, arr_tr, lab_tr = eval_split_arrays(patches, "train", ev.eval_crop)
    rec_te, arr_te, lab_te = eval_split_arrays(patches, test_split, ev.eval_crop)
    keep = subsample_training_split(rec_tr, lab_tr, ev.label_fraction, seed)
    arr_tr, lab_tr = arr_tr[keep], lab_tr[keep]
    bank = encode_pooled(model, arr_tr, norm_mean, norm_std, l2=True)
    query = encode_pooled(model, arr_te, norm_mean, norm_std, l2=True)
    pred = weighted_knn_predict(bank, lab_tr, query, k=k, t=t)
    return classification_metrics(lab_te, pred), rec_te, lab_te, pred


def labels_to_strings(labels: np.ndarray) -> list[str]:
    return [INT_TO_CLASS[int(l)] for l in labels]


def subsampled_manifest(manifest: DatasetManifest, fraction: float,
                        seed: int) -> DatasetManifest:
    """Manifest-level stratified label subsampling (same rule as array path)."""
    from .tiling import subsample_labels

    return subsample_labels(manifest, fraction, np.random.default_rng(seed))
