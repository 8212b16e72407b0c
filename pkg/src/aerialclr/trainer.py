"""Pretraining loop for all five contrastive strategies.

Step order per batch: forward query/key encoders, compute the strategy
loss, backprop, SGD step with cosine-decayed lr, momentum-update the key
encoder, then enqueue the batch keys.  Keys are always computed by the key
encoder as it stood at the start of the step and never carry gradients.

Every random draw is derived from (seed, epoch, position) so runs are
reproducible and checkpoint-resume at an epoch boundary replays the exact
same stream.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import augment as aug
from .cld import total_cld_loss
from .config import RunConfig, flatten_run_config
from .contrastive import FeatureQueue, info_nce_loss, momentum_update
from .dataio import format_metrics_csv, save_checkpoint
from .encoders import build_encoder, make_key_encoder
from .mixgeo import geo_weighted_loss, mix_images, mixture_loss, sample_mix_draw

log = logging.getLogger(__name__)


def cosine_lr(step: int, total_steps: int, lr0: float) -> float:
    """Half-cosine decay from lr0 to 0 over the whole run."""
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    frac = min(max(step / total_steps, 0.0), 1.0)
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * frac))


def _torch_dtype(name: str):
    return {"float32": torch.float32, "float64": torch.float64}[name]


@dataclass
class PretrainState:
    cfg: RunConfig
    model_q: torch.nn.Module
    model_k: torch.nn.Module
    queue: FeatureQueue
    optimizer: torch.optim.Optimizer
    norm_mean: np.ndarray
    norm_std: np.ndarray
    step: int = 0
    next_epoch: int = 0
    metrics: list[dict] = field(default_factory=list)


def init_pretrain(cfg: RunConfig, norm_mean: np.ndarray,
                  norm_std: np.ndarray) -> PretrainState:
    cfg.validate()
    dtype = _torch_dtype(cfg.dtype)
    model_q = build_encoder(cfg.backbone, cfg.feat_dim, cfg.hidden_dim,
                            seed=cfg.seeds.init).to(dtype)
    model_k = make_key_encoder(model_q)
    queue = FeatureQueue(cfg.queue_size, cfg.feat_dim, dtype=dtype)
    optimizer = torch.optim.SGD(model_q.parameters(), lr=cfg.lr,
                                momentum=cfg.sgd_momentum,
                                weight_decay=cfg.weight_decay)
    return PretrainState(cfg=cfg, model_q=model_q, model_k=model_k, queue=queue,
                         optimizer=optimizer, norm_mean=norm_mean, norm_std=norm_std)


# ---------------------------------------------------------------------------
# view assembly
# ---------------------------------------------------------------------------


def _sample_rng(aug_seed: int, epoch: int, position: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([aug_seed, 0, epoch, position]))


def _mix_rng(aug_seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([aug_seed, 1, step]))


def assemble_views(patches: list[np.ndarray], strategy: str, aug_cfg: aug.AugmentConfig,
                   aug_seed: int, epoch: int, base_position: int):
    """Stack per-sample sampler outputs into uint8 NHWC arrays per view name."""
    sampler = aug.VIEW_SAMPLERS[strategy]
    stacks: dict[str, list[np.ndarray]] = {}
    traces = []
    for i, patch in enumerate(patches):
        rng = _sample_rng(aug_seed, epoch, base_position + i)
        views, trace = sampler(patch, rng, aug_cfg)
        for name, img in views.items():
            stacks.setdefault(name, []).append(img)
        traces.append(trace)
    return {name: np.stack(imgs) for name, imgs in stacks.items()}, traces


def views_to_tensors(views: dict[str, np.ndarray], norm_mean, norm_std,
                     dtype) -> dict[str, torch.Tensor]:
    return {
        name: torch.from_numpy(aug.normalize_stack(v, norm_mean, norm_std)).to(dtype)
        for name, v in views.items()
    }


# ---------------------------------------------------------------------------
# strategy losses
# ---------------------------------------------------------------------------


def _kmeans_step_seed(kmeans_seed: int, step: int) -> int:
    seq = np.random.SeedSequence([kmeans_seed, step])
    return int(seq.generate_state(1, np.uint64)[0] % (2**62))


def strategy_loss(state: PretrainState, tensors: dict[str, torch.Tensor],
                  step: int) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """Loss of one batch; returns (loss, key embeddings, extra log terms)."""
    cfg = state.cfg
    negatives = state.queue.negatives()
    with torch.no_grad():
        k_emb = state.model_k(tensors["k"])
    extra: dict = {}

    if cfg.strategy == "moco_v2":
        q = state.model_q(tensors["q"])
        loss = info_nce_loss(q, k_emb, negatives, cfg.tau_q)
        return loss, k_emb, extra

    v1, v2 = tensors["q1"], tensors["q2"]

    if cfg.strategy in ("moco_cld", "geocld"):
        use_group = cfg.cld.weight > 0
        if use_group:
            q1, g1 = state.model_q(v1, branch="both")
            q2, g2 = state.model_q(v2, branch="both")
        else:
            q1, g1 = state.model_q(v1), None
            q2, g2 = state.model_q(v2), None
        seed = _kmeans_step_seed(cfg.seeds.kmeans, step)
        loss, group_val = total_cld_loss(
            q1, q2, k_emb, negatives, cfg.tau_q, g1, g2, cfg.cld.clusters,
            cfg.cld.iters, cfg.tau_g, cfg.cld.weight, seed)
        if group_val is not None:
            extra["group_loss"] = group_val
        return loss, k_emb, extra

    if cfg.strategy == "mixco":
        draw = sample_mix_draw(_mix_rng(cfg.seeds.augment, step),
                               cfg.mix.alpha, cfg.mix.p)
        extra["mixed"] = draw["mixed"]
        if draw["mixed"]:
            lam = draw["lam"]
            ggm, gcm = mix_images(tensors["base"], v1, v2, lam)
            q_ggm = state.model_q(ggm)
            q_gcm = state.model_q(gcm)
            loss = mixture_loss(q_ggm, q_gcm, k_emb, negatives, lam, cfg.tau_q)
            return loss, k_emb, extra
    elif cfg.strategy != "moco_geo":
        raise ValueError(f"unknown strategy {cfg.strategy!r}")

    q1 = state.model_q(v1)
    q2 = state.model_q(v2)
    loss_1 = info_nce_loss(q1, k_emb, negatives, cfg.tau_q)
    loss_2 = info_nce_loss(q2, k_emb, negatives, cfg.tau_q)
    loss = geo_weighted_loss(loss_1, loss_2, cfg.mix.gamma)
    return loss, k_emb, extra


def pretrain_step(state: PretrainState, tensors: dict[str, torch.Tensor],
                  lr: float) -> tuple[float, dict]:
    """One full optimization step; returns (loss value, extra log terms)."""
    loss, k_emb, extra = strategy_loss(state, tensors, state.step)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad()
    loss.backward()
    state.optimizer.step()
    momentum_update(state.model_q, state.model_k, state.cfg.momentum)
    state.queue.push(k_emb)
    state.step += 1
    return float(loss.detach()), extra


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------


def fit_normalization(patches, records, max_patches: int = 256):
    """Channel stats from a prefix of the pretraining patches."""
    sample = [patches.get(r) for r in records[:max_patches]]
    return aug.channel_stats(sample)


def run_pretrain(cfg: RunConfig, patches, out_dir=None, monitor=None,
                 state: PretrainState | None = None) -> PretrainState:
    """Train from scratch or continue a resumed state.

    patches: MemoryPatchSet or DiskPatchSet over a pretrain manifest.
    monitor: optional (bank_arrays, bank_labels, query_arrays, query_labels)
    for the end-of-epoch weighted kNN probe.  out_dir, when given, receives
    config.echo, metrics.csv and ckpt_<step>.bin files.
    """
    if cfg.deterministic:
        torch.set_num_threads(1)
    records = [r for r in patches.manifest.records if r.split == "pretrain"]
    if len(records) < cfg.batch_size:
        raise ValueError(f"{len(records)} pretrain patches < batch size {cfg.batch_size}")
    if state is None:
        norm_mean, norm_std = fit_normalization(patches, records)
        state = init_pretrain(cfg, norm_mean, norm_std)
    aug_cfg = aug.AugmentConfig(crop_size=cfg.crop_size)
    dtype = _torch_dtype(cfg.dtype)
    steps_per_epoch = len(records) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .config import format_config_text
        (out / "config.echo").write_text(format_config_text(flatten_run_config(cfg)))

    t0 = time.time()
    for epoch in range(state.next_epoch, cfg.epochs):
        from .dataio import epoch_batches
        position = 0
        last_loss = None
        for batch in epoch_batches(records, cfg.batch_size, cfg.seeds.data, epoch):
            arrays = [patches.get(r) for r in batch]
            views, _ = assemble_views(arrays, cfg.strategy, aug_cfg,
                                      cfg.seeds.augment, epoch, position)
            tensors = views_to_tensors(views, state.norm_mean, state.norm_std, dtype)
            lr = cosine_lr(state.step, total_steps, cfg.lr)
            loss, extra = pretrain_step(state, tensors, lr)
            wall = 0.0 if cfg.deterministic else time.time() - t0
            # extra terms (group loss, mixture gate) ride along in memory;
            # the serialized csv keeps the fixed six-column schema
            row = {"step": state.step, "epoch": epoch, "loss": loss,
                   "knn_acc": None, "lr": lr, "wall_time": wall, **extra}
            state.metrics.append(row)
            last_loss = loss
            position += cfg.batch_size
        state.next_epoch = epoch + 1
        if monitor is not None and state.metrics:
            acc = knn_monitor_accuracy(state, monitor)
            state.metrics[-1]["knn_acc"] = acc
            log.info("epoch %d loss %.4f knn %.3f", epoch, last_loss, acc)
        else:
            log.info("epoch %d loss %s", epoch, last_loss)
        if out is not None:
            boundary = (epoch + 1) % cfg.checkpoint_interval == 0
            if boundary or epoch + 1 == cfg.epochs:
                save_checkpoint(out / f"ckpt_{state.step}.bin", checkpoint_payload(state))
            (out / "metrics.csv").write_text(format_metrics_csv(state.metrics))
    if out is not None:
        (out / "metrics.csv").write_text(format_metrics_csv(state.metrics))
    return state


def checkpoint_payload(state: PretrainState) -> dict:
    return {
        "config": flatten_run_config(state.cfg),
        "step": state.step,
        "next_epoch": state.next_epoch,
        "model_q": state.model_q.state_dict(),
        "model_k": state.model_k.state_dict(),
        "queue": state.queue.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "norm_mean": state.norm_mean,
        "norm_std": state.norm_std,
        "metrics": state.metrics,
    }


def restore_state(payload: dict, cfg: RunConfig | None = None) -> PretrainState:
    """Rebuild a PretrainState from a checkpoint payload."""
    from .config import build_run_config

    if cfg is None:
        flat = {k: v for k, v in payload["config"].items() if k != "preset"}
        cfg = build_run_config(flat)
    state = init_pretrain(cfg, payload["norm_mean"], payload["norm_std"])
    state.model_q.load_state_dict(payload["model_q"])
    state.model_k.load_state_dict(payload["model_k"])
    state.queue.load_state_dict(payload["queue"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.step = payload["step"]
    state.next_epoch = payload["next_epoch"]
    state.metrics = list(payload["metrics"])
    return state


# ---------------------------------------------------------------------------
# kNN monitor
# ---------------------------------------------------------------------------

ENCODE_BATCH = 128


def encode_pooled(model: torch.nn.Module, arrays: np.ndarray, norm_mean, norm_std,
                  dtype=torch.float32, l2: bool = True) -> torch.Tensor:
    """Backbone GAP features for a uint8 NHWC stack, batched, no grad."""
    was_training = model.training
    model.eval()
    feats = []
    with torch.no_grad():
        for start in range(0, len(arrays), ENCODE_BATCH):
            chunk = arrays[start:start + ENCODE_BATCH]
            x = torch.from_numpy(aug.normalize_stack(chunk, norm_mean, norm_std)).to(dtype)
            f = model.pooled(x)
            if l2:
                f = torch.nn.functional.normalize(f, dim=1)
            feats.append(f)
    if was_training:
        model.train()
    return torch.cat(feats)


def knn_monitor_accuracy(state: PretrainState, monitor) -> float:
    from .evaluation import weighted_knn_predict

    bank_arrays, bank_labels, query_arrays, query_labels = monitor
    dtype = _torch_dtype(state.cfg.dtype)
    bank = encode_pooled(state.model_q, bank_arrays, state.norm_mean,
                         state.norm_std, dtype)
    query = encode_pooled(state.model_q, query_arrays, state.norm_mean,
                          state.norm_std, dtype)
    pred = weighted_knn_predict(bank, np.asarray(bank_labels), query,
                                k=state.cfg.knn_k, t=state.cfg.knn_t)
    return float((pred == np.asarray(query_labels)).mean())
