"""Per-batch local clustering and the cross-level group discrimination loss.

Each training step clusters the group-branch embeddings of the current batch
with spherical k-means (cosine similarity).  Cluster assignments are found
under no_grad; centroids entering the loss are then recomputed from the
embeddings as a differentiable normalized scatter-mean, so gradients flow
into the features while the hard assignment acts as a locally constant
index.

One branch's features are scored against the other branch's centroids: the
positive is the centroid of the cluster the counterpart feature fell in,
all remaining centroids of that branch are negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class CLDConfig:
    weight: float = 0.25   # lambda on the group term
    clusters: int = 32
    iters: int = 10

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"cld weight must be >= 0, got {self.weight}")
        if self.clusters < 2:
            raise ValueError(f"clusters must be >= 2, got {self.clusters}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")


def inertia(x: torch.Tensor, cents: torch.Tensor, assign: torch.Tensor) -> float:
    """Sum of (1 - cosine similarity) of each point to its centroid."""
    return float((1.0 - (x * cents[assign]).sum(dim=1)).sum())


def _farthest_point_init(x: torch.Tensor, k: int, gen: torch.Generator) -> torch.Tensor:
    """k starting centroids: a random point, then greedy min-similarity picks."""
    n = x.shape[0]
    first = int(torch.randint(n, (1,), generator=gen))
    chosen = [first]
    best_sim = x @ x[first]
    for _ in range(k - 1):
        nxt = int(torch.argmin(best_sim))
        chosen.append(nxt)
        best_sim = torch.maximum(best_sim, x @ x[nxt])
    return x[chosen].clone()


def _lloyd(x: torch.Tensor, k_eff: int, iters: int, gen: torch.Generator):
    """One Lloyd run; returns (centroids, assignments, inertia trace).

    The trace holds the inertia after every assignment step, so it is
    non-increasing: the mean-update step optimizes centroids for a fixed
    assignment, reseeding an empty cluster touches no assigned point, and
    the reassignment step can only improve each point's own term.
    """
    cents = _farthest_point_init(x, k_eff, gen)
    assign = torch.argmax(x @ cents.t(), dim=1)
    trace = [inertia(x, cents, assign)]
    for _ in range(iters):
        sums = torch.zeros_like(cents)
        sums.index_add_(0, assign, x)
        counts = torch.bincount(assign, minlength=k_eff)
        empty = counts == 0
        if empty.any():
            # reseed empty clusters with the worst-fitting points
            fit = (x * cents[assign]).sum(dim=1)
            worst = torch.argsort(fit)[: int(empty.sum())]
            sums[empty] = x[worst]
            counts = counts.clone()
            counts[empty] = 1
        cents = F.normalize(sums / counts[:, None].to(sums.dtype), dim=1)
        assign = torch.argmax(x @ cents.t(), dim=1)
        trace.append(inertia(x, cents, assign))
    return cents, assign, trace


EXACT_SEARCH_LIMIT = 10000  # max k**n for the exhaustive tiny-instance path


def _exact_tiny(x: torch.Tensor, k_eff: int):
    """Globally optimal clustering by assignment enumeration.

    For a fixed assignment the best unit centroid of a cluster is its
    normalized vector sum, giving inertia n_c - |sum|; minimizing that over
    all k**n assignments is exact and cheap for tiny batches.
    """
    import itertools

    n = x.shape[0]
    xs = x.numpy()
    best_assign, best_val = None, None
    for assign in itertools.product(range(k_eff), repeat=n):
        total = 0.0
        for c in set(assign):
            members = [i for i in range(n) if assign[i] == c]
            s = xs[members].sum(axis=0)
            total += len(members) - float((s @ s) ** 0.5)
        if best_val is None or total < best_val - 1e-12:
            best_val = total
            best_assign = assign
    assign = torch.as_tensor(best_assign, dtype=torch.long)
    cents = torch.zeros(k_eff, x.shape[1], dtype=x.dtype)
    cents.index_add_(0, assign, x)
    counts = torch.bincount(assign, minlength=k_eff).clamp(min=1)
    cents = F.normalize(cents / counts[:, None].to(cents.dtype), dim=1)
    return cents, assign, [inertia(x, cents, assign)]


def kmeans_cosine(x: torch.Tensor, k: int, iters: int = 10, seed: int = 0,
                  restarts: int = 1, return_history: bool = False):
    """Spherical k-means on unit-norm rows; returns (centroids, assignments).

    Runs detached from autograd.  The effective cluster count is
    min(k, n_points).  Tiny instances (search space k**n below
    EXACT_SEARCH_LIMIT) are solved exactly by enumeration; larger ones use
    Lloyd iteration, keeping the best of `restarts` runs by final inertia.
    Any cluster still empty at the end is dropped and assignments
    reindexed, so every returned centroid owns at least one point.  With
    return_history=True the per-assignment inertia trace of the winning run
    is returned as a third value.
    """
    if x.shape[0] == 0:
        raise ValueError("cannot cluster an empty batch")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    x = x.detach()
    n = x.shape[0]
    k_eff = min(k, n)
    best = None
    with torch.no_grad():
        if k_eff ** n <= EXACT_SEARCH_LIMIT:
            best = _exact_tiny(x, k_eff)
        else:
            for r in range(restarts):
                gen = torch.Generator().manual_seed(seed + 7919 * r)
                cents, assign, trace = _lloyd(x, k_eff, iters, gen)
                if best is None or trace[-1] < best[2][-1]:
                    best = (cents, assign, trace)
        cents, assign, trace = best
        counts = torch.bincount(assign, minlength=k_eff)
        if (counts == 0).any():
            keep = torch.nonzero(counts > 0, as_tuple=False).squeeze(1)
            remap = torch.full((k_eff,), -1, dtype=torch.long)
            remap[keep] = torch.arange(keep.shape[0])
            cents = cents[keep]
            assign = remap[assign]
    if return_history:
        return cents, assign, trace
    return cents, assign


def centroids_from_assignments(x: torch.Tensor, assign: torch.Tensor,
                               n_clusters: int) -> torch.Tensor:
    """Normalized per-cluster mean, differentiable in x."""
    sums = torch.zeros(n_clusters, x.shape[1], dtype=x.dtype, device=x.device)
    sums = sums.index_add(0, assign, x)
    counts = torch.bincount(assign, minlength=n_clusters).clamp(min=1)
    return F.normalize(sums / counts[:, None].to(sums.dtype), dim=1)


def cluster_batch(g: torch.Tensor, k: int, iters: int,
                  seed: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Assignments via detached k-means, centroids via differentiable recompute."""
    _, assign = kmeans_cosine(g, k, iters=iters, seed=seed)
    n_clusters = int(assign.max()) + 1
    cents = centroids_from_assignments(g, assign, n_clusters)
    return cents, assign


def group_loss(g: torch.Tensor, other_centroids: torch.Tensor,
               other_assign: torch.Tensor, tau_g: float) -> torch.Tensor:
    """Cross-entropy of each feature against the counterpart's centroids.

    The positive for row i is the centroid of the cluster the counterpart
    branch assigned instance i to; the other centroids are the negatives.
    """
    if tau_g <= 0:
        raise ValueError(f"temperature must be positive, got {tau_g}")
    logits = (g @ other_centroids.t()) / tau_g
    return F.cross_entropy(logits, other_assign)


def dual_branch_cld(g1: torch.Tensor, g2: torch.Tensor, k: int, iters: int,
                    tau_g: float, seed: int) -> torch.Tensor:
    """Symmetric two-branch group loss with branch-specific clustering seeds."""
    c1, a1 = cluster_batch(g1, k, iters, seed)
    c2, a2 = cluster_batch(g2, k, iters, seed + 1)
    return 0.5 * (group_loss(g1, c2, a2, tau_g) + group_loss(g2, c1, a1, tau_g))


def total_cld_loss(q1: torch.Tensor, q2: torch.Tensor, k_pos: torch.Tensor,
                   negatives: torch.Tensor, tau_q: float,
                   g1: torch.Tensor | None, g2: torch.Tensor | None,
                   clusters: int, iters: int, tau_g: float, weight: float,
                   seed: int) -> tuple[torch.Tensor, float | None]:
    """Symmetric instance loss plus weighted dual-branch group loss.

    At weight 0 the group branch is skipped outright, so the result (and
    the backward graph) collapses exactly to the symmetric instance
    average.  Returns (loss, group term value or None).
    """
    from .contrastive import info_nce_loss

    inst = 0.5 * (info_nce_loss(q1, k_pos, negatives, tau_q)
                  + info_nce_loss(q2, k_pos, negatives, tau_q))
    if weight <= 0:
        return inst, None
    if g1 is None or g2 is None:
        raise ValueError("group embeddings required when weight > 0")
    group = dual_branch_cld(g1, g2, clusters, iters, tau_g, seed)
    return inst + weight * group, float(group.detach())
