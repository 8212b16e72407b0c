"""End-to-end acceptance checks, one numbered test per shipping criterion.

Each test prints a single `criterion NN PASS` line on success (visible with
`pytest -s`); under `pytest -v` the test name itself is the pass/fail line.
Criteria 07 and 08 share one desk-scale training fixture and together take
the bulk of the runtime; everything else finishes in seconds.
"""

import collections
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from aerialclr import synth, tiling, trainer
from aerialclr.cld import (
    dual_branch_cld,
    group_loss,
    cluster_batch,
    kmeans_cosine,
    total_cld_loss,
)
from aerialclr.config import (
    EvalConfig,
    SeedPack,
    build_run_config,
    resolve,
)
from aerialclr.contrastive import FeatureQueue, info_nce_loss, momentum_update
from aerialclr.dataio import MemoryPatchSet, load_checkpoint
from aerialclr.encoders import build_encoder
from aerialclr.evaluation import linear_probe, weighted_knn_predict
from aerialclr.mixgeo import geo_weighted_loss, mixture_loss
from aerialclr.trainer import restore_state

torch.set_num_threads(1)


def _unit_np(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _unit_t(rng, n, d):
    return torch.from_numpy(_unit_np(rng, n, d))


# ---------------------------------------------------------------------------
# independent oracles (pure python, no torch ops shared with the library)
# ---------------------------------------------------------------------------


def _softmax_ce_row(logits, target):
    mx = max(logits)
    lse = mx + math.log(sum(math.exp(l - mx) for l in logits))
    return lse - logits[target]


def oracle_info_nce(q, k, negs, tau):
    total = 0.0
    for i in range(len(q)):
        logits = [sum(a * b for a, b in zip(q[i], k[i])) / tau]
        for neg in negs:
            logits.append(sum(a * b for a, b in zip(q[i], neg)) / tau)
        total += _softmax_ce_row(logits, 0)
    return total / len(q)


def oracle_group(g, cents, assign, tau):
    total = 0.0
    for i in range(len(g)):
        logits = [sum(a * b for a, b in zip(g[i], c)) / tau for c in cents]
        total += _softmax_ce_row(logits, assign[i])
    return total / len(g)


class TestCriterion01LossOracles:
    def test_01_loss_value_oracles(self):
        start = time.time()
        rng = np.random.default_rng(10)
        for trial in range(100):
            n = int(rng.integers(2, 8))
            d = int(rng.integers(3, 8))
            nk = int(rng.integers(1, 12))
            tau = float(rng.uniform(0.05, 1.0))
            q1 = _unit_t(rng, n, d)
            q2 = _unit_t(rng, n, d)
            k = _unit_t(rng, n, d)
            negs = _unit_t(rng, nk, d)

            want = oracle_info_nce(q1.numpy(), k.numpy(), negs.numpy(), tau)
            got = float(info_nce_loss(q1, k, negs, tau))
            assert abs(got - want) < 1e-10

            gamma = float(rng.uniform(0, 1))
            l1 = info_nce_loss(q1, k, negs, tau)
            l2 = info_nce_loss(q2, k, negs, tau)
            want = gamma * float(l1) + (1 - gamma) * float(l2)
            assert abs(float(geo_weighted_loss(l1, l2, gamma)) - want) < 1e-10

            lam = float(rng.uniform(0, 1))
            want = lam * oracle_info_nce(q1.numpy(), k.numpy(), negs.numpy(), tau) \
                + (1 - lam) * oracle_info_nce(q2.numpy(), k.numpy(), negs.numpy(), tau)
            got = float(mixture_loss(q1, q2, k, negs, lam, tau))
            assert abs(got - want) < 1e-10

            g1 = _unit_t(rng, n, d)
            g2 = _unit_t(rng, n, d)
            kcl = int(rng.integers(1, min(4, n) + 1))
            seed = int(rng.integers(0, 1000))
            c1, a1 = cluster_batch(g1, kcl, 5, seed)
            c2, a2 = cluster_batch(g2, kcl, 5, seed + 1)
            want = oracle_group(g1.numpy(), c2.detach().numpy(),
                                a2.numpy(), 2 * tau)
            got = float(group_loss(g1, c2, a2, 2 * tau))
            assert abs(got - want) < 1e-10

            want_dual = 0.5 * (
                oracle_group(g1.numpy(), c2.detach().numpy(), a2.numpy(), 2 * tau)
                + oracle_group(g2.numpy(), c1.detach().numpy(), a1.numpy(), 2 * tau))
            got_dual = float(dual_branch_cld(g1, g2, kcl, 5, 2 * tau, seed))
            assert abs(got_dual - want_dual) < 1e-10

            lam_w = float(rng.uniform(0.05, 1.0))
            inst = 0.5 * (oracle_info_nce(q1.numpy(), k.numpy(), negs.numpy(), tau)
                          + oracle_info_nce(q2.numpy(), k.numpy(), negs.numpy(), tau))
            want_tot = inst + lam_w * want_dual
            got_tot, _ = total_cld_loss(q1, q2, k, negs, tau, g1, g2, kcl, 5,
                                        2 * tau, lam_w, seed)
            assert abs(float(got_tot) - want_tot) < 1e-10
        elapsed = time.time() - start
        assert elapsed < 10.0, f"oracle sweep took {elapsed:.1f}s"
        print(f"\ncriterion 01 PASS loss values match brute-force oracles "
              f"to 1e-10 ({elapsed:.1f}s)")


class TestCriterion02BoundaryCollapses:
    def test_02_boundary_collapses(self):
        rng = np.random.default_rng(20)
        for _ in range(25):
            n, d, nk = 5, 6, 9
            q1, q2 = _unit_t(rng, n, d), _unit_t(rng, n, d)
            k, negs = _unit_t(rng, n, d), _unit_t(rng, nk, d)
            g1, g2 = _unit_t(rng, n, d), _unit_t(rng, n, d)

            # group weight 0 reduces to the plain symmetric instance average
            tot, gval = total_cld_loss(q1, q2, k, negs, 0.2, None, None, 2, 5,
                                       0.4, 0.0, seed=3)
            sym = 0.5 * (float(info_nce_loss(q1, k, negs, 0.2))
                         + float(info_nce_loss(q2, k, negs, 0.2)))
            assert gval is None
            assert abs(float(tot) - sym) < 1e-10

            # branch weight at the ends selects a single branch
            l1 = info_nce_loss(q1, k, negs, 0.2)
            l2 = info_nce_loss(q2, k, negs, 0.2)
            assert abs(float(geo_weighted_loss(l1, l2, 1.0)) - float(l1)) < 1e-10
            assert abs(float(geo_weighted_loss(l1, l2, 0.0)) - float(l2)) < 1e-10

            # mixture weight at the ends reproduces the pure-view losses
            assert abs(float(mixture_loss(q1, q2, k, negs, 1.0, 0.2))
                       - float(l1)) < 1e-10
            assert abs(float(mixture_loss(q1, q2, k, negs, 0.0, 0.2))
                       - float(l2)) < 1e-10
        print("\ncriterion 02 PASS boundary weights collapse to single-branch "
              "losses to 1e-10")


class _ToyEncoder(torch.nn.Module):
    """Two-layer tanh net with unit-norm outputs, float64 across."""

    def __init__(self, d_in, d_h, d_out, seed):
        super().__init__()
        torch.manual_seed(seed)
        self.l1 = torch.nn.Linear(d_in, d_h).double()
        self.l2 = torch.nn.Linear(d_h, d_out).double()

    def forward(self, x):
        z = self.l2(torch.tanh(self.l1(x)))
        return torch.nn.functional.normalize(z, dim=1)


def _flat_params(model):
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


def _set_flat_params(model, flat):
    i = 0
    for p in model.parameters():
        n = p.numel()
        with torch.no_grad():
            p.copy_(flat[i:i + n].reshape(p.shape))
        i += n


class TestCriterion03GradientCheck:
    def _loss_value(self, kind, enc, data):
        q1 = enc(data["x1"])
        q2 = enc(data["x2"])
        if kind == "info_nce":
            return info_nce_loss(q1, data["k"], data["negs"], 0.3)
        if kind == "geo":
            return geo_weighted_loss(info_nce_loss(q1, data["k"], data["negs"], 0.3),
                                     info_nce_loss(q2, data["k"], data["negs"], 0.3),
                                     0.7)
        if kind == "mixture":
            return mixture_loss(q1, q2, data["k"], data["negs"], 0.35, 0.3)
        if kind == "group":
            return dual_branch_cld(q1, q2, 2, 5, 0.5, seed=11)
        tot, _ = total_cld_loss(q1, q2, data["k"], data["negs"], 0.3,
                                q1, q2, 2, 5, 0.5, 0.4, seed=11)
        return tot

    def test_03_gradients_match_finite_differences(self):
        start = time.time()
        kinds = ["info_nce", "geo", "mixture", "group", "total_cld"]
        n_configs = 0
        for cfg_i in range(20):
            kind = kinds[cfg_i % len(kinds)]
            rng = np.random.default_rng(300 + cfg_i)
            enc = _ToyEncoder(d_in=6, d_h=5, d_out=4, seed=cfg_i)
            data = {
                "x1": torch.from_numpy(rng.standard_normal((5, 6))),
                "x2": torch.from_numpy(rng.standard_normal((5, 6))),
                "k": _unit_t(rng, 5, 4),
                "negs": _unit_t(rng, 7, 4),
            }
            loss = self._loss_value(kind, enc, data)
            loss.backward()
            grad = torch.cat([p.grad.reshape(-1) for p in enc.parameters()]).clone()

            p0 = _flat_params(enc)
            h = 1e-6
            fd = torch.zeros_like(p0)
            for j in range(len(p0)):
                pp = p0.clone()
                pp[j] += h
                _set_flat_params(enc, pp)
                with torch.no_grad():
                    up = float(self._loss_value(kind, enc, data))
                pp[j] -= 2 * h
                _set_flat_params(enc, pp)
                with torch.no_grad():
                    dn = float(self._loss_value(kind, enc, data))
                fd[j] = (up - dn) / (2 * h)
            _set_flat_params(enc, p0)

            denom = torch.clamp(grad.abs() + fd.abs(), min=1e-6)
            rel = ((grad - fd).abs() / denom).max()
            assert float(rel) < 1e-4, f"{kind} cfg{cfg_i}: rel err {float(rel):.2e}"
            n_configs += 1
        elapsed = time.time() - start
        assert n_configs >= 20
        assert elapsed < 60.0, f"gradient sweep took {elapsed:.1f}s"
        print(f"\ncriterion 03 PASS autograd matches central differences "
              f"< 1e-4 on {n_configs} configs ({elapsed:.1f}s)")


class TestCriterion04MocoMechanics:
    def test_04a_queue_fifo_against_deque(self):
        rng = np.random.default_rng(40)
        cap, d = 96, 8
        queue = FeatureQueue(cap, d, dtype=torch.float64)
        mirror = collections.deque(maxlen=cap)
        for _ in range(1000):
            n = int(rng.integers(1, 33))
            batch = _unit_t(rng, n, d)
            queue.push(batch)
            mirror.extend(batch.numpy())
            negs = queue.negatives().numpy()
            assert queue.feats.shape == (cap, d)
            np.testing.assert_allclose(negs, np.array(mirror), atol=1e-12)
        print("\ncriterion 04a PASS queue is capacity-bound FIFO over 1000 "
              "randomized pushes")

    def test_04b_key_params_never_touched_by_optimizer(self):
        scfg = synth.SynthConfig(n_frames=3, frame_w=64, frame_h=64,
                                 animals_per_frame=0.0)
        frames = synth.synth_generate(scfg, 5)
        man = tiling.build_pretrain_set(frames, patches_per_frame=8, size=32,
                                        overlap_on_annotated=False,
                                        rng=np.random.default_rng(6))
        patches = MemoryPatchSet(frames, man)
        flat = resolve(file_values={
            "strategy": "moco_v2", "backbone": "desk_cnn", "epochs": 3,
            "batch_size": 8, "queue_size": 16, "feat_dim": 8, "hidden_dim": 16,
            "crop_size": 16, "momentum": 1.0, "lr_initial": 0.1,
            "checkpoint_interval": 50}, env={})
        cfg = build_run_config(flat)
        cfg.seeds = SeedPack(1, 2, 3, 4)
        state = trainer.init_pretrain(cfg, np.full(3, 0.5), np.full(3, 0.25))
        k0 = {n: p.detach().clone() for n, p in state.model_k.named_parameters()}
        q0 = {n: p.detach().clone() for n, p in state.model_q.named_parameters()}
        st = trainer.run_pretrain(cfg, patches, state=state)
        # with momentum 1.0 the blend is the identity, so any change to the
        # key parameters could only have come from the optimizer
        for n, p in st.model_k.named_parameters():
            assert torch.equal(p.detach(), k0[n]), n
        moved = any(not torch.equal(p.detach(), q0[n])
                    for n, p in st.model_q.named_parameters())
        assert moved
        print("\ncriterion 04b PASS optimizer delta on key encoder is exactly "
              "zero every step")

    def test_04c_key_params_equal_closed_form_blend(self):
        m = 0.999
        torch.manual_seed(77)
        lin_q = torch.nn.Linear(6, 4).double()
        lin_k = torch.nn.Linear(6, 4).double()
        lin_k.load_state_dict(lin_q.state_dict())
        hist = [[p.detach().clone() for p in lin_q.parameters()]]
        for step in range(50):
            with torch.no_grad():
                for p in lin_q.parameters():
                    p.add_(torch.randn_like(p) * 0.01)
            hist.append([p.detach().clone() for p in lin_q.parameters()])
            momentum_update(lin_q, lin_k, m)
        T = 50
        for idx, p_k in enumerate(lin_k.parameters()):
            want = hist[0][idx] * m ** T
            for t in range(1, T + 1):
                want = want + (1 - m) * m ** (T - t) * hist[t][idx]
            assert float((p_k.detach() - want).abs().max()) < 1e-8
        print("\ncriterion 04c PASS key weights equal the exponential blend of "
              "query history to 1e-8 over 50 steps")


class TestCriterion05KMeans:
    def test_05a_inertia_never_increases(self):
        rng = np.random.default_rng(50)
        for trial in range(100):
            n = int(rng.integers(24, 64))
            d = int(rng.integers(3, 10))
            k = int(rng.integers(2, 9))
            x = _unit_t(rng, n, d)
            _, _, trace = kmeans_cosine(x, k, iters=8, seed=trial,
                                        return_history=True)
            assert len(trace) > 1
            for a, b in zip(trace, trace[1:]):
                assert b <= a + 1e-9, f"trial {trial}: inertia rose {a} -> {b}"
        print("\ncriterion 05a PASS inertia non-increasing on 100 instances")

    def test_05b_tiny_instances_reach_enumeration_optimum(self):
        rng = np.random.default_rng(51)
        for trial in range(100):
            n = int(rng.integers(3, 9))
            k = int(rng.integers(1, 4))
            d = int(rng.integers(2, 6))
            x = _unit_t(rng, n, d)
            cents, assign = kmeans_cosine(x, k, iters=10, seed=trial)
            got = float((1.0 - (x * cents[assign]).sum(dim=1)).sum())
            best = math.inf
            for combo in itertools.product(range(min(k, n)), repeat=n):
                cost = 0.0
                for c in set(combo):
                    members = x[[i for i, a in enumerate(combo) if a == c]]
                    s = members.sum(dim=0)
                    cost += len(members) - float(s.norm())
                best = min(best, cost)
            assert got <= best + 1e-9, f"trial {trial}: {got} vs optimum {best}"
        print("\ncriterion 05b PASS assignments reach the enumeration optimum "
              "on all instances with n <= 8, k <= 3")


class TestCriterion06KnnMonitor:
    def test_06_knn_monitor(self):
        rng = np.random.default_rng(60)
        anchor = np.zeros(10)
        anchor[0] = 1.0
        bank = np.concatenate([anchor + 0.03 * rng.standard_normal((50, 10)),
                               -anchor + 0.03 * rng.standard_normal((50, 10))])
        bank = torch.from_numpy(bank / np.linalg.norm(bank, axis=1, keepdims=True))
        labels = np.array([1] * 50 + [0] * 50)
        q = np.concatenate([anchor + 0.03 * rng.standard_normal((20, 10)),
                            -anchor + 0.03 * rng.standard_normal((20, 10))])
        q = torch.from_numpy(q / np.linalg.norm(q, axis=1, keepdims=True))
        pred = weighted_knn_predict(bank, labels, q, k=20, t=0.02)
        assert (pred == np.array([1] * 20 + [0] * 20)).all()

        for trial in range(50):
            rng = np.random.default_rng(600 + trial)
            n = int(rng.integers(22, 60))
            nq = int(rng.integers(2, 15))
            d = int(rng.integers(3, 9))
            bank = _unit_t(rng, n, d)
            query = _unit_t(rng, nq, d)
            labels = rng.integers(0, 3, n)
            got = weighted_knn_predict(bank, labels, query, k=20, t=0.02)
            k_eff = min(20, n)
            want = []
            for qi in query.numpy():
                sims = [float(np.dot(qi, b)) for b in bank.numpy()]
                order = sorted(range(n), key=lambda j: -sims[j])[:k_eff]
                votes = {}
                for j in order:
                    votes[labels[j]] = votes.get(labels[j], 0.0) \
                        + math.exp(sims[j] / 0.02)
                want.append(max(sorted(votes), key=lambda c: votes[c]))
            assert (got == np.array(want)).all()
        print("\ncriterion 06 PASS kNN monitor is perfect on separable "
              "embeddings and matches the brute-force oracle")


# ---------------------------------------------------------------------------
# desk-scale experiment shared by criteria 07 and 08
# ---------------------------------------------------------------------------

DESK_SYNTH = dict(n_frames=200, frame_w=512, frame_h=512,
                  animals_per_frame=2.0, trees_per_frame=120.0,
                  animal_axis_range=(8.0, 16.0), tree_radius_range=(3.0, 10.0),
                  texture_sigma=5.0, hetero_strength=1.2)
DESK_PATCHES_PER_FRAME = 16
DESK_PATCH = 64
DESK_SEEDS = (0, 1, 2)
DESK_PRESETS = ("moco_v2", "moco_cld", "moco_geo", "geocld", "mixco")


@pytest.fixture(scope="session")
def desk_protocol():
    """Pretrain every preset over 3 seeds, probe at 10% labels, plus baseline."""
    scfg = synth.SynthConfig(**DESK_SYNTH)
    frames = synth.synth_generate(scfg, 50)
    pre_man = tiling.build_pretrain_set(frames,
                                        patches_per_frame=DESK_PATCHES_PER_FRAME,
                                        size=DESK_PATCH,
                                        overlap_on_annotated=False,
                                        rng=np.random.default_rng(51))
    pre = MemoryPatchSet(frames, pre_man)
    down_man = tiling.build_downstream_set(frames, fg_size=64, bg_size=96,
                                           ratio_fg_bg=1.0 / 18.0,
                                           split_seeds=(52, 53, 54))
    down = MemoryPatchSet(frames, down_man)
    ev = EvalConfig(probe_epochs=40, probe_batch=128, probe_lr=30.0,
                    label_fraction=0.1, eval_crop=64)
    mean, std = trainer.fit_normalization(pre, pre.manifest.records)

    base_accs = []
    for s in DESK_SEEDS:
        model = build_encoder("desk_cnn", feat_dim=128, hidden_dim=512,
                              seed=3000 + s)
        m, _, _, _ = linear_probe(model, down, ev, mean, std, seed=s)
        base_accs.append(m.top1)

    preset_accs = {}
    for preset in DESK_PRESETS:
        accs = []
        for s in DESK_SEEDS:
            flat = resolve(file_values={"preset": preset}, env={}, desk=True)
            cfg = build_run_config(flat)
            cfg.seeds = SeedPack(1000 + s, 2000 + s, 3000 + s, 4000 + s)
            st = trainer.run_pretrain(cfg, pre)
            m, _, _, _ = linear_probe(st.model_q, down, ev, st.norm_mean,
                                      st.norm_std, seed=s)
            accs.append(m.top1)
        preset_accs[preset] = accs

    return {"baseline": base_accs, "presets": preset_accs,
            "down_manifest": down_man, "pre_manifest": pre_man}


class TestCriterion07DeskMargin:
    def test_07_pretraining_beats_random_baseline(self, desk_protocol):
        base = float(np.mean(desk_protocol["baseline"]))
        lines = [f"baseline {100 * base:.1f}"]
        worst = math.inf
        for preset, accs in desk_protocol["presets"].items():
            mean_acc = float(np.mean(accs))
            margin = 100.0 * (mean_acc - base)
            worst = min(worst, margin)
            lines.append(f"{preset} {100 * mean_acc:.1f} ({margin:+.1f})")
        summary = ", ".join(lines)
        assert worst >= 15.0, f"margin {worst:.1f} < 15 points [{summary}]"
        print(f"\ncriterion 07 PASS every preset beats the frozen random "
              f"baseline by >= 15 points [{summary}]")


class TestCriterion08TrendOrdering:
    def test_08_trend_ordering_soft(self, desk_protocol):
        means = {p: 100 * float(np.mean(a))
                 for p, a in desk_protocol["presets"].items()}
        warnings = []
        if means["mixco"] < means["moco_v2"] - 2.0:
            warnings.append(f"mixco {means['mixco']:.1f} < moco_v2 "
                            f"{means['moco_v2']:.1f} - 2")
        if means["geocld"] < means["moco_v2"] - 2.0:
            warnings.append(f"geocld {means['geocld']:.1f} < moco_v2 "
                            f"{means['moco_v2']:.1f} - 2")
        order = " ".join(f"{p}={means[p]:.1f}" for p in DESK_PRESETS)
        if warnings:
            print(f"\ncriterion 08 SOFT WARNING ordering off at desk scale: "
                  f"{'; '.join(warnings)} [{order}]")
        else:
            print(f"\ncriterion 08 PASS ordering holds within 2 points "
                  f"[{order}]")


class TestCriterion09Determinism:
    def _tiny_setup(self):
        scfg = synth.SynthConfig(n_frames=4, frame_w=96, frame_h=96,
                                 animals_per_frame=0.5,
                                 animal_axis_range=(3.0, 6.0),
                                 tree_radius_range=(3.0, 8.0))
        frames = synth.synth_generate(scfg, 9)
        man = tiling.build_pretrain_set(frames, patches_per_frame=10, size=48,
                                        overlap_on_annotated=False,
                                        rng=np.random.default_rng(10))
        patches = MemoryPatchSet(frames, man)
        flat = resolve(file_values={
            "strategy": "geocld", "backbone": "desk_cnn", "epochs": 4,
            "batch_size": 8, "queue_size": 24, "feat_dim": 16, "hidden_dim": 32,
            "crop_size": 32, "cld_clusters": 3, "cld_iters": 4,
            "lr_initial": 0.05, "checkpoint_interval": 1}, env={})
        cfg = build_run_config(flat)
        cfg.seeds = SeedPack(5, 6, 7, 8)
        return patches, cfg

    def test_09_determinism_and_resume(self, tmp_path):
        patches, cfg = self._tiny_setup()
        st1 = trainer.run_pretrain(cfg, patches, out_dir=tmp_path / "a")
        st2 = trainer.run_pretrain(cfg, patches, out_dir=tmp_path / "b")
        bytes_a = (tmp_path / "a" / "metrics.csv").read_bytes()
        bytes_b = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert bytes_a == bytes_b
        for (n1, p1), (n2, p2) in zip(st1.model_q.state_dict().items(),
                                      st2.model_q.state_dict().items()):
            assert n1 == n2 and torch.equal(p1, p2), n1

        ckpts = sorted((tmp_path / "a").glob("ckpt_*.bin"),
                       key=lambda p: int(p.stem.split("_")[1]))
        payload = load_checkpoint(ckpts[1])
        mid = restore_state(payload)
        assert mid.next_epoch == 2
        st3 = trainer.run_pretrain(mid.cfg, patches, state=mid)
        for (n1, p1), (n3, p3) in zip(st1.model_q.state_dict().items(),
                                      st3.model_q.state_dict().items()):
            assert torch.equal(p1, p3), n1
        tail1 = [r["loss"] for r in st1.metrics if r["epoch"] >= 2]
        tail3 = [r["loss"] for r in st3.metrics if r["epoch"] >= 2]
        assert tail1 == tail3
        assert torch.equal(st1.queue.feats, st3.queue.feats)
        print("\ncriterion 09 PASS byte-identical reruns and bitwise "
              "checkpoint-resume equivalence")


class TestCriterion10DatasetInvariants:
    def test_10_manifest_invariants(self, desk_protocol):
        for build_seed in (101, 202):
            scfg = synth.SynthConfig(n_frames=30, frame_w=256, frame_h=256,
                                     animals_per_frame=2.0,
                                     animal_axis_range=(5.0, 10.0))
            frames = synth.synth_generate(scfg, build_seed)
            pre_man = tiling.build_pretrain_set(
                frames, patches_per_frame=3, size=96,
                overlap_on_annotated=True,
                rng=np.random.default_rng(build_seed + 1))
            pre_man.validate()
            text = pre_man.to_csv()
            assert tiling.FOREGROUND not in text
            assert tiling.BACKGROUND not in text
            assert all(r.label is None for r in pre_man.records)

            down = tiling.build_downstream_set(
                frames, fg_size=64, bg_size=96, ratio_fg_bg=1.0 / 18.0,
                split_seeds=(build_seed, build_seed + 1, build_seed + 2))
            down.validate()
            counts = down.counts()
            fg = counts["train"][tiling.FOREGROUND]
            bg = counts["train"][tiling.BACKGROUND]
            assert bg == round(fg * 18.0)
            frames_by_split = {}
            for r in down.records:
                frames_by_split.setdefault(r.split, set()).add(r.frame_id)
            for a, b in itertools.combinations(frames_by_split.values(), 2):
                assert not (a & b)

        desk_down = desk_protocol["down_manifest"]
        c = desk_down.counts()
        assert c["train"][tiling.BACKGROUND] == round(
            c["train"][tiling.FOREGROUND] * 18.0)
        desk_text = desk_protocol["pre_manifest"].to_csv()
        assert tiling.FOREGROUND not in desk_text
        assert tiling.BACKGROUND not in desk_text
        print("\ncriterion 10 PASS split disjointness, 1/18 recount, and no "
              "label strings in pretrain manifests")
