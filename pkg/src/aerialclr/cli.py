"""Command-line entry point.

Verbs: synth, tile, build-downstream, pretrain, probe, finetune, knn,
report.  Shared flags --config/--seed/--out/--desk work on every verb;
AERIALCLR_* environment variables override config-file values, explicit
flags override both.  Exit code 0 on success, 1 on any validation or
runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataio, evaluation, report, synth, tiling, trainer

log = logging.getLogger(__name__)


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="path to a key = value config file")
    parser.add_argument("--seed", type=int, help="base seed for all RNG streams")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--desk", action="store_true",
                        help="scaled-down settings for quick CPU runs")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aerialclr",
                                description="contrastive pretraining on aerial patches")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate synthetic frames")
    _common(sp)
    sp.add_argument("--frames", type=int, default=200)
    sp.add_argument("--frame-size", type=int, default=512)
    sp.add_argument("--density", type=float, default=1.2,
                    help="mean annotated objects per frame")

    sp = sub.add_parser("tile", help="cut an unlabeled pretraining patch set")
    _common(sp)
    sp.add_argument("--frames", required=True, help="directory of frame PNGs")
    sp.add_argument("--size", type=int, default=256)
    sp.add_argument("--per-frame", type=int, default=4)
    sp.add_argument("--overlap", type=float, default=0.5)
    sp.add_argument("--no-grid", action="store_true",
                    help="skip the overlap grid on annotated frames")

    sp = sub.add_parser("build-downstream", help="cut the labeled long-tail set")
    _common(sp)
    sp.add_argument("--frames", required=True)
    sp.add_argument("--fg-size", type=int, default=224)
    sp.add_argument("--bg-size", type=int, default=512)
    sp.add_argument("--ratio", type=float, default=18.0,
                    help="train background per foreground (denominator)")

    sp = sub.add_parser("pretrain", help="run contrastive pretraining")
    _common(sp)
    sp.add_argument("--data", required=True, help="pretraining patch directory")
    sp.add_argument("--preset", choices=sorted(cfgmod.PRESETS))
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float, dest="lr_initial")
    sp.add_argument("--gamma", type=float, help="geometric loss weight")
    sp.add_argument("--mix-p", type=float, help="per-batch mixture probability")
    sp.add_argument("--beta", type=float, help="Beta concentration for mixing")
    sp.add_argument("--lam", type=float, help="group loss weight")
    sp.add_argument("--clusters", type=int)
    sp.add_argument("--monitor", help="labeled patch dir for the kNN monitor")

    for name, help_ in (("probe", "linear probe on frozen features"),
                        ("finetune", "end-to-end fine-tuning"),
                        ("knn", "weighted kNN evaluation")):
        sp = sub.add_parser(name, help=help_)
        _common(sp)
        sp.add_argument("--ckpt", required=True, help="checkpoint file")
        sp.add_argument("--data", required=True, help="labeled patch directory")
        sp.add_argument("--fraction", type=float, default=1.0)
        sp.add_argument("--run-id", help="row id, defaults to ckpt directory name")
        sp.add_argument("--split", default="test", choices=("val", "test"))
        if name == "knn":
            sp.add_argument("--k", type=int, default=20)
            sp.add_argument("--t", type=float, default=0.02)

    sp = sub.add_parser("report", help="render curves and results table")
    _common(sp)
    sp.add_argument("--runs", nargs="+", required=True, help="run directories")
    sp.add_argument("--results", help="results.csv path")
    return p


# ---------------------------------------------------------------------------
# config assembly
# ---------------------------------------------------------------------------

_CLI_KEYS = ("preset", "epochs", "batch_size", "lr_initial", "mix_gamma",
             "mix_p", "mix_alpha", "cld_weight", "cld_clusters",
             "label_fraction")


def _cli_layer(args) -> dict:
    seen = vars(args)
    layer = {}
    mapping = {
        "preset": "preset", "epochs": "epochs", "batch_size": "batch_size",
        "lr_initial": "lr_initial", "gamma": "mix_gamma", "mix_p": "mix_p",
        "beta": "mix_alpha", "lam": "cld_weight", "clusters": "cld_clusters",
        "fraction": "label_fraction",
    }
    for arg_name, key in mapping.items():
        if seen.get(arg_name) is not None:
            layer[key] = seen[arg_name]
    if seen.get("seed") is not None:
        s = seen["seed"]
        layer.update({"seed_data": s, "seed_augment": s + 1,
                      "seed_init": s + 2, "seed_kmeans": s + 3})
    return layer


def effective_flat(args) -> dict:
    file_values = cfgmod.load_config_file(args.config) if args.config else {}
    return cfgmod.resolve(file_values=file_values, cli=_cli_layer(args),
                          desk=bool(getattr(args, "desk", False)))


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# command bodies
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    seed = args.seed if args.seed is not None else 0
    cfg = synth.SynthConfig(n_frames=args.frames, frame_w=args.frame_size,
                            frame_h=args.frame_size,
                            animals_per_frame=args.density)
    frames = synth.synth_generate(cfg, seed)
    out = _out_dir(args, "frames")
    dataio.save_frames(frames, out)
    n_boxes = sum(len(f.annotations) for f in frames)
    n_annotated = sum(1 for f in frames if f.annotations)
    print(f"wrote {len(frames)} frames ({n_annotated} annotated, "
          f"{n_boxes} boxes) to {out}")
    return 0


def cmd_tile(args) -> int:
    seed = args.seed if args.seed is not None else 0
    frames = dataio.load_frames(args.frames)
    manifest = tiling.build_pretrain_set(
        frames, patches_per_frame=args.per_frame, size=args.size,
        overlap_on_annotated=not args.no_grid,
        rng=np.random.default_rng(seed), overlap_fraction=args.overlap)
    manifest.seed = seed
    out = _out_dir(args, "pretrain_patches")
    dataio.extract_patches(frames, manifest, out)
    print(f"wrote {len(manifest.records)} pretrain patches to {out}")
    return 0


def cmd_build_downstream(args) -> int:
    seed = args.seed if args.seed is not None else 0
    frames = dataio.load_frames(args.frames)
    manifest = tiling.build_downstream_set(
        frames, fg_size=args.fg_size, bg_size=args.bg_size,
        ratio_fg_bg=1.0 / args.ratio,
        split_seeds=(seed, seed + 1, seed + 2))
    out = _out_dir(args, "downstream_patches")
    dataio.extract_patches(frames, manifest, out)
    counts = manifest.counts()
    print(f"wrote {len(manifest.records)} labeled patches to {out}")
    for split in ("train", "val", "test"):
        c = counts.get(split, {})
        print(f"  {split}: fg={c.get(tiling.FOREGROUND, 0)} "
              f"bg={c.get(tiling.BACKGROUND, 0)}")
    return 0


def cmd_pretrain(args) -> int:
    flat = effective_flat(args)
    cfg = cfgmod.build_run_config(flat)
    patches = dataio.DiskPatchSet(args.data)
    monitor = None
    if args.monitor:
        mon = dataio.DiskPatchSet(args.monitor)
        crop = flat.get("eval_crop", cfg.crop_size)
        _, bank_arr, bank_lab = evaluation.eval_split_arrays(mon, "train", crop)
        _, q_arr, q_lab = evaluation.eval_split_arrays(mon, "val", crop)
        monitor = (bank_arr, bank_lab, q_arr, q_lab)
    out = _out_dir(args, "run")
    state = trainer.run_pretrain(cfg, patches, out_dir=out, monitor=monitor)
    print(f"pretrained {cfg.strategy} for {cfg.epochs} epochs "
          f"({state.step} steps); artifacts in {out}")
    return 0


def _load_eval_bundle(args):
    payload = dataio.load_checkpoint(args.ckpt)
    flat_ckpt = {k: v for k, v in payload["config"].items() if k != "preset"}
    cfg = cfgmod.build_run_config(flat_ckpt)
    state = trainer.restore_state(payload, cfg)
    flat_args = effective_flat(args)
    flat_args.setdefault("eval_crop", cfg.crop_size)
    if getattr(args, "desk", False):
        flat_args["eval_crop"] = cfgmod.desk_overrides()["eval_crop"]
    ev = cfgmod.build_eval_config(flat_args)
    patches = dataio.DiskPatchSet(args.data)
    run_id = args.run_id or Path(args.ckpt).parent.name
    return state, ev, patches, run_id


def _emit_results(args, run_id: str, mode: str, metrics, records, true, pred) -> int:
    out = _out_dir(args, "results")
    dataio.append_results(out / "results.csv", [{
        "run_id": run_id, "mode": mode, "fraction": args.fraction,
        "top1": metrics.top1, "prec_fg": metrics.prec_fg,
        "rec_fg": metrics.rec_fg,
    }])
    dataio.write_predictions(out / f"preds_{run_id}_{mode}.csv", records,
                             evaluation.labels_to_strings(true),
                             evaluation.labels_to_strings(pred))
    print(f"{run_id} {mode} fraction={args.fraction:g}: "
          f"top1={100 * metrics.top1:.1f} prec_fg={100 * metrics.prec_fg:.1f} "
          f"rec_fg={100 * metrics.rec_fg:.1f}")
    if metrics.zero_positive_predictions:
        print("warning: zero positive predictions; foreground precision is 0")
    return 0


def cmd_probe(args) -> int:
    state, ev, patches, run_id = _load_eval_bundle(args)
    metrics, records, true, pred = evaluation.linear_probe(
        state.model_q, patches, ev, state.norm_mean, state.norm_std,
        seed=args.seed or 0, test_split=args.split)
    return _emit_results(args, run_id, "probe", metrics, records, true, pred)


def cmd_finetune(args) -> int:
    state, ev, patches, run_id = _load_eval_bundle(args)
    metrics, records, true, pred = evaluation.finetune(
        state.model_q, patches, ev, state.norm_mean, state.norm_std,
        seed=args.seed or 0, test_split=args.split)
    return _emit_results(args, run_id, "finetune", metrics, records, true, pred)


def cmd_knn(args) -> int:
    state, ev, patches, run_id = _load_eval_bundle(args)
    metrics, records, true, pred = evaluation.knn_evaluate(
        state.model_q, patches, ev, state.norm_mean, state.norm_std,
        k=args.k, t=args.t, seed=args.seed or 0, test_split=args.split)
    return _emit_results(args, run_id, "knn", metrics, records, true, pred)


def cmd_report(args) -> int:
    out = _out_dir(args, "report")
    paths = report.build_report(args.runs, args.results, out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "tile": cmd_tile,
    "build-downstream": cmd_build_downstream,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "finetune": cmd_finetune,
    "knn": cmd_knn,
    "report": cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
