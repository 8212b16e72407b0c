"""Disk formats and data plumbing.

Frames are PNG files plus an annotations.csv (frame_id,x,y,w,h).  Patch
datasets are a directory of <patch_id>.png files plus manifest.csv and a
manifest.json sidecar with build metadata.  Training artifacts are a
metrics.csv log, results.csv rows, per-run prediction files, and versioned
binary checkpoints with a magic header.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .tiling import BoundingBox, DatasetManifest, PatchRecord, SourceFrame

# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

ANNOTATION_COLUMNS = ("frame_id", "x", "y", "w", "h")


def save_frames(frames: list[SourceFrame], out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        if frame.pixel_data is None:
            raise ValueError(f"frame {frame.frame_id} has no pixel data")
        Image.fromarray(frame.pixel_data).save(out / f"{frame.frame_id}.png")
    with open(out / "annotations.csv", "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(ANNOTATION_COLUMNS)
        for frame in frames:
            for box in frame.annotations:
                writer.writerow([frame.frame_id, box.x, box.y, box.w, box.h])


def load_frames(frame_dir) -> list[SourceFrame]:
    d = Path(frame_dir)
    ann_path = d / "annotations.csv"
    boxes: dict[str, list[BoundingBox]] = {}
    if ann_path.exists():
        with open(ann_path, newline="") as f:
            for row in csv.DictReader(f):
                boxes.setdefault(row["frame_id"], []).append(
                    BoundingBox(x=int(row["x"]), y=int(row["y"]),
                                w=int(row["w"]), h=int(row["h"])))
    frames = []
    for png in sorted(d.glob("*.png")):
        pixels = np.asarray(Image.open(png).convert("RGB"))
        fid = png.stem
        frames.append(SourceFrame(frame_id=fid, width=pixels.shape[1],
                                  height=pixels.shape[0], pixel_data=pixels,
                                  annotations=boxes.get(fid, [])))
    if not frames:
        raise FileNotFoundError(f"no .png frames under {d}")
    return frames


# ---------------------------------------------------------------------------
# patch pixel access
# ---------------------------------------------------------------------------


def cut_patch(frame: SourceFrame, rec: PatchRecord) -> np.ndarray:
    if frame.pixel_data is None:
        raise ValueError(f"frame {frame.frame_id} has no pixel data")
    return frame.pixel_data[rec.off_y:rec.off_y + rec.h, rec.off_x:rec.off_x + rec.w]


class MemoryPatchSet:
    """Patches cut straight from in-memory frames, cached per patch_id."""

    def __init__(self, frames: list[SourceFrame], manifest: DatasetManifest):
        self.frames = {f.frame_id: f for f in frames}
        self.manifest = manifest
        self._cache: dict[str, np.ndarray] = {}

    def get(self, rec: PatchRecord) -> np.ndarray:
        hit = self._cache.get(rec.patch_id)
        if hit is None:
            hit = np.ascontiguousarray(cut_patch(self.frames[rec.frame_id], rec))
            self._cache[rec.patch_id] = hit
        return hit


class DiskPatchSet:
    """Patches read lazily from <patch_id>.png files."""

    def __init__(self, patch_dir, manifest: DatasetManifest | None = None,
                 cache: bool = True):
        self.dir = Path(patch_dir)
        if manifest is None:
            manifest = DatasetManifest.load(self.dir / "manifest.csv")
        self.manifest = manifest
        self._cache: dict[str, np.ndarray] | None = {} if cache else None

    def get(self, rec: PatchRecord) -> np.ndarray:
        if self._cache is not None and rec.patch_id in self._cache:
            return self._cache[rec.patch_id]
        path = self.dir / f"{rec.patch_id}.png"
        arr = np.asarray(Image.open(path).convert("RGB"))
        if arr.shape[:2] != (rec.h, rec.w):
            raise ValueError(f"patch {rec.patch_id}: file {arr.shape[:2]} vs "
                             f"manifest {(rec.h, rec.w)}")
        if self._cache is not None:
            self._cache[rec.patch_id] = arr
        return arr


def extract_patches(frames: list[SourceFrame], manifest: DatasetManifest, out_dir):
    """Write every patch as <patch_id>.png plus manifest.csv / manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_id = {f.frame_id: f for f in frames}
    for rec in manifest.records:
        Image.fromarray(cut_patch(by_id[rec.frame_id], rec)).save(
            out / f"{rec.patch_id}.png")
    manifest.save(out / "manifest.csv", out / "manifest.json")


# ---------------------------------------------------------------------------
# epoch iteration
# ---------------------------------------------------------------------------


def epoch_order(n: int, data_seed: int, epoch: int) -> np.ndarray:
    """Per-epoch shuffle order, deterministic in (data_seed, epoch)."""
    rng = np.random.default_rng(np.random.SeedSequence([data_seed, epoch]))
    return rng.permutation(n)


def epoch_batches(records: list, batch_size: int, data_seed: int, epoch: int,
                  drop_last: bool = True):
    """Yield shuffled record batches; short tail dropped when drop_last."""
    order = epoch_order(len(records), data_seed, epoch)
    for start in range(0, len(records), batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            return
        yield [records[int(i)] for i in idx]


# ---------------------------------------------------------------------------
# metrics / results files
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("step", "epoch", "loss", "knn_acc", "lr", "wall_time")
RESULT_COLUMNS = ("run_id", "mode", "fraction", "top1", "prec_fg", "rec_fg")


def format_metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    for row in rows:
        out = []
        for col in METRIC_COLUMNS:
            v = row.get(col)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        writer.writerow(out)
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as f:
        for raw in csv.DictReader(f):
            rows.append({
                "step": int(raw["step"]),
                "epoch": int(raw["epoch"]),
                "loss": float(raw["loss"]),
                "knn_acc": float(raw["knn_acc"]) if raw["knn_acc"] else None,
                "lr": float(raw["lr"]),
                "wall_time": float(raw["wall_time"]),
            })
    return rows


def append_results(path, rows: list[dict]):
    path = Path(path)
    new_file = not path.exists()
    with open(path, "a", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if new_file:
            writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in RESULT_COLUMNS])


def read_results(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = []
        for raw in csv.DictReader(f):
            rows.append({
                "run_id": raw["run_id"],
                "mode": raw["mode"],
                "fraction": float(raw["fraction"]),
                "top1": float(raw["top1"]),
                "prec_fg": float(raw["prec_fg"]),
                "rec_fg": float(raw["rec_fg"]),
            })
    return rows


def write_predictions(path, records: list, true_labels: list[str],
                      pred_labels: list[str]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["patch_id", "true_label", "pred_label"])
        for rec, t, p in zip(records, true_labels, pred_labels):
            writer.writerow([rec.patch_id, t, p])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"ACLRCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, payload: dict):
    """Magic header + version word + serialized payload."""
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(buf.getvalue())


def load_checkpoint(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        return torch.load(io.BytesIO(f.read()), weights_only=False)
