"""Cropping of large source frames into patch datasets.

Two dataset flavours are produced: an unlabeled pretraining set (random
crops, optionally densified with an overlapping grid on frames that contain
annotated objects) and an image-level-labeled downstream set with a
frame-level train/val/test split, foreground crops around annotation boxes
and verified object-free background crops.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

FOREGROUND = "foreground"
BACKGROUND = "background"
UNLABELED = "unlabeled"

SPLITS = ("pretrain", "train", "val", "test")

MANIFEST_COLUMNS = ("patch_id", "frame_id", "off_x", "off_y", "w", "h", "label", "split")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in frame pixel coordinates."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {self}")

    @property
    def x1(self) -> int:
        return self.x + self.w

    @property
    def y1(self) -> int:
        return self.y + self.h

    def intersects(self, x: int, y: int, w: int, h: int) -> bool:
        """True if the box overlaps rectangle (x, y, w, h) with positive area."""
        return not (x >= self.x1 or x + w <= self.x or y >= self.y1 or y + h <= self.y)


@dataclass
class SourceFrame:
    """One large source image plus optional object annotations."""

    frame_id: str
    width: int
    height: int
    pixel_data: np.ndarray | None = None  # H x W x 3 uint8; may be lazy-loaded elsewhere
    annotations: list[BoundingBox] = field(default_factory=list)

    def __post_init__(self):
        if self.pixel_data is not None:
            h, w = self.pixel_data.shape[:2]
            if (w, h) != (self.width, self.height):
                raise ValueError(
                    f"frame {self.frame_id}: pixel data {w}x{h} does not match "
                    f"declared size {self.width}x{self.height}"
                )
        for box in self.annotations:
            if box.x < 0 or box.y < 0 or box.x1 > self.width or box.y1 > self.height:
                raise ValueError(f"frame {self.frame_id}: box {box} outside frame")


@dataclass(frozen=True)
class PatchRecord:
    """One cropped patch with provenance and optional image-level label."""

    patch_id: str
    frame_id: str
    off_x: int
    off_y: int
    w: int
    h: int
    label: str = UNLABELED
    split: str = "pretrain"

    def __post_init__(self):
        if self.label not in (FOREGROUND, BACKGROUND, UNLABELED):
            raise ValueError(f"unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.split == "pretrain" and self.label != UNLABELED:
            raise ValueError(f"pretrain patch {self.patch_id} must be unlabeled")


@dataclass
class DatasetManifest:
    """Complete description of one patch dataset."""

    records: list[PatchRecord]
    split_ratios: dict[str, float] = field(default_factory=dict)
    fg_bg_ratio: float | None = None
    seed: int | tuple | None = None
    skipped: list[dict] = field(default_factory=list)

    def by_split(self, split: str) -> list[PatchRecord]:
        return [r for r in self.records if r.split == split]

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for r in self.records:
            out.setdefault(r.split, {}).setdefault(r.label, 0)
            out[r.split][r.label] += 1
        return out

    # ---- serialization -------------------------------------------------

    def to_csv(self) -> str:
        """Render the record table as CSV (unlabeled serialized as empty)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for r in self.records:
            label = "" if r.label == UNLABELED else r.label
            writer.writerow([r.patch_id, r.frame_id, r.off_x, r.off_y, r.w, r.h, label, r.split])
        return buf.getvalue()

    def save(self, csv_path, meta_path=None):
        with open(csv_path, "w", newline="") as f:
            f.write(self.to_csv())
        if meta_path is not None:
            meta = {
                "split_ratios": self.split_ratios,
                "fg_bg_ratio": self.fg_bg_ratio,
                "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
                "counts": self.counts(),
                "skipped": self.skipped,
            }
            with open(meta_path, "w") as f:
                json.dump(meta, f, indent=2, sort_keys=True)
                f.write("\n")

    @classmethod
    def load(cls, csv_path) -> "DatasetManifest":
        records = []
        with open(csv_path, newline="") as f:
            reader = csv.DictReader(f)
            missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"manifest {csv_path} missing columns {sorted(missing)}")
            for row in reader:
                records.append(
                    PatchRecord(
                        patch_id=row["patch_id"],
                        frame_id=row["frame_id"],
                        off_x=int(row["off_x"]),
                        off_y=int(row["off_y"]),
                        w=int(row["w"]),
                        h=int(row["h"]),
                        label=row["label"] or UNLABELED,
                        split=row["split"],
                    )
                )
        return cls(records=records)

    # ---- validation ----------------------------------------------------

    def validate(self, frames: dict[str, tuple[int, int]] | None = None):
        """Check structural invariants; raises ValueError on violation.

        frames maps frame_id -> (width, height) when geometry should be checked.
        """
        seen = set()
        split_of_frame: dict[str, str] = {}
        for r in self.records:
            if r.patch_id in seen:
                raise ValueError(f"duplicate patch_id {r.patch_id}")
            seen.add(r.patch_id)
            if frames is not None:
                fw, fh = frames[r.frame_id]
                if r.off_x < 0 or r.off_y < 0 or r.off_x + r.w > fw or r.off_y + r.h > fh:
                    raise ValueError(f"patch {r.patch_id} outside frame {r.frame_id}")
            if r.split in ("train", "val", "test"):
                prev = split_of_frame.setdefault(r.frame_id, r.split)
                if prev != r.split:
                    raise ValueError(
                        f"frame {r.frame_id} appears in both {prev} and {r.split}"
                    )


# ---------------------------------------------------------------------------
# cropping operations
# ---------------------------------------------------------------------------


def random_crop_patches(frame: SourceFrame, n: int, size: int,
                        rng: np.random.Generator) -> list[PatchRecord]:
    """n square patches with offsets drawn uniformly over all legal placements."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if size > frame.width or size > frame.height:
        raise ValueError(
            f"crop size {size} exceeds frame {frame.frame_id} "
            f"({frame.width}x{frame.height})"
        )
    xs = rng.integers(0, frame.width - size + 1, size=n)
    ys = rng.integers(0, frame.height - size + 1, size=n)
    return [
        PatchRecord(
            patch_id=f"{frame.frame_id}-r{i:03d}",
            frame_id=frame.frame_id,
            off_x=int(xs[i]),
            off_y=int(ys[i]),
            w=size,
            h=size,
        )
        for i in range(n)
    ]


def grid_stride(size: int, overlap_fraction: float) -> int:
    if not 0 <= overlap_fraction < 1:
        raise ValueError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    stride = int(round(size * (1.0 - overlap_fraction)))
    if stride < 1:
        raise ValueError(
            f"overlap {overlap_fraction} with size {size} yields zero stride"
        )
    return stride


def overlap_crop_patches(frame: SourceFrame, size: int,
                         overlap_fraction: float) -> list[PatchRecord]:
    """Row-major grid of patches, left to right then top to bottom.

    Placements start at multiples of the stride; a placement is emitted only
    when the whole patch lies inside the frame.
    """
    if size > frame.width or size > frame.height:
        raise ValueError(
            f"crop size {size} exceeds frame {frame.frame_id} "
            f"({frame.width}x{frame.height})"
        )
    stride = grid_stride(size, overlap_fraction)
    xs = range(0, frame.width - size + 1, stride)
    ys = range(0, frame.height - size + 1, stride)
    records = []
    i = 0
    for y in ys:
        for x in xs:
            records.append(
                PatchRecord(
                    patch_id=f"{frame.frame_id}-g{i:04d}",
                    frame_id=frame.frame_id,
                    off_x=x,
                    off_y=y,
                    w=size,
                    h=size,
                )
            )
            i += 1
    return records


def grid_patch_count(frame_w: int, frame_h: int, size: int, stride: int) -> int:
    """Closed-form patch count of the overlap grid."""
    return ((frame_w - size) // stride + 1) * ((frame_h - size) // stride + 1)


# ---------------------------------------------------------------------------
# dataset builders
# ---------------------------------------------------------------------------


def build_pretrain_set(frames: list[SourceFrame], patches_per_frame: int, size: int,
                       overlap_on_annotated: bool, rng: np.random.Generator,
                       overlap_fraction: float = 0.5) -> DatasetManifest:
    """Unlabeled pretraining manifest: random crops everywhere, plus an
    overlapping grid on frames that carry annotations (when enabled).

    No label or box information is propagated into the output records.
    """
    if not frames:
        raise ValueError("no frames given")
    frame_seeds = rng.integers(0, 2**63 - 1, size=len(frames))
    records: list[PatchRecord] = []
    for frame, seed in zip(frames, frame_seeds):
        frame_rng = np.random.default_rng(int(seed))
        records.extend(random_crop_patches(frame, patches_per_frame, size, frame_rng))
        if overlap_on_annotated and frame.annotations:
            records.extend(overlap_crop_patches(frame, size, overlap_fraction))
    return DatasetManifest(records=records, split_ratios={"pretrain": 1.0})


def split_frames(frames: list[SourceFrame], seed: int,
                 ratios=(0.8, 0.1, 0.1)) -> dict[str, list[SourceFrame]]:
    """Frame-level train/val/test partition (no frame crosses splits)."""
    order = np.random.default_rng(seed).permutation(len(frames))
    n = len(frames)
    n_val = max(1, int(round(ratios[1] * n)))
    n_test = max(1, int(round(ratios[2] * n)))
    if n_val + n_test >= n:
        raise ValueError(f"too few frames ({n}) for a {ratios} split")
    val_idx = set(order[:n_val].tolist())
    test_idx = set(order[n_val:n_val + n_test].tolist())
    out = {"train": [], "val": [], "test": []}
    for i, frame in enumerate(frames):
        if i in val_idx:
            out["val"].append(frame)
        elif i in test_idx:
            out["test"].append(frame)
        else:
            out["train"].append(frame)
    return out


def _fg_crop_for_box(frame: SourceFrame, box: BoundingBox, size: int,
                     rng: np.random.Generator) -> tuple[int, int] | None:
    """Uniform offset such that the crop fully contains the box, or None."""
    if box.w > size or box.h > size:
        return None
    x_lo = max(0, box.x1 - size)
    x_hi = min(frame.width - size, box.x)
    y_lo = max(0, box.y1 - size)
    y_hi = min(frame.height - size, box.y)
    if x_lo > x_hi or y_lo > y_hi:
        return None
    return int(rng.integers(x_lo, x_hi + 1)), int(rng.integers(y_lo, y_hi + 1))


def _sample_background(frames: list[SourceFrame], n: int, size: int,
                       rng: np.random.Generator, max_attempts_per_crop: int = 200):
    """n crops of the given size verified to intersect no annotation box."""
    usable = [f for f in frames if f.width >= size and f.height >= size]
    if not usable:
        raise ValueError(f"no frame large enough for background size {size}")
    offsets = []
    attempts_left = max_attempts_per_crop * n
    while len(offsets) < n:
        if attempts_left <= 0:
            raise ValueError(
                f"could not place {n} background crops of size {size} "
                f"(annotations too dense or frames too small)"
            )
        attempts_left -= 1
        frame = usable[int(rng.integers(len(usable)))]
        x = int(rng.integers(0, frame.width - size + 1))
        y = int(rng.integers(0, frame.height - size + 1))
        if any(box.intersects(x, y, size, size) for box in frame.annotations):
            continue
        offsets.append((frame, x, y))
    return offsets


def build_downstream_set(frames: list[SourceFrame], fg_size: int = 224,
                         bg_size: int = 512, ratio_fg_bg: float = 1 / 18,
                         split_seeds: tuple[int, int, int] = (0, 1, 2),
                         frame_split_seed: int | None = None,
                         crops_per_box: int = 1) -> DatasetManifest:
    """Image-level-labeled long-tail downstream manifest.

    Frames are split 8:1:1 before any cropping.  Foreground crops contain a
    whole annotation box each; background crops are geometrically verified
    to intersect no box.  The train split keeps fg:bg at ratio_fg_bg, val
    and test are balanced.  Each split uses its own seed so crop positions
    differ across splits.
    """
    if ratio_fg_bg <= 0:
        raise ValueError(f"ratio_fg_bg must be positive, got {ratio_fg_bg}")
    if len(split_seeds) != 3:
        raise ValueError("split_seeds must hold exactly three seeds")
    if frame_split_seed is None:
        seq = np.random.SeedSequence(list(split_seeds))
        frame_split_seed = int(seq.generate_state(1, np.uint64)[0] % 2**32)
    parts = split_frames(frames, frame_split_seed)
    for split_name, split_frames_ in parts.items():
        if not any(f.annotations for f in split_frames_):
            raise ValueError(f"split {split_name!r} contains no annotated frame")

    records: list[PatchRecord] = []
    skipped: list[dict] = []
    for split_name, seed in zip(("train", "val", "test"), split_seeds):
        split_rng = np.random.default_rng(seed)
        part = parts[split_name]
        n_fg = 0
        for frame in part:
            for bi, box in enumerate(frame.annotations):
                for ci in range(crops_per_box):
                    offset = _fg_crop_for_box(frame, box, fg_size, split_rng)
                    if offset is None:
                        skipped.append({
                            "frame_id": frame.frame_id,
                            "box": [box.x, box.y, box.w, box.h],
                            "reason": f"box does not fit in {fg_size}px crop",
                            "split": split_name,
                        })
                        log.warning("skipping box %s on %s: larger than fg crop",
                                    box, frame.frame_id)
                        continue
                    records.append(PatchRecord(
                        patch_id=f"{frame.frame_id}-f{bi:03d}{ci:02d}",
                        frame_id=frame.frame_id,
                        off_x=offset[0], off_y=offset[1],
                        w=fg_size, h=fg_size,
                        label=FOREGROUND, split=split_name,
                    ))
                    n_fg += 1
        if n_fg == 0:
            raise ValueError(f"split {split_name!r}: every annotation box was skipped")
        n_bg = int(round(n_fg / ratio_fg_bg)) if split_name == "train" else n_fg
        placements = _sample_background(part, n_bg, bg_size, split_rng)
        for i, (frame, x, y) in enumerate(placements):
            records.append(PatchRecord(
                patch_id=f"{frame.frame_id}-b{i:05d}",
                frame_id=frame.frame_id,
                off_x=x, off_y=y, w=bg_size, h=bg_size,
                label=BACKGROUND, split=split_name,
            ))
    return DatasetManifest(
        records=records,
        split_ratios={"train": 0.8, "val": 0.1, "test": 0.1},
        fg_bg_ratio=ratio_fg_bg,
        seed=tuple(split_seeds),
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# label subsampling
# ---------------------------------------------------------------------------


def stratified_keep_indices(labels: list[str], fraction: float,
                            rng: np.random.Generator) -> list[int]:
    """Indices retained by per-class subsampling: ceil(fraction * n) each."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    keep: list[int] = []
    for cls in sorted(set(labels)):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        n_keep = math.ceil(fraction * len(idx))
        chosen = rng.choice(len(idx), size=n_keep, replace=False)
        keep.extend(idx[int(c)] for c in chosen)
    return sorted(keep)


def subsample_labels(manifest: DatasetManifest, fraction: float,
                     rng: np.random.Generator) -> DatasetManifest:
    """Downsample the labeled train split class-stratified; other splits untouched."""
    train = manifest.by_split("train")
    if not train or all(r.label == UNLABELED for r in train):
        raise ValueError("manifest has no labeled train split")
    if fraction == 1.0:
        return replace(manifest, records=list(manifest.records))
    labels = [r.label for r in train]
    keep = set(stratified_keep_indices(labels, fraction, rng))
    if not any(train[i].label == FOREGROUND for i in keep):
        raise ValueError(f"fraction {fraction} retains zero foreground records")
    kept_train = [train[i] for i in sorted(keep)]
    others = [r for r in manifest.records if r.split != "train"]
    return replace(manifest, records=kept_train + others)
