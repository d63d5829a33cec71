"""Clip/landmark/label containers, preprocessing, and on-disk persistence.

Datasets live under a root directory as::

    root/
      labels.csv                     # header: subject_id,clip_id,hr_bpm
      <subject_id>/<clip_id>/
        frames.bin                   # raw little-endian float32, C-order, C x T x H x W
        meta.json                    # fps and array dimensions
        landmarks.json               # static or per-frame 68-point landmarks

The layout is codec-free and bit-exact: writing a dataset and loading it
back reproduces pixels exactly and metadata field-for-field. Synthetic
and ingested data share the same layout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import torch
import torch.nn.functional as F

from .rois import N_LANDMARKS

META_KEYS = {"fps", "channels", "frames", "height", "width", "subject_id", "clip_id"}
LABELS_HEADER = ["subject_id", "clip_id", "hr_bpm"]


class DatasetError(Exception):
    """Base class for dataset layout/validation failures."""


class MissingMetadataError(DatasetError):
    pass


class InvalidMetadataError(DatasetError):
    pass


class LandmarkMismatchError(DatasetError):
    pass


class UnknownClipLabelError(DatasetError):
    """labels.csv references a clip that does not exist on disk."""


class MissingLabelError(DatasetError):
    """A clip directory exists but labels.csv has no row for it."""


@dataclass
class Clip:
    """A video clip: channels x frames x height x width, values in [0, 1]."""

    pixels: np.ndarray
    fps: float
    subject_id: str = ""
    video_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 4 or self.pixels.shape[0] != 3:
            raise ValueError(f"expected (3, T, H, W) pixels, got {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise ValueError("pixels contain non-finite values")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
        if not (self.fps > 0):
            raise ValueError("fps must be positive")
        self.fps = float(self.fps)

    @property
    def n_frames(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[2]

    @property
    def width(self) -> int:
        return self.pixels.shape[3]


@dataclass
class LandmarkSet:
    """68-point landmarks, either one static set or one set per frame."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 2:
            shape_ok = self.points.shape == (N_LANDMARKS, 2)
        elif self.points.ndim == 3:
            shape_ok = self.points.shape[1:] == (N_LANDMARKS, 2)
        else:
            shape_ok = False
        if not shape_ok:
            raise ValueError(
                f"landmarks must be ({N_LANDMARKS}, 2) or (T, {N_LANDMARKS}, 2), "
                f"got {self.points.shape}"
            )
        if not np.isfinite(self.points).all():
            raise ValueError("landmark coordinates must be finite")

    @property
    def per_frame(self) -> bool:
        return self.points.ndim == 3

    @property
    def n_frames(self) -> int | None:
        return self.points.shape[0] if self.per_frame else None

    def points_for_frame(self, t: int) -> np.ndarray:
        return self.points[t] if self.per_frame else self.points

    def validate_for(self, clip: Clip):
        if self.per_frame and self.points.shape[0] != clip.n_frames:
            raise LandmarkMismatchError(
                f"clip {clip.video_id!r}: {self.points.shape[0]} landmark frames "
                f"for {clip.n_frames} video frames"
            )
        xs, ys = self.points[..., 0], self.points[..., 1]
        if xs.min() < 0 or ys.min() < 0 or xs.max() > clip.width or ys.max() > clip.height:
            raise LandmarkMismatchError(
                f"clip {clip.video_id!r}: landmark coordinates outside frame bounds"
            )


@dataclass(frozen=True)
class HrLabel:
    hr_bpm: float
    subject_id: str
    clip_id: str

    def __post_init__(self):
        if not (math.isfinite(self.hr_bpm) and 0.0 < self.hr_bpm < 300.0):
            raise ValueError(f"hr_bpm must be finite and in (0, 300), got {self.hr_bpm}")


@dataclass(frozen=True)
class SplitSpec:
    train_subjects: frozenset[str]
    test_subjects: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "train_subjects", frozenset(self.train_subjects))
        object.__setattr__(self, "test_subjects", frozenset(self.test_subjects))
        if not self.train_subjects or not self.test_subjects:
            raise ValueError("both split sides must be non-empty")
        overlap = self.train_subjects & self.test_subjects
        if overlap:
            raise ValueError(f"split is not subject-exclusive: {sorted(overlap)}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resample_fps(clip: Clip, target_fps: float) -> Clip:
    """Nearest-frame resampling to a new frame rate (no interpolation)."""
    if not (target_fps > 0):
        raise ValueError("target_fps must be positive")
    n_out = _round_half_up(clip.n_frames * target_fps / clip.fps)
    if n_out < 2:
        raise ValueError(
            f"resampling {clip.n_frames} frames from {clip.fps} to {target_fps} fps "
            f"would leave {n_out} frames"
        )
    idx = np.minimum(
        np.floor(np.arange(n_out) * (clip.fps / target_fps) + 0.5).astype(np.int64),
        clip.n_frames - 1,
    )
    return Clip(clip.pixels[:, idx], target_fps, clip.subject_id, clip.video_id)


def resize_pixels(pixels: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a (C, T, H, W) array to (C, T, size, size)."""
    c, t, h, w = pixels.shape
    if (h, w) == (size, size):
        return pixels.copy()
    x = torch.from_numpy(np.ascontiguousarray(pixels)).permute(1, 0, 2, 3)
    y = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    out = y.permute(1, 0, 2, 3).clamp_(0.0, 1.0).numpy()
    return np.ascontiguousarray(out)


def resize_frames(clip: Clip, size: int) -> Clip:
    if size < 8:
        raise ValueError("size must be >= 8")
    return Clip(resize_pixels(clip.pixels, size), clip.fps, clip.subject_id, clip.video_id)


def segment_clips(video: Clip, clip_len: int, overlap: int = 0) -> list[Clip]:
    """Cut a video into consecutive windows; the trailing remainder is dropped."""
    if clip_len < 1:
        raise ValueError("clip_len must be >= 1")
    if not (0 <= overlap < clip_len):
        raise ValueError("overlap must be in [0, clip_len)")
    if clip_len > video.n_frames:
        raise ValueError(
            f"clip_len {clip_len} exceeds video length {video.n_frames}"
        )
    step = clip_len - overlap
    out = []
    for k, start in enumerate(range(0, video.n_frames - clip_len + 1, step)):
        out.append(
            Clip(
                video.pixels[:, start : start + clip_len],
                video.fps,
                video.subject_id,
                f"{video.video_id}_w{k:03d}" if video.video_id else f"w{k:03d}",
            )
        )
    return out


def subject_exclusive_split(
    labels: Iterable[HrLabel], test_fraction: float, seed: int
) -> SplitSpec:
    """Partition *subjects* (never clips) into train and test sets."""
    subjects = sorted({lb.subject_id for lb in labels})
    if len(subjects) < 2:
        raise ValueError("need at least 2 distinct subjects to split")
    if not (0.0 < test_fraction < 1.0):
        raise ValueError("test_fraction must be in (0, 1)")
    n_test = max(1, _round_half_up(test_fraction * len(subjects)))
    if n_test >= len(subjects):
        raise ValueError(
            f"test_fraction {test_fraction} leaves no training subjects "
            f"({n_test} of {len(subjects)} in test)"
        )
    order = np.random.default_rng(seed).permutation(len(subjects))
    test = frozenset(subjects[i] for i in order[:n_test])
    train = frozenset(subjects[i] for i in order[n_test:])
    return SplitSpec(train_subjects=train, test_subjects=test)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _landmarks_to_json(lms: LandmarkSet) -> dict:
    if lms.per_frame:
        return {"mode": "per_frame", "frames": lms.points.tolist()}
    return {"mode": "static", "points": lms.points.tolist()}


def _landmarks_from_json(obj: dict, clip_id: str) -> LandmarkSet:
    try:
        if obj["mode"] == "static":
            return LandmarkSet(np.asarray(obj["points"], dtype=np.float64))
        if obj["mode"] == "per_frame":
            return LandmarkSet(np.asarray(obj["frames"], dtype=np.float64))
        raise KeyError("mode")
    except (KeyError, ValueError, TypeError) as exc:
        raise LandmarkMismatchError(f"clip {clip_id!r}: bad landmarks.json ({exc})") from exc


def write_dataset(items: Iterable[tuple[Clip, LandmarkSet, HrLabel]], root: str | Path):
    """Persist (clip, landmarks, label) triples under ``root``.

    Refuses to write into a root that already holds a dataset.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    labels_path = root / "labels.csv"
    if labels_path.exists():
        raise DatasetError(f"refusing to overwrite existing dataset at {root}")

    rows = []
    for clip, lms, label in items:
        if clip.video_id != label.clip_id or clip.subject_id != label.subject_id:
            raise DatasetError(
                f"clip ids {clip.subject_id}/{clip.video_id} do not match "
                f"label {label.subject_id}/{label.clip_id}"
            )
        lms.validate_for(clip)
        clip_dir = root / label.subject_id / label.clip_id
        clip_dir.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(clip.pixels, dtype="<f4").tofile(clip_dir / "frames.bin")
        meta = {
            "fps": clip.fps,
            "channels": 3,
            "frames": clip.n_frames,
            "height": clip.height,
            "width": clip.width,
            "subject_id": clip.subject_id,
            "clip_id": clip.video_id,
        }
        (clip_dir / "meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        (clip_dir / "landmarks.json").write_text(
            json.dumps(_landmarks_to_json(lms)), encoding="utf-8"
        )
        rows.append((label.subject_id, label.clip_id, label.hr_bpm))

    rows.sort()
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABELS_HEADER)
        writer.writerows(rows)


def _read_meta(clip_dir: Path, clip_id: str) -> dict:
    meta_path = clip_dir / "meta.json"
    if not meta_path.exists():
        raise MissingMetadataError(f"clip {clip_id!r}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidMetadataError(f"clip {clip_id!r}: unparseable meta.json") from exc
    if not isinstance(meta, dict) or set(meta) != META_KEYS:
        raise InvalidMetadataError(
            f"clip {clip_id!r}: meta.json keys {sorted(meta) if isinstance(meta, dict) else meta}"
            f" do not match {sorted(META_KEYS)}"
        )
    if not (isinstance(meta["fps"], (int, float)) and meta["fps"] > 0):
        raise InvalidMetadataError(f"clip {clip_id!r}: invalid fps {meta['fps']!r}")
    for key in ("channels", "frames", "height", "width"):
        if not (isinstance(meta[key], int) and meta[key] > 0):
            raise InvalidMetadataError(f"clip {clip_id!r}: invalid {key} {meta[key]!r}")
    if meta["channels"] != 3:
        raise InvalidMetadataError(f"clip {clip_id!r}: expected 3 channels")
    return meta


class DatasetIndex:
    """Random-access view of an on-disk dataset; loads clips lazily."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        labels_path = self.root / "labels.csv"
        if not labels_path.exists():
            raise DatasetError(f"no labels.csv under {self.root}")
        self.labels: dict[str, HrLabel] = {}
        with open(labels_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != LABELS_HEADER:
                raise DatasetError(
                    f"labels.csv header {reader.fieldnames} != {LABELS_HEADER}"
                )
            for row in reader:
                try:
                    label = HrLabel(
                        float(row["hr_bpm"]), row["subject_id"], row["clip_id"]
                    )
                except (TypeError, ValueError) as exc:
                    raise DatasetError(f"bad labels.csv row {row}") from exc
                if label.clip_id in self.labels:
                    raise DatasetError(f"duplicate label for clip {label.clip_id!r}")
                self.labels[label.clip_id] = label
        for label in self.labels.values():
            clip_dir = self.root / label.subject_id / label.clip_id
            if not clip_dir.is_dir():
                raise UnknownClipLabelError(
                    f"labels.csv row for {label.subject_id}/{label.clip_id} "
                    "has no clip directory"
                )
        for frames_bin in sorted(self.root.glob("*/*/frames.bin")):
            clip_id = frames_bin.parent.name
            if clip_id not in self.labels:
                raise MissingLabelError(f"clip {clip_id!r} has no row in labels.csv")
        self.clip_ids = sorted(self.labels)

    def __len__(self) -> int:
        return len(self.clip_ids)

    def subjects(self) -> list[str]:
        return sorted({lb.subject_id for lb in self.labels.values()})

    def clip_ids_for(self, subjects: Iterable[str]) -> list[str]:
        wanted = set(subjects)
        return [cid for cid in self.clip_ids if self.labels[cid].subject_id in wanted]

    def load(self, clip_id: str) -> tuple[Clip, LandmarkSet, HrLabel]:
        label = self.labels.get(clip_id)
        if label is None:
            raise DatasetError(f"unknown clip id {clip_id!r}")
        clip_dir = self.root / label.subject_id / clip_id
        meta = _read_meta(clip_dir, clip_id)
        shape = (meta["channels"], meta["frames"], meta["height"], meta["width"])
        data = np.fromfile(clip_dir / "frames.bin", dtype="<f4")
        if data.size != int(np.prod(shape)):
            raise InvalidMetadataError(
                f"clip {clip_id!r}: frames.bin holds {data.size} values, "
                f"meta.json implies {int(np.prod(shape))}"
            )
        clip = Clip(
            data.reshape(shape), meta["fps"], meta["subject_id"], meta["clip_id"]
        )
        lm_path = clip_dir / "landmarks.json"
        if not lm_path.exists():
            raise LandmarkMismatchError(f"clip {clip_id!r}: missing landmarks.json")
        lms = _landmarks_from_json(
            json.loads(lm_path.read_text(encoding="utf-8")), clip_id
        )
        lms.validate_for(clip)
        return clip, lms, label


def load_dataset(root: str | Path) -> Iterator[tuple[Clip, LandmarkSet, HrLabel]]:
    """Yield every (clip, landmarks, label) triple, one clip in memory at a time."""
    index = DatasetIndex(root)
    for clip_id in index.clip_ids:
        yield index.load(clip_id)
