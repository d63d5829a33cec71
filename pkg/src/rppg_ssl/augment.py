"""Spatiotemporal view augmentation for contrastive pretraining.

Two transformations, both purely geometric:

* spatial: crop one of 7 landmark-derived facial regions and resize it to
  a fixed square (no pixel-value edits such as colour jitter);
* temporal: subsample frames with an integer stride, which lowers the
  effective frame rate; the configured strides must keep that rate above
  the Nyquist rate of the pulse band.

Each view carries a pseudo-label (which region, which stride) used as a
free classification target alongside the contrastive objective.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .dataio import Clip, LandmarkSet, resize_pixels
from .drm import nyquist_max_stride
from .rois import Rect, RoiId, roi_rects


class AugmentError(Exception):
    pass


class DegenerateRoiError(AugmentError):
    """The requested ROI has zero area for the given landmarks."""


class RoiClampWarning(UserWarning):
    """An ROI rectangle was partially outside the frame and got clamped."""


class StrideId(NamedTuple):
    """A stride with its position in the configured stride list."""

    index: int
    value: int


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation grid: which regions, which strides, view geometry."""

    strides: tuple[int, ...] = (1, 2, 3, 4, 5)
    rois: tuple[RoiId, ...] = tuple(RoiId)
    clip_len: int = 30
    frame_size: int = 64
    fps: float = 30.0
    hr_max_bpm: float = 160.0

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "rois", tuple(RoiId(r) for r in self.rois))
        if not self.strides or len(set(self.strides)) != len(self.strides):
            raise ValueError("strides must be a non-empty list of distinct values")
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be >= 1")
        max_allowed = nyquist_max_stride(self.fps, self.hr_max_bpm)
        if max(self.strides) > max_allowed:
            raise ValueError(
                f"stride {max(self.strides)} exceeds the Nyquist bound "
                f"{max_allowed} for {self.fps:g} fps and {self.hr_max_bpm:g} bpm"
            )
        if not self.rois or len(set(self.rois)) != len(self.rois):
            raise ValueError("rois must be a non-empty list of distinct regions")
        if self.clip_len < 2:
            raise ValueError("clip_len must be >= 2")
        if self.frame_size < 8:
            raise ValueError("frame_size must be >= 8")

    def stride_ids(self) -> tuple[StrideId, ...]:
        return tuple(StrideId(i, s) for i, s in enumerate(self.strides))

    def min_source_frames(self) -> int:
        return (self.clip_len - 1) * max(self.strides) + 1


@dataclass(frozen=True)
class PseudoLabel:
    """0-based positions of the applied (roi, stride) in the config lists."""

    roi_index: int
    stride_index: int

    def validate(self, config: AugmentConfig):
        if not (0 <= self.roi_index < len(config.rois)):
            raise ValueError(f"roi_index {self.roi_index} out of range")
        if not (0 <= self.stride_index < len(config.strides)):
            raise ValueError(f"stride_index {self.stride_index} out of range")


@dataclass
class AugmentedView:
    """One augmented clip plus the bookkeeping needed for its pseudo-label."""

    clip: Clip
    label: PseudoLabel
    source_clip_id: str
    start_frame: int


def roi_rect_for(clip: Clip, points: np.ndarray, roi: RoiId) -> Rect:
    """Resolve one ROI rectangle for a clip, clamped to the frame."""
    rect = roi_rects(points)[roi]
    if rect.area <= 0:
        raise DegenerateRoiError(f"ROI {roi.name} has zero area: {rect}")
    clamped = rect.clamped(clip.width, clip.height)
    if clamped != rect:
        warnings.warn(
            f"ROI {roi.name} {rect.as_tuple()} extends outside the "
            f"{clip.width}x{clip.height} frame; clamped",
            RoiClampWarning,
            stacklevel=3,
        )
    if clamped.area <= 0:
        raise DegenerateRoiError(f"ROI {roi.name} lies entirely outside the frame")
    return clamped


def roi_crop(
    clip: Clip, landmarks: LandmarkSet, roi: RoiId, out_size: int = 64
) -> Clip:
    """Crop one facial region from every frame and resize to a square.

    Static landmarks give one rectangle for the whole clip; per-frame
    landmarks are cropped frame by frame. Cropping and bilinear resizing
    are the only transformations applied.
    """
    if landmarks.per_frame:
        if landmarks.points.shape[0] != clip.n_frames:
            raise AugmentError(
                f"{landmarks.points.shape[0]} landmark frames for "
                f"{clip.n_frames} video frames"
            )
        frames = []
        for ti in range(clip.n_frames):
            rect = roi_rect_for(clip, landmarks.points_for_frame(ti), roi)
            patch = clip.pixels[:, ti : ti + 1, rect.y0 : rect.y1, rect.x0 : rect.x1]
            frames.append(resize_pixels(patch, out_size))
        pixels = np.concatenate(frames, axis=1)
    else:
        rect = roi_rect_for(clip, landmarks.points, roi)
        patch = clip.pixels[:, :, rect.y0 : rect.y1, rect.x0 : rect.x1]
        pixels = resize_pixels(patch, out_size)
    return Clip(pixels, clip.fps, clip.subject_id, clip.video_id)


def temporal_subsample(
    clip: Clip, stride: int | StrideId, out_len: int = 30, start: int = 0
) -> Clip:
    """Take ``out_len`` frames spaced ``stride`` apart, starting at ``start``.

    Frame values are selected bit-exactly; the output records the reduced
    effective frame rate fps / stride.
    """
    stride_value = stride.value if isinstance(stride, StrideId) else int(stride)
    if stride_value < 1:
        raise ValueError("stride must be >= 1")
    if out_len < 1:
        raise ValueError("out_len must be >= 1")
    if start < 0:
        raise ValueError("start must be >= 0")
    last = start + (out_len - 1) * stride_value
    if last >= clip.n_frames:
        raise AugmentError(
            f"clip {clip.video_id!r} has {clip.n_frames} frames; stride "
            f"{stride_value} x {out_len} frames from {start} needs {last + 1}"
        )
    idx = start + stride_value * np.arange(out_len)
    return Clip(
        clip.pixels[:, idx], clip.fps / stride_value, clip.subject_id, clip.video_id
    )


def subsample_full_length(clip: Clip, stride: int, start: int = 0) -> Clip:
    """Stride over the entire clip (as many frames as fit)."""
    out_len = (clip.n_frames - 1 - start) // int(stride) + 1
    return temporal_subsample(clip, stride, out_len=out_len, start=start)


def _draw_view(
    clip: Clip, landmarks: LandmarkSet, rng: np.random.Generator, config: AugmentConfig
) -> AugmentedView:
    # Draw order is part of the reproducibility contract:
    # stride, then start frame, then ROI.
    stride_index = int(rng.integers(0, len(config.strides)))
    stride = config.strides[stride_index]
    span = (config.clip_len - 1) * stride
    if span >= clip.n_frames:
        raise AugmentError(
            f"clip {clip.video_id!r} too short ({clip.n_frames} frames) for "
            f"stride {stride} x {config.clip_len} frames"
        )
    start = int(rng.integers(0, clip.n_frames - span))
    roi_index = int(rng.integers(0, len(config.rois)))

    view = temporal_subsample(clip, stride, out_len=config.clip_len, start=start)
    if landmarks.per_frame:
        idx = start + stride * np.arange(config.clip_len)
        landmarks = LandmarkSet(landmarks.points[idx])
    view = roi_crop(view, landmarks, config.rois[roi_index], out_size=config.frame_size)
    return AugmentedView(
        clip=view,
        label=PseudoLabel(roi_index=roi_index, stride_index=stride_index),
        source_clip_id=clip.video_id,
        start_frame=start,
    )


def augment_pair(
    clip: Clip,
    landmarks: LandmarkSet,
    rng: np.random.Generator,
    config: AugmentConfig,
) -> tuple[AugmentedView, AugmentedView]:
    """Two independent augmented views of the same clip (a positive pair).

    All randomness comes from ``rng``; (stride, start, roi) are sampled
    uniformly and independently per view.
    """
    if clip.n_frames < config.min_source_frames():
        raise AugmentError(
            f"clip {clip.video_id!r} has {clip.n_frames} frames but the "
            f"augmentation grid needs {config.min_source_frames()}"
        )
    if landmarks.per_frame and landmarks.points.shape[0] != clip.n_frames:
        raise AugmentError(
            f"{landmarks.points.shape[0]} landmark frames for "
            f"{clip.n_frames} video frames"
        )
    return (
        _draw_view(clip, landmarks, rng, config),
        _draw_view(clip, landmarks, rng, config),
    )
