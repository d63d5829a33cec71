"""Facial region-of-interest geometry derived from 68-point landmarks.

Seven regions are used as spatial views of a face video: the whole face,
the forehead, four cheek quadrants, and the chin. Eyes and mouth are
deliberately excluded because they move much faster than the rest of the
face and therefore carry mostly specular (motion) rather than diffuse
(pulse) reflection.

All rectangles are computed from landmark coordinates alone, so the same
mapping serves both real landmark files and the synthetic face template.
Landmark indices below follow the standard 68-point annotation scheme and
are written 1-based in comments, 0-based in code.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

N_LANDMARKS = 68

# Fractional margin added around the landmark bounding box for the
# whole-face region (the 68-point scheme has no forehead points, so this
# margin *is* the forehead's vertical extent).
FACE_MARGIN = 0.05


class RoiId(enum.IntEnum):
    """The seven facial regions, indexed 1..7."""

    WHOLE_FACE = 1
    FOREHEAD = 2
    LEFT_TOP_CHEEK = 3
    RIGHT_TOP_CHEEK = 4
    LEFT_BOTTOM_CHEEK = 5
    RIGHT_BOTTOM_CHEEK = 6
    CHIN = 7

    @property
    def display_name(self) -> str:
        return self.name.lower().replace("_", " ")

    @classmethod
    def from_name(cls, name: str) -> "RoiId":
        key = name.strip().lower().replace(" ", "_")
        try:
            return cls[key.upper()]
        except KeyError:
            raise ValueError(f"unknown ROI name: {name!r}") from None


@dataclass(frozen=True)
class Rect:
    """Axis-aligned integer rectangle, half-open: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return max(0, self.width) * max(0, self.height)

    def contains(self, other: "Rect") -> bool:
        return (
            self.x0 <= other.x0
            and self.y0 <= other.y0
            and other.x1 <= self.x1
            and other.y1 <= self.y1
        )

    def clamped(self, width: int, height: int) -> "Rect":
        return Rect(
            max(0, min(self.x0, width)),
            max(0, min(self.y0, height)),
            max(0, min(self.x1, width)),
            max(0, min(self.y1, height)),
        )

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


def _rect(x0: float, y0: float, x1: float, y1: float) -> Rect:
    return Rect(
        int(math.floor(x0 + 0.5)),
        int(math.floor(y0 + 0.5)),
        int(math.floor(x1 + 0.5)),
        int(math.floor(y1 + 0.5)),
    )


def roi_rects(points: np.ndarray) -> dict[RoiId, Rect]:
    """Map one 68-point landmark set to the seven ROI rectangles.

    ``points`` has shape (68, 2) in (x, y) pixel coordinates, y down.
    Rectangles are *not* clamped to any frame here; callers clamp against
    their frame size.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (N_LANDMARKS, 2):
        raise ValueError(f"expected ({N_LANDMARKS}, 2) landmarks, got {pts.shape}")

    xs, ys = pts[:, 0], pts[:, 1]
    x_min, x_max = float(xs.min()), float(xs.max())
    y_min, y_max = float(ys.min()), float(ys.max())
    mx = FACE_MARGIN * (x_max - x_min)
    my = FACE_MARGIN * (y_max - y_min)
    whole = _rect(x_min - mx, y_min - my, x_max + mx, y_max + my)

    # Eyebrows: points 18-27 (1-based).
    brow_x = xs[17:27]
    brow_y = ys[17:27]
    forehead = _rect(float(brow_x.min()), y_min - my, float(brow_x.max()), float(brow_y.min()))

    # Top cheeks: between the outer eye corner (37 / 46), the nostril row
    # ends (32 / 36) and the upper jaw (2 / 16).
    left_top = _rect(xs[1], ys[36], xs[31], ys[31])
    right_top = _rect(xs[35], ys[45], xs[15], ys[35])

    # Bottom cheeks: nostril row down to mouth-corner height (49 / 55),
    # bounded by the mid jaw (4 / 14).
    nose_row_y = float(ys[31:36].max())
    left_bottom = _rect(xs[3], nose_row_y, xs[48], ys[48])
    right_bottom = _rect(xs[54], nose_row_y, xs[13], ys[54])

    # Chin: mouth-corner x-span, from the outer-lip bottom (58) to the
    # jaw bottom (9).
    chin = _rect(xs[48], ys[57], xs[54], ys[8])

    return {
        RoiId.WHOLE_FACE: whole,
        RoiId.FOREHEAD: forehead,
        RoiId.LEFT_TOP_CHEEK: left_top,
        RoiId.RIGHT_TOP_CHEEK: right_top,
        RoiId.LEFT_BOTTOM_CHEEK: left_bottom,
        RoiId.RIGHT_BOTTOM_CHEEK: right_bottom,
        RoiId.CHIN: chin,
    }


def roi_mapping_table() -> dict:
    """Static description of the landmark-to-rectangle rules (for audit).

    Landmark indices are 1-based, matching the common annotation tools.
    """
    return {
        "landmark_scheme": "68-point",
        "margin": FACE_MARGIN,
        "rois": {
            "1": {
                "name": "whole face",
                "rule": "bounding box of all 68 points, expanded by 5% of its "
                "width/height on every side",
            },
            "2": {
                "name": "forehead",
                "rule": "x-span of eyebrow points 18-27; y from the whole-face top "
                "down to the minimum eyebrow y",
            },
            "3": {
                "name": "left top cheek",
                "rule": "x from jaw point 2 to nostril point 32; y from eye corner 37 "
                "down to nostril point 32",
            },
            "4": {
                "name": "right top cheek",
                "rule": "x from nostril point 36 to jaw point 16; y from eye corner 46 "
                "down to nostril point 36",
            },
            "5": {
                "name": "left bottom cheek",
                "rule": "x from jaw point 4 to mouth corner 49; y from the nostril row "
                "(max y of 32-36) down to mouth corner 49",
            },
            "6": {
                "name": "right bottom cheek",
                "rule": "x from mouth corner 55 to jaw point 14; y from the nostril row "
                "down to mouth corner 55",
            },
            "7": {
                "name": "chin",
                "rule": "x between mouth corners 49 and 55; y from outer-lip bottom 58 "
                "down to jaw bottom 9",
            },
        },
    }


def roi_mapping_json() -> str:
    return json.dumps(roi_mapping_table(), indent=2)


def canonical_landmarks(frame_size: int, face_scale: float = 0.8) -> np.ndarray:
    """A symmetric frontal-face landmark template scaled into a square frame.

    Coordinates are laid out in a unit square and mapped to
    ``frame_size * face_scale`` centred in the frame, leaving room for the
    whole-face margin. Used by the synthetic video generator; any real
    landmark file can replace it.
    """
    if not (0.0 < face_scale <= 1.0):
        raise ValueError("face_scale must be in (0, 1]")
    pts = np.zeros((N_LANDMARKS, 2), dtype=np.float64)

    # Jaw 1-17: ellipse arc from left temple through the chin to the right
    # temple.
    theta = np.pi * np.arange(17) / 16.0
    pts[0:17, 0] = 0.5 - 0.35 * np.cos(theta)
    pts[0:17, 1] = 0.35 + 0.60 * np.sin(theta)

    # Eyebrows 18-22 and 23-27.
    pts[17:22, 0] = np.linspace(0.22, 0.42, 5)
    pts[17:22, 1] = 0.30
    pts[22:27, 0] = np.linspace(0.58, 0.78, 5)
    pts[22:27, 1] = 0.30

    # Nose bridge 28-31 and nostril row 32-36.
    pts[27:31, 0] = 0.5
    pts[27:31, 1] = np.linspace(0.34, 0.52, 4)
    pts[31:36, 0] = np.linspace(0.40, 0.60, 5)
    pts[31:36, 1] = 0.58

    # Eyes 37-42 (left) and 43-48 (right).
    pts[36:42] = [
        (0.24, 0.380),
        (0.28, 0.365),
        (0.34, 0.365),
        (0.38, 0.380),
        (0.34, 0.395),
        (0.28, 0.395),
    ]
    pts[42:48] = [
        (0.62, 0.380),
        (0.66, 0.365),
        (0.72, 0.365),
        (0.76, 0.380),
        (0.72, 0.395),
        (0.66, 0.395),
    ]

    # Outer lip 49-60 and inner lip 61-68.
    pts[48] = (0.38, 0.78)
    pts[49:54, 0] = np.linspace(0.42, 0.58, 5)
    pts[49:54, 1] = (0.755, 0.750, 0.752, 0.750, 0.755)
    pts[54] = (0.62, 0.78)
    pts[55:60, 0] = np.linspace(0.58, 0.42, 5)
    pts[55:60, 1] = (0.815, 0.825, 0.830, 0.825, 0.815)
    pts[60:64, 0] = np.linspace(0.41, 0.59, 4)
    pts[60:64, 1] = 0.775
    pts[64:68, 0] = np.linspace(0.58, 0.42, 4)
    pts[64:68, 1] = 0.795

    offset = frame_size * (1.0 - face_scale) / 2.0
    return pts * (frame_size * face_scale) + offset
