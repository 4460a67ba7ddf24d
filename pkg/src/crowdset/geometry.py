"""Axis-aligned box geometry: IoU and box-regression delta transforms.

Boxes live in corner form (x1, y1, x2, y2) with real pixel coordinates.
Zero-area boxes are legal inputs to :func:`iou` (the result is 0) but are
rejected as proposals or targets for delta encoding, where log-size ratios
must stay finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """A box cannot be used in the requested geometric transform."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in absolute pixel coordinates, corner form."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x1, self.y1, self.x2, self.y2)):
            raise GeometryError(f"non-finite box coordinates: {self}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise GeometryError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + 0.5 * self.width, self.y1 + 0.5 * self.height)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class BoxDelta:
    """Dimensionless regression offsets: center shift normalized by proposal
    size plus log size ratios."""

    dx: float
    dy: float
    dw: float
    dh: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.dx, self.dy, self.dw, self.dh)):
            raise GeometryError(f"non-finite delta: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx, self.dy, self.dw, self.dh)


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when the union has zero area."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two box sets.

    Args:
        boxes_a: (N, 4) corner-form boxes.
        boxes_b: (M, 4) corner-form boxes.

    Returns:
        (N, M) IoU matrix; entries with zero union area are 0.
    """
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    iw = np.maximum(0.0, ix2 - ix1)
    ih = np.maximum(0.0, iy2 - iy1)
    inter = iw * ih
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0.0, inter / union, 0.0)
    return out


def boxes_to_array(boxes) -> np.ndarray:
    """Stack BBox objects into an (N, 4) float array."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def encode_delta(proposal: BBox, target: BBox) -> BoxDelta:
    """Encode ``target`` relative to ``proposal`` as regression offsets.

    Both boxes must have positive width and height, otherwise the
    normalized shifts and log ratios are undefined.
    """
    pw, ph = proposal.width, proposal.height
    if pw <= 0.0 or ph <= 0.0:
        raise GeometryError(f"proposal has non-positive size: {proposal}")
    tw, th = target.width, target.height
    if tw <= 0.0 or th <= 0.0:
        raise GeometryError(f"target has non-positive size: {target}")
    px, py = proposal.center
    tx, ty = target.center
    return BoxDelta(
        dx=(tx - px) / pw,
        dy=(ty - py) / ph,
        dw=math.log(tw / pw),
        dh=math.log(th / ph),
    )


def decode_delta(proposal: BBox, delta: BoxDelta) -> BBox:
    """Apply regression offsets to a proposal; exact inverse of
    :func:`encode_delta`."""
    pw, ph = proposal.width, proposal.height
    if pw <= 0.0 or ph <= 0.0:
        raise GeometryError(f"proposal has non-positive size: {proposal}")
    px, py = proposal.center
    cx = px + delta.dx * pw
    cy = py + delta.dy * ph
    w = pw * math.exp(delta.dw)
    h = ph * math.exp(delta.dh)
    return BBox(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
