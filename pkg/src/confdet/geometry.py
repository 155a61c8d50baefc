"""Axis-aligned box geometry: IoU, anchor grids, and box-delta transforms.

Boxes use the corner convention (x1, y1, x2, y2) with continuous
coordinates; width is x2 - x1 with no +1 pixel correction, so IoU is the
exact continuous area ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Box",
    "Anchor",
    "AnchorGridConfig",
    "BoxDelta",
    "iou",
    "iou_matrix",
    "boxes_to_array",
    "generate_anchors",
    "encode",
    "decode",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with x2 >= x1, y2 >= y1 and finite coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(isinstance(c, (int, float)) and math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite numbers, got {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"box corners out of order: {coords}")

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
        return 0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2)

    def to_list(self) -> list[float]:
        """Serialized form: [x1, y1, x2, y2]."""
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Box":
        if len(values) != 4:
            raise ValueError(f"expected [x1, y1, x2, y2], got {values!r}")
        return cls(float(values[0]), float(values[1]), float(values[2]), float(values[3]))


@dataclass(frozen=True)
class Anchor:
    """A reference box tiled at a pyramid level, tagged with its grid cell."""

    box: Box
    level: int
    cell: tuple[int, int]  # (row, col)


@dataclass(frozen=True)
class BoxDelta:
    """Dimensionless center/size offsets (tx, ty, tw, th) between two boxes."""

    tx: float
    ty: float
    tw: float
    th: float

    def __post_init__(self):
        values = (self.tx, self.ty, self.tw, self.th)
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"box delta must be finite, got {values}")

    def to_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th], dtype=np.float64)


@dataclass(frozen=True)
class AnchorGridConfig:
    """Anchor layout: one grid per stride, |scales| * |ratios| shapes per cell.

    ``ratios`` are height/width aspect ratios; anchor area at a level is
    (base_size * scale)^2 regardless of ratio.
    """

    strides: tuple[int, ...]
    base_sizes: tuple[float, ...]
    scales: tuple[float, ...]
    ratios: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(self, "base_sizes", tuple(float(b) for b in self.base_sizes))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        if not self.strides:
            raise ValueError("strides must be non-empty")
        if any(s <= 0 for s in self.strides):
            raise ValueError(f"strides must be positive, got {self.strides}")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {self.strides}")
        if len(self.base_sizes) != len(self.strides):
            raise ValueError("base_sizes must have one entry per stride")
        if any(b <= 0 for b in self.base_sizes):
            raise ValueError(f"base_sizes must be positive, got {self.base_sizes}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be non-empty and positive, got {self.scales}")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ValueError(f"ratios must be non-empty and positive, got {self.ratios}")

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)

    @classmethod
    def retinanet_defaults(cls) -> "AnchorGridConfig":
        """Standard 5-level layout with 9 anchors per cell."""
        return cls(
            strides=(8, 16, 32, 64, 128),
            base_sizes=(32.0, 64.0, 128.0, 256.0, 512.0),
            scales=(1.0, 2.0 ** (1.0 / 3.0), 2.0 ** (2.0 / 3.0)),
            ratios=(0.5, 1.0, 2.0),
        )

    def to_dict(self) -> dict:
        return {
            "strides": list(self.strides),
            "base_sizes": list(self.base_sizes),
            "scales": list(self.scales),
            "ratios": list(self.ratios),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnchorGridConfig":
        try:
            return cls(
                strides=tuple(data["strides"]),
                base_sizes=tuple(data["base_sizes"]),
                scales=tuple(data["scales"]),
                ratios=tuple(data["ratios"]),
            )
        except KeyError as exc:
            raise ValueError(f"anchor config missing key: {exc}") from None


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Symmetric in its arguments.  A pair of zero-area boxes has zero union
    and is defined to have IoU 0.
    """
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Stack boxes into an (n, 4) float array of corners."""
    return np.array([[b.x1, b.y1, b.x2, b.y2] for b in boxes], dtype=np.float64).reshape(-1, 4)


def iou_matrix(boxes_a: Sequence[Box], boxes_b: Sequence[Box]) -> np.ndarray:
    """Pairwise IoU: entry (i, j) equals iou(boxes_a[i], boxes_b[j])."""
    a = boxes_to_array(boxes_a)
    b = boxes_to_array(boxes_b)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]))

    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[:, :, 0] * wh[:, :, 1]

    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter

    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def generate_anchors(config: AnchorGridConfig, image_w: int, image_h: int) -> list[Anchor]:
    """Tile anchors over every pyramid level of an image.

    Level l gets a ceil(h / stride_l) x ceil(w / stride_l) grid; each cell
    holds one anchor per (scale, ratio) pair, centered at
    ((col + 0.5) * stride, (row + 0.5) * stride) with
    width = base * scale * sqrt(1 / ratio) and height = base * scale * sqrt(ratio).

    Total count is sum over levels of rows * cols * |scales| * |ratios|.
    """
    if image_w <= 0 or image_h <= 0:
        raise ValueError(f"image dimensions must be positive, got {image_w}x{image_h}")

    shapes = []
    for scale in config.scales:
        for ratio in config.ratios:
            shapes.append((scale * math.sqrt(1.0 / ratio), scale * math.sqrt(ratio)))

    anchors: list[Anchor] = []
    for level, (stride, base) in enumerate(zip(config.strides, config.base_sizes)):
        rows = math.ceil(image_h / stride)
        cols = math.ceil(image_w / stride)
        for row in range(rows):
            cy = (row + 0.5) * stride
            for col in range(cols):
                cx = (col + 0.5) * stride
                for wf, hf in shapes:
                    half_w = 0.5 * base * wf
                    half_h = 0.5 * base * hf
                    anchors.append(
                        Anchor(
                            box=Box(cx - half_w, cy - half_h, cx + half_w, cy + half_h),
                            level=level,
                            cell=(row, col),
                        )
                    )
    return anchors


def encode(anchor: Box, target: Box) -> BoxDelta:
    """Center-offset/log-size delta taking ``anchor`` onto ``target``.

    tx = (cx_t - cx_a) / w_a, ty = (cy_t - cy_a) / h_a,
    tw = ln(w_t / w_a), th = ln(h_t / h_a).  No variance scaling.
    """
    if anchor.width <= 0 or anchor.height <= 0:
        raise ValueError(f"anchor must have positive size, got {anchor}")
    if target.width <= 0 or target.height <= 0:
        raise ValueError(f"target must have positive size, got {target}")
    acx, acy = anchor.center
    tcx, tcy = target.center
    return BoxDelta(
        tx=(tcx - acx) / anchor.width,
        ty=(tcy - acy) / anchor.height,
        tw=math.log(target.width / anchor.width),
        th=math.log(target.height / anchor.height),
    )


def decode(anchor: Box, delta: BoxDelta) -> Box:
    """Exact inverse of :func:`encode`."""
    if anchor.width <= 0 or anchor.height <= 0:
        raise ValueError(f"anchor must have positive size, got {anchor}")
    try:
        w = anchor.width * math.exp(delta.tw)
        h = anchor.height * math.exp(delta.th)
    except OverflowError:
        raise ValueError(f"size delta overflows exp: tw={delta.tw}, th={delta.th}") from None
    if not (math.isfinite(w) and math.isfinite(h)):
        raise ValueError(f"decoded size not finite: tw={delta.tw}, th={delta.th}")
    acx, acy = anchor.center
    cx = acx + delta.tx * anchor.width
    cy = acy + delta.ty * anchor.height
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
