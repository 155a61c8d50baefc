"""IoU-based anchor labelling and per-anchor training targets.

Anchors are matched to their max-IoU ground-truth box and labelled
positive/negative/ignore by threshold, with an optional rule that promotes
each ground truth's best anchor to positive so no target goes unmatched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Anchor, Box, BoxDelta, encode, iou_matrix

__all__ = [
    "NEGATIVE",
    "IGNORE",
    "GroundTruthBox",
    "AssignerConfig",
    "AssignmentResult",
    "assign",
    "confidence_targets",
    "localization_targets",
    "load_ground_truth_jsonl",
]

# Label codes: values >= 0 are matched ground-truth indices.
NEGATIVE = -1
IGNORE = -2


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated object: a positive-area box and its class id."""

    box: Box
    class_id: int

    def __post_init__(self):
        if self.box.area <= 0:
            raise ValueError(f"ground-truth box must have positive area, got {self.box}")
        if not isinstance(self.class_id, int) or self.class_id < 0:
            raise ValueError(f"class_id must be a non-negative integer, got {self.class_id!r}")


@dataclass(frozen=True)
class AssignerConfig:
    """IoU thresholds for labelling, with an ignore band [neg_iou, pos_iou).

    ``force_match`` promotes each ground truth's single best anchor to
    positive even below ``pos_iou`` (skipped for ground truths that overlap
    nothing at all).
    """

    pos_iou: float = 0.5
    neg_iou: float = 0.4
    force_match: bool = True

    def __post_init__(self):
        if not 0.0 <= self.neg_iou <= self.pos_iou <= 1.0:
            raise ValueError(
                f"need 0 <= neg_iou <= pos_iou <= 1, got neg={self.neg_iou}, pos={self.pos_iou}"
            )


@dataclass
class AssignmentResult:
    """Per-anchor labels and matched IoUs.

    ``labels[i]`` is the matched ground-truth index for positives, else
    NEGATIVE or IGNORE.  ``matched_iou[i]`` is the IoU with the matched
    ground truth for positives and the best IoU over all ground truths
    otherwise.  ``forced[i]`` marks positives promoted (or re-pointed) by
    the best-anchor rule.
    """

    labels: np.ndarray
    matched_iou: np.ndarray
    forced: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.matched_iou = np.asarray(self.matched_iou, dtype=np.float64)
        if self.forced is None:
            self.forced = np.zeros(self.labels.shape, dtype=bool)
        self.forced = np.asarray(self.forced, dtype=bool)
        if not (self.labels.shape == self.matched_iou.shape == self.forced.shape):
            raise ValueError("labels, matched_iou and forced must have identical shape")

    @property
    def n_total(self) -> int:
        return int(self.labels.size)

    @property
    def positive_mask(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.positive_mask))


def _as_boxes(anchors: Sequence[Anchor | Box]) -> list[Box]:
    return [a.box if isinstance(a, Anchor) else a for a in anchors]


def assign(
    anchors: Sequence[Anchor | Box],
    gts: Sequence[GroundTruthBox],
    cfg: AssignerConfig = AssignerConfig(),
) -> AssignmentResult:
    """Label every anchor against the ground truth by max IoU.

    Each anchor is matched to its highest-IoU ground truth (ties resolve to
    the lowest index): positive at IoU >= pos_iou, negative below neg_iou,
    ignored in between.  With ``cfg.force_match``, each ground truth's best
    anchor is additionally made positive; when two ground truths share a
    best anchor the lower index keeps it.  Empty ``gts`` labels everything
    negative.
    """
    if len(anchors) == 0:
        raise ValueError("anchors must be non-empty")
    boxes = _as_boxes(anchors)
    n = len(boxes)

    if len(gts) == 0:
        return AssignmentResult(
            labels=np.full(n, NEGATIVE, dtype=np.int64),
            matched_iou=np.zeros(n),
        )

    overlaps = iou_matrix(boxes, [g.box for g in gts])
    best_gt = overlaps.argmax(axis=1)  # first max -> lowest gt index
    best_iou = overlaps[np.arange(n), best_gt]

    labels = np.full(n, NEGATIVE, dtype=np.int64)
    labels[(best_iou >= cfg.neg_iou) & (best_iou < cfg.pos_iou)] = IGNORE
    pos = best_iou >= cfg.pos_iou
    labels[pos] = best_gt[pos]
    matched_iou = best_iou.copy()
    forced = np.zeros(n, dtype=bool)

    if cfg.force_match:
        gt_best_anchor = overlaps.argmax(axis=0)  # first max -> lowest anchor index
        gt_best_iou = overlaps.max(axis=0)
        for j in range(len(gts)):
            if gt_best_iou[j] <= 0.0:
                continue  # this gt overlaps nothing; nothing sensible to force
            i = gt_best_anchor[j]
            if forced[i]:
                continue  # already claimed by a lower-index gt
            if labels[i] == j:
                continue  # would be positive for j anyway
            labels[i] = j
            matched_iou[i] = overlaps[i, j]
            forced[i] = True

    return AssignmentResult(labels=labels, matched_iou=matched_iou, forced=forced)


def confidence_targets(result: AssignmentResult) -> tuple[np.ndarray, np.ndarray]:
    """Regression targets for the object-confidence head.

    Returns ``(targets, used)``: positives regress their matched IoU, every
    other anchor gets target 0 with ``used`` False, marking it excluded
    from the positives-only confidence loss.
    """
    used = result.positive_mask
    targets = np.where(used, result.matched_iou, 0.0)
    return targets, used


def localization_targets(
    anchors: Sequence[Anchor | Box],
    gts: Sequence[GroundTruthBox],
    result: AssignmentResult,
) -> list[BoxDelta]:
    """Encode each positive anchor against its matched ground truth.

    Output is in anchor order, one delta per positive anchor.
    """
    boxes = _as_boxes(anchors)
    if len(boxes) != result.n_total:
        raise ValueError(f"result covers {result.n_total} anchors, got {len(boxes)}")
    deltas = []
    for i in np.flatnonzero(result.positive_mask):
        j = int(result.labels[i])
        if j >= len(gts):
            raise ValueError(f"corrupt assignment: anchor {i} matched to missing gt {j}")
        deltas.append(encode(boxes[i], gts[j].box))
    return deltas


def load_ground_truth_jsonl(path) -> dict[str, list[GroundTruthBox]]:
    """Read ground truth grouped by image from JSON lines.

    Each line is {"image_id": str, "box": [x1, y1, x2, y2], "class_id": int}.
    Image order follows first appearance.
    """
    per_image: dict[str, list[GroundTruthBox]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                gt = GroundTruthBox(
                    box=Box.from_list(record["box"]),
                    class_id=int(record["class_id"]),
                )
                image_id = str(record["image_id"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
            per_image.setdefault(image_id, []).append(gt)
    return per_image
