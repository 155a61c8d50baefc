"""Detector losses: values and analytic gradients w.r.t. pre-sigmoid logits.

Covers the focal classification loss, the L1 box-delta loss, and the
object-confidence loss family over continuous IoU targets in [0, 1]:
cross entropy, cross entropy with a down-weighted negative term, the
|y - p|^beta modulated cross entropy, and plain l1 / smooth-l1 / l2
regression through the sigmoid.  Also the per-sample weight gradients of
l1/l2/cross-entropy for a sigmoid regression model h = sigmoid(theta . x),
which make the saturation behaviour of the three losses directly
comparable:

    l1:  sign(h - y) * h(1-h) * x
    l2:  (h - y) * h(1-h) * x        (loss 0.5 * (y - h)^2)
    ce:  (h - y) * x

The h(1-h) factor vanishes at saturated predictions, so l1/l2 barely move
a confidently-wrong output while cross entropy keeps a gradient
proportional to the error itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import BoxDelta

__all__ = [
    "P_CLAMP",
    "FocalParams",
    "ConfLossKind",
    "LossBreakdown",
    "sigmoid",
    "focal_loss",
    "focal_loss_grad",
    "l1_localization_loss",
    "ce_confidence_loss",
    "ce_confidence_loss_grad",
    "weighted_ce_confidence_loss",
    "weighted_ce_confidence_loss_grad",
    "gfocal_loss",
    "gfocal_loss_grad",
    "l1_confidence_loss",
    "l1_confidence_loss_grad",
    "l2_confidence_loss",
    "l2_confidence_loss_grad",
    "smooth_l1_confidence_loss",
    "smooth_l1_confidence_loss_grad",
    "confidence_loss",
    "confidence_loss_grad",
    "sigmoid_regression_grad",
    "total_loss",
]

# Probabilities are clamped away from {0, 1} before any log; the perturbation
# is far below test tolerances but keeps every loss finite.
P_CLAMP = 1e-12

CONF_LOSS_NAMES = ("l1", "smooth_l1", "l2", "ce", "weighted_ce", "gfocal")


@dataclass(frozen=True)
class FocalParams:
    """Focal loss weights: alpha balances classes, gamma decays easy samples."""

    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.gamma < 0.0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class ConfLossKind:
    """Which object-confidence loss to use.

    ``w`` is the negative-sample weight (weighted_ce only); ``beta`` the
    modulating exponent (gfocal only).  Every kind except weighted_ce uses
    positive samples only.
    """

    name: str
    w: float = 0.0001
    beta: float = 2.0
    smooth_l1_threshold: float = 1.0

    def __post_init__(self):
        if self.name not in CONF_LOSS_NAMES:
            raise ValueError(f"unknown confidence loss {self.name!r}, expected one of {CONF_LOSS_NAMES}")
        if self.w < 0.0:
            raise ValueError(f"negative-sample weight must be >= 0, got {self.w}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.smooth_l1_threshold <= 0.0:
            raise ValueError(f"smooth_l1 threshold must be > 0, got {self.smooth_l1_threshold}")


@dataclass(frozen=True)
class LossBreakdown:
    """Classification, localization and object-confidence losses plus their sum."""

    classification: float
    localization: float
    object_confidence: float
    total: float


def sigmoid(z):
    """Numerically stable logistic function, elementwise.

    Never overflows: uses exp(-|z|) only.  Scalars in, float out; arrays
    in, float64 array out.
    """
    arr = np.asarray(z, dtype=np.float64)
    t = np.exp(-np.abs(arr))
    out = np.where(arr >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))
    if out.ndim == 0:
        return float(out)
    return out


def _clamped(p):
    return np.clip(p, P_CLAMP, 1.0 - P_CLAMP)


def _check_targets(y: np.ndarray):
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("targets must lie in [0, 1]")


def _prep_masked(logits, targets, positive, n_pos):
    """Common validation for the confidence losses."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise ValueError(f"logits and targets length mismatch: {z.shape} vs {y.shape}")
    _check_targets(y)
    if positive is None:
        pos = np.ones(z.shape, dtype=bool)
    else:
        pos = np.asarray(positive, dtype=bool).reshape(-1)
        if pos.shape != z.shape:
            raise ValueError("positive mask must match logits length")
    if n_pos is None:
        n_pos = int(np.count_nonzero(pos))
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1 (no positive samples to normalize by)")
    return z, y, pos, n_pos


def focal_loss(logits, positive, n_pos: int, params: FocalParams = FocalParams()) -> float:
    """Focal classification loss over positives and negatives, divided by n_pos.

    Per sample: alpha_t * (1 - p_t)^gamma * (-ln p_t) with p_t = p for
    positives and 1 - p for negatives, alpha_t likewise alpha / 1 - alpha.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    pos = np.asarray(positive, dtype=bool).reshape(-1)
    if z.shape != pos.shape:
        raise ValueError("logits and labels length mismatch")
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    p = sigmoid(z)
    p_t = _clamped(np.where(pos, p, 1.0 - p))
    a_t = np.where(pos, params.alpha, 1.0 - params.alpha)
    per_sample = a_t * (1.0 - p_t) ** params.gamma * (-np.log(p_t))
    return float(per_sample.sum() / n_pos)


def focal_loss_grad(logits, positive, n_pos: int, params: FocalParams = FocalParams()) -> np.ndarray:
    """d(focal_loss)/d(logits), same normalization as the value."""
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    pos = np.asarray(positive, dtype=bool).reshape(-1)
    if z.shape != pos.shape:
        raise ValueError("logits and labels length mismatch")
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    p = sigmoid(z)
    p_t = _clamped(np.where(pos, p, 1.0 - p))
    a_t = np.where(pos, params.alpha, 1.0 - params.alpha)
    g = params.gamma
    if g == 0.0:
        d_pt = -a_t / p_t
    else:
        d_pt = a_t * (g * (1.0 - p_t) ** (g - 1.0) * np.log(p_t) - (1.0 - p_t) ** g / p_t)
    dpt_dz = np.where(pos, 1.0, -1.0) * p * (1.0 - p)
    return d_pt * dpt_dz / n_pos


def _deltas_to_array(deltas) -> np.ndarray:
    if isinstance(deltas, np.ndarray):
        arr = np.asarray(deltas, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"expected (n, 4) delta array, got shape {arr.shape}")
        return arr
    return np.array([d.to_array() for d in deltas], dtype=np.float64).reshape(-1, 4)


def l1_localization_loss(
    pred: Sequence[BoxDelta] | np.ndarray,
    target: Sequence[BoxDelta] | np.ndarray,
    n_pos: int,
) -> float:
    """Sum of |pred - target| over all four delta components, divided by n_pos."""
    p = _deltas_to_array(pred)
    t = _deltas_to_array(target)
    if p.shape != t.shape:
        raise ValueError(f"pred/target length mismatch: {p.shape[0]} vs {t.shape[0]}")
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    return float(np.abs(p - t).sum() / n_pos)


def ce_confidence_loss(logits, targets_iou, positive=None, n_pos: int | None = None) -> float:
    """Cross entropy between sigmoid outputs and IoU targets, positives only.

    -(1/n_pos) * sum over positives of [y ln p + (1 - y) ln(1 - p)].
    """
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = _clamped(sigmoid(z))
    ce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    return float(ce[pos].sum() / n_pos)


def ce_confidence_loss_grad(logits, targets_iou, positive=None, n_pos: int | None = None) -> np.ndarray:
    """d(ce_confidence_loss)/d(logits): (p - y) / n_pos on positives, 0 elsewhere."""
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    return np.where(pos, p - y, 0.0) / n_pos


def weighted_ce_confidence_loss(logits, targets_iou, positive, w: float, n_pos: int | None = None) -> float:
    """Cross entropy keeping negatives at weight ``w`` (their target is 0).

    -(1/n_pos) * [sum_pos CE_i + w * sum_neg CE_i]; w = 0 reduces to the
    positives-only loss.
    """
    if w < 0.0:
        raise ValueError(f"negative-sample weight must be >= 0, got {w}")
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    y = np.where(pos, y, 0.0)
    p = _clamped(sigmoid(z))
    ce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    weights = np.where(pos, 1.0, w)
    return float((weights * ce).sum() / n_pos)


def weighted_ce_confidence_loss_grad(logits, targets_iou, positive, w: float, n_pos: int | None = None) -> np.ndarray:
    """d(weighted_ce_confidence_loss)/d(logits)."""
    if w < 0.0:
        raise ValueError(f"negative-sample weight must be >= 0, got {w}")
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    y = np.where(pos, y, 0.0)
    p = sigmoid(z)
    weights = np.where(pos, 1.0, w)
    return weights * (p - y) / n_pos


def gfocal_loss(logits, targets_iou, n_pos: int | None = None, beta: float = 2.0) -> float:
    """|y - p|^beta modulated cross entropy over positives with IoU targets.

    Zero exactly when every prediction matches its target; beta = 0 reduces
    to plain cross entropy.
    """
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    z, y, _, n_pos = _prep_masked(logits, targets_iou, None, n_pos)
    p = _clamped(sigmoid(z))
    ce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    mod = np.abs(y - p) ** beta  # 0^0 == 1, so beta == 0 is exactly CE
    return float((mod * ce).sum() / n_pos)


def gfocal_loss_grad(logits, targets_iou, n_pos: int | None = None, beta: float = 2.0) -> np.ndarray:
    """d(gfocal_loss)/d(logits)."""
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    z, y, _, n_pos = _prep_masked(logits, targets_iou, None, n_pos)
    p = sigmoid(z)
    pc = _clamped(p)
    ce = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    diff = p - y
    absd = np.abs(diff)
    if beta == 0.0:
        return diff / n_pos  # plain CE gradient
    # d/dz [ |d|^beta * CE ] = beta |d|^(beta-1) sign(d) CE p(1-p) + |d|^beta * d
    with np.errstate(divide="ignore", invalid="ignore"):
        mod_term = beta * absd ** (beta - 1.0) * np.sign(diff)
    mod_term = np.where(absd == 0.0, 0.0, mod_term)
    return (mod_term * ce * p * (1.0 - p) + absd**beta * diff) / n_pos


def l1_confidence_loss(logits, targets_iou, positive=None, n_pos: int | None = None) -> float:
    """Mean absolute error |y - p| over positives, divided by n_pos."""
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    return float(np.abs(y - p)[pos].sum() / n_pos)


def l1_confidence_loss_grad(logits, targets_iou, positive=None, n_pos: int | None = None) -> np.ndarray:
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    g = np.sign(p - y) * p * (1.0 - p)
    return np.where(pos, g, 0.0) / n_pos


def l2_confidence_loss(logits, targets_iou, positive=None, n_pos: int | None = None) -> float:
    """Squared error 0.5 * (y - p)^2 over positives, divided by n_pos."""
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    return float((0.5 * (y - p) ** 2)[pos].sum() / n_pos)


def l2_confidence_loss_grad(logits, targets_iou, positive=None, n_pos: int | None = None) -> np.ndarray:
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    g = (p - y) * p * (1.0 - p)
    return np.where(pos, g, 0.0) / n_pos


def smooth_l1_confidence_loss(
    logits, targets_iou, positive=None, n_pos: int | None = None, threshold: float = 1.0
) -> float:
    """Huber-style |y - p| loss: quadratic below ``threshold``, linear above."""
    if threshold <= 0.0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    d = np.abs(y - p)
    per = np.where(d < threshold, 0.5 * d**2 / threshold, d - 0.5 * threshold)
    return float(per[pos].sum() / n_pos)


def smooth_l1_confidence_loss_grad(
    logits, targets_iou, positive=None, n_pos: int | None = None, threshold: float = 1.0
) -> np.ndarray:
    if threshold <= 0.0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
    p = sigmoid(z)
    diff = p - y
    d_loss = np.where(np.abs(diff) < threshold, diff / threshold, np.sign(diff))
    g = d_loss * p * (1.0 - p)
    return np.where(pos, g, 0.0) / n_pos


def confidence_loss(kind: ConfLossKind, logits, targets_iou, positive=None, n_pos: int | None = None) -> float:
    """Dispatch to the object-confidence loss selected by ``kind``.

    All kinds except weighted_ce restrict to positive samples; weighted_ce
    keeps negatives at weight ``kind.w``.
    """
    if kind.name == "ce":
        return ce_confidence_loss(logits, targets_iou, positive, n_pos)
    if kind.name == "weighted_ce":
        return weighted_ce_confidence_loss(logits, targets_iou, positive, kind.w, n_pos)
    if kind.name == "gfocal":
        z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
        return gfocal_loss(z[pos], y[pos], n_pos, kind.beta)
    if kind.name == "l1":
        return l1_confidence_loss(logits, targets_iou, positive, n_pos)
    if kind.name == "l2":
        return l2_confidence_loss(logits, targets_iou, positive, n_pos)
    if kind.name == "smooth_l1":
        return smooth_l1_confidence_loss(logits, targets_iou, positive, n_pos, kind.smooth_l1_threshold)
    raise ValueError(f"unknown confidence loss {kind.name!r}")


def confidence_loss_grad(kind: ConfLossKind, logits, targets_iou, positive=None, n_pos: int | None = None) -> np.ndarray:
    """d(confidence_loss)/d(logits) for the selected kind."""
    if kind.name == "ce":
        return ce_confidence_loss_grad(logits, targets_iou, positive, n_pos)
    if kind.name == "weighted_ce":
        return weighted_ce_confidence_loss_grad(logits, targets_iou, positive, kind.w, n_pos)
    if kind.name == "gfocal":
        z, y, pos, n_pos = _prep_masked(logits, targets_iou, positive, n_pos)
        out = np.zeros_like(z)
        out[pos] = gfocal_loss_grad(z[pos], y[pos], n_pos, kind.beta)
        return out
    if kind.name == "l1":
        return l1_confidence_loss_grad(logits, targets_iou, positive, n_pos)
    if kind.name == "l2":
        return l2_confidence_loss_grad(logits, targets_iou, positive, n_pos)
    if kind.name == "smooth_l1":
        return smooth_l1_confidence_loss_grad(logits, targets_iou, positive, n_pos, kind.smooth_l1_threshold)
    raise ValueError(f"unknown confidence loss {kind.name!r}")


def sigmoid_regression_grad(kind: str, y, z, x) -> np.ndarray:
    """Per-sample weight gradient for h = sigmoid(theta . x) under l1/l2/ce.

    ``z`` is the pre-sigmoid value theta . x.  Scalar (y, z) with x of
    shape (d,) returns (d,); batched (n,) / (n, d) inputs return (n, d)
    per-sample gradients.  l1 returns the zero subgradient at y == h.
    """
    kind = kind.lower()
    if kind not in ("l1", "l2", "ce"):
        raise ValueError(f"kind must be one of l1, l2, ce; got {kind!r}")
    y_arr = np.asarray(y, dtype=np.float64)
    z_arr = np.asarray(z, dtype=np.float64)
    x_arr = np.asarray(x, dtype=np.float64)
    _check_targets(y_arr.reshape(-1))
    if y_arr.shape != z_arr.shape:
        raise ValueError("y and z must have the same shape")

    h = sigmoid(z_arr)
    if kind == "l1":
        factor = np.sign(h - y_arr) * h * (1.0 - h)
    elif kind == "l2":
        factor = (h - y_arr) * h * (1.0 - h)
    else:
        factor = h - y_arr

    if y_arr.ndim == 0:
        if x_arr.ndim != 1:
            raise ValueError(f"scalar y/z need x of shape (d,), got {x_arr.shape}")
        return factor * x_arr
    if y_arr.ndim == 1 and x_arr.ndim == 2 and x_arr.shape[0] == y_arr.shape[0]:
        return factor[:, None] * x_arr
    raise ValueError(f"incompatible shapes: y {y_arr.shape}, x {x_arr.shape}")


def total_loss(cls: float, loc: float, conf: float) -> LossBreakdown:
    """Combine the three task losses with unit weights."""
    parts = {"classification": cls, "localization": loc, "object_confidence": conf}
    for name, value in parts.items():
        if not math.isfinite(value) or value < 0.0:
            raise ValueError(f"{name} loss must be finite and non-negative, got {value}")
    return LossBreakdown(
        classification=cls,
        localization=loc,
        object_confidence=conf,
        total=cls + loc + conf,
    )
