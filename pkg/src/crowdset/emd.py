"""Set-matching loss between a proposal's slot predictions and its padded
ground-truth set.

Each proposal emits ``k`` slot predictions. The loss pairs slots with the
padded ground-truth set one-to-one, scoring every pairing with a
classification term plus a regression term, and keeps the permutation with
the smallest total. At ``k == 1`` this reduces exactly to the ordinary
single-instance detection loss.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assignment import GtSet, pad_to_k
from .geometry import BBox, BoxDelta, encode_delta

# Probability floor inside log terms; a zero score is clamped, not an error.
SCORE_EPS = 1e-12

# Above this slot count, exhaustive permutation search gives way to an
# assignment solver (factorial guard).
ENUMERATION_LIMIT = 6

CLS_MODES = ("cross_entropy", "focal")


@dataclass(frozen=True)
class SlotPrediction:
    """One slot's output: a probability vector over classes (background at
    index 0) and a box-regression delta."""

    class_scores: np.ndarray
    delta: BoxDelta

    def __post_init__(self):
        scores = np.asarray(self.class_scores, dtype=np.float64)
        object.__setattr__(self, "class_scores", scores)
        if scores.ndim != 1 or scores.size < 2:
            raise ValueError("class_scores must be a 1-D vector with >= 2 classes")
        if np.any(scores < 0.0) or abs(float(scores.sum()) - 1.0) > 1e-6:
            raise ValueError("class_scores must be a probability vector (sum 1)")


@dataclass(frozen=True)
class PredictionSet:
    """The slot predictions attached to one proposal box."""

    proposal: BBox
    slots: tuple[SlotPrediction, ...]

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if not self.slots:
            raise ValueError("a prediction set needs at least one slot")


@dataclass(frozen=True)
class EmdConfig:
    """Knobs for the matching loss.

    ``cls_weight``/``reg_weight`` default to 1 (the two terms are summed
    unweighted); they exist so downstream training code can rebalance.
    """

    k: int = 2
    cls_mode: str = "cross_entropy"
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    smooth_l1_beta: float = 1.0
    cls_weight: float = 1.0
    reg_weight: float = 1.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if self.cls_mode not in CLS_MODES:
            raise ValueError(f"cls_mode must be one of {CLS_MODES}, got {self.cls_mode!r}")
        if self.focal_gamma < 0.0:
            raise ValueError("focal_gamma must be >= 0")
        if not 0.0 < self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must be in (0, 1]")
        if self.smooth_l1_beta <= 0.0:
            raise ValueError("smooth_l1_beta must be positive")


@dataclass(frozen=True)
class EmdMatch:
    """An optimal slot-to-target permutation with its cost breakdown."""

    permutation: tuple[int, ...]
    per_slot_cost: tuple[float, ...]
    total: float


def cls_loss(scores: np.ndarray, target_class: int, mode: str = "cross_entropy",
             gamma: float = 2.0, alpha: float = 0.25) -> float:
    """Classification loss of a probability vector against a target class.

    ``cross_entropy`` returns -log(p); ``focal`` returns
    -alpha * (1 - p)**gamma * log(p) where p is the target-class score, so
    gamma=0, alpha=1 recovers cross entropy.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target_class < scores.size:
        raise ValueError(f"target class {target_class} outside vocabulary of "
                         f"{scores.size} classes")
    p = max(float(scores[target_class]), SCORE_EPS)
    if mode == "cross_entropy":
        return -math.log(p)
    if mode == "focal":
        return -alpha * (1.0 - p) ** gamma * math.log(p)
    raise ValueError(f"cls_mode must be one of {CLS_MODES}, got {mode!r}")


def smooth_l1(x: float, beta: float = 1.0) -> float:
    """Huber-style penalty: quadratic inside ``beta``, linear outside."""
    ax = abs(x)
    if ax < beta:
        return 0.5 * x * x / beta
    return ax - 0.5 * beta


def reg_loss(pred: BoxDelta, proposal: BBox, target_box: BBox | None,
             beta: float = 1.0) -> float:
    """Smooth-L1 regression loss of a predicted delta against a target box.

    A dummy target (``None``) contributes exactly 0: background slots carry
    no regression supervision.
    """
    if target_box is None:
        return 0.0
    want = encode_delta(proposal, target_box)
    return (
        smooth_l1(pred.dx - want.dx, beta)
        + smooth_l1(pred.dy - want.dy, beta)
        + smooth_l1(pred.dw - want.dw, beta)
        + smooth_l1(pred.dh - want.dh, beta)
    )


def pair_cost_matrix(pred: PredictionSet, gts: GtSet, cfg: EmdConfig) -> np.ndarray:
    """(k, k) cost matrix: entry (i, j) scores slot i against GT slot j."""
    if len(pred.slots) != cfg.k:
        raise ValueError(f"prediction set has {len(pred.slots)} slots, config "
                         f"expects {cfg.k}")
    if gts.n_slots != cfg.k:
        raise ValueError(f"ground-truth set has {gts.n_slots} slots, config "
                         f"expects {cfg.k}")
    costs = np.zeros((cfg.k, cfg.k), dtype=np.float64)
    for i, slot in enumerate(pred.slots):
        for j in range(cfg.k):
            c = cls_loss(slot.class_scores, gts.slot_class(j), cfg.cls_mode,
                         cfg.focal_gamma, cfg.focal_alpha)
            r = reg_loss(slot.delta, pred.proposal, gts.slot_box(j),
                         cfg.smooth_l1_beta)
            costs[i, j] = cfg.cls_weight * c + cfg.reg_weight * r
    return costs


def emd_match(costs: np.ndarray) -> EmdMatch:
    """Minimum-total one-to-one matching of a square cost matrix.

    Up to ``ENUMERATION_LIMIT`` rows every permutation is tried and ties go
    to the lexicographically smallest permutation; larger matrices use an
    assignment solver (same optimum, tie order unspecified).
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or costs.shape[0] != costs.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {costs.shape}")
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix contains non-finite entries")
    k = costs.shape[0]
    if k <= ENUMERATION_LIMIT:
        best_perm = None
        best_total = math.inf
        for perm in itertools.permutations(range(k)):
            total = 0.0
            for i in range(k):
                total += costs[i, perm[i]]
            if total < best_total:
                best_total = total
                best_perm = perm
        perm = best_perm
    else:
        _, cols = linear_sum_assignment(costs)
        perm = tuple(int(c) for c in cols)
    per_slot = tuple(float(costs[i, perm[i]]) for i in range(k))
    total = 0.0
    for c in per_slot:
        total += c
    return EmdMatch(permutation=tuple(perm), per_slot_cost=per_slot, total=total)


def emd_loss(pred: PredictionSet, gts: GtSet, cfg: EmdConfig) -> EmdMatch:
    """Match a prediction set against a ground-truth set and return the
    minimum-cost pairing.

    Short sets are padded with background dummies internally; sets with more
    real members than ``cfg.k`` raise
    :class:`~crowdset.assignment.GtSetOverflowError` (truncate explicitly
    with :func:`~crowdset.assignment.truncate_top_k` first).
    """
    gts = pad_to_k(gts, cfg.k)
    return emd_match(pair_cost_matrix(pred, gts, cfg))
