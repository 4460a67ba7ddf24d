"""Per-proposal ground-truth set construction and dummy padding.

A proposal's ground-truth set holds every annotated instance whose IoU with
the proposal reaches the membership threshold ``theta``. Before matching,
the set is padded to a fixed cardinality with background "dummy" slots that
carry no regression target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Iterable, Sequence

from .geometry import BBox, iou

if TYPE_CHECKING:
    from .scene_io import SceneRecord

# Class id reserved for "no instance"; real annotations use ids >= 1.
BACKGROUND_CLASS = 0


class GtSetOverflowError(ValueError):
    """A ground-truth set holds more real members than the slot budget.

    ``excess`` counts the members beyond the budget. Callers opt into
    truncation explicitly via :func:`truncate_top_k`; silently dropping
    labels is never the default.
    """

    def __init__(self, n_real: int, k: int):
        self.excess = n_real - k
        super().__init__(
            f"ground-truth set has {n_real} real members but only {k} slots "
            f"(excess {self.excess})"
        )


@dataclass(frozen=True)
class GroundTruth:
    """An annotated instance box with class tag and ignore flag."""

    box: BBox
    class_id: int = 1
    ignore: bool = False

    def __post_init__(self):
        if self.class_id < 0:
            raise ValueError(f"class_id must be non-negative, got {self.class_id}")
        if self.class_id == BACKGROUND_CLASS:
            raise ValueError("a real instance cannot carry the background class")


@dataclass(frozen=True)
class GtSet:
    """Ground truths assigned to one proposal, ordered by descending IoU.

    ``entries`` holds only real members; ``n_slots`` is the total slot count
    after padding, so the trailing ``n_slots - len(entries)`` slots are
    background dummies without a box target.
    """

    entries: tuple[GroundTruth, ...]
    source_proposal: BBox
    theta: float
    n_slots: int

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")
        if self.n_slots < len(self.entries):
            raise ValueError("n_slots cannot be smaller than the real member count")
        for g in self.entries:
            if g.ignore:
                raise ValueError("ignored ground truths cannot be set members")
            if iou(self.source_proposal, g.box) < self.theta:
                raise ValueError(
                    f"member {g.box} falls below theta={self.theta} for proposal "
                    f"{self.source_proposal}"
                )

    @property
    def n_real(self) -> int:
        return len(self.entries)

    @property
    def n_dummy(self) -> int:
        return self.n_slots - len(self.entries)

    def slot_class(self, j: int) -> int:
        """Class id of slot ``j``; dummies report the background class."""
        if not 0 <= j < self.n_slots:
            raise IndexError(f"slot {j} out of range for {self.n_slots} slots")
        if j < len(self.entries):
            return self.entries[j].class_id
        return BACKGROUND_CLASS

    def slot_box(self, j: int) -> BBox | None:
        """Box target of slot ``j``; ``None`` for dummies."""
        if not 0 <= j < self.n_slots:
            raise IndexError(f"slot {j} out of range for {self.n_slots} slots")
        if j < len(self.entries):
            return self.entries[j].box
        return None


def build_gt_set(proposal: BBox, gts: Sequence[GroundTruth], theta: float) -> GtSet:
    """Collect the ground truths overlapping ``proposal`` with IoU >= theta.

    Ignored annotations never become members. The result is ordered by
    descending IoU with the proposal, ties broken by input index, and is
    unpadded (``n_slots == n_real``).
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must be in (0, 1], got {theta}")
    members = []
    for i, g in enumerate(gts):
        if g.ignore:
            continue
        v = iou(proposal, g.box)
        if v >= theta:
            members.append((-v, i, g))
    members.sort(key=lambda t: (t[0], t[1]))
    entries = tuple(g for _, _, g in members)
    return GtSet(entries=entries, source_proposal=proposal, theta=theta,
                 n_slots=len(entries))


def pad_to_k(gt_set: GtSet, k: int) -> GtSet:
    """Pad (or re-pad) a set to exactly ``k`` slots with trailing dummies.

    Raises :class:`GtSetOverflowError` when the set holds more than ``k``
    real members; idempotent when already at size ``k``.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if gt_set.n_real > k:
        raise GtSetOverflowError(gt_set.n_real, k)
    if gt_set.n_slots == k:
        return gt_set
    return replace(gt_set, n_slots=k)


def truncate_top_k(gt_set: GtSet, k: int) -> GtSet:
    """Keep the ``k`` highest-IoU members, then pad to ``k`` slots.

    This is the opt-in overflow policy; see :class:`GtSetOverflowError`.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if gt_set.n_real <= k:
        return pad_to_k(gt_set, k)
    return replace(gt_set, entries=gt_set.entries[:k], n_slots=k)


def max_gt_set_cardinality(scenes: Iterable["SceneRecord"], theta: float) -> int:
    """Largest ground-truth set cardinality across a dataset.

    Each non-ignored ground-truth box stands in as a proposal (the densest
    proposal a detector could place on that instance); the result bounds the
    slot count needed so no set overflows. Empty datasets return 0.
    """
    best = 0
    for scene in scenes:
        gts = scene.gts
        for g in gts:
            if g.ignore:
                continue
            best = max(best, build_gt_set(g.box, gts, theta).n_real)
    return best
