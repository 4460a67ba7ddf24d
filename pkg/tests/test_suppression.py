import numpy as np
import pytest

from crowdset.geometry import BBox, iou
from crowdset.suppression import (Detection, SuppressionConfig,
                                  bench_suppression, make_box_cloud, nms,
                                  set_nms, soft_nms, suppress)

B = BBox
NMS = SuppressionConfig(method="nms", iou_thresh=0.5)
SET = SuppressionConfig(method="set_nms", iou_thresh=0.5)


def det(x1, y1, x2, y2, score, class_id=1, pid=None, slot=0):
    return Detection(box=B(x1, y1, x2, y2), score=score, class_id=class_id,
                     proposal_id=pid, slot=slot)


def ids(dets):
    return [(d.proposal_id, d.slot) for d in dets]


def random_scene(rng, n=20, n_classes=1, distinct_pids=True):
    dets = []
    scores = rng.permutation(np.linspace(0.1, 0.95, n))  # distinct scores
    for i in range(n):
        x, y = rng.uniform(0, 60, 2)
        w, h = rng.uniform(5, 25, 2)
        dets.append(Detection(
            box=B(x, y, x + w, y + h), score=float(scores[i]),
            class_id=int(rng.integers(1, n_classes + 1)),
            proposal_id=i if distinct_pids else int(rng.integers(0, max(1, n // 3))),
            slot=0 if distinct_pids else i,
        ))
    return dets


class TestNms:
    def test_exact_duplicate_keeps_top(self):
        out = nms([det(0, 0, 10, 10, 0.9, pid=0),
                   det(0, 0, 10, 10, 0.8, pid=1)], NMS)
        assert len(out) == 1 and out[0].score == 0.9

    def test_disjoint_kept(self):
        out = nms([det(0, 0, 10, 10, 0.9), det(50, 50, 60, 60, 0.8)], NMS)
        assert len(out) == 2

    def test_three_box_chain(self):
        # A-B iou 0.6, B-C iou 0.6, A-C iou ~0.09: B suppressed by A, C
        # survives because B is already gone.
        a = det(0, 0, 10, 10, 0.9)
        b = det(0, 2.5, 10, 12.5, 0.8)    # iou(a,b) = 75/125 = 0.6
        c = det(0, 5, 10, 15, 0.7)        # iou(b,c) = 0.6, iou(a,c) = 50/150
        assert iou(a.box, b.box) == pytest.approx(0.6)
        assert iou(b.box, c.box) == pytest.approx(0.6)
        assert iou(a.box, c.box) < 0.5
        out = nms([a, b, c], NMS)
        assert [d.score for d in out] == [0.9, 0.7]

    def test_boundary_iou_exactly_at_threshold_kept(self):
        # iou = 50/100 = 0.5 exactly; suppression is strictly greater-than.
        a = det(0, 0, 10, 10, 0.9)
        b = det(0, 0, 10, 5, 0.8)
        assert iou(a.box, b.box) == 0.5
        assert len(nms([a, b], NMS)) == 2

    def test_empty_input(self):
        assert nms([], NMS) == []

    def test_score_ties_break_by_input_index(self):
        a = det(0, 0, 10, 10, 0.9, pid=0)
        b = det(0, 0, 10, 10, 0.9, pid=1)
        out = nms([a, b], NMS)
        assert len(out) == 1 and out[0].proposal_id == 0

    def test_different_classes_never_suppress(self):
        out = nms([det(0, 0, 10, 10, 0.9, class_id=1),
                   det(0, 0, 10, 10, 0.8, class_id=2)], NMS)
        assert len(out) == 2

    def test_output_descending_score(self):
        rng = np.random.default_rng(0)
        out = nms(random_scene(rng, 30), NMS)
        scores = [d.score for d in out]
        assert scores == sorted(scores, reverse=True)

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        for seed in range(20):
            dets = random_scene(np.random.default_rng(seed), 25)
            once = nms(dets, NMS)
            assert nms(once, NMS) == once

    def test_no_kept_pair_overlaps_beyond_threshold(self):
        for seed in range(20):
            out = nms(random_scene(np.random.default_rng(seed), 30), NMS)
            for i in range(len(out)):
                for j in range(i + 1, len(out)):
                    if out[i].class_id == out[j].class_id:
                        assert iou(out[i].box, out[j].box) <= NMS.iou_thresh

    def test_permutation_stability(self):
        rng = np.random.default_rng(2)
        dets = random_scene(rng, 30)
        base = set(ids(nms(dets, NMS)))
        for _ in range(10):
            shuffled = [dets[i] for i in rng.permutation(len(dets))]
            assert set(ids(nms(shuffled, NMS))) == base


class TestSetNms:
    def test_same_proposal_duplicates_both_kept(self):
        out = set_nms([det(0, 0, 10, 10, 0.9, pid=7, slot=0),
                       det(0, 0, 10, 10, 0.8, pid=7, slot=1)], SET)
        assert len(out) == 2

    def test_different_proposals_suppress(self):
        out = set_nms([det(0, 0, 10, 10, 0.9, pid=0),
                       det(0, 0, 10, 10, 0.8, pid=1)], SET)
        assert len(out) == 1

    def test_duplicate_pair_sets_hand_trace(self):
        # Proposals 1 and 2 each predict the same crowd pair; the whole
        # duplicate set from proposal 2 is removed.
        a1 = det(0, 0, 10, 10, 0.90, pid=1, slot=0)
        a2 = det(8, 0, 18, 10, 0.85, pid=1, slot=1)
        b1 = det(0.2, 0, 10.2, 10, 0.88, pid=2, slot=0)
        b2 = det(8.2, 0, 18.2, 10, 0.84, pid=2, slot=1)
        out = set_nms([a1, a2, b1, b2], SET)
        assert ids(out) == [(1, 0), (1, 1)]

    def test_equivalent_to_nms_with_distinct_proposals(self):
        for seed in range(50):
            dets = random_scene(np.random.default_rng(seed), 25, distinct_pids=True)
            assert set_nms(dets, SET) == nms(dets, NMS)

    def test_anonymous_detections_behave_distinct(self):
        dets = [det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)]
        assert set_nms(dets, SET) == nms(dets, NMS)
        assert len(set_nms(dets, SET)) == 1

    def test_idempotent(self):
        for seed in range(20):
            dets = random_scene(np.random.default_rng(seed), 25,
                                distinct_pids=False)
            once = set_nms(dets, SET)
            assert set_nms(once, SET) == once

    def test_kept_overlapping_pairs_share_proposal(self):
        for seed in range(30):
            dets = random_scene(np.random.default_rng(seed), 30,
                                distinct_pids=False)
            out = set_nms(dets, SET)
            for i in range(len(out)):
                for j in range(i + 1, len(out)):
                    if out[i].class_id != out[j].class_id:
                        continue
                    if iou(out[i].box, out[j].box) > SET.iou_thresh:
                        assert out[i].proposal_id == out[j].proposal_id

    def test_chain_through_skipped_box_drops_an_nms_survivor(self):
        # Literal greedy semantics: the same-proposal skip keeps B alive, and
        # B then suppresses C, which plain NMS would have kept. The kept set
        # is therefore not always a superset of the NMS output.
        a = det(0, 0, 10, 10, 0.9, pid=1, slot=0)
        b = det(2, 0, 12, 10, 0.8, pid=1, slot=1)   # iou(a,b) = 80/120
        c = det(5, 0, 15, 10, 0.7, pid=2, slot=0)   # iou(b,c) = 70/130, iou(a,c) = 50/150
        assert iou(a.box, b.box) > 0.5
        assert iou(b.box, c.box) > 0.5
        assert iou(a.box, c.box) < 0.5
        assert ids(nms([a, b, c], NMS)) == [(1, 0), (2, 0)]
        assert ids(set_nms([a, b, c], SET)) == [(1, 0), (1, 1)]


class TestSoftNms:
    LINEAR = SuppressionConfig(method="soft_linear", iou_thresh=0.5,
                               score_floor=0.0)
    GAUSS = SuppressionConfig(method="soft_gaussian", iou_thresh=0.5,
                              sigma=0.5, score_floor=0.0)

    def test_disjoint_scores_unchanged(self):
        dets = [det(0, 0, 10, 10, 0.9), det(50, 50, 60, 60, 0.8)]
        for cfg in (self.LINEAR, self.GAUSS):
            out = soft_nms(dets, cfg)
            assert sorted(d.score for d in out) == [0.8, 0.9]

    def test_linear_boundary_overlap_unchanged(self):
        # iou exactly at the threshold: strict inequality, no decay.
        a = det(0, 0, 10, 10, 0.9)
        b = det(0, 0, 10, 5, 0.8)
        out = soft_nms([a, b], self.LINEAR)
        assert sorted(d.score for d in out) == [0.8, 0.9]

    def test_linear_identical_boxes_rescore_to_zero(self):
        out = soft_nms([det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)],
                       self.LINEAR)
        assert out[0].score == 0.9
        assert out[1].score == 0.0  # 0.8 * (1 - 1.0)

    def test_gaussian_decay_formula(self):
        a = det(0, 0, 10, 10, 0.9)
        b = det(0, 2.5, 10, 12.5, 0.8)  # iou 0.6
        out = soft_nms([a, b], self.GAUSS)
        want = 0.8 * np.exp(-0.6 ** 2 / 0.5)
        assert out[1].score == pytest.approx(want, rel=1e-12)

    def test_score_floor_drops(self):
        cfg = SuppressionConfig(method="soft_linear", iou_thresh=0.5,
                                score_floor=0.001)
        out = soft_nms([det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)], cfg)
        assert len(out) == 1

    def test_classes_independent(self):
        out = soft_nms([det(0, 0, 10, 10, 0.9, class_id=1),
                        det(0, 0, 10, 10, 0.8, class_id=2)], self.LINEAR)
        assert sorted(d.score for d in out) == [0.8, 0.9]


class TestSuppressDispatch:
    def test_dispatches_by_method(self):
        dets = [det(0, 0, 10, 10, 0.9, pid=0, slot=0),
                det(0, 0, 10, 10, 0.8, pid=0, slot=1)]
        assert len(suppress(dets, NMS)) == 1
        assert len(suppress(dets, SET)) == 2

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError):
            SuppressionConfig(method="magic")


class TestBench:
    def test_single_box_every_method(self):
        for method in ("nms", "set_nms", "soft_linear", "soft_gaussian"):
            rep = bench_suppression(1, 1, SuppressionConfig(method=method),
                                    seed=0, repeats=1)
            assert rep.kept == 1

    def test_disjoint_cloud_keeps_everything(self):
        dets = make_box_cloud(64, 1, seed=3)
        assert len(nms(dets, NMS)) == 64
        assert len(set_nms(dets, SET)) == 64

    def test_identical_cloud_collapses_to_one(self):
        dets = make_box_cloud(100, 100, seed=5)
        assert len({d.box.as_tuple() for d in dets}) == 1
        assert len({d.proposal_id for d in dets}) == 100
        assert len(nms(dets, NMS)) == 1
        assert len(set_nms(dets, SET)) == 1

    def test_cloud_deterministic(self):
        assert make_box_cloud(50, 5, seed=9) == make_box_cloud(50, 5, seed=9)

    def test_report_fields(self):
        rep = bench_suppression(200, 4, NMS, seed=1, repeats=2)
        assert rep.n_boxes == 200
        assert rep.seconds > 0
        assert rep.boxes_per_sec > 0
