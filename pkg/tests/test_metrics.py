import math

import numpy as np
import pytest

from crowdset.assignment import GroundTruth
from crowdset.geometry import BBox
from crowdset.metrics import (CROWD_IOU, FP, IGNORED, TP, EvalConfig,
                              average_precision, best_ji, crowd_flags,
                              density_stats, evaluate, jaccard_index,
                              match_greedy, mr2, recall_split)
from crowdset.scene_io import SceneRecord
from crowdset.suppression import Detection

B = BBox
CFG = EvalConfig()


def gt(x1, y1, x2, y2, class_id=1, ignore=False):
    return GroundTruth(box=B(x1, y1, x2, y2), class_id=class_id, ignore=ignore)


def det(x1, y1, x2, y2, score, class_id=1):
    return Detection(box=B(x1, y1, x2, y2), score=score, class_id=class_id)


def scene(sid, gts, dets=()):
    return SceneRecord(id=sid, gts=list(gts), dets=list(dets))


def perfect_scene(sid, boxes, score=0.9):
    gts = [gt(*b) for b in boxes]
    dets = [det(*b, score=score) for b in boxes]
    return scene(sid, gts, dets)


def random_scenes(rng, n_scenes, quantize=None, n_classes=1):
    scenes = []
    for i in range(n_scenes):
        gts, dets = [], []
        for _ in range(int(rng.integers(1, 7))):
            x, y = rng.uniform(0, 300, 2)
            w, h = rng.uniform(10, 60, 2)
            cls = int(rng.integers(1, n_classes + 1))
            gts.append(gt(x, y, x + w, y + h, class_id=cls))
            # A detection near the gt with some probability, plus noise dets.
            if rng.random() < 0.75:
                jx, jy = rng.uniform(-8, 8, 2)
                s = float(rng.uniform(0.05, 0.99))
                if quantize:
                    s = round(round(s / quantize) * quantize, 10)
                dets.append(det(x + jx, y + jy, x + w + jx, y + h + jy, s,
                                class_id=cls))
        for _ in range(int(rng.integers(0, 3))):
            x, y = rng.uniform(0, 300, 2)
            s = float(rng.uniform(0.05, 0.99))
            if quantize:
                s = round(round(s / quantize) * quantize, 10)
            dets.append(det(x, y, x + rng.uniform(10, 60), y + rng.uniform(10, 60),
                            s, class_id=int(rng.integers(1, n_classes + 1))))
        scenes.append(scene(f"s{i}", gts, dets))
    return scenes


class TestMatchGreedy:
    def test_exact_hit_is_tp(self):
        res = match_greedy([det(0, 0, 10, 10, 0.9)], [gt(0, 0, 10, 10)], 0.5)
        assert res.det_flags.tolist() == [TP]
        assert res.gt_matched.tolist() == [True]

    def test_one_to_one_second_det_is_fp(self):
        res = match_greedy([det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)],
                           [gt(0, 0, 10, 10)], 0.5)
        assert res.det_flags.tolist() == [TP, FP]

    def test_ignored_only_overlap_excluded(self):
        res = match_greedy([det(0, 0, 10, 10, 0.9)],
                           [gt(0, 0, 10, 10, ignore=True)], 0.5)
        assert res.det_flags.tolist() == [IGNORED]
        assert res.gt_matched.tolist() == [False]

    def test_class_mismatch_is_fp(self):
        res = match_greedy([det(0, 0, 10, 10, 0.9, class_id=2)],
                           [gt(0, 0, 10, 10, class_id=1)], 0.5)
        assert res.det_flags.tolist() == [FP]

    def test_higher_score_matches_first(self):
        res = match_greedy([det(0, 0, 10, 10, 0.5), det(0, 0, 10, 10, 0.9)],
                           [gt(0, 0, 10, 10)], 0.5)
        assert res.det_flags.tolist() == [FP, TP]

    def test_prefers_highest_iou(self):
        d = det(0, 0, 10, 10, 0.9)
        loose = gt(0, 2.5, 10, 12.5)   # iou 0.6
        tight = gt(0, 0, 10, 10)       # iou 1.0
        res = match_greedy([d], [loose, tight], 0.5)
        assert res.det_match.tolist() == [1]

    def test_no_double_booking(self):
        rng = np.random.default_rng(3)
        for s in random_scenes(rng, 30):
            res = match_greedy(s.dets, s.gts, 0.5)
            matched = [m for m in res.det_match if m >= 0]
            assert len(matched) == len(set(matched))
            assert ((res.det_flags == TP) == (res.det_match >= 0)).all()


class TestAveragePrecision:
    def test_perfect_is_one(self):
        scenes = [perfect_scene("a", [(0, 0, 10, 10), (50, 50, 70, 80)])]
        assert average_precision(scenes, CFG) == 1.0

    def test_no_detections_is_zero(self):
        assert average_precision([scene("a", [gt(0, 0, 10, 10)])], CFG) == 0.0

    def test_hand_computed_half(self):
        # 1 gt; FP at 0.9, TP at 0.8: precision at full recall is 1/2.
        s = scene("a", [gt(0, 0, 10, 10)],
                  [det(100, 100, 120, 120, 0.9), det(0, 0, 10, 10, 0.8)])
        assert average_precision([s], CFG) == 0.5

    def test_zero_gts_is_an_error(self):
        with pytest.raises(ValueError):
            average_precision([scene("a", [], [det(0, 0, 1, 1, 0.5)])], CFG)

    def test_high_scoring_fp_never_increases_ap(self):
        rng = np.random.default_rng(11)
        for s in random_scenes(rng, 15):
            base = average_precision([s], CFG)
            spiked = scene(s.id, s.gts,
                           list(s.dets) + [det(500, 500, 510, 510, 0.995)])
            assert average_precision([spiked], CFG) <= base + 1e-12

    def test_image_order_invariance(self):
        rng = np.random.default_rng(13)
        scenes = random_scenes(rng, 12)
        base = average_precision(scenes, CFG)
        assert average_precision(scenes[::-1], CFG) == pytest.approx(base, abs=1e-12)

    def test_eleven_point_close_to_all_points(self):
        rng = np.random.default_rng(17)
        scenes = random_scenes(rng, 20)
        ap_all = average_precision(scenes, CFG)
        ap11 = average_precision(scenes, EvalConfig(ap_interpolation="eleven_point"))
        assert 0.0 <= ap11 <= 1.0
        assert abs(ap_all - ap11) < 0.15


class TestMr2:
    def test_perfect_detector_is_zero(self):
        scenes = [perfect_scene("a", [(0, 0, 10, 10)])]
        assert mr2(scenes, CFG) <= 1e-9

    def test_empty_detector_is_one(self):
        assert mr2([scene("a", [gt(0, 0, 10, 10)])], CFG) == 1.0

    def test_hand_built_curve(self):
        # One image, 2 gts, dets TP@0.9, FP@0.8, TP@0.7.
        s = scene("a", [gt(0, 0, 10, 10), gt(50, 50, 60, 60)],
                  [det(0, 0, 10, 10, 0.9), det(200, 200, 210, 210, 0.8),
                   det(50, 50, 60, 60, 0.7)])
        # Independent oracle: evaluate the hand-built curve at the 9 log
        # points. Curve operating points: (0,1) empty, (0,0.5), (1,0.5), (1,0).
        pts = [(0.0, 1.0), (0.0, 0.5), (1.0, 0.5), (1.0, 0.0)]
        refs = [10 ** e for e in np.linspace(-2, 2, 9)]
        samples = [min(m for f, m in pts if f <= r) for r in refs]
        want = math.exp(sum(math.log(max(m, 1e-10)) for m in samples) / len(samples))
        assert mr2([s], CFG) == pytest.approx(want, rel=1e-12)
        assert want == pytest.approx(2.0448117651147883e-06, rel=1e-9)

    def test_zero_gts_is_an_error(self):
        with pytest.raises(ValueError):
            mr2([scene("a", [], [])], CFG)

    def test_high_scoring_fp_never_decreases_mr2(self):
        rng = np.random.default_rng(19)
        for s in random_scenes(rng, 15):
            base = mr2([s], CFG)
            spiked = scene(s.id, s.gts,
                           list(s.dets) + [det(500, 500, 510, 510, 0.995)])
            assert mr2([spiked], CFG) >= base - 1e-12


class TestJaccard:
    def test_perfect_is_one(self):
        scenes = [perfect_scene("a", [(0, 0, 10, 10), (40, 40, 60, 60)])]
        assert jaccard_index(scenes, CFG, 0.5) == 1.0

    def test_no_detections_is_zero(self):
        assert jaccard_index([scene("a", [gt(0, 0, 10, 10)])], CFG, 0.5) == 0.0

    def test_one_matchable_pair_of_two(self):
        # 2 dets, 2 gts, only one matchable pair: 1 / (2 + 2 - 1) = 1/3.
        s = scene("a", [gt(0, 0, 10, 10), gt(100, 100, 110, 110)],
                  [det(0, 0, 10, 10, 0.9), det(300, 300, 310, 310, 0.8)])
        assert jaccard_index([s], CFG, 0.0) == pytest.approx(1 / 3, abs=0)

    def test_empty_dataset_is_vacuously_one(self):
        assert jaccard_index([scene("a", [], [])], CFG, 0.5) == 1.0

    def test_threshold_filters_detections(self):
        s = scene("a", [gt(0, 0, 10, 10)], [det(0, 0, 10, 10, 0.4)])
        assert jaccard_index([s], CFG, 0.5) == 0.0
        assert jaccard_index([s], CFG, 0.4) == 1.0

    def test_optimal_beats_greedy_on_crossing_fixture(self):
        # Greedy gives the high-score det the best gt and strands the other;
        # maximum matching pairs both.
        g1 = gt(0, 0, 10, 10)
        g2 = gt(0, 4, 10, 14)
        d1 = det(0, 1, 10, 11, 0.9)    # overlaps both, higher iou on g1
        d2 = det(0, 0.5, 10, 10.5, 0.8)  # qualifies only with g1
        s = scene("a", [g1, g2], [d1, d2])
        opt = jaccard_index([s], EvalConfig(ji_matching="optimal"), 0.0)
        greedy = jaccard_index([s], EvalConfig(ji_matching="greedy"), 0.0)
        assert opt == pytest.approx(2 / (2 + 2 - 2), abs=0)
        assert greedy == pytest.approx(1 / (2 + 2 - 1), abs=0)
        assert opt > greedy


class TestBestJi:
    def test_single_perfect_detection(self):
        s = scene("a", [gt(0, 0, 10, 10)], [det(0, 0, 10, 10, 0.7)])
        assert best_ji([s], CFG) == (1.0, 0.7)

    def test_threshold_cuts_fp(self):
        s = scene("a", [gt(0, 0, 10, 10)],
                  [det(0, 0, 10, 10, 0.9), det(100, 100, 110, 110, 0.5)])
        val, thr = best_ji([s], CFG)
        assert val == 1.0 and thr == 0.9

    def test_matches_dense_grid_sweep(self):
        # Scores are quantized to 0.01 so every inter-score gap contains a
        # 1e-3 grid point and the grid realizes every threshold set.
        rng = np.random.default_rng(23)
        scenes = random_scenes(rng, 100, quantize=0.01)
        val, thr = best_ji(scenes, CFG)
        grid = np.arange(0.0, 1.001, 0.001)
        grid_best = max(jaccard_index(scenes, CFG, t) for t in grid)
        assert val == pytest.approx(grid_best, abs=1e-9)
        assert val == pytest.approx(jaccard_index(scenes, CFG, thr), abs=1e-9)

    def test_at_least_any_fixed_threshold(self):
        rng = np.random.default_rng(29)
        scenes = random_scenes(rng, 30)
        val, _ = best_ji(scenes, CFG)
        for t in (0.1, 0.3, 0.5, 0.7, 0.9):
            assert val >= jaccard_index(scenes, CFG, t) - 1e-12

    def test_empty_everything(self):
        val, thr = best_ji([scene("a", [], [])], CFG)
        assert val == 1.0 and thr == math.inf


class TestRecallSplit:
    def test_pair_is_crowd(self):
        gts = [gt(0, 0, 10, 10), gt(0, 2.5, 10, 12.5)]  # iou 0.6
        flags = crowd_flags(gts)
        assert flags.tolist() == [True, True]

    def test_isolated_is_sparse(self):
        assert crowd_flags([gt(0, 0, 10, 10)]).tolist() == [False]

    def test_two_crowd_one_sparse(self):
        gts = [gt(0, 0, 10, 10), gt(0, 2.5, 10, 12.5), gt(100, 100, 120, 140)]
        s = scene("a", gts, [det(0, 0, 10, 10, 0.9)])
        total, sparse, crowd = recall_split([s], CFG, 0.0)
        assert (crowd.total, sparse.total) == (2, 1)
        assert (crowd.matched, sparse.matched) == (1, 0)
        assert total.matched == sparse.matched + crowd.matched
        assert total.total == sparse.total + crowd.total

    def test_matches_brute_force_pairwise_oracle(self):
        from crowdset.geometry import iou as scalar_iou
        rng = np.random.default_rng(31)
        for s in random_scenes(rng, 25):
            flags = crowd_flags(s.gts)
            for j, g in enumerate(s.gts):
                want = any(scalar_iou(g.box, o.box) > CROWD_IOU
                           for jj, o in enumerate(s.gts) if jj != j)
                assert flags[j] == want

    def test_partition_consistency_random(self):
        rng = np.random.default_rng(37)
        scenes = random_scenes(rng, 20)
        total, sparse, crowd = recall_split(scenes, CFG, 0.3)
        assert total.total == sparse.total + crowd.total
        assert total.matched == sparse.matched + crowd.matched


class TestEvaluate:
    def test_report_ranges(self):
        rng = np.random.default_rng(41)
        scenes = random_scenes(rng, 25)
        rep = evaluate(scenes, CFG)
        assert 0.0 <= rep.ap <= 1.0
        assert 0.0 <= rep.mr2 <= 1.0
        assert 0.0 <= rep.ji <= 1.0
        assert rep.recall_total.total == rep.recall_sparse.total + rep.recall_crowd.total

    def test_detection_order_invariance(self):
        rng = np.random.default_rng(43)
        scenes = random_scenes(rng, 10)
        base = evaluate(scenes, CFG)
        shuffled = [SceneRecord(id=s.id, gts=s.gts,
                                dets=[s.dets[i] for i in
                                      rng.permutation(len(s.dets))])
                    for s in scenes]
        got = evaluate(shuffled, CFG)
        assert got.ap == pytest.approx(base.ap, abs=1e-12)
        assert got.mr2 == pytest.approx(base.mr2, abs=1e-12)
        assert got.ji == pytest.approx(base.ji, abs=1e-12)


class TestDensity:
    def test_counts(self):
        s1 = scene("a", [gt(0, 0, 10, 10), gt(0, 2.5, 10, 12.5),
                         gt(100, 100, 110, 110)])
        s2 = scene("b", [gt(0, 0, 10, 10)])
        d = density_stats([s1, s2])
        assert d.objects_per_image == 2.0
        assert d.overlaps_per_image == 0.5

    def test_empty(self):
        assert density_stats([]).objects_per_image == 0.0
