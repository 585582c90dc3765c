import math

import numpy as np
import pytest

from lanegrid.decoders import PredictionSet
from lanegrid.errors import MissingGT
from lanegrid.evaluation import (
    aggregate_metrics,
    best_mode,
    brier_min_fde,
    min_ade,
    min_fde,
    miss_rate,
    report_records,
    scenario_metrics,
)


def straight(offset=(0.0, 0.0), h=30):
    t = np.arange(1, h + 1)[:, None] * [0.3, 0.0]
    return t + np.asarray(offset)


def pred_from(trajs, probs=None, decoder="nn"):
    trajs = np.asarray(trajs, dtype=np.float64)
    m = trajs.shape[0]
    probs = np.full(m, 1.0 / m) if probs is None else np.asarray(probs, dtype=np.float64)
    return PredictionSet(
        trajectories=trajs,
        probabilities=probs,
        goals=trajs[:, -1, :].copy(),
        decoder=decoder,
        heatmap=np.zeros(1),
        node_positions=np.zeros((1, 2)),
    )


class TestCoreMetrics:
    def test_exact_mode_zero(self):
        gt = straight()
        trajs = np.stack([gt, straight((5.0, 5.0))])
        assert min_ade(trajs, gt) == 0.0
        assert min_fde(trajs, gt) == 0.0

    def test_three_four_five_offset(self):
        gt = straight()
        trajs = straight((3.0, 4.0))[None]
        assert min_ade(trajs, gt) == pytest.approx(5.0, abs=1e-12)
        assert min_fde(trajs, gt) == pytest.approx(5.0, abs=1e-12)

    def test_random_sets_match_double_loop(self, rng):
        for _ in range(20):
            gt = rng.standard_normal((30, 2)).cumsum(axis=0)
            trajs = rng.standard_normal((6, 30, 2)).cumsum(axis=1)
            ade_ref = min(
                np.mean([np.linalg.norm(trajs[m, t] - gt[t]) for t in range(30)])
                for m in range(6)
            )
            fde_ref = min(np.linalg.norm(trajs[m, -1] - gt[-1]) for m in range(6))
            assert min_ade(trajs, gt) == pytest.approx(ade_ref, abs=1e-12)
            assert min_fde(trajs, gt) == pytest.approx(fde_ref, abs=1e-12)

    def test_miss_rate_fixture(self):
        # 10 crafted endpoint errors, exactly 3 above the 2 m threshold
        fdes = [0.0, 0.5, 1.2, 1.9, 2.0, 1.1, 2.01, 3.5, 0.2, 7.0]
        assert miss_rate(fdes) == pytest.approx(0.3)

    def test_miss_rate_extremes(self):
        assert miss_rate([0.0, 0.1, 1.99]) == 0.0
        assert miss_rate([5.0, 5.0]) == 1.0


class TestBrier:
    def test_probability_one_equals_min_fde(self):
        gt = straight()
        trajs = np.stack([straight((1.0, 0.0)), straight((9.0, 0.0))])
        probs = np.array([1.0, 0.0])
        assert brier_min_fde(trajs, probs, gt) == pytest.approx(
            min_fde(trajs, gt), abs=1e-12
        )

    def test_half_probability_adds_quarter(self):
        gt = straight()
        trajs = straight((1.0, 0.0))[None]
        assert brier_min_fde(trajs, np.array([0.5]), gt) == pytest.approx(1.25, abs=1e-12)

    def test_brier_bounds(self, rng):
        for _ in range(50):
            gt = rng.standard_normal((30, 2))
            trajs = rng.standard_normal((6, 30, 2))
            p = rng.random(6)
            p /= p.sum()
            fde = min_fde(trajs, gt)
            b = brier_min_fde(trajs, p, gt)
            assert b >= fde - 1e-12
            assert b <= fde + 1.0 + 1e-12

    def test_best_mode_tie_lower_index(self):
        gt = straight()
        trajs = np.stack([straight((0.0, 2.0)), straight((0.0, -2.0))])
        assert best_mode(trajs, gt) == 0

    def test_batch_average_cross_check(self, rng):
        preds = []
        gts = []
        for _ in range(8):
            gt = rng.standard_normal((30, 2))
            trajs = rng.standard_normal((6, 30, 2))
            p = rng.random(6)
            preds.append(pred_from(trajs, p / p.sum()))
            gts.append(gt)
        agg = aggregate_metrics([scenario_metrics(pr, gt) for pr, gt in zip(preds, gts)])
        want = np.mean([brier_min_fde(pr.trajectories, pr.probabilities, gt)
                        for pr, gt in zip(preds, gts)])
        assert agg["K6"]["brier_minFDE"] == pytest.approx(want, abs=1e-12)


class TestInvariance:
    def test_rigid_transform_invariance(self, rng):
        gt = rng.standard_normal((30, 2)).cumsum(axis=0)
        trajs = rng.standard_normal((4, 30, 2)).cumsum(axis=1)
        p = np.full(4, 0.25)
        theta = 0.73
        rot = np.array(
            [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
        )
        shift = np.array([12.0, -7.0])
        gt2 = gt @ rot.T + shift
        trajs2 = trajs @ rot.T + shift
        assert min_ade(trajs2, gt2) == pytest.approx(min_ade(trajs, gt), abs=1e-9)
        assert min_fde(trajs2, gt2) == pytest.approx(min_fde(trajs, gt), abs=1e-9)
        assert brier_min_fde(trajs2, p, gt2) == pytest.approx(
            brier_min_fde(trajs, p, gt), abs=1e-9
        )


class TestPerScenarioAndReports:
    def test_k1_uses_argmax_probability_mode(self):
        gt = straight()
        good = straight((0.5, 0.0))
        bad = straight((6.0, 0.0))
        pred = pred_from(np.stack([good, bad]), probs=[0.2, 0.8])
        m = scenario_metrics(pred, gt)
        # K=1 keeps the high-probability (bad) mode
        assert m["K1"]["minFDE"] == pytest.approx(6.0)
        assert m["K6"]["minFDE"] == pytest.approx(0.5)

    def test_report_record_fields(self):
        gt = straight()
        pred = pred_from(straight((1.0, 0.0))[None])
        agg = aggregate_metrics([scenario_metrics(pred, gt)])
        records = report_records(agg, split="val", decoder_kind="nms", n_scenarios=1)
        assert len(records) == 2
        for rec in records:
            assert set(rec) == {
                "split", "decoder", "K", "minADE", "minFDE", "MR",
                "brier_minFDE", "n_scenarios",
            }
        assert {rec["K"] for rec in records} == {1, 6}
        assert all(rec["decoder"] == "nms" for rec in records)

    def test_eval_refuses_missing_gt(self):
        from conftest import scene_with, square, straight_track
        from lanegrid.config import Config
        from lanegrid.decoders import NNGoalDecoder
        from lanegrid.evaluation import evaluate_dataset
        from lanegrid.network import DualScaleNet
        from lanegrid.params import ParamStore
        from conftest import toy_config

        cfg = toy_config()
        s = scene_with([square(10.0)])  # target has no gt_future
        store = ParamStore(0)
        net = DualScaleNet(store, cfg)
        dec = NNGoalDecoder(store, cfg.net)
        with pytest.raises(MissingGT):
            evaluate_dataset(net, dec, [s], cfg, "nn")
