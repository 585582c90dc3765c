"""Displacement metrics and evaluation reports.

All metrics take numpy arrays in any common rigid frame; K=1 rows use the
highest-probability mode, K=6 rows the full hypothesis set.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from .config import Config
from .decoders import NNGoalDecoder, PredictionSet, make_prediction
from .errors import MissingGT
from .network import DualScaleNet, build_scene
from .scenario import Scenario

MISS_THRESHOLD = 2.0  # meters on the endpoint error


def min_ade(trajectories: np.ndarray, gt: np.ndarray) -> float:
    """Min over modes of the mean per-step Euclidean error."""
    d = np.linalg.norm(trajectories - gt[None, :, :], axis=2)
    return float(d.mean(axis=1).min())


def min_fde(trajectories: np.ndarray, gt: np.ndarray) -> float:
    """Min over modes of the endpoint Euclidean error."""
    d = np.linalg.norm(trajectories[:, -1, :] - gt[-1], axis=1)
    return float(d.min())


def best_mode(trajectories: np.ndarray, gt: np.ndarray) -> int:
    """Mode achieving the endpoint minimum; ties go to the lower index."""
    d = np.linalg.norm(trajectories[:, -1, :] - gt[-1], axis=1)
    return int(np.argmin(d))


def brier_min_fde(trajectories: np.ndarray, probabilities: np.ndarray,
                  gt: np.ndarray) -> float:
    """minFDE plus (1 - p)^2 of the best mode's probability."""
    m = best_mode(trajectories, gt)
    fde = float(np.linalg.norm(trajectories[m, -1] - gt[-1]))
    p = float(probabilities[m])
    return fde + (1.0 - p) ** 2


def miss_rate(min_fdes) -> float:
    """Fraction of scenarios whose minFDE exceeds the 2 m threshold."""
    arr = np.asarray(list(min_fdes), dtype=np.float64)
    return float((arr > MISS_THRESHOLD).mean()) if arr.size else 0.0


def _top1(pred: PredictionSet) -> np.ndarray:
    return pred.trajectories[int(np.argmax(pred.probabilities))][None, :, :]


def scenario_metrics(pred: PredictionSet, gt_future: np.ndarray) -> dict:
    """Per-scenario raw numbers, keyed by K."""
    single = _top1(pred)
    p_single = np.ones(1)
    return {
        "K6": {
            "minADE": min_ade(pred.trajectories, gt_future),
            "minFDE": min_fde(pred.trajectories, gt_future),
            "brier_minFDE": brier_min_fde(pred.trajectories, pred.probabilities, gt_future),
        },
        "K1": {
            "minADE": min_ade(single, gt_future),
            "minFDE": min_fde(single, gt_future),
            "brier_minFDE": brier_min_fde(
                single, np.array([pred.probabilities.max()]), gt_future
            ),
        },
    }


def aggregate_metrics(per_scenario: list[dict]) -> dict:
    out = {}
    for key in ("K1", "K6"):
        rows = [m[key] for m in per_scenario]
        out[key] = {
            "minADE": float(np.mean([r["minADE"] for r in rows])),
            "minFDE": float(np.mean([r["minFDE"] for r in rows])),
            "MR": miss_rate(r["minFDE"] for r in rows),
            "brier_minFDE": float(np.mean([r["brier_minFDE"] for r in rows])),
        }
    return out


def evaluate_dataset(net: DualScaleNet, decoder: NNGoalDecoder,
                     scenarios: list[Scenario], cfg: Config,
                     decoder_kind: str) -> dict:
    """Forward + decode every scenario and average the metrics."""
    per = []
    for s in scenarios:
        target = s.target()
        if target.gt_future is None:
            raise MissingGT(f"scenario target '{target.id}' has no gt_future")
        bundle = build_scene(s, cfg)
        scene = net.forward(bundle)
        pred = make_prediction(net, decoder, bundle, scene, decoder_kind, cfg)
        per.append(scenario_metrics(pred, target.gt_future))
    return aggregate_metrics(per)


def report_records(metrics: dict, split: str, decoder_kind: str, n_scenarios: int) -> list[dict]:
    """One flat record per K, ready for JSONL output."""
    records = []
    for k_label, k in (("1", "K1"), ("6", "K6")):
        m = metrics[k]
        records.append(
            {
                "split": split,
                "decoder": decoder_kind,
                "K": int(k_label),
                "minADE": m["minADE"],
                "minFDE": m["minFDE"],
                "MR": m["MR"],
                "brier_minFDE": m["brier_minFDE"],
                "n_scenarios": n_scenarios,
            }
        )
    return records


def write_report(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def prediction_to_dict(pred: PredictionSet) -> dict:
    return {
        "schema_version": 1,
        "decoder": pred.decoder,
        "goals": pred.goals.tolist(),
        "probabilities": pred.probabilities.tolist(),
        "trajectories": pred.trajectories.tolist(),
        "heatmap": {
            "node_positions": pred.node_positions.tolist(),
            "scores": pred.heatmap.tolist(),
        },
    }


def write_prediction(pred: PredictionSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(prediction_to_dict(pred), fh, indent=1)
        fh.write("\n")


def read_prediction(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
