"""Losses and the training loop.

The objective couples a focal heatmap classification term, a
winner-takes-all goal regression term (only the goal closest to the
ground-truth endpoint receives gradient), and a teacher-forced
trajectory term that conditions the completion net on the true goal.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .config import Config
from .da_graph import DAGraph
from .decoders import GoalSet, NNGoalDecoder
from .errors import MissingGTFuture
from .network import DualScaleNet, SceneGraphs, build_scene
from .autodiff import one_minus, powf
from .params import AdamHyper, ParamStore, optimizer_step, save_checkpoint
from .scenario import Scenario, augment

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Labels and losses
# ---------------------------------------------------------------------------


def goal_labels(da: DAGraph, gt_goal: np.ndarray, positive_radius: float,
                sigma_label: float) -> np.ndarray:
    """Soft target map: 1 inside the positive radius, Gaussian falloff outside."""
    d = np.linalg.norm(da.positions - np.asarray(gt_goal), axis=1)
    soft = np.exp(-(d * d) / (2.0 * sigma_label * sigma_label))
    return np.where(d < positive_radius, 1.0, soft)


def goal_classification_loss(heatmap: DiffValue, labels: np.ndarray,
                             alpha: float, beta: float) -> DiffValue:
    """Focal penalty over the heatmap, averaged by the positive count.

    Positives (label exactly 1) contribute (1-h)^alpha * log h; the rest
    contribute (1-label)^beta * h^alpha * log(1-h). With no positive node
    the divisor falls back to 1 (logged once per process).
    """
    pos = labels == 1.0
    n_pos = int(pos.sum())
    if n_pos == 0:
        log.warning("goal_classification_loss: no positive node within radius")
    h = ad.clip(heatmap, 1e-12, 1.0 - 1e-12)
    pos_terms = ad.mul(powf(one_minus(h), alpha), ad.log(h))
    neg_scale = np.power(1.0 - labels, beta) * (~pos)
    neg_terms = ad.mul(ad.mul(powf(h, alpha), ad.log(one_minus(h))), ad.constant(neg_scale))
    total = ad.add(
        ad.sum_all(ad.mul(pos_terms, ad.constant(pos.astype(np.float64)))),
        ad.sum_all(neg_terms),
    )
    return ad.scale(total, -1.0 / max(n_pos, 1))


def goal_regression_loss(goal_set: GoalSet, gt_goal: np.ndarray) -> tuple[DiffValue, int]:
    """Smooth-L1 between the closest predicted goal and the truth.

    Only the winning header's goal is in the graph; the others receive
    exactly zero gradient. Ties pick the lower header index.
    """
    gt = np.asarray(gt_goal, dtype=np.float64)
    d = np.linalg.norm(goal_set.goals - gt, axis=1)
    winner = int(np.argmin(d))
    if goal_set.goals_dv is None:
        raise ValueError("goal regression needs differentiable goals (nn decoder)")
    best = ad.gather(goal_set.goals_dv, np.array([winner]))
    return ad.sum_all(ad.smooth_l1(best, gt[None, :], delta=1.0)), winner


def trajectory_regression_loss(pred: DiffValue, gt_future: Optional[np.ndarray]) -> DiffValue:
    """Mean smooth-L1 over all H x 2 entries."""
    if gt_future is None:
        raise MissingGTFuture("trajectory loss requires a ground-truth future")
    return ad.mean_all(ad.smooth_l1(pred, np.asarray(gt_future, dtype=np.float64), delta=1.0))


def total_loss(l_gc: DiffValue, l_gr: DiffValue, l_tr: DiffValue,
               w1: float, w2: float) -> DiffValue:
    goal_part = ad.add(ad.scale(l_gc, w2), ad.scale(l_gr, 1.0 - w2))
    return ad.add(ad.scale(goal_part, w1), ad.scale(l_tr, 1.0 - w1))


@dataclass
class LossParts:
    total: float
    gc: float
    gr: float
    tr: float


def scenario_loss(net: DualScaleNet, decoder: NNGoalDecoder, g: SceneGraphs,
                  cfg: Config) -> tuple[DiffValue, LossParts]:
    """Forward one scene and assemble the combined objective."""
    tr_cfg = cfg.train
    target = g.scenario.target()
    if target.gt_future is None:
        raise MissingGTFuture(f"track '{target.id}' has no gt_future")
    gt_goal = target.gt_future[-1]

    scene = net.forward(g)
    labels = goal_labels(g.da, gt_goal, tr_cfg.positive_radius, tr_cfg.sigma_label)
    l_gc = goal_classification_loss(scene.heatmap, labels, tr_cfg.focal_alpha, tr_cfg.focal_beta)
    goal_set = decoder(scene, g.da)
    l_gr, _ = goal_regression_loss(goal_set, gt_goal)
    # teacher forcing: completion consumes the true endpoint during training
    pred = net.complete_trajectory(scene, g.scenario.target_index(), gt_goal)
    l_tr = trajectory_regression_loss(pred, target.gt_future)
    loss = total_loss(l_gc, l_gr, l_tr, tr_cfg.w1, tr_cfg.w2)
    return loss, LossParts(
        total=float(loss.data), gc=float(l_gc.data), gr=float(l_gr.data), tr=float(l_tr.data)
    )


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def lr_at_epoch(cfg: Config, epoch: int) -> float:
    """Constant lr, then linear decay from decay_start to the final epoch."""
    t = cfg.train
    if epoch <= t.lr_decay_start_epoch or t.epochs <= t.lr_decay_start_epoch:
        return t.lr_start
    frac = (epoch - t.lr_decay_start_epoch) / (t.epochs - t.lr_decay_start_epoch)
    return t.lr_start + frac * (t.lr_end - t.lr_start)


def _aug_seed(seed: int, epoch: int, idx: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, idx]).generate_state(1)[0])


@dataclass
class TrainResult:
    checkpoint_last: str
    checkpoint_best: str
    log_path: str
    final_metrics: Optional[dict]
    best_brier: float


def train(train_scenarios: list[Scenario], holdout_scenarios: list[Scenario],
          cfg: Config, out_dir: str,
          resume_from: Optional[str] = None) -> TrainResult:
    """Epoch loop with deterministic shuffling, lr schedule and eval cadence.

    Scenarios must already be normalized. Checkpoints: last epoch plus the
    best holdout Brier-minFDE (training split is reused when no holdout is
    given).
    """
    from .evaluation import evaluate_dataset

    os.makedirs(out_dir, exist_ok=True)
    t_cfg = cfg.train
    hyper = AdamHyper(beta1=t_cfg.adam_beta1, beta2=t_cfg.adam_beta2)
    start_epoch = 1
    if resume_from is not None:
        from .params import load_checkpoint

        store, meta = load_checkpoint(resume_from)
        start_epoch = int(meta.get("epoch", 0)) + 1
        best_brier = float(meta.get("best_brier", np.inf))
    else:
        store = ParamStore(init_seed=t_cfg.seed)
        best_brier = np.inf
    net = DualScaleNet(store, cfg)
    decoder = NNGoalDecoder(store, cfg.net)

    cached: list[Optional[SceneGraphs]] = [None] * len(train_scenarios)
    eval_pool = holdout_scenarios or train_scenarios

    log_path = os.path.join(out_dir, "train_log.jsonl")
    ckpt_last = os.path.join(out_dir, "ckpt_last.bin")
    ckpt_best = os.path.join(out_dir, "ckpt_best.bin")
    log_fh = open(log_path, "a" if resume_from else "w", encoding="utf-8")

    final_metrics = None
    try:
        for epoch in range(start_epoch, t_cfg.epochs + 1):
            lr = lr_at_epoch(cfg, epoch)
            order = np.random.default_rng([t_cfg.seed, epoch]).permutation(len(train_scenarios))
            store.zero_grads()
            pending = 0
            parts_sum = np.zeros(4)
            for idx in order:
                s = train_scenarios[idx]
                if t_cfg.augment:
                    bundle = build_scene(augment(s, _aug_seed(t_cfg.seed, epoch, int(idx))), cfg)
                else:
                    if cached[idx] is None:
                        cached[idx] = build_scene(s, cfg)
                    bundle = cached[idx]
                loss, parts = scenario_loss(net, decoder, bundle, cfg)
                if not np.isfinite(parts.total):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}")
                ad.backward(ad.scale(loss, 1.0 / t_cfg.batch_size))
                parts_sum += [parts.total, parts.gc, parts.gr, parts.tr]
                pending += 1
                if pending == t_cfg.batch_size:
                    optimizer_step(store, lr, hyper)
                    pending = 0
            if pending:
                optimizer_step(store, lr, hyper)

            record = {
                "epoch": epoch,
                "lr": lr,
                "loss": parts_sum[0] / len(order),
                "loss_gc": parts_sum[1] / len(order),
                "loss_gr": parts_sum[2] / len(order),
                "loss_tr": parts_sum[3] / len(order),
            }
            run_eval = epoch % t_cfg.eval_every == 0 or epoch == t_cfg.epochs
            if run_eval:
                metrics = evaluate_dataset(net, decoder, eval_pool, cfg, "nn")
                record["holdout"] = metrics
                final_metrics = metrics
                brier = metrics["K6"]["brier_minFDE"]
                if brier < best_brier:
                    best_brier = brier
                    save_checkpoint(
                        store, ckpt_best,
                        meta={"epoch": epoch, "best_brier": best_brier,
                              "config": cfg.to_dict()},
                    )
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()
            save_checkpoint(
                store, ckpt_last,
                meta={"epoch": epoch, "best_brier": best_brier, "config": cfg.to_dict()},
            )
    finally:
        log_fh.close()
    if not os.path.exists(ckpt_best):
        save_checkpoint(store, ckpt_best,
                        meta={"epoch": t_cfg.epochs, "best_brier": best_brier,
                              "config": cfg.to_dict()})
    return TrainResult(
        checkpoint_last=ckpt_last,
        checkpoint_best=ckpt_best,
        log_path=log_path,
        final_metrics=final_metrics,
        best_brier=float(best_brier),
    )
