"""Goal decoders: learned multi-header decoder, greedy NMS, weighted k-means.

All three consume the per-grid-node heatmap and emit M goals with scores;
score of a goal is always the heatmap value of the nearest grid node, and
mode probabilities are the scores normalized to sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import DiffValue
from .config import Config, DecoderConfig, NetConfig
from .da_graph import DAGraph
from .ls_graph import agent_anchors  # noqa: F401  (re-export convenience)
from .network import Dense, DualScaleNet, Norm, SceneFeatures, SceneGraphs
from .params import ParamStore

DECODER_KINDS = ("nn", "nms", "kmeans")


@dataclass
class GoalSet:
    goals: np.ndarray                      # (M, 2)
    scores: np.ndarray                     # (M,) heatmap value at nearest node
    header_assignments: Optional[np.ndarray] = None   # (M, K_eff), rows sum to 1
    candidate_idx: Optional[np.ndarray] = None        # (K_eff,) node indices
    goals_dv: Optional[DiffValue] = None   # differentiable goals (nn decoder)

    @property
    def M(self) -> int:
        return self.goals.shape[0]

    def probabilities(self) -> np.ndarray:
        total = self.scores.sum()
        if total <= 0.0:
            return np.full(self.M, 1.0 / self.M)
        return self.scores / total


def _nearest_scores(goals: np.ndarray, da: DAGraph, heatmap: np.ndarray) -> np.ndarray:
    from . import kernels

    idx = kernels.nearest_index(np.asarray(goals, dtype=np.float64), da.positions)
    return heatmap[idx]


# ---------------------------------------------------------------------------
# Learned decoder
# ---------------------------------------------------------------------------


class NNGoalDecoder:
    """Top-K candidate embedding, one self-attention round, M scoring headers.

    Each header softmax-weights the candidates and emits the weighted sum
    of their coordinates, so every goal lies in the candidate convex hull.
    The raw candidate scores enter the embedding detached: the selection
    boundary carries no gradient back into the heatmap head.
    """

    def __init__(self, store: ParamStore, cfg: NetConfig, name: str = "goal_dec"):
        from .network import POS_WAVELENGTHS

        d = cfg.d_dec
        self.cfg = cfg
        d_coord = 2 + 4 * len(POS_WAVELENGTHS)
        self.embed1 = Dense(store, f"{name}.emb1", cfg.d_da + 1 + d_coord, d)
        self.embed1_n = Norm(store, f"{name}.emb1_n", d)
        self.embed2 = Dense(store, f"{name}.emb2", d, d)
        self.embed2_n = Norm(store, f"{name}.emb2_n", d)
        self.wq = Dense(store, f"{name}.q", d, d, bias=False)
        self.wk = Dense(store, f"{name}.k", d, d, bias=False)
        self.wv = Dense(store, f"{name}.v", d, d, bias=False)
        self.wo = Dense(store, f"{name}.o", d, d)
        self.attn_n = Norm(store, f"{name}.attn_n", d)
        self.headers = []
        for m in range(cfg.M):
            self.headers.append(
                (
                    Dense(store, f"{name}.h{m}.l1", d, d),
                    Norm(store, f"{name}.h{m}.n1", d),
                    Dense(store, f"{name}.h{m}.l2", d, 1),
                    # learnable assignment temperature; >1 sharpens early
                    store.param(f"{name}.h{m}.tau", (1, 1), init="constant:2.0"),
                )
            )

    def select_candidates(self, heatmap: np.ndarray) -> np.ndarray:
        k = min(self.cfg.K_sel, heatmap.shape[0])
        order = np.argsort(-heatmap, kind="stable")   # ties -> lower index
        return np.sort(order[:k])

    def __call__(self, scene: SceneFeatures, da: DAGraph) -> GoalSet:
        from .network import position_encoding

        cand = self.select_candidates(scene.heatmap.data)
        coords = da.positions[cand]
        feats = ad.gather(scene.da_feats, cand)
        scores = ad.detach(ad.gather(ad.reshape(scene.heatmap, (-1, 1)), cand))
        emb_in = ad.concat(
            [feats, scores, ad.constant(position_encoding(coords))], axis=1
        )
        e = self.embed1_n(self.embed1(emb_in))
        e = self.embed2_n(self.embed2(e))

        q, k_, v = self.wq(e), self.wk(e), self.wv(e)
        att = ad.softmax(
            ad.scale(ad.matmul(q, ad.transpose(k_)), 1.0 / math.sqrt(e.shape[1])), axis=1
        )
        e = self.attn_n(ad.add(e, self.wo(ad.matmul(att, v))))

        goal_rows = []
        gamma_rows = []
        # goals = gamma @ coords, computed about the candidate centroid:
        # identical value (gamma rows sum to 1) but the gamma gradient then
        # scales with the candidate spread, not the absolute frame offset
        center = coords.mean(axis=0, keepdims=True)
        centered = ad.constant(coords - center)
        for l1, n1, l2, tau in self.headers:
            logits = ad.matmul(tau, ad.transpose(l2(n1(l1(e)))))   # (1, K)
            gamma = ad.softmax(logits, axis=1)
            goal_rows.append(ad.add_const(ad.matmul(gamma, centered), center))
            gamma_rows.append(gamma)
        goals_dv = ad.concat(goal_rows, axis=0)
        gamma_all = np.concatenate([g.data for g in gamma_rows], axis=0)
        goals = goals_dv.data.copy()
        return GoalSet(
            goals=goals,
            scores=_nearest_scores(goals, da, scene.heatmap.data),
            header_assignments=gamma_all,
            candidate_idx=cand,
            goals_dv=goals_dv,
        )


# ---------------------------------------------------------------------------
# Rule-based baselines
# ---------------------------------------------------------------------------


def nms_goal_decoder(heatmap: np.ndarray, da: DAGraph, cfg: DecoderConfig,
                     M: int = 6) -> GoalSet:
    """Greedy score-descending pick with a decaying suppression radius.

    A candidate is accepted when at least the current radius from every
    accepted goal; when the queue runs out short of M, the radius shrinks
    by the decay factor and the unaccepted candidates are rescanned from
    the top.
    """
    n = heatmap.shape[0]
    order = np.argsort(-heatmap, kind="stable")
    if n <= M:
        goals = da.positions[order]
        return GoalSet(goals=goals.copy(), scores=heatmap[order].copy())
    accepted: list[int] = []
    taken = np.zeros(n, dtype=bool)
    radius = cfg.nms_radius
    while len(accepted) < M:
        for i in order:
            if taken[i]:
                continue
            p = da.positions[i]
            ok = all(
                np.hypot(*(p - da.positions[j])) >= radius for j in accepted
            )
            if ok:
                accepted.append(i)
                taken[i] = True
                if len(accepted) == M:
                    break
        if len(accepted) < M:
            radius *= cfg.nms_decay
            if radius < 1e-9:   # duplicate-point degenerate guard
                for i in order:
                    if not taken[i]:
                        accepted.append(i)
                        taken[i] = True
                        if len(accepted) == M:
                            break
    idx = np.array(accepted)
    return GoalSet(goals=da.positions[idx].copy(), scores=heatmap[idx].copy())


def weighted_kmeans(points: np.ndarray, weights: np.ndarray, n_clusters: int,
                    iters: int, seed: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Weighted Lloyd iterations from weighted ++-style seeding.

    Returns (centroids, assignment, objective history); the weighted
    within-cluster squared distance never increases across iterations.
    """
    rng = np.random.default_rng(seed)
    w = weights.astype(np.float64)
    if w.sum() <= 0.0:
        w = np.ones_like(w)
    prob = w / w.sum()

    centers = np.empty((n_clusters, 2))
    pick = rng.choice(points.shape[0], p=prob)
    centers[0] = points[pick]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, n_clusters):
        mass = w * d2
        if mass.sum() <= 0.0:
            pick = rng.choice(points.shape[0], p=prob)
        else:
            pick = rng.choice(points.shape[0], p=mass / mass.sum())
        centers[c] = points[pick]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    assign = np.zeros(points.shape[0], dtype=np.int64)
    history: list[float] = []
    for _ in range(iters):
        dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        assign = np.argmin(dist, axis=1)
        history.append(float((w * dist[np.arange(len(points)), assign]).sum()))
        for c in range(n_clusters):
            sel = assign == c
            mass = w[sel].sum()
            if mass > 0.0:
                centers[c] = (points[sel] * w[sel, None]).sum(axis=0) / mass
    dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    assign = np.argmin(dist, axis=1)
    history.append(float((w * dist[np.arange(len(points)), assign]).sum()))
    return centers, assign, history


def kmeans_goal_decoder(heatmap: np.ndarray, da: DAGraph, cfg: DecoderConfig,
                        M: int = 6) -> GoalSet:
    """Centroids of the score-weighted goal-candidate coordinates.

    Clustering runs on the same top-scoring candidate set the learned
    decoder consumes (kmeans_top_k nodes); the flat background mass of a
    sigmoid heatmap would otherwise dominate the weighting.
    """
    k = min(cfg.kmeans_top_k, da.n_nodes) if cfg.kmeans_top_k else da.n_nodes
    cand = np.sort(np.argsort(-heatmap, kind="stable")[:k])
    centers, _, _ = weighted_kmeans(
        da.positions[cand], heatmap[cand], n_clusters=min(M, cand.shape[0]),
        iters=cfg.kmeans_iters, seed=cfg.kmeans_seed,
    )
    return GoalSet(goals=centers, scores=_nearest_scores(centers, da, heatmap))


# ---------------------------------------------------------------------------
# Prediction assembly
# ---------------------------------------------------------------------------


@dataclass
class PredictionSet:
    trajectories: np.ndarray    # (M, H, 2)
    probabilities: np.ndarray   # (M,) summing to 1
    goals: np.ndarray           # (M, 2)
    decoder: str
    heatmap: np.ndarray         # (N_da,)
    node_positions: np.ndarray  # (N_da, 2)


def decode_goals(kind: str, scene: SceneFeatures, da: DAGraph, cfg: Config,
                 nn_decoder: Optional[NNGoalDecoder] = None) -> GoalSet:
    if kind == "nn":
        if nn_decoder is None:
            raise ValueError("nn decoder requested without a decoder instance")
        return nn_decoder(scene, da)
    heat = scene.heatmap.data
    if kind == "nms":
        return nms_goal_decoder(heat, da, cfg.decoder, M=cfg.net.M)
    if kind == "kmeans":
        return kmeans_goal_decoder(heat, da, cfg.decoder, M=cfg.net.M)
    raise ValueError(f"unknown decoder kind '{kind}'")


def make_prediction(net: DualScaleNet, nn_decoder: NNGoalDecoder, g: SceneGraphs,
                    scene: SceneFeatures, kind: str, cfg: Config) -> PredictionSet:
    goal_set = decode_goals(kind, scene, g.da, cfg, nn_decoder)
    target_idx = g.scenario.target_index()
    flat = net.complete_trajectories(scene, target_idx, goal_set.goals)
    h = net.completion.h_steps
    trajs = flat.data.reshape(goal_set.M, h, 2).copy()
    return PredictionSet(
        trajectories=trajs,
        probabilities=goal_set.probabilities(),
        goals=goal_set.goals.copy(),
        decoder=kind,
        heatmap=scene.heatmap.data.copy(),
        node_positions=g.da.positions.copy(),
    )
