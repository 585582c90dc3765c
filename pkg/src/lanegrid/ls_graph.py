"""Lane-segment layer: resampled centerlines with typed adjacency.

Each centerline is cut into segments of roughly seg_len arc length; a
segment node carries midpoint, chord tangent and the lane's semantic
flags (8 feature dims total). Four typed relations link nodes:
predecessor/successor along and across lanes, left/right between
laterally adjacent lanes. Exact-hop powers of pre/suc (2^l for l < L)
are precomputed for the dilated lane convolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import EdgeConfig, LSConfig
from .errors import EmptyMap
from .scenario import Scenario


@dataclass
class LSGraph:
    positions: np.ndarray       # (N, 2) segment midpoints
    tangents: np.ndarray        # (N, 2) unit chord directions
    flags: np.ndarray           # (N, 4) bool
    lane_index: np.ndarray      # (N,) index into scenario.lanes
    seg_index: np.ndarray       # (N,) arc-order index within the lane
    A_pre: np.ndarray           # (N, N) bool
    A_suc: np.ndarray
    A_left: np.ndarray
    A_right: np.ndarray
    suc_pows: list[np.ndarray] = field(default_factory=list)  # exponents 2^l
    pre_pows: list[np.ndarray] = field(default_factory=list)
    seg_len: float = 2.0

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    def features(self) -> np.ndarray:
        """(N, 8) node features: midpoint, tangent, semantic flags."""
        return np.concatenate(
            [self.positions, self.tangents, self.flags.astype(np.float64)], axis=1
        )

    def to_debug_dict(self) -> dict:
        def pairs(a):
            r, c = np.nonzero(a)
            return np.stack([r, c], axis=1).tolist()

        return {
            "n_nodes": int(self.n_nodes),
            "seg_len": self.seg_len,
            "positions": self.positions.tolist(),
            "tangents": self.tangents.tolist(),
            "flags": self.flags.astype(int).tolist(),
            "pre": pairs(self.A_pre),
            "suc": pairs(self.A_suc),
            "left": pairs(self.A_left),
            "right": pairs(self.A_right),
            "suc_pows": [pairs(a) for a in self.suc_pows],
            "pre_pows": [pairs(a) for a in self.pre_pows],
        }


def _arc_interp(centerline: np.ndarray, arcs: np.ndarray) -> np.ndarray:
    seg = np.diff(centerline, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    x = np.interp(arcs, cum, centerline[:, 0])
    y = np.interp(arcs, cum, centerline[:, 1])
    return np.stack([x, y], axis=1)


def resample_lane(centerline: np.ndarray, seg_len: float):
    """Midpoints and chord tangents of ~seg_len arc slices (last may be short)."""
    seg = np.diff(centerline, axis=0)
    total = float(np.hypot(seg[:, 0], seg[:, 1]).sum())
    n_seg = max(1, math.ceil(total / seg_len - 1e-9))
    bounds = np.minimum(np.arange(n_seg + 1) * seg_len, total)
    lo_pts = _arc_interp(centerline, bounds[:-1])
    hi_pts = _arc_interp(centerline, bounds[1:])
    mids = (lo_pts + hi_pts) * 0.5
    chords = hi_pts - lo_pts
    norms = np.hypot(chords[:, 0], chords[:, 1])
    norms[norms < 1e-12] = 1.0
    return mids, chords / norms[:, None]


def bool_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact boolean matrix product (path concatenation)."""
    return (a.astype(np.float64) @ b.astype(np.float64)) > 0.5


def dilated_relations(base: np.ndarray, L: int) -> list[np.ndarray]:
    """Exact 2^l-hop reachability for l in [0, L) by repeated squaring."""
    pows = [base.copy()]
    for _ in range(1, L):
        pows.append(bool_matmul(pows[-1], pows[-1]))
    return pows


def build_ls_graph(s: Scenario, cfg: LSConfig) -> LSGraph:
    if not s.lanes:
        raise EmptyMap("scenario has no lanes")

    positions, tangents, flags = [], [], []
    lane_index, seg_index = [], []
    first_node: dict[str, int] = {}
    last_node: dict[str, int] = {}
    counts: dict[str, int] = {}
    for li, lane in enumerate(s.lanes):
        mids, tangs = resample_lane(lane.centerline, cfg.seg_len)
        first_node[lane.id] = len(positions)
        for j in range(len(mids)):
            positions.append(mids[j])
            tangents.append(tangs[j])
            flags.append(lane.flags.to_vector() > 0.5)
            lane_index.append(li)
            seg_index.append(j)
        last_node[lane.id] = len(positions) - 1
        counts[lane.id] = len(mids)

    n = len(positions)
    pos = np.array(positions)
    A_suc = np.zeros((n, n), dtype=bool)
    A_left = np.zeros((n, n), dtype=bool)
    A_right = np.zeros((n, n), dtype=bool)

    for lane in s.lanes:
        base = first_node[lane.id]
        for j in range(counts[lane.id] - 1):
            A_suc[base + j, base + j + 1] = True
        for suc in lane.successors:
            A_suc[last_node[lane.id], first_node[suc]] = True

    for lane in s.lanes:
        for rel, mat in (("left_neighbor", A_left), ("right_neighbor", A_right)):
            for other_id in getattr(lane, rel):
                o_base, o_count = first_node[other_id], counts[other_id]
                for j in range(counts[lane.id]):
                    gi = first_node[lane.id] + j
                    d2 = np.sum((pos[o_base : o_base + o_count] - pos[gi]) ** 2, axis=1)
                    jj = int(np.argmin(d2))
                    # lateral only: no diagonal links along the lanes
                    if abs(jj - j) <= 1:
                        mat[gi, o_base + jj] = True

    A_pre = A_suc.T.copy()
    g = LSGraph(
        positions=pos,
        tangents=np.array(tangents),
        flags=np.array(flags, dtype=bool),
        lane_index=np.array(lane_index, dtype=np.int64),
        seg_index=np.array(seg_index, dtype=np.int64),
        A_pre=A_pre,
        A_suc=A_suc,
        A_left=A_left,
        A_right=A_right,
        seg_len=cfg.seg_len,
    )
    g.suc_pows = dilated_relations(A_suc, cfg.L)
    g.pre_pows = dilated_relations(A_pre, cfg.L)
    return g


# ---------------------------------------------------------------------------
# Inter-layer edges
# ---------------------------------------------------------------------------


@dataclass
class EdgeSet:
    """Directed context->target pairs, stored target-major for aggregation."""

    src: np.ndarray        # (E,) context indices
    dst: np.ndarray        # (E,) target indices, ascending
    indptr: np.ndarray     # (n_dst + 1,) slice bounds per target
    n_src: int
    n_dst: int
    radius: float

    @classmethod
    def from_radius(cls, src_pos: np.ndarray, dst_pos: np.ndarray, radius: float) -> "EdgeSet":
        mask = kernels.within_radius_mask(src_pos, dst_pos, radius)
        dst, src = np.nonzero(mask.T)
        indptr = np.searchsorted(dst, np.arange(dst_pos.shape[0] + 1))
        return cls(
            src=src.astype(np.int64),
            dst=dst.astype(np.int64),
            indptr=indptr.astype(np.int64),
            n_src=src_pos.shape[0],
            n_dst=dst_pos.shape[0],
            radius=radius,
        )

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    def pairs(self) -> np.ndarray:
        return np.stack([self.src, self.dst], axis=1)

    def canonical(self) -> "EdgeSet":
        """Edges sorted by (dst, src); float accumulation order then never
        depends on how the caller ordered the pairs."""
        order = np.lexsort((self.src, self.dst))
        if np.array_equal(order, np.arange(order.shape[0])):
            return self
        dst = self.dst[order]
        indptr = np.searchsorted(dst, np.arange(self.n_dst + 1))
        return EdgeSet(
            src=self.src[order], dst=dst, indptr=indptr.astype(np.int64),
            n_src=self.n_src, n_dst=self.n_dst, radius=self.radius,
        )


@dataclass
class InterLayerEdges:
    da_to_ls: EdgeSet
    ls_to_da: EdgeSet
    agent_to_ls: EdgeSet
    ls_to_agent: EdgeSet
    da_to_agent: EdgeSet


def agent_anchors(s: Scenario) -> np.ndarray:
    """Present-time (t = 0) positions of every track."""
    return np.array([tr.positions()[-1] for tr in s.tracks])


def build_interlayer_edges(da_positions: np.ndarray, ls_positions: np.ndarray,
                           anchors: np.ndarray, cfg: EdgeConfig) -> InterLayerEdges:
    return InterLayerEdges(
        da_to_ls=EdgeSet.from_radius(da_positions, ls_positions, cfg.r_da_ls),
        ls_to_da=EdgeSet.from_radius(ls_positions, da_positions, cfg.r_da_ls),
        agent_to_ls=EdgeSet.from_radius(anchors, ls_positions, cfg.r_agent_ls),
        ls_to_agent=EdgeSet.from_radius(ls_positions, anchors, cfg.r_agent_ls),
        da_to_agent=EdgeSet.from_radius(da_positions, anchors, cfg.r_da_agent),
    )
