"""Pure-numpy implementations of the hot geometry and scatter kernels.

This is the reference backend. The numba backend mirrors each function
operation-for-operation so that both produce bitwise-identical results;
any change here must be replicated there (enforced by the parity tests).
"""

from __future__ import annotations

import numpy as np

# Points within BOUNDARY_EPS of a polygon edge count as inside. Drivable
# windows are sampled on exact polygon boundaries, so the test must be
# inclusive; for obstacles this errs on the blocked side.
BOUNDARY_EPS = 1e-9


def points_in_polygon(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Inclusive point-in-polygon test for many points against one ring.

    points: (N, 2) float64, verts: (V, 2) float64 open ring (no repeated
    first vertex). Returns (N,) bool. Boundary points are inside.
    """
    px = points[:, 0]
    py = points[:, 1]
    n_verts = verts.shape[0]
    inside = np.zeros(points.shape[0], dtype=np.bool_)
    on_edge = np.zeros(points.shape[0], dtype=np.bool_)
    eps2 = BOUNDARY_EPS * BOUNDARY_EPS
    for e in range(n_verts):
        ax, ay = verts[e, 0], verts[e, 1]
        bx, by = verts[(e + 1) % n_verts, 0], verts[(e + 1) % n_verts, 1]
        abx = bx - ax
        aby = by - ay
        ab2 = abx * abx + aby * aby
        if ab2 > 0.0:
            t = ((px - ax) * abx + (py - ay) * aby) / ab2
            t = np.minimum(np.maximum(t, 0.0), 1.0)
        else:
            t = np.zeros_like(px)
        dx = px - (ax + t * abx)
        dy = py - (ay + t * aby)
        on_edge |= dx * dx + dy * dy <= eps2
        # Even-odd crossing of the +x ray from each point.
        straddles = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xin = ax + abx * (py - ay) / (by - ay)
        inside ^= straddles & (xin > px)
    return inside | on_edge


def segments_blocked(
    p0: np.ndarray,
    p1: np.ndarray,
    obs_verts: np.ndarray,
    obs_indptr: np.ndarray,
) -> np.ndarray:
    """True per segment when a static obstacle lies between its endpoints.

    Blocked means the segment properly crosses an obstacle edge, or its
    midpoint falls inside an obstacle. p0/p1: (E, 2); obstacle rings are
    concatenated in obs_verts (V, 2) and delimited by obs_indptr (P+1,).
    """
    n_seg = p0.shape[0]
    blocked = np.zeros(n_seg, dtype=np.bool_)
    if obs_indptr.shape[0] <= 1 or n_seg == 0:
        return blocked
    mid = (p0 + p1) * 0.5
    ax, ay = p0[:, 0], p0[:, 1]
    bx, by = p1[:, 0], p1[:, 1]
    for p in range(obs_indptr.shape[0] - 1):
        ring = obs_verts[obs_indptr[p] : obs_indptr[p + 1]]
        blocked |= points_in_polygon(mid, ring)
        n_verts = ring.shape[0]
        for e in range(n_verts):
            cx, cy = ring[e, 0], ring[e, 1]
            dx_, dy_ = ring[(e + 1) % n_verts, 0], ring[(e + 1) % n_verts, 1]
            # Proper crossing: endpoints of each segment strictly on
            # opposite sides of the other's supporting line.
            d1 = (dx_ - cx) * (ay - cy) - (dy_ - cy) * (ax - cx)
            d2 = (dx_ - cx) * (by - cy) - (dy_ - cy) * (bx - cx)
            d3 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
            d4 = (bx - ax) * (dy_ - ay) - (by - ay) * (dx_ - ax)
            blocked |= (d1 * d2 < 0.0) & (d3 * d4 < 0.0)
    return blocked


def occupancy_table(
    node_pos: np.ndarray,
    agent_pos: np.ndarray,
    agent_valid: np.ndarray,
    radius: float,
) -> np.ndarray:
    """Per-node, per-timestep flag: any valid agent within radius.

    node_pos: (N, 2); agent_pos: (A, T, 2); agent_valid: (A, T) bool.
    Returns (N, T) bool.
    """
    n_nodes = node_pos.shape[0]
    n_agents, n_steps = agent_valid.shape
    r2 = radius * radius
    occ = np.zeros((n_nodes, n_steps), dtype=np.bool_)
    for a in range(n_agents):
        dx = node_pos[:, 0:1] - agent_pos[a, :, 0][None, :]
        dy = node_pos[:, 1:2] - agent_pos[a, :, 1][None, :]
        hit = (dx * dx + dy * dy <= r2) & agent_valid[a][None, :]
        occ |= hit
    return occ


def within_radius_mask(a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    """Boolean (|a|, |b|) matrix of pairs with Euclidean distance <= radius."""
    dx = a[:, 0][:, None] - b[:, 0][None, :]
    dy = a[:, 1][:, None] - b[:, 1][None, :]
    return dx * dx + dy * dy <= radius * radius


def nearest_index(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the closest point per query; ties go to the lowest index."""
    dx = queries[:, 0][:, None] - points[:, 0][None, :]
    dy = queries[:, 1][:, None] - points[:, 1][None, :]
    return np.argmin(dx * dx + dy * dy, axis=1)


def masked_gather_max(
    x: np.ndarray, idx: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Feature-wise max over a gathered candidate set per output row.

    x: (N, d); idx: (M, S) row indices into x; mask: (M, S) validity.
    Returns (out (M, d), arg (M, d)) where arg holds the winning x-row per
    feature, -1 when a row has no valid candidate (out is 0 there). Ties
    resolve to the first valid slot.
    """
    n_out, n_slots = idx.shape
    d = x.shape[1]
    if n_out == 0:
        return np.zeros((0, d)), np.full((0, d), -1, dtype=np.int64)
    gathered = x[np.where(mask, idx, 0)]            # (M, S, d)
    gathered = np.where(mask[:, :, None], gathered, -np.inf)
    any_valid = mask.any(axis=1)
    slot = np.argmax(gathered, axis=1)              # first max slot
    out = np.take_along_axis(gathered, slot[:, None, :], axis=1)[:, 0, :]
    arg = np.take_along_axis(np.where(mask, idx, -1), slot, axis=1)
    out = np.where(any_valid[:, None], out, 0.0)
    arg = np.where(any_valid[:, None], arg, -1)
    return out, arg.astype(np.int64)


def scatter_rows_sum(values: np.ndarray, idx: np.ndarray, n_out: int) -> np.ndarray:
    """Sum rows of values into n_out rows by index, in input order."""
    out = np.zeros((n_out, values.shape[1]), dtype=values.dtype)
    np.add.at(out, idx, values)
    return out


def segment_sum_csr(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    """Sum contiguous row slices of values; slice s is indptr[s]:indptr[s+1]."""
    n_seg = indptr.shape[0] - 1
    seg_ids = np.repeat(np.arange(n_seg), np.diff(indptr))
    out = np.zeros((n_seg, values.shape[1]), dtype=values.dtype)
    np.add.at(out, seg_ids, values)
    return out
