"""Numba-jitted twins of the numpy kernels.

Each function replays the numpy backend's arithmetic in the same order so
outputs are bitwise identical; the parity tests compare both backends on
random inputs. Kernels are single-threaded: scatter targets overlap and
deterministic float accumulation order matters more here than the last 2x.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BOUNDARY_EPS = 1e-9


@njit(cache=True)
def _point_in_ring(px: float, py: float, verts: np.ndarray) -> bool:
    n_verts = verts.shape[0]
    inside = False
    eps2 = BOUNDARY_EPS * BOUNDARY_EPS
    for e in range(n_verts):
        ax, ay = verts[e, 0], verts[e, 1]
        j = e + 1
        if j == n_verts:
            j = 0
        bx, by = verts[j, 0], verts[j, 1]
        abx = bx - ax
        aby = by - ay
        ab2 = abx * abx + aby * aby
        if ab2 > 0.0:
            t = ((px - ax) * abx + (py - ay) * aby) / ab2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        else:
            t = 0.0
        dx = px - (ax + t * abx)
        dy = py - (ay + t * aby)
        if dx * dx + dy * dy <= eps2:
            return True
        if (ay > py) != (by > py):
            xin = ax + abx * (py - ay) / (by - ay)
            if xin > px:
                inside = not inside
    return inside


@njit(cache=True)
def points_in_polygon(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    out = np.zeros(points.shape[0], dtype=np.bool_)
    for i in range(points.shape[0]):
        out[i] = _point_in_ring(points[i, 0], points[i, 1], verts)
    return out


@njit(cache=True)
def segments_blocked(
    p0: np.ndarray,
    p1: np.ndarray,
    obs_verts: np.ndarray,
    obs_indptr: np.ndarray,
) -> np.ndarray:
    n_seg = p0.shape[0]
    blocked = np.zeros(n_seg, dtype=np.bool_)
    n_poly = obs_indptr.shape[0] - 1
    if n_poly <= 0:
        return blocked
    for i in range(n_seg):
        ax, ay = p0[i, 0], p0[i, 1]
        bx, by = p1[i, 0], p1[i, 1]
        mx = (ax + bx) * 0.5
        my = (ay + by) * 0.5
        hit = False
        for p in range(n_poly):
            ring = obs_verts[obs_indptr[p] : obs_indptr[p + 1]]
            if _point_in_ring(mx, my, ring):
                hit = True
                break
            n_verts = ring.shape[0]
            for e in range(n_verts):
                cx, cy = ring[e, 0], ring[e, 1]
                j = e + 1
                if j == n_verts:
                    j = 0
                dx_, dy_ = ring[j, 0], ring[j, 1]
                d1 = (dx_ - cx) * (ay - cy) - (dy_ - cy) * (ax - cx)
                d2 = (dx_ - cx) * (by - cy) - (dy_ - cy) * (bx - cx)
                d3 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
                d4 = (bx - ax) * (dy_ - ay) - (by - ay) * (dx_ - ax)
                if d1 * d2 < 0.0 and d3 * d4 < 0.0:
                    hit = True
                    break
            if hit:
                break
        blocked[i] = hit
    return blocked


@njit(cache=True)
def occupancy_table(
    node_pos: np.ndarray,
    agent_pos: np.ndarray,
    agent_valid: np.ndarray,
    radius: float,
) -> np.ndarray:
    n_nodes = node_pos.shape[0]
    n_agents, n_steps = agent_valid.shape
    r2 = radius * radius
    occ = np.zeros((n_nodes, n_steps), dtype=np.bool_)
    for a in range(n_agents):
        for t in range(n_steps):
            if not agent_valid[a, t]:
                continue
            axp = agent_pos[a, t, 0]
            ayp = agent_pos[a, t, 1]
            for n in range(n_nodes):
                if occ[n, t]:
                    continue
                dx = node_pos[n, 0] - axp
                dy = node_pos[n, 1] - ayp
                if dx * dx + dy * dy <= r2:
                    occ[n, t] = True
    return occ


@njit(cache=True)
def within_radius_mask(a: np.ndarray, b: np.ndarray, radius: float) -> np.ndarray:
    r2 = radius * radius
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.bool_)
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            dx = a[i, 0] - b[j, 0]
            dy = a[i, 1] - b[j, 1]
            out[i, j] = dx * dx + dy * dy <= r2
    return out


@njit(cache=True)
def nearest_index(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    out = np.zeros(queries.shape[0], dtype=np.int64)
    for q in range(queries.shape[0]):
        best = np.inf
        best_j = 0
        for j in range(points.shape[0]):
            dx = queries[q, 0] - points[j, 0]
            dy = queries[q, 1] - points[j, 1]
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
                best_j = j
        out[q] = best_j
    return out


@njit(cache=True)
def masked_gather_max(
    x: np.ndarray, idx: np.ndarray, mask: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n_out, n_slots = idx.shape
    d = x.shape[1]
    out = np.zeros((n_out, d))
    arg = np.full((n_out, d), -1, dtype=np.int64)
    for m in range(n_out):
        for f in range(d):
            best = -np.inf
            best_row = -1
            for s in range(n_slots):
                if not mask[m, s]:
                    continue
                v = x[idx[m, s], f]
                if v > best:
                    best = v
                    best_row = idx[m, s]
            if best_row >= 0:
                out[m, f] = best
                arg[m, f] = best_row
    return out, arg


@njit(cache=True)
def scatter_rows_sum(values: np.ndarray, idx: np.ndarray, n_out: int) -> np.ndarray:
    out = np.zeros((n_out, values.shape[1]), dtype=values.dtype)
    for e in range(idx.shape[0]):
        row = idx[e]
        for f in range(values.shape[1]):
            out[row, f] += values[e, f]
    return out


@njit(cache=True)
def segment_sum_csr(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    n_seg = indptr.shape[0] - 1
    out = np.zeros((n_seg, values.shape[1]), dtype=values.dtype)
    for s in range(n_seg):
        for e in range(indptr[s], indptr[s + 1]):
            for f in range(values.shape[1]):
                out[s, f] += values[e, f]
    return out
