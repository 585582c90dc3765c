"""Drivable-area layer: grid-sampled freespace nodes with dilated links.

Nodes are the pitch-spaced grid points of a square window centered on the
target that fall inside a drivable polygon and outside every obstacle.
Links exist in 8 directions at cell offsets 2^k (k < K) whenever the far
endpoint exists and the straight segment between them is obstacle-free;
the k = 0 table is the plain 8-connected adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import DAConfig
from .errors import EmptyGraph
from .scenario import Scenario

# direction order: E, NE, N, NW, W, SW, S, SE
DIRECTIONS = np.array(
    [[1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [-1, -1], [0, -1], [1, -1]],
    dtype=np.int64,
)


@dataclass
class DANode:
    index: int
    position: np.ndarray
    grid_coord: np.ndarray
    occ: np.ndarray


@dataclass
class DAGraph:
    positions: np.ndarray     # (N, 2) float64
    grid_coords: np.ndarray   # (N, 2) int64
    occ: np.ndarray           # (N, T) bool
    dilated: np.ndarray       # (K, N, 8) int64; -1 = absent
    pitch: float
    extent: float

    @property
    def n_nodes(self) -> int:
        return self.positions.shape[0]

    @property
    def K(self) -> int:
        return self.dilated.shape[0]

    def node(self, i: int) -> DANode:
        return DANode(i, self.positions[i], self.grid_coords[i], self.occ[i])

    def edge_pairs(self) -> np.ndarray:
        """Symmetric Moore adjacency as sorted unique (i, j) pairs, i < j."""
        base = self.dilated[0]
        src = np.repeat(np.arange(self.n_nodes), 8)
        dst = base.ravel()
        keep = dst >= 0
        pairs = np.stack([src[keep], dst[keep]], axis=1)
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)

    def degrees(self) -> np.ndarray:
        return (self.dilated[0] >= 0).sum(axis=1)

    def to_debug_dict(self) -> dict:
        return {
            "n_nodes": int(self.n_nodes),
            "pitch": self.pitch,
            "extent": self.extent,
            "positions": self.positions.tolist(),
            "grid_coords": self.grid_coords.tolist(),
            "edges": self.edge_pairs().tolist(),
            "dilated": self.dilated.tolist(),
            "occupancy": self.occ.astype(int).tolist(),
        }


def _obstacle_buffers(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    polys = s.obstacle_polygons
    if not polys:
        return np.zeros((0, 2)), np.zeros(1, dtype=np.int64)
    verts = np.vstack(polys)
    indptr = np.concatenate([[0], np.cumsum([len(p) for p in polys])]).astype(np.int64)
    return verts, indptr


def freespace_mask(points: np.ndarray, s: Scenario) -> np.ndarray:
    """Inside some drivable polygon and outside (boundary counts in) every
    obstacle polygon."""
    inside = np.zeros(points.shape[0], dtype=bool)
    for poly in s.drivable_polygons:
        inside |= kernels.points_in_polygon(points, poly)
    for poly in s.obstacle_polygons:
        inside &= ~kernels.points_in_polygon(points, poly)
    return inside


def occupancy_features(positions: np.ndarray, s: Scenario, r_occ: float) -> np.ndarray:
    """(N, T) flags: any agent with a valid state within r_occ per timestep."""
    agent_pos = np.stack([tr.positions() for tr in s.tracks])
    agent_valid = np.stack([~tr.pad_flags() for tr in s.tracks])
    return kernels.occupancy_table(positions, agent_pos, agent_valid, r_occ)


def build_da_graph(s: Scenario, cfg: DAConfig) -> DAGraph:
    """Construct the grid layer for a normalized scenario."""
    half = cfg.extent / 2.0
    n_side = int(round(cfg.extent / cfg.pitch)) + 1
    axis = -half + cfg.pitch * np.arange(n_side)
    # row-major: y rows, x fastest
    gx, gy = np.meshgrid(np.arange(n_side), np.arange(n_side))
    coords = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.int64)
    points = np.stack([axis[coords[:, 0]], axis[coords[:, 1]]], axis=1)

    keep = freespace_mask(points, s)
    if not keep.any():
        raise EmptyGraph("no grid point passed the freespace test")
    positions = points[keep]
    grid_coords = coords[keep]
    n = positions.shape[0]

    index_of = np.full((n_side, n_side), -1, dtype=np.int64)
    index_of[grid_coords[:, 0], grid_coords[:, 1]] = np.arange(n)

    obs_verts, obs_indptr = _obstacle_buffers(s)
    dilated = np.full((cfg.K, n, 8), -1, dtype=np.int64)
    for k in range(cfg.K):
        step = 1 << k
        for d in range(8):
            tgt = grid_coords + step * DIRECTIONS[d]
            ok = (
                (tgt[:, 0] >= 0)
                & (tgt[:, 0] < n_side)
                & (tgt[:, 1] >= 0)
                & (tgt[:, 1] < n_side)
            )
            cand = np.full(n, -1, dtype=np.int64)
            cand[ok] = index_of[tgt[ok, 0], tgt[ok, 1]]
            exists = cand >= 0
            if exists.any() and obs_indptr.shape[0] > 1:
                src_idx = np.nonzero(exists)[0]
                blocked = kernels.segments_blocked(
                    positions[src_idx], positions[cand[src_idx]], obs_verts, obs_indptr
                )
                cand[src_idx[blocked]] = -1
            dilated[k, :, d] = cand

    occ = occupancy_features(positions, s, cfg.r_occ)
    return DAGraph(
        positions=positions,
        grid_coords=grid_coords,
        occ=occ,
        dilated=dilated,
        pitch=cfg.pitch,
        extent=cfg.extent,
    )


def nearest_da_node(g: DAGraph, p: np.ndarray) -> int:
    """Closest node to p by Euclidean distance; ties go to the lowest index."""
    if g.n_nodes == 0:
        raise EmptyGraph("nearest_da_node on empty graph")
    return int(kernels.nearest_index(np.asarray(p, dtype=np.float64)[None, :], g.positions)[0])
