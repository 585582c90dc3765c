import numpy as np
import pytest

from conftest import scene_with, square, straight_track
from lanegrid.config import DAConfig
from lanegrid.da_graph import DIRECTIONS, build_da_graph, nearest_da_node, occupancy_features
from lanegrid.errors import EmptyGraph
from lanegrid.scenario import Horizon


# -- independent reference geometry (kept separate from the kernels) --------

def ref_point_in_poly(p, poly):
    """Crossing-number test with explicit boundary inclusion."""
    x, y = p
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ab = b - a
        t = 0.0 if ab @ ab == 0 else np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        if np.linalg.norm(p - (a + t * ab)) <= 1e-9:
            return True
    inside = False
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        if (a[1] > y) != (b[1] > y):
            xin = a[0] + (b[0] - a[0]) * (y - a[1]) / (b[1] - a[1])
            if xin > x:
                inside = not inside
    return inside


def ref_segments_cross(p, q, a, b):
    """Proper crossing of open segments pq and ab."""
    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    d1, d2 = cross(a, b, p), cross(a, b, q)
    d3, d4 = cross(p, q, a), cross(p, q, b)
    return d1 * d2 < 0 and d3 * d4 < 0


def ref_blocked(p, q, obstacles):
    mid = (p + q) / 2
    for poly in obstacles:
        if ref_point_in_poly(mid, poly):
            return True
        for i in range(len(poly)):
            if ref_segments_cross(p, q, poly[i], poly[(i + 1) % len(poly)]):
                return True
    return False


CFG = DAConfig(pitch=1.0, extent=10.0, r_occ=1.5, K=4)


class TestBuild:
    def test_full_grid_square(self):
        s = scene_with([square(5.0)])
        g = build_da_graph(s, CFG)
        assert g.n_nodes == 121
        deg = g.degrees()
        interior = np.all((g.grid_coords > 0) & (g.grid_coords < 10), axis=1)
        assert np.all(deg[interior] == 8)
        corners = np.all((g.grid_coords == 0) | (g.grid_coords == 10), axis=1)
        assert np.all(deg[corners] == 3)

    def test_wall_blocks_crossing_edges(self):
        wall = np.array([[-0.2, -5.0], [0.2, -5.0], [0.2, 5.0], [-0.2, 5.0]])
        s = scene_with([square(5.0)], obstacles=[wall])
        g = build_da_graph(s, CFG)
        # no node inside the wall
        for p in g.positions:
            assert not ref_point_in_poly(p, wall)
        # no link (any dilation) crosses the wall: brute-force segment test
        for k in range(g.K):
            for i in range(g.n_nodes):
                for d in range(8):
                    j = g.dilated[k, i, d]
                    if j >= 0:
                        assert not ref_blocked(g.positions[i], g.positions[j], [wall])
        # the two half-grids are disconnected at k=0 across x=0
        left = g.positions[:, 0] < 0
        for i in np.nonzero(left)[0]:
            for d in range(8):
                j = g.dilated[0, i, d]
                assert j < 0 or left[j]

    def test_dilation_offsets_are_powers_of_two(self):
        s = scene_with([square(5.0)])
        g = build_da_graph(s, CFG)
        for k in range(4):
            for d in range(8):
                j = g.dilated[k, :, d]
                have = j >= 0
                got = g.grid_coords[j[have]] - g.grid_coords[have]
                expected = (1 << k) * DIRECTIONS[d]
                assert np.all(got == expected)

    def test_deterministic(self):
        s = scene_with([square(5.0)], obstacles=[square(1.0, center=(2.0, 2.0))])
        a = build_da_graph(s, CFG)
        b = build_da_graph(s, CFG)
        assert np.array_equal(a.positions, b.positions)
        assert np.array_equal(a.dilated, b.dilated)
        assert np.array_equal(a.occ, b.occ)

    def test_empty_graph_raises(self):
        s = scene_with([square(0.4, center=(20.0, 20.0))])
        with pytest.raises(EmptyGraph):
            build_da_graph(s, DAConfig(pitch=1.0, extent=10.0))

    def test_freespace_soundness_random(self, rng):
        obstacles = [square(rng.uniform(0.5, 1.5), center=rng.uniform(-4, 4, 2))
                     for _ in range(3)]
        s = scene_with([square(5.0)], obstacles=obstacles)
        g = build_da_graph(s, CFG)
        for p in g.positions:
            assert any(ref_point_in_poly(p, d) for d in s.drivable_polygons)
            assert not any(ref_point_in_poly(p, o) for o in obstacles)
        # every surviving link has line of sight
        for k in range(g.K):
            for i in range(g.n_nodes):
                for d in range(8):
                    j = g.dilated[k, i, d]
                    if j >= 0:
                        assert not ref_blocked(g.positions[i], g.positions[j], obstacles)

    def test_moore_edges_symmetric(self):
        s = scene_with([square(5.0)], obstacles=[square(1.2, center=(1.0, -1.0))])
        g = build_da_graph(s, CFG)
        base = g.dilated[0]
        adj = np.zeros((g.n_nodes, g.n_nodes), dtype=bool)
        for i in range(g.n_nodes):
            for d in range(8):
                if base[i, d] >= 0:
                    adj[i, base[i, d]] = True
        assert np.array_equal(adj, adj.T)


class TestOccupancy:
    def test_stationary_agent_marks_node(self):
        s = scene_with([square(5.0)])
        g = build_da_graph(s, CFG)
        i = nearest_da_node(g, np.array([0.0, 0.0]))
        assert g.occ[i].all()          # target sits at the origin all T steps
        far = nearest_da_node(g, np.array([5.0, 5.0]))
        assert not g.occ[far].any()

    def test_padded_steps_do_not_contribute(self):
        tgt = straight_track("target", is_target=True)
        other = straight_track("a1", pos0=(3.0, 3.0))
        other.states[:10, 4] = 1.0     # first half padded
        s = scene_with([square(5.0)], tracks=[tgt, other])
        g = build_da_graph(s, CFG)
        i = nearest_da_node(g, np.array([3.0, 3.0]))
        assert not g.occ[i, :10].any()
        assert g.occ[i, 10:].all()

    def test_matches_brute_force(self, rng):
        hz = Horizon()
        tracks = [straight_track("target", is_target=True)]
        for i in range(4):
            tr = straight_track(f"a{i}", pos0=rng.uniform(-4, 4, 2),
                                heading=rng.uniform(-3, 3), speed=rng.uniform(0, 8))
            tr.states[: int(rng.integers(0, 5)), 4] = 1.0
            tracks.append(tr)
        s = scene_with([square(5.0)], tracks=tracks)
        g = build_da_graph(s, CFG)
        occ = occupancy_features(g.positions, s, CFG.r_occ)
        for n in range(g.n_nodes):
            for t in range(hz.T):
                hit = any(
                    not tr.pad_flags()[t]
                    and np.linalg.norm(tr.positions()[t] - g.positions[n]) <= CFG.r_occ
                    for tr in tracks
                )
                assert occ[n, t] == hit


class TestNearest:
    def test_exact_and_tie(self):
        s = scene_with([square(5.0)])
        g = build_da_graph(s, CFG)
        i = nearest_da_node(g, g.positions[37])
        assert i == 37
        # midpoint between node 0 and node 1 ties; lower index wins
        mid = (g.positions[0] + g.positions[1]) / 2
        assert nearest_da_node(g, mid) == 0

    def test_random_queries_match_linear_scan(self, rng):
        s = scene_with([square(5.0)])
        g = build_da_graph(s, CFG)
        for _ in range(1000):
            q = rng.uniform(-7, 7, 2)
            i = nearest_da_node(g, q)
            d = np.linalg.norm(g.positions - q, axis=1)
            assert i == int(np.argmin(d))
