import math

import numpy as np
import pytest

from lanegrid.scenario import AgentTrack, Horizon, LanePolyline, Scenario


def straight_track(track_id, pos0=(0.0, 0.0), heading=0.0, speed=0.0,
                   is_target=False, hz=None, future=False):
    """Constant-velocity track ending at pos0 at t = 0."""
    hz = hz or Horizon()
    d = np.array([math.cos(heading), math.sin(heading)])
    t_idx = np.arange(-hz.T + 1, 1)[:, None]
    states = np.zeros((hz.T, 5))
    states[:, 0:2] = np.asarray(pos0, dtype=float) + t_idx * hz.dt * speed * d
    states[:, 2:4] = d
    fut = None
    if future:
        f_idx = np.arange(1, hz.H + 1)[:, None]
        fut = np.asarray(pos0, dtype=float) + f_idx * hz.dt * speed * d
    return AgentTrack(id=track_id, states=states, is_target=is_target, gt_future=fut)


def square(half, center=(0.0, 0.0)):
    cx, cy = center
    return np.array(
        [[cx - half, cy - half], [cx + half, cy - half],
         [cx + half, cy + half], [cx - half, cy + half]]
    )


def scene_with(drivable, obstacles=(), tracks=None, lanes=None):
    """Normalized-frame scenario: target at the origin heading +x."""
    if tracks is None:
        tracks = [straight_track("target", is_target=True)]
    if lanes is None:
        lanes = [LanePolyline(id="l0", centerline=np.array([[-30.0, 0.0], [30.0, 0.0]]))]
    return Scenario(
        tracks=tracks,
        lanes=lanes,
        drivable_polygons=list(drivable),
        obstacle_polygons=list(obstacles),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def toy_config(**overrides):
    """Tiny dimensions for gradient checks and probes."""
    from lanegrid.config import Config, DAConfig, LSConfig, NetConfig

    net = dict(d_da=4, d_ls=8, d_agt=8, K=2, L=4, num_da_blocks=1,
               num_laneconv_layers=1, M=2, K_sel=4, d_dec=8, d_comp=16)
    net.update(overrides.pop("net", {}))
    cfg = Config(
        da=DAConfig(pitch=2.0, extent=12.0, r_occ=1.5, K=max(2, net["K"])),
        ls=LSConfig(seg_len=2.0, L=net["L"]),
        net=NetConfig(**net),
    )
    for key, val in overrides.items():
        setattr(cfg, key, val)
    return cfg


def chain_dilated(n, K):
    """Dilated table of a 1-D chain of grid nodes (directions E and W only)."""
    dil = np.full((K, n, 8), -1, dtype=np.int64)
    for k in range(K):
        step = 1 << k
        idx = np.arange(n)
        east = idx + step
        ok = east < n
        dil[k, idx[ok], 0] = east[ok]
        west = idx - step
        ok = west >= 0
        dil[k, idx[ok], 4] = west[ok]
    return dil


def chain_lane_pairs(n, L):
    """Lane-conv relation pairs for an n-node chain (types SimpleNamespace)."""
    from types import SimpleNamespace

    from lanegrid.ls_graph import dilated_relations
    from lanegrid.network import AdjPairs

    a_suc = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        a_suc[i, i + 1] = True
    suc_pows = dilated_relations(a_suc, L)
    pre_pows = dilated_relations(a_suc.T.copy(), L)
    empty = AdjPairs(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), n)
    return SimpleNamespace(
        suc_pairs=[AdjPairs.from_dense(a) for a in suc_pows],
        pre_pairs=[AdjPairs.from_dense(a) for a in pre_pows],
        left_pairs=empty,
        right_pairs=empty,
    )


def influence_rows(out_builder, inp, node):
    """Rows of the input whose perturbation reaches output row `node`
    (measured by the gradient of that row's sum)."""
    import lanegrid.autodiff as ad

    inp.grad = None
    out = out_builder()
    row = ad.sum_all(ad.gather(out, np.array([node])))
    ad.backward(row)
    return np.abs(inp.grad).sum(axis=1) > 0
