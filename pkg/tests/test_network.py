import numpy as np
import pytest

import lanegrid.autodiff as ad
from conftest import (
    chain_dilated,
    chain_lane_pairs,
    influence_rows,
    scene_with,
    square,
    straight_track,
    toy_config,
)
from lanegrid.config import Config
from lanegrid.ls_graph import EdgeSet
from lanegrid.network import (
    AgentEncoder,
    DABlock,
    DualScaleNet,
    GATAggregator,
    InputNet,
    LaneConv,
    build_scene,
)
from lanegrid.params import AdamHyper, ParamStore, optimizer_step
from lanegrid.scenario import normalize_to_target
from lanegrid.synth import SynthSpec, synth_scenario


def edge_set(pairs, n_src, n_dst):
    src = np.array([p[0] for p in pairs], dtype=np.int64)
    dst = np.array([p[1] for p in pairs], dtype=np.int64)
    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    indptr = np.searchsorted(dst, np.arange(n_dst + 1)).astype(np.int64)
    return EdgeSet(src=src, dst=dst, indptr=indptr, n_src=n_src, n_dst=n_dst, radius=1.0)


class TestAgentEncoder:
    @pytest.mark.parametrize("n_agents", [1, 5, 8])
    def test_output_shape_128(self, rng, n_agents):
        cfg = Config()
        enc = AgentEncoder(ParamStore(0), "enc", cfg.net)
        states = rng.standard_normal((n_agents, 20, 5))
        out = enc(states)
        assert out.data.shape == (n_agents, 128)

    def test_agent_permutation_permutes_rows(self, rng):
        enc = AgentEncoder(ParamStore(0), "enc", toy_config().net)
        states = rng.standard_normal((5, 20, 5))
        perm = np.array([3, 0, 4, 1, 2])
        a = enc(states).data
        b = enc(states[perm]).data
        np.testing.assert_array_equal(a[perm], b)

    def test_identical_agents_identical_rows(self, rng):
        enc = AgentEncoder(ParamStore(0), "enc", toy_config().net)
        one = rng.standard_normal((1, 20, 5))
        out = enc(np.repeat(one, 3, axis=0)).data
        np.testing.assert_array_equal(out[0], out[1])
        np.testing.assert_array_equal(out[0], out[2])


class TestInputNets:
    def test_lift_shapes_and_zero_rows(self, rng):
        cfg = Config()
        store = ParamStore(0)
        da_in = InputNet(store, "da_in", 22, cfg.net.d_da)
        ls_in = InputNet(store, "ls_in", 8, cfg.net.d_ls)
        da_out = da_in(ad.constant(rng.standard_normal((40, 22))))
        ls_out = ls_in(ad.constant(rng.standard_normal((17, 8))))
        assert da_out.data.shape == (40, 32)
        assert ls_out.data.shape == (17, 128)
        zeros = ls_in(ad.constant(np.zeros((3, 8)))).data
        np.testing.assert_array_equal(zeros[0], zeros[1])
        np.testing.assert_array_equal(zeros[0], zeros[2])


class TestDABlock:
    def test_neighbor_permutation_bitwise_stable(self, rng):
        d, n = 4, 30
        store = ParamStore(1)
        block = DABlock(store, "blk", d, K=2)
        dil = chain_dilated(n, 2)
        x = ad.constant(rng.standard_normal((n, d)))
        ref = block(x, dil).data
        for trial in range(20):
            perm_rng = np.random.default_rng(trial)
            shuffled = dil.copy()
            for k in range(2):
                for i in range(n):
                    p = perm_rng.permutation(8)
                    shuffled[k, i] = shuffled[k, i][p]
            got = block(x, shuffled).data
            np.testing.assert_array_equal(ref, got)

    def test_isolated_node_zero_fuse_weights(self):
        # with the fuse and output projections zeroed, the layer reduces to
        # activation(normalize(u)); frozen 2-dim case u = [1, 3]
        store = ParamStore(0)
        block = DABlock(store, "blk", 2, K=1)
        store["blk.k0.fuse.W"].data[:] = 0.0
        store["blk.k0.out.W"].data[:] = 0.0
        dil = np.full((1, 1, 8), -1, dtype=np.int64)   # isolated node
        out = block(ad.constant(np.array([[1.0, 3.0]])), dil).data
        expected = np.array([[0.0, 1.0 / np.sqrt(1.0 + 1e-5)]])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_receptive_field_one_and_two_blocks(self, rng):
        d, n, K = 3, 80, 4
        store = ParamStore(2)
        blocks = [DABlock(store, f"b{i}", d, K=K) for i in range(2)]
        dil = chain_dilated(n, K)
        x = ad.leaf(rng.standard_normal((n, d)))
        center = n // 2
        reach = (1 << K) - 1    # 1+2+4+8

        hit1 = influence_rows(lambda: blocks[0](x, dil), x, center)
        offsets = np.arange(n) - center
        assert not hit1[np.abs(offsets) > reach].any()
        assert hit1[np.abs(offsets) <= reach].sum() >= reach  # dense inside

        hit2 = influence_rows(lambda: blocks[1](blocks[0](x, dil), dil), x, center)
        assert not hit2[np.abs(offsets) > 2 * reach].any()
        assert hit2[np.abs(offsets) <= 2 * reach].sum() >= 2 * reach


class TestLaneConv:
    def test_empty_adjacency_reduces_to_self_path(self, rng):
        from types import SimpleNamespace

        from lanegrid.network import AdjPairs

        n, d = 6, 8
        store = ParamStore(3)
        conv = LaneConv(store, "lc", d, L=4)
        empty = AdjPairs(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), n)
        g = SimpleNamespace(
            suc_pairs=[empty] * 4, pre_pairs=[empty] * 4,
            left_pairs=empty, right_pairs=empty,
        )
        v = ad.constant(rng.standard_normal((n, d)))
        out = conv(v, g).data
        manual = conv.norm(conv.w0(v)).data + v.data
        np.testing.assert_array_equal(out, manual)

    def test_zero_relation_weights_ignore_structure(self, rng):
        n, d = 9, 8
        store = ParamStore(4)
        conv = LaneConv(store, "lc", d, L=4)
        for name in list(store.names()):
            if any(s in name for s in (".left.", ".right.", ".pre", ".suc")):
                store[name].data[:] = 0.0
        v = ad.constant(rng.standard_normal((n, d)))
        chained = conv(v, chain_lane_pairs(n, 4)).data
        from types import SimpleNamespace

        from lanegrid.network import AdjPairs

        empty = AdjPairs(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), n)
        isolated = conv(v, SimpleNamespace(
            suc_pairs=[empty] * 4, pre_pairs=[empty] * 4, left_pairs=empty, right_pairs=empty
        )).data
        np.testing.assert_allclose(chained, isolated, atol=1e-12)

    def test_receptive_field_exact_hops(self, rng):
        # single layer: influence only at relative hops {0, ±1, ±2, ±4, ±8}
        n, d = 20, 4
        store = ParamStore(5)
        conv = LaneConv(store, "lc", d, L=4)
        g = chain_lane_pairs(n, 4)
        x = ad.leaf(rng.standard_normal((n, d)))
        center = 9
        hit = influence_rows(lambda: conv(x, g), x, center)
        allowed = {0, 1, 2, 4, 8, -1, -2, -4, -8}
        for j in range(n):
            delta = j - center
            if delta in allowed:
                assert hit[j], f"expected influence at hop {delta}"
            else:
                assert not hit[j], f"unexpected influence at hop {delta}"

    def test_receptive_field_two_layers(self, rng):
        n, d = 40, 4
        store = ParamStore(6)
        convs = [LaneConv(store, f"lc{i}", d, L=4) for i in range(2)]
        g = chain_lane_pairs(n, 4)
        x = ad.leaf(rng.standard_normal((n, d)))
        center = 19
        base = (0, 1, 2, 4, 8, -1, -2, -4, -8)
        allowed = {a + b for a in base for b in base}
        hit = influence_rows(lambda: convs[1](convs[0](x, g), g), x, center)
        for j in range(n):
            delta = j - center
            assert hit[j] == (delta in allowed), f"hop {delta}"


class TestGAT:
    def make(self, d_tgt=6, d_ctx=4, seed=7):
        return GATAggregator(ParamStore(seed), "gat", d_tgt, d_ctx)

    def test_singleton_context_weight_is_one(self, rng):
        gat = self.make()
        tgt = ad.constant(rng.standard_normal((3, 6)))
        ctx = ad.constant(rng.standard_normal((2, 4)))
        es = edge_set([(1, 0)], n_src=2, n_dst=3)
        alpha = gat.attention(tgt, ctx, es)
        np.testing.assert_array_equal(alpha.data, [[1.0]])

    def test_attention_rows_sum_to_one(self, rng):
        gat = self.make()
        tgt = ad.constant(rng.standard_normal((5, 6)))
        ctx = ad.constant(rng.standard_normal((7, 4)))
        pairs = [(s, t) for t in range(5) for s in rng.choice(7, 3, replace=False)]
        es = edge_set(pairs, 7, 5)
        alpha = gat.attention(tgt, ctx, es).data[:, 0]
        sums = np.add.reduceat(alpha, es.indptr[:-1])
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_duplicated_context_splits_weight_equally(self, rng):
        gat = self.make()
        tgt = ad.constant(rng.standard_normal((1, 6)))
        ctx = ad.constant(rng.standard_normal((3, 4)))
        es = edge_set([(2, 0), (2, 0), (1, 0)], 3, 1)
        alpha = gat.attention(tgt, ctx, es).data[:, 0]
        # the two copies of context 2 receive identical weight
        assert abs(alpha[1] - alpha[2]) < 1e-15

    def test_empty_context_targets_unchanged(self, rng):
        gat = self.make()
        tgt = ad.constant(rng.standard_normal((4, 6)))
        ctx = ad.constant(rng.standard_normal((3, 4)))
        es = edge_set([(0, 1), (2, 1)], 3, 4)   # only target 1 has context
        out = gat(tgt, ctx, es).data
        np.testing.assert_array_equal(out[0], tgt.data[0])
        np.testing.assert_array_equal(out[2], tgt.data[2])
        np.testing.assert_array_equal(out[3], tgt.data[3])
        assert not np.array_equal(out[1], tgt.data[1])

    def test_context_permutation_bitwise_stable(self, rng):
        gat = self.make()
        tgt = ad.constant(rng.standard_normal((6, 6)))
        ctx = ad.constant(rng.standard_normal((9, 4)))
        pairs = [(s, t) for t in range(6) for s in rng.choice(9, 4, replace=False)]
        ref = gat(tgt, ctx, edge_set(pairs, 9, 6)).data
        for trial in range(20):
            p_rng = np.random.default_rng(100 + trial)
            shuffled = [pairs[i] for i in p_rng.permutation(len(pairs))]
            src = np.array([p[0] for p in shuffled], dtype=np.int64)
            dst = np.array([p[1] for p in shuffled], dtype=np.int64)
            # dst-major but arbitrary src order within each group
            order = np.argsort(dst, kind="stable")
            es = EdgeSet(
                src=src[order], dst=dst[order],
                indptr=np.searchsorted(dst[order], np.arange(7)).astype(np.int64),
                n_src=9, n_dst=6, radius=1.0,
            )
            got = gat(tgt, ctx, es).data
            np.testing.assert_array_equal(ref, got)


@pytest.fixture(scope="module")
def scene_and_net():
    cfg = toy_config()
    s = normalize_to_target(synth_scenario(SynthSpec(template="four-way", n_agents=3), seed=4))
    bundle = build_scene(s, cfg)
    store = ParamStore(0)
    net = DualScaleNet(store, cfg)
    return cfg, bundle, net


class TestForward:
    def test_heatmap_shape_and_range(self, scene_and_net):
        _, bundle, net = scene_and_net
        scene = net.forward(bundle)
        assert scene.heatmap.data.shape == (bundle.da.n_nodes,)
        assert np.all(scene.heatmap.data >= 0.0) and np.all(scene.heatmap.data <= 1.0)

    def test_da_to_ls_pathway_is_real(self, scene_and_net):
        from dataclasses import replace as dcreplace

        _, bundle, net = scene_and_net
        ls_ref = net.forward(bundle).ls_feats.data
        cut = dcreplace(
            bundle,
            edges=dcreplace(
                bundle.edges,
                da_to_ls=EdgeSet(
                    src=np.zeros(0, dtype=np.int64), dst=np.zeros(0, dtype=np.int64),
                    indptr=np.zeros(bundle.ls.n_nodes + 1, dtype=np.int64),
                    n_src=bundle.da.n_nodes, n_dst=bundle.ls.n_nodes, radius=0.0,
                ),
            ),
        )
        ls_cut = net.forward(cut).ls_feats.data
        assert not np.allclose(ls_ref, ls_cut)

    def test_forward_deterministic(self, scene_and_net):
        _, bundle, net = scene_and_net
        a = net.forward(bundle)
        b = net.forward(bundle)
        np.testing.assert_array_equal(a.heatmap.data, b.heatmap.data)
        np.testing.assert_array_equal(a.agent_feats.data, b.agent_feats.data)


class TestCompletion:
    def test_output_shape_full_scale(self, rng):
        cfg = Config()
        store = ParamStore(0)
        net = DualScaleNet(store, cfg)
        from lanegrid.network import SceneFeatures

        feats = ad.constant(rng.standard_normal((2, cfg.net.d_agt)))
        scene = SceneFeatures(feats, None, None, None)
        out = net.complete_trajectory(scene, 0, np.array([12.0, 3.0]))
        assert out.data.shape == (30, 2)

    def test_identical_goals_identical_trajectories(self, rng):
        cfg = toy_config()
        store = ParamStore(0)
        net = DualScaleNet(store, cfg)
        from lanegrid.network import SceneFeatures

        feats = ad.constant(rng.standard_normal((1, cfg.net.d_agt)))
        scene = SceneFeatures(feats, None, None, None)
        goals = np.array([[5.0, 2.0], [5.0, 2.0]])
        out = net.complete_trajectories(scene, 0, goals).data.reshape(2, 30, 2)
        np.testing.assert_array_equal(out[0], out[1])

    def test_teacher_forced_overfit_endpoint_near_goal(self, rng):
        # one scenario, completion trained alone on the trajectory term:
        # the decoded endpoint converges to the conditioning goal
        cfg = toy_config()
        store = ParamStore(3)
        from lanegrid.network import CompletionNet

        comp = CompletionNet(store, "comp", cfg.net, horizon_steps=30)
        feat = ad.constant(rng.standard_normal((1, cfg.net.d_agt)))
        goal = np.array([14.0, 5.0])
        t = np.linspace(0.0, 1.0, 30)[:, None]
        gt = t * goal[None, :]          # straight path ending exactly at goal
        store.zero_grads()
        for step in range(400):
            pred = comp(feat, goal[None, :])
            loss = ad.mean_all(ad.smooth_l1(pred, gt, delta=1.0))
            ad.backward(loss)
            optimizer_step(store, lr=3e-3, hyper=AdamHyper())
        endpoint = comp(feat, goal[None, :]).data[-1]
        assert np.linalg.norm(endpoint - goal) < 0.1
