import numpy as np
import pytest

from physloop.errors import DimensionMismatch, DisconnectedGraph
from physloop.pointmap import (
    AlignOptions,
    AlignmentState,
    Intrinsics,
    PairEdge,
    PairGraph,
    PointMap,
    alignment_residual,
    apply_delta,
    delta_size,
    global_align,
    project_pointmap,
    residual_and_gradient,
    synth_graph,
)


def rotz(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class TestProjectPointmap:
    def test_identity_pose(self):
        pts = np.zeros((2, 2, 3))
        pts[:] = [0.0, 0.0, 2.0]
        pmap = PointMap(view=0, pair=(0, 1), points=pts, confidences=np.ones((2, 2)))
        proj = project_pointmap(np.eye(3), np.zeros(3), pmap)
        assert np.allclose(proj.depth, 2.0)
        assert proj.valid.all()

    def test_translated_pose(self):
        pts = np.zeros((2, 2, 3))
        pts[:] = [0.0, 0.0, 2.0]
        pmap = PointMap(view=0, pair=(0, 1), points=pts, confidences=np.ones((2, 2)))
        proj = project_pointmap(np.eye(3), np.array([0.0, 0.0, -1.0]), pmap)
        assert np.allclose(proj.depth, 3.0)

    def test_matches_per_point_oracle(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(3, 4, 3)) + [0, 0, 5.0]
        pmap = PointMap(view=0, pair=(0, 1), points=pts, confidences=np.ones((3, 4)))
        rot = rotz(0.3) @ np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0.0]])
        t = rng.normal(size=3)
        proj = project_pointmap(rot, t, pmap)
        for i in range(3):
            for j in range(4):
                cam = rot.T @ (pts[i, j] - t)
                assert proj.depth[i, j] == pytest.approx(cam[2], abs=1e-9)

    def test_behind_camera_flagged(self):
        pts = np.zeros((1, 2, 3))
        pts[0, 0] = [0, 0, 2.0]
        pts[0, 1] = [0, 0, -2.0]
        pmap = PointMap(view=0, pair=(0, 1), points=pts, confidences=np.ones((1, 2)))
        proj = project_pointmap(np.eye(3), np.zeros(3), pmap)
        assert proj.behind_camera == 1
        assert proj.valid[0, 0] and not proj.valid[0, 1]


class TestResidual:
    def test_zero_at_ground_truth(self):
        graph, truth = synth_graph(3, (8, 8), noise=0.0, seed=2)
        assert alignment_residual(truth, graph) < 1e-10

    def test_zero_confidence_annihilates(self):
        graph, truth = synth_graph(2, (4, 4), noise=0.1, seed=0)
        for edge in graph.edges:
            for pmap in edge.maps.values():
                pmap.confidences[:] = 0.0
        bad = truth.copy()
        bad.depths[0] += 3.0
        assert alignment_residual(bad, graph) == 0.0

    def test_two_view_hand_expansion(self):
        # 2 views, 2x2 maps, one edge: expand the 8 pixel terms explicitly
        graph, truth = synth_graph(2, (2, 2), noise=0.05, seed=7)
        state = truth.copy()
        state.depths[0] = state.depths[0] + 0.3
        expected = 0.0
        edge = graph.edges[0]
        sigma = state.scales[0]
        for view, pmap in edge.maps.items():
            rot = state.rotations[view]
            t = state.translations[view]
            for i in range(2):
                for j in range(2):
                    cam = rot.T @ (pmap.points[i, j] - t)
                    diff = state.depths[view][i, j] - sigma * cam[2]
                    expected += pmap.confidences[i, j] * diff * diff
        assert alignment_residual(state, graph) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        graph, truth = synth_graph(2, (4, 4), seed=0)
        bad = truth.copy()
        bad.depths[0] = np.ones((3, 3))
        with pytest.raises(DimensionMismatch):
            alignment_residual(bad, graph)

    def test_gauge_invariance_under_global_rigid(self):
        graph, truth = synth_graph(3, (6, 6), noise=0.02, seed=4)
        base = alignment_residual(truth, graph)
        rg = rotz(0.8) @ np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0.0]])
        tg = np.array([1.0, -2.0, 0.5])
        moved_edges = []
        for edge in graph.edges:
            maps = {
                v: PointMap(v, edge.pair, m.points @ rg.T + tg, m.confidences)
                for v, m in edge.maps.items()
            }
            moved_edges.append(PairEdge(pair=edge.pair, maps=maps))
        moved_graph = PairGraph(graph.n_views, graph.intrinsics, moved_edges)
        moved_state = AlignmentState(
            depths=[d.copy() for d in truth.depths],
            rotations=[rg @ r for r in truth.rotations],
            translations=[rg @ t + tg for t in truth.translations],
            scales=truth.scales.copy(),
        )
        moved = alignment_residual(moved_state, moved_graph)
        assert moved == pytest.approx(base, rel=1e-8)

    def test_scale_homogeneity(self):
        graph, truth = synth_graph(2, (4, 4), noise=0.05, seed=9)
        state = truth.copy()
        base = alignment_residual(state, graph)
        c = 1.7
        scaled = state.copy()
        scaled.depths = [c * d for d in scaled.depths]
        scaled.scales = c * scaled.scales
        assert alignment_residual(scaled, graph) == pytest.approx(c * c * base, rel=1e-10)


class TestGradient:
    def test_matches_finite_differences(self):
        graph, truth = synth_graph(2, (4, 4), noise=0.05, seed=3)
        rng = np.random.default_rng(0)
        state = apply_delta(truth, graph, rng.normal(scale=0.05, size=delta_size(graph)))
        _, grad = residual_and_gradient(state, graph)
        h = 1e-5
        for _ in range(25):
            d = rng.normal(size=delta_size(graph))
            d /= np.linalg.norm(d)
            f1 = alignment_residual(apply_delta(state, graph, +h * d), graph)
            f2 = alignment_residual(apply_delta(state, graph, -h * d), graph)
            fd = (f1 - f2) / (2 * h)
            an = float(grad @ d)
            assert an == pytest.approx(fd, rel=1e-4)


class TestGlobalAlign:
    def test_noise_free_recovery(self):
        graph, truth = synth_graph(3, (16, 16), noise=0.0, seed=0)
        res = global_align(graph, AlignOptions(max_iters=300))
        assert res.trace[-1] < 1e-10
        for v in range(graph.n_views):
            rel = np.abs(res.state.depths[v] - truth.depths[v]) / truth.depths[v]
            assert rel.max() < 1e-3

    def test_descent_from_ground_truth(self):
        graph, truth = synth_graph(3, (8, 8), noise=0.02, seed=1)
        init_res = alignment_residual(truth, graph)
        res = global_align(graph, AlignOptions(max_iters=60), init=truth)
        assert res.trace[-1] <= init_res + 1e-12
        diffs = np.diff(np.array(res.trace))
        assert np.all(diffs <= 1e-12)

    def test_noisy_beats_ground_truth_residual(self):
        graph, truth = synth_graph(3, (16, 16), noise=0.01, seed=1)
        gt_res = alignment_residual(truth, graph)
        res = global_align(graph, AlignOptions(max_iters=400))
        assert res.trace[-1] <= 1.05 * gt_res

    def test_disconnected_graph_rejected(self):
        graph, _ = synth_graph(4, (4, 4), seed=0)
        with pytest.raises(DisconnectedGraph):
            PairGraph(
                n_views=4,
                intrinsics=graph.intrinsics,
                edges=[graph.edges[0]],  # only (0, 1): views 2, 3 unreachable
            )


class TestSynthGraph:
    def test_deterministic(self):
        g1, t1 = synth_graph(3, (8, 8), noise=0.01, seed=5)
        g2, t2 = synth_graph(3, (8, 8), noise=0.01, seed=5)
        for e1, e2 in zip(g1.edges, g2.edges):
            for v in e1.maps:
                assert np.array_equal(e1.maps[v].points, e2.maps[v].points)
                assert np.array_equal(e1.maps[v].confidences, e2.maps[v].confidences)
        assert all(np.array_equal(a, b) for a, b in zip(t1.depths, t2.depths))

    def test_full_pair_set_edge_count(self):
        graph, _ = synth_graph(4, (4, 4), seed=0)
        assert len(graph.edges) == 6

    def test_gauge_convention(self):
        _, truth = synth_graph(3, (4, 4), seed=2)
        assert np.allclose(truth.rotations[0], np.eye(3), atol=1e-12)
        assert np.allclose(truth.translations[0], 0.0, atol=1e-12)
        assert truth.scales[0] == 1.0


def test_confidence_validation():
    with pytest.raises(ValueError):
        PointMap(0, (0, 1), np.zeros((2, 2, 3)), -np.ones((2, 2)))
    with pytest.raises(DimensionMismatch):
        PointMap(0, (0, 1), np.zeros((2, 2, 3)), np.ones((3, 2)))


def test_intrinsics_roundtrip():
    intr = Intrinsics(focal=20.0, cx=7.5, cy=7.5)
    assert intr.focal == 20.0
