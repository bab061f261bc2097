"""Multi-view point-map global alignment on synthetic data.

Recovers per-view depth grids, world-from-camera poses, and per-edge scale
factors by minimizing the confidence-weighted squared gap between each view's
depth grid and the depth implied by projecting that view's point map under its
pose.  The gauge is fixed by pinning view 0's pose to the identity and the
lexicographically first edge's scale to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, DisconnectedGraph

DEPTH_FLOOR = 1e-4  # m; keeps the scale/depth coupling away from collapse


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    cx: float
    cy: float


@dataclass(frozen=True)
class PointMap:
    """3D points for one view's pixel grid, expressed in the edge frame."""

    view: int
    pair: tuple[int, int]
    points: np.ndarray       # (H, W, 3)
    confidences: np.ndarray  # (H, W), >= 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise DimensionMismatch(f"points must be (H, W, 3), got {pts.shape}")
        if conf.shape != pts.shape[:2]:
            raise DimensionMismatch(
                f"confidence grid {conf.shape} does not match points {pts.shape[:2]}"
            )
        if (conf < 0).any():
            raise ValueError("confidences must be non-negative")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidences", conf)


@dataclass(frozen=True)
class PairEdge:
    pair: tuple[int, int]
    maps: dict  # view id -> PointMap for both views of the pair


@dataclass
class PairGraph:
    n_views: int
    intrinsics: list  # Intrinsics per view
    edges: list       # PairEdge, lexicographic pair order by convention

    def __post_init__(self):
        for e in self.edges:
            a, b = e.pair
            if a == b or not (0 <= a < self.n_views and 0 <= b < self.n_views):
                raise ValueError(f"edge {e.pair} references invalid views")
        if not self._connected():
            raise DisconnectedGraph("pair graph is not connected")

    def _connected(self) -> bool:
        if self.n_views == 0:
            return False
        adj = {v: set() for v in range(self.n_views)}
        for e in self.edges:
            a, b = e.pair
            adj[a].add(b)
            adj[b].add(a)
        seen = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.n_views

    @property
    def resolution(self) -> tuple[int, int]:
        m = next(iter(self.edges[0].maps.values()))
        return m.points.shape[:2]


@dataclass
class AlignmentState:
    depths: list    # per view, (H, W) positive
    rotations: list  # per view, (3, 3) orthonormal, world-from-camera
    translations: list  # per view, (3,)
    scales: np.ndarray  # per edge, positive; scales[0] == 1 by gauge

    def copy(self) -> "AlignmentState":
        return AlignmentState(
            depths=[d.copy() for d in self.depths],
            rotations=[r.copy() for r in self.rotations],
            translations=[t.copy() for t in self.translations],
            scales=self.scales.copy(),
        )


class ProjectedDepth(NamedTuple):
    depth: np.ndarray  # (H, W) z in the camera frame
    valid: np.ndarray  # (H, W) bool, False where z <= 0

    @property
    def behind_camera(self) -> int:
        return int((~self.valid).sum())


def project_pointmap(rotation: np.ndarray, translation: np.ndarray,
                     pointmap: PointMap, intrinsics: Intrinsics | None = None) -> ProjectedDepth:
    """Per-pixel depth of the map's points in the camera of the given pose.

    The pose is world-from-camera; points behind the camera are flagged, not
    raised.  Intrinsics are accepted for interface symmetry; the depth grid is
    sampled on the map's own pixel lattice.
    """
    rel = pointmap.points - np.asarray(translation, dtype=np.float64)
    z = rel @ np.asarray(rotation, dtype=np.float64)[:, 2]
    return ProjectedDepth(depth=z, valid=z > 0.0)


def alignment_residual(state: AlignmentState, graph: PairGraph) -> float:
    """Exact value of the weighted depth-consistency objective."""
    _check_dims(state, graph)
    total = 0.0
    for ei, edge in enumerate(graph.edges):
        sigma = state.scales[ei]
        for view, pmap in edge.maps.items():
            proj = project_pointmap(state.rotations[view], state.translations[view], pmap)
            diff = state.depths[view] - sigma * proj.depth
            w = pmap.confidences * proj.valid
            total += float((w * diff * diff).sum())
    return total


def _check_dims(state: AlignmentState, graph: PairGraph) -> None:
    if len(state.depths) != graph.n_views or len(state.rotations) != graph.n_views:
        raise DimensionMismatch(
            f"state covers {len(state.depths)} views, graph has {graph.n_views}"
        )
    if len(state.scales) != len(graph.edges):
        raise DimensionMismatch(
            f"state has {len(state.scales)} scales, graph has {len(graph.edges)} edges"
        )
    res = graph.resolution
    for d in state.depths:
        if d.shape != res:
            raise DimensionMismatch(f"depth grid {d.shape} vs maps {res}")


# ---------------------------------------------------------------------------
# Delta chart: [depth deltas | per-view (omega, dt) for views >= 1 | dlog sigma
# for edges >= 1].  View 0's pose and the first edge's scale are the gauge.
# ---------------------------------------------------------------------------

def delta_size(graph: PairGraph) -> int:
    h, w = graph.resolution
    return graph.n_views * h * w + (graph.n_views - 1) * 6 + (len(graph.edges) - 1)


def _rodrigues(omega: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        k = _hat(omega)
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = omega / theta
    k = _hat(axis)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    fix = np.diag([1.0, 1.0, np.linalg.det(u @ vt)])
    return u @ fix @ vt


def apply_delta(state: AlignmentState, graph: PairGraph, delta: np.ndarray) -> AlignmentState:
    """New state with the chart step applied; rotations re-orthonormalized."""
    h, w = graph.resolution
    hw = h * w
    out = state.copy()
    k = 0
    for v in range(graph.n_views):
        out.depths[v] = np.maximum(state.depths[v] + delta[k:k + hw].reshape(h, w), DEPTH_FLOOR)
        k += hw
    for v in range(1, graph.n_views):
        omega = delta[k:k + 3]
        dt = delta[k + 3:k + 6]
        k += 6
        out.rotations[v] = _reorthonormalize(state.rotations[v] @ _rodrigues(omega))
        out.translations[v] = state.translations[v] + dt
    for ei in range(1, len(graph.edges)):
        out.scales[ei] = state.scales[ei] * np.exp(delta[k])
        k += 1
    return out


def residual_and_gradient(state: AlignmentState, graph: PairGraph) -> tuple[float, np.ndarray]:
    """Objective value and its gradient in the delta chart at delta = 0."""
    _check_dims(state, graph)
    h, w = graph.resolution
    hw = h * w
    n_views = graph.n_views
    grad_depth = [np.zeros((h, w)) for _ in range(n_views)]
    grad_pose = np.zeros((n_views, 6))
    grad_logsig = np.zeros(len(graph.edges))
    ez = np.array([0.0, 0.0, 1.0])
    total = 0.0

    for ei, edge in enumerate(graph.edges):
        sigma = state.scales[ei]
        for view, pmap in edge.maps.items():
            rot = state.rotations[view]
            t = state.translations[view]
            rel = pmap.points - t                      # (H, W, 3)
            q = rel @ rot                              # camera-frame points
            f = q[..., 2]
            valid = f > 0.0
            c = pmap.confidences * valid
            r = state.depths[view] - sigma * f
            total += float((c * r * r).sum())

            cr = c * r
            grad_depth[view] += 2.0 * cr
            grad_logsig[ei] += -2.0 * sigma * float((cr * f).sum())
            # dF/dt = -R e_z  ->  dr/dt = sigma * R e_z
            grad_pose[view, 3:] += 2.0 * sigma * float(cr.sum()) * (rot @ ez)
            # dF/domega = e_z x q  ->  dr/domega = -sigma * (e_z x q)
            cross = np.stack([-q[..., 1], q[..., 0], np.zeros_like(f)], axis=-1)
            grad_pose[view, :3] += -2.0 * sigma * np.einsum("hw,hwk->k", cr, cross)

    grad = np.empty(delta_size(graph))
    k = 0
    for v in range(n_views):
        grad[k:k + hw] = grad_depth[v].ravel()
        k += hw
    for v in range(1, n_views):
        grad[k:k + 6] = grad_pose[v]
        k += 6
    grad[k:] = grad_logsig[1:]
    return total, grad


# ---------------------------------------------------------------------------
# Initialization: DLT absolute pose per view plus scale propagation over edges
# ---------------------------------------------------------------------------

def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return u, v


def _dlt_pose(world: np.ndarray, u: np.ndarray, v: np.ndarray, intr: Intrinsics):
    """World-from-camera pose from 2D-3D correspondences via DLT.

    world: (N, 3) points, (u, v): pixel coordinates.  Returns (R, t).
    """
    n = len(world)
    x_h = np.concatenate([world, np.ones((n, 1))], axis=1)
    a = np.zeros((2 * n, 12))
    a[0::2, 0:4] = x_h
    a[0::2, 8:12] = -u[:, None] * x_h
    a[1::2, 4:8] = x_h
    a[1::2, 8:12] = -v[:, None] * x_h
    _, _, vt = np.linalg.svd(a, full_matrices=False)
    m = vt[-1].reshape(3, 4)
    k = np.array([[intr.focal, 0, intr.cx], [0, intr.focal, intr.cy], [0, 0, 1.0]])
    g = np.linalg.solve(k, m)
    b, bvec = g[:, :3], g[:, 3]
    det = np.linalg.det(b)
    if det < 0:
        b, bvec, det = -b, -bvec, -det
    s = det ** (1.0 / 3.0)
    r_w2c = _reorthonormalize(b / s)
    t_w2c = bvec / s
    # world-from-camera
    rot = r_w2c.T
    t = -r_w2c.T @ t_w2c
    return rot, t


def initialize_state(graph: PairGraph) -> AlignmentState:
    """Pose-and-scale bootstrap from the maps themselves.

    DLT pose for each view of the first edge (scale 1 by gauge), then a
    breadth-first sweep: each new edge gets a least-squares scale against an
    already-initialized view, and its unseen view gets a DLT pose from the
    rescaled map.  Depths are the confidence-weighted mean over incident edges.
    """
    h, w = graph.resolution
    u, v = _pixel_grid(h, w)
    uu, vv = u.ravel(), v.ravel()

    rotations: dict[int, np.ndarray] = {}
    translations: dict[int, np.ndarray] = {}
    scales = np.ones(len(graph.edges))

    def pnp(view: int, pts: np.ndarray):
        return _dlt_pose(pts.reshape(-1, 3), uu, vv, graph.intrinsics[view])

    first = graph.edges[0]
    for view in first.pair:
        rotations[view], translations[view] = pnp(view, first.maps[view].points)
    done = {0}
    pending = list(range(1, len(graph.edges)))
    # the maps keep each view's true camera center whatever the edge scale, so
    # every view's pose comes from its raw map; only depths and scales couple

    def reference_depth(view: int) -> np.ndarray:
        num = np.zeros((h, w))
        den = np.zeros((h, w))
        for ej in done:
            edge = graph.edges[ej]
            if view not in edge.maps:
                continue
            pmap = edge.maps[view]
            proj = project_pointmap(rotations[view], translations[view], pmap)
            cw = pmap.confidences * proj.valid
            num += cw * scales[ej] * proj.depth
            den += cw
        return np.where(den > 0, num / np.maximum(den, 1e-30), 1.0)

    while pending:
        progressed = False
        for ei in list(pending):
            edge = graph.edges[ei]
            known = [view for view in edge.pair
                     if view in rotations and any(view in graph.edges[ej].maps for ej in done)]
            if not known:
                continue
            ref = known[0]
            pmap = edge.maps[ref]
            proj = project_pointmap(rotations[ref], translations[ref], pmap)
            ref_depth = reference_depth(ref)
            cw = pmap.confidences * proj.valid
            denom = float((cw * proj.depth * proj.depth).sum())
            scales[ei] = float((cw * proj.depth * ref_depth).sum()) / max(denom, 1e-30)
            scales[ei] = max(scales[ei], 1e-6)
            for view in edge.pair:
                if view not in rotations:
                    rotations[view], translations[view] = pnp(view, edge.maps[view].points)
            pending.remove(ei)
            done.add(ei)
            progressed = True
        if not progressed:  # unreachable for connected graphs
            raise DisconnectedGraph("scale propagation stalled")

    # gauge: world frame is camera 0 (PnP lands there up to fp noise anyway)
    rotations[0] = np.eye(3)
    translations[0] = np.zeros(3)

    depths = []
    for view in range(graph.n_views):
        num = np.zeros((h, w))
        den = np.zeros((h, w))
        for ei, edge in enumerate(graph.edges):
            if view not in edge.maps:
                continue
            pmap = edge.maps[view]
            proj = project_pointmap(rotations[view], translations[view], pmap)
            cw = pmap.confidences * proj.valid
            num += cw * scales[ei] * proj.depth
            den += cw
        depths.append(np.maximum(np.where(den > 0, num / np.maximum(den, 1e-30), 1.0), DEPTH_FLOOR))

    return AlignmentState(
        depths=depths,
        rotations=[rotations[i] for i in range(graph.n_views)],
        translations=[translations[i] for i in range(graph.n_views)],
        scales=scales,
    )


# ---------------------------------------------------------------------------
# Optimizer: momentum-free gradient descent with per-block adaptive steps
# ---------------------------------------------------------------------------

@dataclass
class AlignOptions:
    max_iters: int = 400
    step_size: float = 1e-3
    tolerance: float = 1e-12


@dataclass
class AlignResult:
    state: AlignmentState
    trace: list = field(default_factory=list)  # residual at accepted steps
    converged: bool = True
    iterations: int = 0


_BLOCKS = ("depth", "pose", "scale")


def global_align(graph: PairGraph, opts: AlignOptions | None = None,
                 init: AlignmentState | None = None) -> AlignResult:
    """Minimize the alignment objective; returns the best state seen."""
    opts = opts or AlignOptions()
    if not graph.edges:
        raise DisconnectedGraph("graph has no edges")
    state = init.copy() if init is not None else initialize_state(graph)

    h, w = graph.resolution
    hw = h * w
    n_depth = graph.n_views * hw
    n_pose = (graph.n_views - 1) * 6

    def block_slices():
        return {
            "depth": slice(0, n_depth),
            "pose": slice(n_depth, n_depth + n_pose),
            "scale": slice(n_depth + n_pose, None),
        }

    slices = block_slices()
    steps = {b: opts.step_size for b in _BLOCKS}

    value, grad = residual_and_gradient(state, graph)
    best_state, best_value = state.copy(), value
    trace = [value]
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        if value <= opts.tolerance:
            converged = True
            break
        improved = False
        for block in _BLOCKS:
            sl = slices[block]
            g = grad[sl]
            gnorm = np.linalg.norm(g)
            if gnorm == 0.0:
                continue
            accepted = False
            for _ in range(20):
                delta = np.zeros_like(grad)
                delta[sl] = -steps[block] * g
                cand = apply_delta(state, graph, delta)
                cand_value = alignment_residual(cand, graph)
                if cand_value < value:
                    state, value = cand, cand_value
                    steps[block] *= 1.3
                    accepted = True
                    break
                steps[block] *= 0.5
                if steps[block] < 1e-18:
                    break
            if accepted:
                improved = True
                _, grad = residual_and_gradient(state, graph)
        if value < best_value:
            best_state, best_value = state.copy(), value
        trace.append(value)
        if not improved:
            converged = True
            break
        if len(trace) >= 3 and trace[-3] > 0:
            if (trace[-3] - trace[-1]) / trace[-3] < 1e-10:
                converged = True
                break
    return AlignResult(state=best_state, trace=trace, converged=converged, iterations=it)


# ---------------------------------------------------------------------------
# Synthetic graph generator with known ground truth
# ---------------------------------------------------------------------------

def synth_graph(n_views: int, resolution: tuple[int, int] = (16, 16),
                noise: float = 0.0, seed: int = 0,
                edges: list | None = None) -> tuple[PairGraph, AlignmentState]:
    """Deterministic multi-view scene: cameras on a circle around random
    landmark fields, exact pairwise point maps, optional Gaussian perturbation.

    The ground truth is produced in the solver's gauge: view 0's camera frame
    is the world frame and the first edge's scale is 1.
    """
    if n_views < 2:
        raise ValueError("need at least two views")
    rng = np.random.default_rng(seed)
    h, w = resolution
    focal = 1.2 * max(h, w)
    intr = Intrinsics(focal=focal, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0)

    radius = 4.0
    poses = []
    for i in range(n_views):
        ang = 2.0 * np.pi * i / n_views
        center = np.array([radius * np.cos(ang), radius * np.sin(ang), 0.0])
        # camera z axis looks at the origin
        z = -center / np.linalg.norm(center)
        up = np.array([0.0, 0.0, 1.0])
        x = np.cross(up, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        poses.append((np.stack([x, y, z], axis=1), center))

    # re-express in camera-0 coordinates so the gauge matches the solver
    r0, t0 = poses[0]
    poses = [(r0.T @ r, r0.T @ (t - t0)) for r, t in poses]

    u, v = _pixel_grid(h, w)
    rays = np.stack([(u - intr.cx) / intr.focal, (v - intr.cy) / intr.focal, np.ones_like(u)], axis=-1)

    depths = [rng.uniform(2.5, 5.0, size=(h, w)) for _ in range(n_views)]

    if edges is None:
        edges = [(a, b) for a in range(n_views) for b in range(a + 1, n_views)]
    edges = sorted(edges)

    scales = np.ones(len(edges))
    for ei in range(1, len(edges)):
        scales[ei] = rng.uniform(0.5, 2.0)

    pair_edges = []
    for ei, (a, b) in enumerate(edges):
        maps = {}
        for view in (a, b):
            # landmarks along the view's true pixel rays, at depth D / sigma_e,
            # so the consistency D = sigma * depth(pose^-1 P) holds exactly
            rot, t = poses[view]
            cam = rays * (depths[view] / scales[ei])[..., None]
            pts = cam @ rot.T + t
            if noise > 0:
                pts = pts + noise * rng.normal(size=pts.shape)
            conf = rng.uniform(0.5, 1.5, size=(h, w))
            maps[view] = PointMap(view=view, pair=(a, b), points=pts, confidences=conf)
        pair_edges.append(PairEdge(pair=(a, b), maps=maps))

    graph = PairGraph(n_views=n_views, intrinsics=[intr] * n_views, edges=pair_edges)
    truth = AlignmentState(
        depths=depths,
        rotations=[p[0] for p in poses],
        translations=[p[1] for p in poses],
        scales=scales,
    )
    return graph, truth
