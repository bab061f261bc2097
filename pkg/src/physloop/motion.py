"""Trajectory refinement against the simulator, plus motion quality metrics.

The refiner is a cross-entropy search over smoothed root and contact-keypoint
offsets: each candidate motion drives the kinematic human through a settling
rollout and is scored by tracking fidelity, contact-surface proximity, and
penetration.  The surface term can be swapped for a center-point variant to
reproduce the weaker ablation behaviour.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowUp, DegenerateFrame, DimensionMismatch, EmptySelection
from .geometry import Mesh, Sdf, SurfaceSamples, sample_surface
from .sim import HumanTrack, SettleParams, WorldState, settle


@dataclass
class MotionSequence:
    keypoint_names: list
    frames: np.ndarray          # (F, K, 3)
    fps: float
    contact_indices: list       # per frame: array of keypoint indices
    root: np.ndarray | None = None  # (F, 3); defaults to per-frame keypoint mean

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        f, k, d = self.frames.shape
        if k != len(self.keypoint_names) or d != 3:
            raise DimensionMismatch("frames must be (F, K, 3) matching keypoint_names")
        if len(self.contact_indices) == 1 and f > 1:
            self.contact_indices = [self.contact_indices[0]] * f
        if len(self.contact_indices) != f:
            raise DimensionMismatch("need contact indices per frame")
        self.contact_indices = [np.asarray(c, dtype=np.int64) for c in self.contact_indices]
        for c in self.contact_indices:
            if c.size and (c.min() < 0 or c.max() >= k):
                raise DimensionMismatch("contact index out of range")
        if self.root is None:
            self.root = self.frames.mean(axis=1)
        else:
            self.root = np.asarray(self.root, dtype=np.float64)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_keypoints(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return (self.n_frames - 1) / self.fps

    def copy(self) -> "MotionSequence":
        return MotionSequence(
            keypoint_names=list(self.keypoint_names),
            frames=self.frames.copy(),
            fps=self.fps,
            contact_indices=[c.copy() for c in self.contact_indices],
            root=self.root.copy(),
        )


def scene_targeted_loss(contact_keypoints: np.ndarray, surface_points: np.ndarray) -> float:
    """Double mean of squared keypoint-to-sample distances (m^2)."""
    contact_keypoints = np.atleast_2d(contact_keypoints)
    surface_points = np.atleast_2d(surface_points)
    if len(contact_keypoints) == 0 or len(surface_points) == 0:
        raise EmptySelection("need at least one contact keypoint and one surface sample")
    diff = surface_points[:, None, :] - contact_keypoints[None, :, :]
    return float((diff * diff).sum(axis=2).mean())


def center_point_loss(contact_keypoints: np.ndarray, obj: Mesh) -> float:
    """Squared distance between the contact centroid and the object centroid."""
    contact_keypoints = np.atleast_2d(contact_keypoints)
    if len(contact_keypoints) == 0:
        raise EmptySelection("need at least one contact keypoint")
    gap = contact_keypoints.mean(axis=0) - obj.vertices.mean(axis=0)
    return float(gap @ gap)


def w_mpjpe(pred: MotionSequence, ref: MotionSequence) -> float:
    """Mean per-joint position error in world coordinates (meters)."""
    if pred.frames.shape != ref.frames.shape:
        raise DimensionMismatch(
            f"shape mismatch: {pred.frames.shape} vs {ref.frames.shape}"
        )
    return float(np.linalg.norm(pred.frames - ref.frames, axis=2).mean())


def _procrustes_align(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Optimal similarity transform of x onto y; returns the aligned x."""
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    sing = np.linalg.svd(xc, compute_uv=False)
    if len(sing) < 2 or sing[1] <= 1e-12 * max(sing[0], 1.0):
        raise DegenerateFrame("keypoints are collinear")
    c = xc.T @ yc
    u, s, vt = np.linalg.svd(c)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.diag([1.0, 1.0, d])
    rot = (u @ flip @ vt).T
    scale = (s[0] + s[1] + d * s[2]) / (xc * xc).sum()
    return scale * xc @ rot.T + my


def pa_mpjpe(pred: MotionSequence, ref: MotionSequence) -> float:
    """Per-frame Procrustes (similarity) alignment, then mean joint error."""
    if pred.frames.shape != ref.frames.shape:
        raise DimensionMismatch(
            f"shape mismatch: {pred.frames.shape} vs {ref.frames.shape}"
        )
    errs = []
    for f in range(pred.n_frames):
        aligned = _procrustes_align(pred.frames[f], ref.frames[f])
        errs.append(np.linalg.norm(aligned - ref.frames[f], axis=1).mean())
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Sampling-based refinement with simulator rollouts
# ---------------------------------------------------------------------------

@dataclass
class RefineParams:
    population: int = 64
    elite_frac: float = 0.1
    iterations: int = 30
    sigma: float = 0.05          # m, initial per-DOF noise on contact offsets
    root_sigma_scale: float = 0.35  # root offsets explore less than contacts
    sigma_floor: float = 1e-4
    w_track: float = 1.0
    w_scene: float = 10.0
    w_pen: float = 100.0
    knot_spacing: float = 0.4    # s between offset control knots
    region_radius: float = 0.3   # m, local contact region for surface samples

    def __post_init__(self):
        if not 0.0 < self.elite_frac <= 1.0:
            raise ValueError("elite_frac must be in (0, 1]")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass
class RefineScene:
    """Static side of a refinement problem.

    objects: (mesh, pieces-or-None, friction-or-None) tuples at world pose;
    capsules: (name_a, name_b, radius) built on the motion's keypoint names.
    """

    objects: list
    capsules: list
    target_index: int = 0
    surface_seed: int = 0
    n_surface: int = 256

    def __post_init__(self):
        from .sim import RigidBody

        self.meshes = [obj[0] for obj in self.objects]
        self.sdfs = [Sdf(m) for m in self.meshes]
        self.samples = sample_surface(
            self.meshes[self.target_index], self.n_surface, seed=self.surface_seed
        )
        self.template_bodies = []
        for oi, (mesh, pieces, friction) in enumerate(self.objects):
            kwargs = {"pieces": pieces}
            if friction is not None:
                kwargs["friction"] = friction
            self.template_bodies.append(
                RigidBody.from_mesh(mesh, body_id=f"obj{oi}", **kwargs)
            )


@dataclass
class RefineResult:
    motion: MotionSequence
    trace: list          # best score so far, per iteration
    best_score: float
    input_score: float
    discarded: int = 0   # candidates lost to simulation blow-ups


def _triangular_smooth(dense: np.ndarray) -> np.ndarray:
    """5-frame triangular kernel along the time axis."""
    kernel = np.array([1.0, 2.0, 3.0, 2.0, 1.0])
    kernel /= kernel.sum()
    padded = np.pad(dense, ((2, 2), (0, 0)), mode="edge")
    out = np.zeros_like(dense)
    for i in range(len(dense)):
        out[i] = kernel @ padded[i:i + 5]
    return out


def _knot_grid(n_frames: int, fps: float, spacing: float) -> np.ndarray:
    n_knots = max(2, int(np.ceil((n_frames - 1) / (fps * spacing))) + 1)
    return np.linspace(0, n_frames - 1, n_knots)


def _dense_offsets(knot_values: np.ndarray, knots: np.ndarray, n_frames: int) -> np.ndarray:
    t = np.arange(n_frames, dtype=np.float64)
    out = np.empty((n_frames, 3))
    for axis in range(3):
        out[:, axis] = np.interp(t, knots, knot_values[:, axis])
    return _triangular_smooth(out)


def apply_offsets(motion: MotionSequence, root_knots: np.ndarray,
                  contact_knots: np.ndarray, knots: np.ndarray) -> MotionSequence:
    out = motion.copy()
    root_dense = _dense_offsets(root_knots, knots, motion.n_frames)
    contact_dense = _dense_offsets(contact_knots, knots, motion.n_frames)
    out.frames = out.frames + root_dense[:, None, :]
    for f, idx in enumerate(out.contact_indices):
        if idx.size:
            out.frames[f, idx] += contact_dense[f]
    out.root = out.root + root_dense
    return out


def _local_region(samples: SurfaceSamples, center: np.ndarray, radius: float) -> np.ndarray:
    d = np.linalg.norm(samples.points - center, axis=1)
    mask = d <= radius
    if not mask.any():
        mask = d == d.min()
    return samples.points[mask]


def relevant_capsules(motion: MotionSequence, scene: RefineScene,
                      margin: float = 0.35) -> list:
    """Capsules whose swept hull can reach any object; the rest cannot
    generate contacts and are dropped from rollout collision."""
    kept = []
    boxes = []
    for mesh in scene.meshes:
        boxes.append((mesh.vertices.min(axis=0) - margin,
                      mesh.vertices.max(axis=0) + margin))
    index = {n: i for i, n in enumerate(motion.keypoint_names)}
    for a, b, r in scene.capsules:
        pts = motion.frames[:, [index[a], index[b]], :].reshape(-1, 3)
        lo = pts.min(axis=0) - r
        hi = pts.max(axis=0) + r
        for blo, bhi in boxes:
            if np.all(hi >= blo) and np.all(lo <= bhi):
                kept.append((a, b, r))
                break
    return kept or list(scene.capsules)


def score_motion(candidate: MotionSequence, base: MotionSequence, scene: RefineScene,
                 sim_params: SettleParams, params: RefineParams,
                 mode: str = "surface", capsules: list | None = None) -> float:
    """Roll the candidate through the simulator and combine the three terms."""
    bodies = [b.copy() for b in scene.template_bodies]
    human = HumanTrack(
        keypoint_names=candidate.keypoint_names,
        frames=candidate.frames,
        fps=candidate.fps,
        capsules=capsules if capsules is not None else scene.capsules,
    )
    world = WorldState(bodies=bodies, humans=[human])
    outcome = settle(world, sim_params)

    target = f"obj{scene.target_index}"
    pose = outcome.final_poses[target]
    rot, t = pose["rotation"], pose["translation"]
    settled_samples = SurfaceSamples(
        points=scene.samples.points @ rot.T + t,
        normals=scene.samples.normals @ rot.T,
        face_indices=scene.samples.face_indices,
    )

    track = float(np.linalg.norm(candidate.frames - base.frames, axis=2).mean()) ** 2

    scene_terms = []
    for f, idx in enumerate(candidate.contact_indices):
        if not idx.size:
            continue
        kps = candidate.frames[f, idx]
        if mode == "surface":
            region = _local_region(settled_samples, kps.mean(axis=0), params.region_radius)
            scene_terms.append(scene_targeted_loss(kps, region))
        else:
            moved = Mesh(scene.meshes[scene.target_index].vertices @ rot.T + t,
                         scene.meshes[scene.target_index].faces)
            scene_terms.append(center_point_loss(kps, moved))
    scene_term = float(np.mean(scene_terms)) if scene_terms else 0.0

    pen_terms = []
    flat = candidate.frames.reshape(-1, 3)
    for oi, sdf in enumerate(scene.sdfs):
        p = outcome.final_poses[f"obj{oi}"]
        local = (flat - p["translation"]) @ p["rotation"]
        d = sdf.query(local)
        pen_terms.append(np.maximum(0.0, -d).mean())
    pen = float(np.mean(pen_terms))

    return params.w_track * track + params.w_scene * scene_term + params.w_pen * pen


def refine_motion(motion: MotionSequence, scene: RefineScene,
                  sim_params: SettleParams | None = None,
                  params: RefineParams | None = None,
                  seed: int = 0, mode: str = "surface") -> RefineResult:
    """Cross-entropy search over offset knots; returns the best motion seen.

    Blown-up rollouts discard the candidate, never the search.  The
    unperturbed input is always a candidate, so the result never scores worse
    than the input.
    """
    if mode not in ("surface", "center"):
        raise ValueError("mode must be 'surface' or 'center'")
    sim_params = sim_params or SettleParams()
    params = params or RefineParams()
    rng = np.random.default_rng(seed)

    knots = _knot_grid(motion.n_frames, motion.fps, params.knot_spacing)
    n_knots = len(knots)
    dim = n_knots * 6  # root xyz + contact xyz per knot

    capsules = relevant_capsules(motion, scene)

    def unpack(vec):
        half = n_knots * 3
        return vec[:half].reshape(n_knots, 3), vec[half:].reshape(n_knots, 3)

    def evaluate(vec):
        root_k, contact_k = unpack(vec)
        cand = apply_offsets(motion, root_k, contact_k, knots)
        score = score_motion(cand, motion, scene, sim_params, params, mode,
                             capsules=capsules)
        return score, cand

    input_score, _ = evaluate(np.zeros(dim))
    best_vec = np.zeros(dim)
    best_score = input_score
    best_motion = motion.copy()

    mean = np.zeros(dim)
    sigma = np.full(dim, params.sigma)
    sigma[: n_knots * 3] *= params.root_sigma_scale
    n_elite = max(2, int(round(params.elite_frac * params.population)))
    n_elite = min(n_elite, params.population)
    trace = [best_score]
    discarded = 0

    for it in range(params.iterations):
        pop = mean[None, :] + sigma[None, :] * rng.standard_normal((params.population, dim))
        if it == 0:
            pop[0] = 0.0  # keep the unperturbed input in the first generation
        scored = []
        for vec in pop:
            try:
                s, cand = evaluate(vec)
            except BlowUp:
                discarded += 1
                continue
            scored.append((s, vec, cand))
        if not scored:
            trace.append(best_score)
            continue
        scored.sort(key=lambda e: e[0])
        if scored[0][0] < best_score:
            best_score, best_vec, best_motion = scored[0]
        elite = np.stack([vec for _, vec, _ in scored[:n_elite]])
        mean = elite.mean(axis=0)
        # keep half the previous spread so tiny elite sets cannot freeze the
        # search in one generation
        sigma = np.maximum(np.maximum(elite.std(axis=0), 0.5 * sigma), params.sigma_floor)
        trace.append(best_score)

    return RefineResult(
        motion=best_motion,
        trace=trace,
        best_score=best_score,
        input_score=input_score,
        discarded=discarded,
    )
