"""Human-scene 3D alignment: contact detection, proximity and penetration
losses, the 4-DOF placement optimizer, and the scene-penetration metric.

Bodies are keypoint skeletons with capsule proxies; objects are watertight
meshes queried through their signed distance fields.  Placements are yaw plus
translation so the optimizer cannot "solve" penetration by tipping furniture.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptySelection
from .geometry import Mesh, Sdf

CONTACT_THRESHOLD = 0.02  # m, keypoint-to-surface
PENETRATION_EPS = 0.005   # m, SP-3D tolerance


@dataclass(frozen=True)
class Capsule:
    end_a: str
    end_b: str
    radius: float


@dataclass
class BodyModel:
    """Keypoint skeleton per frame with a named part partition.

    keypoints: (F, K, 3); every keypoint name belongs to exactly one part.
    """

    keypoint_names: list
    keypoints: np.ndarray
    parts: dict  # part name -> list of keypoint names
    capsules: list = field(default_factory=list)

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64)
        if self.keypoints.ndim == 2:
            self.keypoints = self.keypoints[None]
        f, k, d = self.keypoints.shape
        if k != len(self.keypoint_names) or d != 3:
            raise ValueError("keypoints must be (F, K, 3) matching keypoint_names")
        assigned = [n for names in self.parts.values() for n in names]
        if sorted(assigned) != sorted(self.keypoint_names):
            raise ValueError("parts must partition the keypoint names exactly")
        for cap in self.capsules:
            if cap.radius <= 0:
                raise ValueError(f"capsule {cap.end_a}-{cap.end_b} needs radius > 0")
        self._index = {n: i for i, n in enumerate(self.keypoint_names)}

    @property
    def n_frames(self) -> int:
        return self.keypoints.shape[0]

    def part_indices(self, part: str) -> np.ndarray:
        return np.array([self._index[n] for n in self.parts[part]], dtype=np.int64)

    def part_of(self, keypoint_index: int) -> str:
        name = self.keypoint_names[keypoint_index]
        for part, names in self.parts.items():
            if name in names:
                return part
        raise KeyError(name)

    def frame(self, f: int) -> np.ndarray:
        return self.keypoints[f]


class ContactLabel(Enum):
    CONTACT = "contact"
    NON_CONTACT = "non_contact"


@dataclass(frozen=True)
class ContactState:
    label: ContactLabel
    closest_part: str
    min_distance: float


def detect_contact(body: BodyModel, frame: int, sdf: Sdf,
                   threshold: float = CONTACT_THRESHOLD) -> ContactState:
    """Contact iff the closest keypoint is within threshold of the surface.

    Ties at exactly the threshold resolve to contact.
    """
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    d = sdf.query(body.frame(frame))
    i = int(np.argmin(d))
    dmin = float(d[i])
    label = ContactLabel.CONTACT if dmin <= threshold else ContactLabel.NON_CONTACT
    return ContactState(label=label, closest_part=body.part_of(i), min_distance=dmin)


def select_contact_part(body: BodyModel, frame: int, sdf: Sdf) -> str:
    """Part whose mean keypoint signed distance to the object is smallest."""
    best, best_val = None, np.inf
    pts = body.frame(frame)
    for part in body.parts:
        idx = body.part_indices(part)
        val = float(sdf.query(pts[idx]).mean())
        if val < best_val:
            best, best_val = part, val
    return best


def non_contact_loss(part_points: np.ndarray, object_vertices: np.ndarray) -> float:
    """Proximity pull used when the body part is away from the object.

    First term: sum over object vertices of the distance to the part centroid,
    normalized by the part size.  Second term: mean over object vertices of the
    distance to the nearest part keypoint.
    """
    part_points = np.atleast_2d(part_points)
    object_vertices = np.atleast_2d(object_vertices)
    if len(part_points) == 0 or len(object_vertices) == 0:
        raise EmptySelection("need at least one keypoint and one object vertex")
    centroid = part_points.mean(axis=0)
    d_centroid = np.linalg.norm(object_vertices - centroid, axis=1)
    term1 = d_centroid.sum() / len(part_points)
    pairwise = np.linalg.norm(
        object_vertices[:, None, :] - part_points[None, :, :], axis=2
    )
    term2 = pairwise.min(axis=1).mean()
    return float(term1 + term2)


def contact_loss(part_points: np.ndarray, sdf: Sdf) -> float:
    """Mean penetration depth of the part keypoints; zero when all outside."""
    part_points = np.atleast_2d(part_points)
    if len(part_points) == 0:
        raise EmptySelection("need at least one keypoint")
    d = sdf.query(part_points)
    return float(np.maximum(0.0, -d).mean())


# ---------------------------------------------------------------------------
# Placement: yaw + translation per object and for the human root
# ---------------------------------------------------------------------------

def _rotz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class PlacementState:
    object_yaw: np.ndarray    # (n_obj,) radians about +z
    object_offset: np.ndarray  # (n_obj, 3) meters
    human_yaw: float = 0.0
    human_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls, n_objects: int) -> "PlacementState":
        return cls(
            object_yaw=np.zeros(n_objects),
            object_offset=np.zeros((n_objects, 3)),
        )

    def copy(self) -> "PlacementState":
        return PlacementState(
            self.object_yaw.copy(),
            self.object_offset.copy(),
            float(self.human_yaw),
            np.asarray(self.human_offset, dtype=np.float64).copy(),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.concatenate([self.object_yaw[:, None], self.object_offset], axis=1).ravel(),
                [self.human_yaw],
                self.human_offset,
            ]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, n_objects: int) -> "PlacementState":
        obj = vec[: 4 * n_objects].reshape(n_objects, 4)
        return cls(
            object_yaw=obj[:, 0].copy(),
            object_offset=obj[:, 1:].copy(),
            human_yaw=float(vec[4 * n_objects]),
            human_offset=vec[4 * n_objects + 1:].copy(),
        )


def transform_about_pivot(points: np.ndarray, yaw: float, offset: np.ndarray,
                          pivot: np.ndarray) -> np.ndarray:
    return (points - pivot) @ _rotz(yaw).T + pivot + offset


def world_to_object_local(points: np.ndarray, yaw: float, offset: np.ndarray,
                          pivot: np.ndarray) -> np.ndarray:
    return (points - pivot - offset) @ _rotz(yaw) + pivot


@dataclass
class AlignPlacementOptions:
    contact_threshold: float = CONTACT_THRESHOLD
    max_iters: int = 80
    step_size: float = 0.05
    min_step: float = 1e-5
    fd_step: float = 1e-3
    frame_stride: int = 1
    # gravity owns object support: letting the optimizer levitate furniture
    # to escape penetration would defeat the stability goal
    lock_object_z: bool = True


@dataclass
class PlacementResult:
    state: PlacementState
    trace: list
    improved: bool


class _PlacementProblem:
    def __init__(self, body: BodyModel, objects: list, opts: AlignPlacementOptions):
        self.body = body
        self.objects = objects
        self.sdfs = [Sdf(m) for m in objects]
        self.pivots = [m.vertices.mean(axis=0) for m in objects]
        self.human_pivot = body.keypoints[0].mean(axis=0)
        self.frames = np.arange(0, body.n_frames, opts.frame_stride)
        self.opts = opts

    def placed_keypoints(self, state: PlacementState) -> np.ndarray:
        return transform_about_pivot(
            self.body.keypoints[self.frames], state.human_yaw, state.human_offset,
            self.human_pivot,
        )

    def total_loss(self, state: PlacementState) -> float:
        kps = self.placed_keypoints(state)
        total = 0.0
        for oi, (mesh, sdf) in enumerate(zip(self.objects, self.sdfs)):
            yaw, off, pivot = state.object_yaw[oi], state.object_offset[oi], self.pivots[oi]
            locals_ = [world_to_object_local(kps[f], yaw, off, pivot)
                       for f in range(len(self.frames))]
            dists = [sdf.query(loc) for loc in locals_]
            # the object is in contact if any frame reaches it: penetration
            # then governs every frame, otherwise proximity pulls them together
            in_contact = any(float(d.min()) <= self.opts.contact_threshold
                             for d in dists)
            per_frame = []
            for loc, d in zip(locals_, dists):
                part = self._closest_part_by_mean(d)
                idx = self.body.part_indices(part)
                if in_contact:
                    per_frame.append(float(np.maximum(0.0, -d[idx]).mean()))
                else:
                    per_frame.append(non_contact_loss(loc[idx], mesh.vertices))
            total += float(np.mean(per_frame))
        return total

    def _closest_part_by_mean(self, distances: np.ndarray) -> str:
        best, best_val = None, np.inf
        for part in self.body.parts:
            idx = self.body.part_indices(part)
            val = float(distances[idx].mean())
            if val < best_val:
                best, best_val = part, val
        return best


def align_placement(body: BodyModel, objects: list, init: PlacementState | None = None,
                    opts: AlignPlacementOptions | None = None) -> PlacementResult:
    """Descend the per-frame branch loss over yaw+translation placements.

    Gradients are central finite differences on the placement vector; steps
    are accepted only when the full branch-aware loss decreases, so the trace
    is non-increasing.  Returns the initial state with improved=False when no
    step ever helps.
    """
    opts = opts or AlignPlacementOptions()
    if init is None:
        init = PlacementState.identity(len(objects))
    problem = _PlacementProblem(body, objects, opts)

    state = init.copy()
    vec = state.to_vector()
    loss = problem.total_loss(state)
    trace = [loss]
    step = opts.step_size
    improved = False
    h = opts.fd_step
    n_obj = len(objects)

    frozen = set()
    if opts.lock_object_z:
        frozen = {4 * oi + 3 for oi in range(n_obj)}

    for _ in range(opts.max_iters):
        grad = np.zeros_like(vec)
        for i in range(len(vec)):
            if i in frozen:
                continue
            e = np.zeros_like(vec)
            e[i] = h
            lp = problem.total_loss(PlacementState.from_vector(vec + e, n_obj))
            lm = problem.total_loss(PlacementState.from_vector(vec - e, n_obj))
            grad[i] = (lp - lm) / (2 * h)
        gnorm = np.linalg.norm(grad)
        if gnorm < 1e-14:
            break
        direction = grad / gnorm
        accepted = False
        while step >= opts.min_step:
            cand_vec = vec - step * direction
            cand_loss = problem.total_loss(PlacementState.from_vector(cand_vec, n_obj))
            if cand_loss < loss:
                vec, loss = cand_vec, cand_loss
                trace.append(loss)
                step *= 1.5
                accepted = True
                improved = True
                break
            step *= 0.5
        if not accepted:
            break

    if not improved:
        return PlacementResult(state=init.copy(), trace=trace, improved=False)
    return PlacementResult(
        state=PlacementState.from_vector(vec, n_obj), trace=trace, improved=True
    )


def sp3d(body: BodyModel, objects: list, sdfs: list | None = None,
         placement: PlacementState | None = None,
         eps_pen: float = PENETRATION_EPS) -> float:
    """Percentage of (frame, keypoint) pairs penetrating any object by > eps."""
    if body.n_frames < 1:
        raise ValueError("need at least one frame")
    sdfs = sdfs or [Sdf(m) for m in objects]
    kps = body.keypoints
    if placement is not None:
        pivot = body.keypoints[0].mean(axis=0)
        kps = transform_about_pivot(kps, placement.human_yaw, placement.human_offset, pivot)
    flat = kps.reshape(-1, 3)
    worst = np.full(len(flat), np.inf)
    for oi, (mesh, sdf) in enumerate(zip(objects, sdfs)):
        pts = flat
        if placement is not None:
            pts = world_to_object_local(
                flat, placement.object_yaw[oi], placement.object_offset[oi],
                mesh.vertices.mean(axis=0),
            )
        worst = np.minimum(worst, sdf.query(pts))
    return float(100.0 * np.count_nonzero(worst < -eps_pen) / len(flat))
