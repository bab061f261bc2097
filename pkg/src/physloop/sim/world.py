"""Rigid bodies, kinematic human tracks, and the simulated world state.

Bodies collide through one convex hull by default, or through manual convex
pieces when the scene provides them (legs and seats of furniture keep their
gaps that a single hull would fill).  The human is a kinematically driven
capsule chain: it exerts contact impulses on objects but never receives any.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull

from ..geometry import Mesh, inertia_tensor

GRAVITY = 9.81
DEFAULT_FRICTION = 0.6
DEFAULT_RESTITUTION = 0.0
DEFAULT_DENSITY = 100.0  # kg/m^3, light furniture


@dataclass
class ConvexPiece:
    """Convex collision geometry in the body's local (COM-centered) frame."""

    vertices: np.ndarray   # (V, 3) hull vertices
    equations: np.ndarray  # (F, 4): n.x + d <= 0 inside

    @classmethod
    def from_points(cls, points: np.ndarray) -> "ConvexPiece":
        points = np.asarray(points, dtype=np.float64)
        hull = ConvexHull(points)
        return cls(vertices=points[hull.vertices].copy(), equations=hull.equations.copy())

    def shifted(self, offset: np.ndarray) -> "ConvexPiece":
        eq = self.equations.copy()
        eq[:, 3] -= eq[:, :3] @ offset
        return ConvexPiece(vertices=self.vertices + offset, equations=eq)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    norm = np.linalg.norm(axis)
    if norm < 1e-15 or angle == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    s = np.sin(half) / norm
    return np.array([np.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_matrix(r: np.ndarray) -> np.ndarray:
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        return np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    i = int(np.argmax(np.diag(r)))
    j, k = (i + 1) % 3, (i + 2) % 3
    s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2
    q = np.empty(4)
    q[0] = (r[k, j] - r[j, k]) / s
    q[1 + i] = 0.25 * s
    q[1 + j] = (r[j, i] + r[i, j]) / s
    q[1 + k] = (r[k, i] + r[i, k]) / s
    return q


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Rotation angle (radians) taking orientation a to orientation b."""
    dot = abs(float(np.dot(a, b)))
    return 2.0 * np.arccos(min(1.0, dot))


@dataclass
class RigidBody:
    """Dynamic body; state lives at the center of mass."""

    body_id: str
    pieces: list                 # ConvexPiece, COM-centered local frame
    mass: float
    inertia_body: np.ndarray     # (3, 3) about COM, local frame
    com_offset: np.ndarray       # COM position in the source-mesh frame
    position: np.ndarray         # world COM
    quat: np.ndarray             # (w, x, y, z)
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    friction: float = DEFAULT_FRICTION
    restitution: float = DEFAULT_RESTITUTION
    source_mesh: Mesh | None = None

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError(f"body {self.body_id!r}: mass must be > 0")
        if self.friction < 0:
            raise ValueError(f"body {self.body_id!r}: friction must be >= 0")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError(f"body {self.body_id!r}: restitution must be in [0, 1]")
        self.position = np.asarray(self.position, dtype=np.float64).copy()
        self.quat = np.asarray(self.quat, dtype=np.float64).copy()
        self.velocity = np.asarray(self.velocity, dtype=np.float64).copy()
        self.omega = np.asarray(self.omega, dtype=np.float64).copy()
        self.inv_inertia_body = np.linalg.inv(self.inertia_body)

    @classmethod
    def from_mesh(cls, mesh: Mesh, body_id: str | None = None,
                  pieces: list | None = None, mass: float | None = None,
                  density: float = DEFAULT_DENSITY,
                  position=(0.0, 0.0, 0.0), quat=(1.0, 0.0, 0.0, 0.0),
                  friction: float = DEFAULT_FRICTION,
                  restitution: float = DEFAULT_RESTITUTION) -> "RigidBody":
        """Build from a watertight mesh; pose is the mesh-frame pose."""
        probe_mass = 1.0
        inertia_unit, com, vol = inertia_tensor(mesh, probe_mass)
        if mass is None:
            mass = max(density * vol, 1e-3)
        inertia = inertia_unit * mass
        if pieces is None:
            raw = [ConvexPiece.from_points(mesh.vertices)]
        else:
            raw = [p if isinstance(p, ConvexPiece) else ConvexPiece.from_points(p) for p in pieces]
        local_pieces = [p.shifted(-com) for p in raw]
        rot = quat_to_matrix(np.asarray(quat, dtype=np.float64))
        world_com = rot @ com + np.asarray(position, dtype=np.float64)
        return cls(
            body_id=body_id or mesh.name,
            pieces=local_pieces,
            mass=float(mass),
            inertia_body=inertia,
            com_offset=com,
            position=world_com,
            quat=np.asarray(quat, dtype=np.float64),
            friction=friction,
            restitution=restitution,
            source_mesh=mesh,
        )

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def mesh_pose(self) -> tuple[np.ndarray, np.ndarray]:
        """(R, t) such that world = R @ v_mesh + t for source-mesh vertices."""
        rot = self.rotation()
        return rot, self.position - rot @ self.com_offset

    def world_inv_inertia(self) -> np.ndarray:
        rot = self.rotation()
        return rot @ self.inv_inertia_body @ rot.T

    def copy(self) -> "RigidBody":
        return RigidBody(
            body_id=self.body_id,
            pieces=self.pieces,  # immutable local geometry is shared
            mass=self.mass,
            inertia_body=self.inertia_body,
            com_offset=self.com_offset,
            position=self.position.copy(),
            quat=self.quat.copy(),
            velocity=self.velocity.copy(),
            omega=self.omega.copy(),
            friction=self.friction,
            restitution=self.restitution,
            source_mesh=self.source_mesh,
        )


@dataclass
class HumanTrack:
    """Prescribed capsule-chain motion: poses imposed, impulses one-way."""

    keypoint_names: list
    frames: np.ndarray  # (F, K, 3)
    fps: float
    capsules: list      # (name_a, name_b, radius)
    samples_per_capsule: int = 3
    friction: float = 0.8

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self._index = {n: i for i, n in enumerate(self.keypoint_names)}
        n_s = max(self.samples_per_capsule, 1)
        alphas = (np.linspace(0.0, 1.0, n_s) if n_s > 1 else np.array([0.5]))
        ia, ib, rr, wa = [], [], [], []
        for a, b, r in self.capsules:
            for alpha in alphas:
                ia.append(self._index[a])
                ib.append(self._index[b])
                rr.append(float(r))
                wa.append(1.0 - alpha)
        self._sample_ia = np.array(ia, dtype=np.int64)
        self._sample_ib = np.array(ib, dtype=np.int64)
        self._sample_radii = np.array(rr)
        self._sample_wa = np.array(wa)[:, None]

    @property
    def duration(self) -> float:
        return (len(self.frames) - 1) / self.fps

    def sample(self, t: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Keypoints and velocities at time t; the last frame holds."""
        s = t * self.fps
        f0 = int(np.floor(s))
        last = len(self.frames) - 1
        if f0 >= last:
            return self.frames[last], np.zeros_like(self.frames[last])
        alpha = s - f0
        k0, k1 = self.frames[f0], self.frames[f0 + 1]
        pos = (1 - alpha) * k0 + alpha * k1
        vel = (k1 - k0) * self.fps
        return pos, vel

    def capsule_spheres(self, t: float, dt: float):
        """(centers, velocities, radii) of the capsule sample spheres at t."""
        kps, vels = self.sample(t, dt)
        wa = self._sample_wa
        wb = 1.0 - wa
        centers = wa * kps[self._sample_ia] + wb * kps[self._sample_ib]
        cvels = wa * vels[self._sample_ia] + wb * vels[self._sample_ib]
        return centers, cvels, self._sample_radii


@dataclass
class WorldState:
    bodies: list                        # RigidBody
    humans: list = field(default_factory=list)  # HumanTrack
    gravity: float = GRAVITY
    time: float = 0.0
    ground_friction: float = DEFAULT_FRICTION
    ground_restitution: float = DEFAULT_RESTITUTION

    def copy(self) -> "WorldState":
        return WorldState(
            bodies=[b.copy() for b in self.bodies],
            humans=list(self.humans),  # tracks are read-only during stepping
            gravity=self.gravity,
            time=self.time,
            ground_friction=self.ground_friction,
            ground_restitution=self.ground_restitution,
        )

    def body(self, body_id: str) -> RigidBody:
        for b in self.bodies:
            if b.body_id == body_id:
                return b
        raise KeyError(body_id)
