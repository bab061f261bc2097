"""Procedural interaction scenarios: furniture, templated motions, tiers.

Easy: one chair, one sit contact.  Medium: chair plus a side table with a
hand lean.  Hard: three objects with sequential contacts.  The input motion
can be corrupted (hovering above or penetrating the seat) while the clean
template is kept as the reference for motion-quality metrics.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dsro import get_family
from ..errors import MissingAsset, ParseError
from ..geometry import Mesh, load_obj
from ..motion import MotionSequence
from ..scene import BodyModel, Capsule
from ..sim import HumanTrack, RigidBody, WorldState
from .io import check_keys, check_list, check_number

DIFFICULTIES = ("easy", "medium", "hard")

KEYPOINT_NAMES = [
    "pelvis", "hip_l", "hip_r", "spine", "head",
    "knee_l", "knee_r", "ankle_l", "ankle_r",
    "shoulder_l", "shoulder_r", "hand_l", "hand_r",
]

PARTS = {
    "pelvis": ["pelvis", "hip_l", "hip_r"],
    "torso": ["spine", "shoulder_l", "shoulder_r"],
    "head": ["head"],
    "feet": ["knee_l", "knee_r", "ankle_l", "ankle_r"],
    "hands": ["hand_l", "hand_r"],
}

CAPSULES = [
    ("hip_l", "hip_r", 0.09),
    ("pelvis", "spine", 0.08),
    ("spine", "head", 0.06),
    ("hip_l", "knee_l", 0.06),
    ("hip_r", "knee_r", 0.06),
    ("knee_l", "ankle_l", 0.05),
    ("knee_r", "ankle_r", 0.05),
    ("shoulder_l", "hand_l", 0.04),
    ("shoulder_r", "hand_r", 0.04),
]

PELVIS_RADIUS = 0.09


def stable_seed(*parts) -> int:
    text = ":".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2**31 - 1)


@dataclass
class ObjectSpec:
    object_id: str
    shape_params: np.ndarray | None = None  # normalized family vector
    family: str = "chair"
    mesh_path: str | None = None
    yaw: float = 0.0
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    friction: float | None = None
    restitution: float | None = None
    mass: float | None = None

    def load_geometry(self, base_dir: Path | None = None) -> tuple[Mesh, list | None]:
        if self.shape_params is not None:
            return get_family(self.family).decode(self.shape_params)
        path = Path(self.mesh_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.exists():
            raise MissingAsset(f"mesh not found: {path}")
        return load_obj(path), None


@dataclass
class ContactPhase:
    object_id: str
    keypoints: list          # keypoint names
    start_frame: int
    end_frame: int           # exclusive
    part: str = "pelvis"


@dataclass
class Scenario:
    scenario_id: str
    difficulty: str
    seed: int
    objects: list            # ObjectSpec
    motion: MotionSequence
    contacts: list           # ContactPhase
    reference_motion: MotionSequence | None = None

    def body_model(self, motion: MotionSequence | None = None) -> BodyModel:
        m = motion or self.motion
        return BodyModel(
            keypoint_names=list(m.keypoint_names),
            keypoints=m.frames.copy(),
            parts={k: list(v) for k, v in PARTS.items()},
            capsules=[Capsule(*c) for c in CAPSULES],
        )

    def primary_contact(self) -> ContactPhase:
        return self.contacts[0]

    def object_index(self, object_id: str) -> int:
        for i, spec in enumerate(self.objects):
            if spec.object_id == object_id:
                return i
        raise KeyError(object_id)


def _rotz(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def placed_meshes(scenario: Scenario, base_dir: Path | None = None):
    """(mesh, pieces) per object, transformed to world placement."""
    out = []
    for spec in scenario.objects:
        mesh, pieces = spec.load_geometry(base_dir)
        rot = _rotz(spec.yaw)
        moved = mesh.transformed(rot, spec.position, name=spec.object_id)
        moved_pieces = None
        if pieces is not None:
            moved_pieces = [p @ rot.T + spec.position for p in pieces]
        out.append((moved, moved_pieces))
    return out


def build_world(scenario: Scenario, motion: MotionSequence | None = None,
                base_dir: Path | None = None,
                placement_jitter_seed: int | None = None) -> WorldState:
    """Simulation world at the scenario's placements with the given motion."""
    rng = (np.random.default_rng(placement_jitter_seed)
           if placement_jitter_seed is not None else None)
    bodies = []
    for spec, (mesh, pieces) in zip(scenario.objects, placed_meshes(scenario, base_dir)):
        if rng is not None:
            jitter = np.array([*rng.uniform(-2e-3, 2e-3, 2), 0.0])
            yaw = rng.uniform(-0.01, 0.01)
            mesh = mesh.transformed(_rotz(yaw), jitter)
            if pieces is not None:
                pieces = [p @ _rotz(yaw).T + jitter for p in pieces]
        kwargs = {}
        if spec.friction is not None:
            kwargs["friction"] = spec.friction
        if spec.restitution is not None:
            kwargs["restitution"] = spec.restitution
        bodies.append(
            RigidBody.from_mesh(mesh, body_id=spec.object_id, pieces=pieces,
                                mass=spec.mass, **kwargs)
        )
    m = motion or scenario.motion
    human = HumanTrack(
        keypoint_names=list(m.keypoint_names),
        frames=m.frames,
        fps=m.fps,
        capsules=list(CAPSULES),
    )
    return WorldState(bodies=bodies, humans=[human])


# ---------------------------------------------------------------------------
# Motion templates
# ---------------------------------------------------------------------------

def _standing_pose(x, y, ground=0.0):
    p = {}
    p["pelvis"] = [x, y, ground + 0.95]
    p["hip_l"] = [x - 0.09, y, ground + 0.92]
    p["hip_r"] = [x + 0.09, y, ground + 0.92]
    p["spine"] = [x, y, ground + 1.25]
    p["head"] = [x, y, ground + 1.55]
    p["knee_l"] = [x - 0.1, y - 0.02, ground + 0.5]
    p["knee_r"] = [x + 0.1, y - 0.02, ground + 0.5]
    p["ankle_l"] = [x - 0.1, y, ground + 0.08]
    p["ankle_r"] = [x + 0.1, y, ground + 0.08]
    p["shoulder_l"] = [x - 0.2, y, ground + 1.4]
    p["shoulder_r"] = [x + 0.2, y, ground + 1.4]
    p["hand_l"] = [x - 0.25, y, ground + 0.95]
    p["hand_r"] = [x + 0.25, y, ground + 0.95]
    return p


def _seated_pose(x, y, pelvis_z):
    p = _standing_pose(x, y)
    drop = 0.95 - pelvis_z
    for name in ("pelvis", "hip_l", "hip_r", "spine", "head",
                 "shoulder_l", "shoulder_r", "hand_l", "hand_r"):
        p[name] = [p[name][0], p[name][1], p[name][2] - drop]
    # thighs level and knees clear of the seat front so only the hip capsule
    # actually meets the seat
    p["knee_l"] = [x - 0.1, y - 0.33, pelvis_z + 0.02]
    p["knee_r"] = [x + 0.1, y - 0.33, pelvis_z + 0.02]
    p["ankle_l"] = [x - 0.1, y - 0.38, 0.08]
    p["ankle_r"] = [x + 0.1, y - 0.38, 0.08]
    return p


def _pose_array(pose):
    return np.array([pose[n] for n in KEYPOINT_NAMES], dtype=np.float64)


def _blend(p0, p1, alpha):
    smooth = 3 * alpha**2 - 2 * alpha**3
    return (1 - smooth) * p0 + smooth * p1


def sit_motion(seat_top: float, seat_xy=(0.0, 0.0), offset_z: float = 0.0,
               fps: float = 30.0, duration: float = 1.6,
               settle_frac: float = 0.65, hand_target=None):
    """Stand in front of the seat, descend, hold; returns (motion, contacts).

    offset_z corrupts the final pelvis height: positive hovers, negative
    penetrates.  hand_target optionally drags the right hand to a point over
    the last third of the motion.
    """
    x, y = seat_xy
    pelvis_end = seat_top + PELVIS_RADIUS + offset_z
    stand = _pose_array(_standing_pose(x, y - 0.45))
    seat = _pose_array(_seated_pose(x, y, pelvis_end))
    n = int(duration * fps) + 1
    frames = np.empty((n, len(KEYPOINT_NAMES), 3))
    settle_frame = int(settle_frac * n)
    for i in range(n):
        alpha = min(i / max(settle_frame, 1), 1.0)
        frames[i] = _blend(stand, seat, alpha)
    if hand_target is not None:
        hi = KEYPOINT_NAMES.index("hand_r")
        start = int(0.66 * n)
        for i in range(start, n):
            a = (i - start) / max(n - 1 - start, 1)
            frames[i, hi] = _blend(frames[i, hi], np.asarray(hand_target), a)
    contact_names = ["pelvis", "hip_l", "hip_r"]
    idx = np.array([KEYPOINT_NAMES.index(nm) for nm in contact_names])
    contacts = [idx if i >= settle_frame else np.array([], dtype=int) for i in range(n)]
    return MotionSequence(list(KEYPOINT_NAMES), frames, fps, contacts)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _chair_params(rng) -> np.ndarray:
    x0 = 0.25 * rng.standard_normal(12)
    x0[7] = 0.0
    x0[8:] = 1.5 + 0.2 * rng.random(4)  # all four legs firmly present
    return x0


def _table_spec(rng, object_id, position) -> ObjectSpec:
    # side furniture reuses the chair family with its own dimension jitter
    x0 = _chair_params(rng)
    return ObjectSpec(object_id=object_id, shape_params=x0, family="chair",
                      yaw=float(rng.uniform(-0.3, 0.3)),
                      position=np.asarray(position, dtype=float))


def generate_scenario(difficulty: str, seed: int, corruption: str = "hover",
                      magnitude: float | None = None) -> Scenario:
    """Deterministic scenario; the tier contract fixes the object count."""
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"difficulty must be one of {DIFFICULTIES}")
    if corruption not in ("none", "hover", "penetrate"):
        raise ValueError("corruption must be none, hover, or penetrate")
    rng = np.random.default_rng(stable_seed("scenario", difficulty, seed, corruption))
    family = get_family("chair")

    chair_x0 = _chair_params(rng)
    if corruption == "penetrate":
        # keep the seat slab thick enough that the sunk keypoints stay inside
        chair_x0[2] = abs(chair_x0[2]) + 0.8
    raw = family.to_raw(chair_x0)
    seat_top = float(np.clip(raw[3], 0.1, 1.0) + np.clip(raw[2], 0.02, 0.15))
    chair = ObjectSpec(object_id="chair0", shape_params=chair_x0,
                       position=np.zeros(3), yaw=0.0)
    objects = [chair]

    if corruption == "none":
        offset = 0.0
    elif corruption == "hover":
        offset = float(rng.uniform(0.05, 0.08)) if magnitude is None else magnitude
    else:
        offset = -(float(rng.uniform(0.10, 0.12)) if magnitude is None else magnitude)

    hand_target = None
    n_contacts = 1
    if difficulty in ("medium", "hard"):
        table1 = _table_spec(rng, "table1", [0.85, 0.0, 0.0])
        objects.append(table1)
        t_raw = family.to_raw(table1.shape_params)
        t_top = float(np.clip(t_raw[3], 0.1, 1.0) + np.clip(t_raw[2], 0.02, 0.15))
        # the corruption degrades the hand approach too
        hand_target = [0.72, 0.0, t_top + 0.05 + max(offset, 0.0)]
        n_contacts = 2
    if difficulty == "hard":
        objects.append(_table_spec(rng, "table2", [-0.85, 0.1, 0.0]))

    reference = sit_motion(seat_top, offset_z=0.0, hand_target=hand_target)
    motion = sit_motion(seat_top, offset_z=offset, hand_target=hand_target)

    n = motion.n_frames
    settle_frame = int(0.65 * n)
    contacts = [ContactPhase(object_id="chair0",
                             keypoints=["pelvis", "hip_l", "hip_r"],
                             start_frame=settle_frame, end_frame=n,
                             part="pelvis")]
    if n_contacts == 2:
        contacts.append(ContactPhase(object_id="table1", keypoints=["hand_r"],
                                     start_frame=int(0.8 * n), end_frame=n,
                                     part="hands"))

    return Scenario(
        scenario_id=f"{difficulty}-{seed:05d}",
        difficulty=difficulty,
        seed=seed,
        objects=objects,
        motion=motion,
        contacts=contacts,
        reference_motion=reference,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def motion_to_dict(m: MotionSequence) -> dict:
    return {
        "fps": m.fps,
        "keypoint_names": list(m.keypoint_names),
        "frames": m.frames.tolist(),
        "contact_indices": [c.tolist() for c in m.contact_indices],
        "root": m.root.tolist(),
    }


def motion_from_dict(d: dict, path: str = "$.motion") -> MotionSequence:
    check_keys(d, {"fps", "keypoint_names", "frames", "contact_indices", "root"},
               {"fps", "keypoint_names", "frames"}, path)
    names = check_list(d["keypoint_names"], f"{path}.keypoint_names")
    frames = np.asarray(check_list(d["frames"], f"{path}.frames"), dtype=float)
    contacts = [np.asarray(c, dtype=np.int64)
                for c in d.get("contact_indices", [[]] * len(frames))]
    root = np.asarray(d["root"], dtype=float) if "root" in d else None
    try:
        return MotionSequence(names, frames, check_number(d["fps"], f"{path}.fps"),
                              contacts, root=root)
    except Exception as exc:
        raise ParseError(f"{path}: {exc}") from exc


def scenario_to_dict(s: Scenario) -> dict:
    objects = []
    for spec in s.objects:
        entry = {
            "id": spec.object_id,
            "placement": {"yaw": spec.yaw, "position": list(map(float, spec.position))},
        }
        if spec.shape_params is not None:
            entry["source"] = {"shape_params": list(map(float, spec.shape_params)),
                               "family": spec.family}
        else:
            entry["source"] = {"mesh_path": spec.mesh_path}
        if spec.friction is not None:
            entry["friction"] = spec.friction
        if spec.restitution is not None:
            entry["restitution"] = spec.restitution
        if spec.mass is not None:
            entry["mass"] = spec.mass
        objects.append(entry)
    payload = {
        "schema": 1,
        "kind": "scenario",
        "id": s.scenario_id,
        "difficulty": s.difficulty,
        "seed": s.seed,
        "objects": objects,
        "motion": motion_to_dict(s.motion),
        "contacts": [
            {"object_id": c.object_id, "keypoints": list(c.keypoints),
             "start_frame": c.start_frame, "end_frame": c.end_frame,
             "part": c.part}
            for c in s.contacts
        ],
    }
    if s.reference_motion is not None:
        payload["reference_motion"] = motion_to_dict(s.reference_motion)
    return payload


_OBJECT_KEYS = {"id", "source", "placement", "friction", "restitution", "mass"}
_SCENARIO_KEYS = {"schema", "kind", "id", "difficulty", "seed", "objects",
                  "motion", "contacts", "reference_motion"}


def scenario_from_dict(d: dict) -> Scenario:
    check_keys(d, _SCENARIO_KEYS,
               {"schema", "kind", "id", "difficulty", "seed", "objects", "motion",
                "contacts"}, "$")
    if d["difficulty"] not in DIFFICULTIES:
        raise ParseError(f"$.difficulty: unknown tier {d['difficulty']!r}")
    objects = []
    for i, entry in enumerate(check_list(d["objects"], "$.objects")):
        path = f"$.objects[{i}]"
        check_keys(entry, _OBJECT_KEYS, {"id", "source", "placement"}, path)
        src = entry["source"]
        check_keys(src, {"shape_params", "family", "mesh_path"}, set(), f"{path}.source")
        place = entry["placement"]
        check_keys(place, {"yaw", "position"}, {"yaw", "position"}, f"{path}.placement")
        spec = ObjectSpec(
            object_id=entry["id"],
            shape_params=(np.asarray(src["shape_params"], dtype=float)
                          if "shape_params" in src else None),
            family=src.get("family", "chair"),
            mesh_path=src.get("mesh_path"),
            yaw=check_number(place["yaw"], f"{path}.placement.yaw"),
            position=np.asarray(
                check_list(place["position"], f"{path}.placement.position", 3),
                dtype=float,
            ),
            friction=entry.get("friction"),
            restitution=entry.get("restitution"),
            mass=entry.get("mass"),
        )
        if spec.shape_params is None and spec.mesh_path is None:
            raise ParseError(f"{path}.source: needs shape_params or mesh_path")
        objects.append(spec)
    contacts = []
    for i, entry in enumerate(check_list(d["contacts"], "$.contacts")):
        path = f"$.contacts[{i}]"
        check_keys(entry, {"object_id", "keypoints", "start_frame", "end_frame", "part"},
                   {"object_id", "keypoints", "start_frame", "end_frame"}, path)
        contacts.append(ContactPhase(
            object_id=entry["object_id"],
            keypoints=list(entry["keypoints"]),
            start_frame=int(entry["start_frame"]),
            end_frame=int(entry["end_frame"]),
            part=entry.get("part", "pelvis"),
        ))
    reference = None
    if "reference_motion" in d:
        reference = motion_from_dict(d["reference_motion"], "$.reference_motion")
    return Scenario(
        scenario_id=d["id"],
        difficulty=d["difficulty"],
        seed=int(d["seed"]),
        objects=objects,
        motion=motion_from_dict(d["motion"]),
        contacts=contacts,
        reference_motion=reference,
    )
