"""Triangle meshes, OBJ ingestion, watertightness and mass-property utilities.

All geometry is in meters.  Mesh instances are immutable after construction:
the vertex and face arrays are set non-writeable so that queries may be shared
freely across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import EmptyMesh, NonWatertightSource

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12  # m^2; faces below this are dropped at load


def _face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass(frozen=True)
class Mesh:
    """Watertight-or-not triangle surface.

    vertices: (N, 3) float64 positions
    faces:    (M, 3) int64 vertex indices
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = "mesh"

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {verts.shape}")
        if faces.size and (faces.ndim != 2 or faces.shape[1] != 3):
            raise ValueError(f"faces must be (M, 3), got {faces.shape}")
        faces = faces.reshape(-1, 3)
        if faces.size and faces.max(initial=-1) >= len(verts):
            raise ValueError("face index out of range")
        if faces.size and faces.min(initial=0) < 0:
            raise ValueError("negative face index")
        if len(faces):
            keep = _face_areas(verts, faces) > DEGENERATE_AREA
            if not keep.all():
                logger.warning(
                    "mesh %r: dropped %d degenerate face(s)", self.name, int((~keep).sum())
                )
                faces = faces[keep]
        verts.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(M, 3, 3) corner positions, one triangle per face."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        return _face_areas(self.vertices, self.faces)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def transformed(self, rotation: np.ndarray, translation: np.ndarray, name: str | None = None) -> "Mesh":
        """Rigidly transformed copy: v' = R v + t."""
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        return Mesh(self.vertices @ rotation.T + translation, self.faces, name or self.name)

    def translated(self, offset) -> "Mesh":
        return Mesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces, self.name)


@dataclass
class WatertightReport:
    watertight: bool
    boundary_edges: list = field(default_factory=list)  # (v0, v1) on exactly one face
    nonmanifold_edges: list = field(default_factory=list)  # shared by >2 faces
    misoriented_edges: list = field(default_factory=list)  # same direction on 2 faces


def is_watertight(mesh: Mesh) -> tuple[bool, WatertightReport]:
    """Check that every edge is shared by exactly two consistently oriented faces.

    Defects are reported, never raised.
    """
    if mesh.n_faces == 0:
        return False, WatertightReport(False, boundary_edges=[])
    f = mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    lo = directed.min(axis=1)
    hi = directed.max(axis=1)
    undirected = np.stack([lo, hi], axis=1)
    forward = directed[:, 0] < directed[:, 1]

    keys, inverse, counts = np.unique(
        undirected, axis=0, return_inverse=True, return_counts=True
    )
    fwd_per_key = np.zeros(len(keys), dtype=np.int64)
    np.add.at(fwd_per_key, inverse, forward.astype(np.int64))

    boundary = counts == 1
    nonmanifold = counts > 2
    # An interior edge is consistently oriented iff it appears once per direction.
    misoriented = (counts == 2) & (fwd_per_key != 1)

    report = WatertightReport(
        watertight=not (boundary.any() or nonmanifold.any() or misoriented.any()),
        boundary_edges=[tuple(int(v) for v in e) for e in keys[boundary]],
        nonmanifold_edges=[tuple(int(v) for v in e) for e in keys[nonmanifold]],
        misoriented_edges=[tuple(int(v) for v in e) for e in keys[misoriented]],
    )
    return report.watertight, report


def _signed_tetra_volumes(mesh: Mesh) -> np.ndarray:
    tri = mesh.triangles()
    return np.linalg.det(tri) / 6.0


def volume(mesh: Mesh) -> float:
    """Enclosed volume via the divergence theorem (requires watertight input)."""
    ok, report = is_watertight(mesh)
    if not ok:
        raise NonWatertightSource(f"mesh {mesh.name!r}: {_defect_summary(report)}")
    return float(_signed_tetra_volumes(mesh).sum())


def center_of_mass(mesh: Mesh) -> np.ndarray:
    """Volume-weighted centroid of the enclosed solid, uniform density."""
    ok, report = is_watertight(mesh)
    if not ok:
        raise NonWatertightSource(f"mesh {mesh.name!r}: {_defect_summary(report)}")
    vols = _signed_tetra_volumes(mesh)
    total = vols.sum()
    if abs(total) < 1e-15:
        raise NonWatertightSource(f"mesh {mesh.name!r}: zero enclosed volume")
    centroids = mesh.triangles().sum(axis=1) / 4.0  # tetra apex at origin
    return centroids.T @ vols / total


def second_moment_matrix(mesh: Mesh) -> np.ndarray:
    """integral of x x^T over the enclosed volume, about the origin.

    Signed-tetrahedron decomposition with apex at the origin; each tetra
    (0, a, b, c) contributes det/120 * (sum_k v_k v_k^T + s s^T), s = a+b+c.
    """
    ok, report = is_watertight(mesh)
    if not ok:
        raise NonWatertightSource(f"mesh {mesh.name!r}: {_defect_summary(report)}")
    tri = mesh.triangles()  # (M, 3, 3)
    det6 = np.linalg.det(tri)  # 6 * signed volume
    outer_sum = np.einsum("mki,mkj->mij", tri, tri)
    s = tri.sum(axis=1)
    ss = np.einsum("mi,mj->mij", s, s)
    return np.einsum("m,mij->ij", det6 / 120.0, outer_sum + ss)


def inertia_tensor(mesh: Mesh, mass: float) -> tuple[np.ndarray, np.ndarray, float]:
    """(inertia about COM, COM, volume) for a uniform solid of the given mass."""
    vol = volume(mesh)
    com = center_of_mass(mesh)
    density = mass / vol
    c = density * second_moment_matrix(mesh)
    inertia_origin = np.trace(c) * np.eye(3) - c
    # parallel axis back to the COM
    shift = mass * ((com @ com) * np.eye(3) - np.outer(com, com))
    return inertia_origin - shift, com, vol


def _defect_summary(report: WatertightReport) -> str:
    parts = []
    if report.boundary_edges:
        parts.append(f"{len(report.boundary_edges)} boundary edge(s)")
    if report.nonmanifold_edges:
        parts.append(f"{len(report.nonmanifold_edges)} non-manifold edge(s)")
    if report.misoriented_edges:
        parts.append(f"{len(report.misoriented_edges)} misoriented edge(s)")
    return ", ".join(parts) or "unknown defect"


# ---------------------------------------------------------------------------
# OBJ subset: v/f records only, 1-based indices
# ---------------------------------------------------------------------------

def load_obj(path) -> Mesh:
    path = Path(path)
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: face needs 3 indices")
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if any(i == 0 for i in idx):
                    raise ValueError(f"{path}:{lineno}: OBJ indices are 1-based")
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                # fan-triangulate polygons
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # any other record type is outside the supported subset; ignore
    if not faces:
        raise EmptyMesh(f"{path}: no faces")
    return Mesh(np.array(verts), np.array(faces), name=path.stem)


def save_obj(mesh: Mesh, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

_BOX_CORNERS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
        [-1, +1, +1],
    ],
    dtype=np.float64,
)

# outward-oriented triangles of the unit box
_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # bottom (-z)
        [4, 5, 6], [4, 6, 7],  # top (+z)
        [0, 1, 5], [0, 5, 4],  # -y
        [2, 3, 7], [2, 7, 6],  # +y
        [1, 2, 6], [1, 6, 5],  # +x
        [3, 0, 4], [3, 4, 7],  # -x
    ],
    dtype=np.int64,
)


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), name: str = "box") -> Mesh:
    """Axis-aligned closed box; 12 outward-oriented triangles."""
    half = np.asarray(size, dtype=np.float64) / 2.0
    verts = _BOX_CORNERS * half + np.asarray(center, dtype=np.float64)
    return Mesh(verts, _BOX_FACES.copy(), name=name)


def icosphere(radius: float = 1.0, subdivisions: int = 2, center=(0.0, 0.0, 0.0), name: str = "icosphere") -> Mesh:
    """Subdivided icosahedron projected to the sphere."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.array(verts[i]) + np.array(verts[j])
                m /= np.linalg.norm(m)
                verts.append(tuple(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=np.float64)
    return Mesh(v, np.array(faces, dtype=np.int64), name=name)
