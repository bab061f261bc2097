"""Area-weighted surface sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyMesh
from .mesh import Mesh


@dataclass(frozen=True)
class SurfaceSamples:
    points: np.ndarray   # (N, 3)
    normals: np.ndarray  # (N, 3), unit
    face_indices: np.ndarray  # (N,) source face per sample

    @property
    def count(self) -> int:
        return len(self.points)


def sample_surface(mesh: Mesh, n: int, seed: int) -> SurfaceSamples:
    """Draw n points uniformly by area; deterministic for a fixed seed."""
    if mesh.n_faces == 0:
        raise EmptyMesh(f"mesh {mesh.name!r} has no faces")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    probs = areas / areas.sum()
    face_idx = rng.choice(len(probs), size=n, p=probs)
    tri = mesh.triangles()[face_idx]
    # uniform barycentric via the sqrt trick
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    points = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return SurfaceSamples(points=points, normals=normals, face_indices=face_idx)
