import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from physloop.errors import EmptyMesh, NonWatertightSource
from physloop.geometry import (
    Mesh,
    Sdf,
    box_mesh,
    center_of_mass,
    icosphere,
    inertia_tensor,
    is_watertight,
    load_obj,
    sample_surface,
    save_obj,
    signed_distance,
    unsigned_distance,
    volume,
)


def brute_force_distance(point, mesh):
    """Independent nearest-triangle oracle: scalar loops, no shared code path."""
    best = np.inf
    for face in mesh.faces:
        a, b, c = (mesh.vertices[i] for i in face)
        best = min(best, _point_triangle_dist(np.asarray(point, float), a, b, c))
    return best


def _point_triangle_dist(p, a, b, c):
    # direct projection onto the plane, then clamp against each edge
    candidates = []
    n = np.cross(b - a, c - a)
    nn = n @ n
    if nn > 0:
        q = p - ((p - a) @ n / nn) * n
        # inside test via barycentric signs
        if _same_side(q, a, b, c) and _same_side(q, b, c, a) and _same_side(q, c, a, b):
            candidates.append(np.linalg.norm(p - q))
    for u, v in ((a, b), (b, c), (c, a)):
        d = v - u
        t = np.clip((p - u) @ d / (d @ d), 0.0, 1.0)
        candidates.append(np.linalg.norm(p - (u + t * d)))
    return min(candidates)


def _same_side(q, a, b, c):
    n = np.cross(b - a, c - a)
    return np.cross(b - a, q - a) @ n >= -1e-12


class TestSignedDistance:
    def test_unit_cube_center(self):
        sdf = Sdf(box_mesh())
        assert signed_distance(sdf, (0.0, 0.0, 0.0)) == pytest.approx(-0.5, abs=1e-9)

    def test_unit_cube_outside(self):
        sdf = Sdf(box_mesh())
        assert signed_distance(sdf, (1.0, 0.0, 0.0)) == pytest.approx(0.5, abs=1e-9)

    def test_icosphere_radial_query(self):
        # subdivision 4 keeps facet sag under the 1e-3 tolerance
        sphere = icosphere(radius=1.0, subdivisions=4)
        sdf = Sdf(sphere)
        rng = np.random.default_rng(3)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        p = 1.3 * direction
        d = signed_distance(sdf, p)
        assert d == pytest.approx(0.3, abs=1e-3)
        assert d == pytest.approx(brute_force_distance(p, sphere), abs=1e-9)

    def test_matches_brute_force_inside_and_out(self):
        cube = box_mesh(size=(0.4, 0.7, 1.1))
        sdf = Sdf(cube)
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1.0, 1.0, size=(40, 3))
        d = sdf.query(pts)
        for p, di in zip(pts, d):
            assert abs(di) == pytest.approx(brute_force_distance(p, cube), abs=1e-9)

    def test_nonwatertight_rejected(self):
        cube = box_mesh()
        open_cube = Mesh(cube.vertices, cube.faces[:-2], name="open")
        with pytest.raises(NonWatertightSource):
            Sdf(open_cube)

    def test_lipschitz_on_random_pairs(self):
        sdf = Sdf(icosphere(radius=0.8, subdivisions=1))
        rng = np.random.default_rng(7)
        p = rng.uniform(-2, 2, size=(50, 3))
        q = rng.uniform(-2, 2, size=(50, 3))
        dp = sdf.query(p)
        dq = sdf.query(q)
        gap = np.linalg.norm(p - q, axis=1)
        assert np.all(dp <= dq + gap + 1e-6)
        assert np.all(dq <= dp + gap + 1e-6)


class TestSampleSurface:
    def test_planar_source_stays_planar(self):
        quad = Mesh(
            np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float),
            np.array([[0, 1, 2], [0, 2, 3]]),
            name="quad",
        )
        s = sample_surface(quad, 4, seed=0)
        assert np.all(np.abs(s.points[:, 2]) < 1e-9)
        assert s.count == 4

    def test_deterministic(self):
        mesh = icosphere(subdivisions=1)
        a = sample_surface(mesh, 1000, seed=42)
        b = sample_surface(mesh, 1000, seed=42)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.normals, b.normals)

    def test_area_proportional_counts(self):
        # multinomial 3-sigma bound per face computed in-test
        cube = box_mesh()
        n = 60000
        s = sample_surface(cube, n, seed=1)
        areas = cube.face_areas()
        probs = areas / areas.sum()
        counts = np.bincount(s.face_indices, minlength=cube.n_faces)
        expect = n * probs
        sigma = np.sqrt(n * probs * (1 - probs))
        assert np.all(np.abs(counts - expect) <= 3.0 * sigma)

    def test_samples_on_surface(self):
        mesh = icosphere(subdivisions=1)
        sdf = Sdf(mesh)
        s = sample_surface(mesh, 200, seed=5)
        assert np.max(np.abs(sdf.query(s.points))) < 1e-5

    def test_normals_unit(self):
        s = sample_surface(box_mesh(), 100, seed=2)
        assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0, atol=1e-9)

    def test_empty_mesh(self):
        empty = Mesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
        with pytest.raises(EmptyMesh):
            sample_surface(empty, 4, seed=0)


class TestWatertight:
    def test_closed_cube(self):
        ok, report = is_watertight(box_mesh())
        assert ok
        assert report.boundary_edges == []
        assert report.nonmanifold_edges == []

    def test_open_hole(self):
        cube = box_mesh()
        ok, report = is_watertight(Mesh(cube.vertices, cube.faces[:-1]))
        assert not ok
        assert len(report.boundary_edges) >= 3

    def test_nonmanifold_shared_edge(self):
        # two tetrahedra glued along one edge: that edge sits on 4+ faces
        cube_a = box_mesh(size=(1, 1, 1), center=(0, 0, 0.5))
        cube_b = box_mesh(size=(1, 1, 1), center=(0, 1, 1.5))
        # merge: cube_a top-back edge coincides with cube_b bottom-front edge
        verts = np.vstack([cube_a.vertices, cube_b.vertices])
        faces_b = cube_b.faces + len(cube_a.vertices)
        merged_faces = np.vstack([cube_a.faces, faces_b])
        # weld coincident vertices so the shared edge is index-identical
        merged = _weld(Mesh(verts, merged_faces))
        # oracle: count undirected edge incidence directly
        counts = {}
        for f in merged.faces:
            for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                key = (min(e), max(e))
                counts[key] = counts.get(key, 0) + 1
        oracle_nonmanifold = sorted(k for k, v in counts.items() if v > 2)
        ok, report = is_watertight(merged)
        assert not ok
        assert sorted(report.nonmanifold_edges) == oracle_nonmanifold
        assert len(oracle_nonmanifold) >= 1

    def test_invariant_under_reindexing(self):
        mesh = icosphere(subdivisions=1)
        rng = np.random.default_rng(0)
        perm = rng.permutation(mesh.n_vertices)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        remapped = Mesh(mesh.vertices[perm], inverse[mesh.faces])
        assert is_watertight(remapped)[0] == is_watertight(mesh)[0]


def _weld(mesh, tol=1e-9):
    verts = mesh.vertices
    keys = np.round(verts / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return Mesh(verts[first], inverse[mesh.faces])


class TestCenterOfMass:
    def test_unit_cube_origin(self):
        assert np.allclose(center_of_mass(box_mesh()), 0.0, atol=1e-9)

    def test_translation_equivariance(self):
        c = center_of_mass(box_mesh(center=(2, 0, 0)))
        assert np.allclose(c, [2, 0, 0], atol=1e-9)

    def test_l_shape_closed_form(self):
        # L from two unit cubes kept as disjoint closed components: foot at
        # (0.5, 0.5, 0.5), upright at (0.5, 0.5, 1.5) shifted sideways
        a = box_mesh(center=(0.5, 0.5, 0.5))
        b = box_mesh(center=(1.5, 0.5, 0.5))
        verts = np.vstack([a.vertices, b.vertices])
        faces = np.vstack([a.faces, b.faces + 8])
        l_shape = Mesh(verts, faces)
        expected = np.array([1.0, 0.5, 0.5])  # mass-weighted average of cube centers
        assert np.allclose(center_of_mass(l_shape), expected, atol=1e-9)

    def test_rigid_equivariance(self):
        mesh = box_mesh(size=(0.3, 0.6, 1.2), center=(0.1, -0.2, 0.4))
        theta = 0.7
        rot = np.array(
            [[np.cos(theta), -np.sin(theta), 0], [np.sin(theta), np.cos(theta), 0], [0, 0, 1]]
        )
        t = np.array([0.5, -1.0, 2.0])
        moved = mesh.transformed(rot, t)
        assert np.allclose(center_of_mass(moved), rot @ center_of_mass(mesh) + t, atol=1e-8)

    def test_nonwatertight_raises(self):
        cube = box_mesh()
        with pytest.raises(NonWatertightSource):
            center_of_mass(Mesh(cube.vertices, cube.faces[:-1]))

    def test_volume_and_inertia_of_box(self):
        mesh = box_mesh(size=(0.2, 0.4, 0.8))
        assert volume(mesh) == pytest.approx(0.2 * 0.4 * 0.8, rel=1e-12)
        inertia, com, _ = inertia_tensor(mesh, mass=3.0)
        # analytic box inertia: m/12 * (b^2 + c^2) per axis
        m = 3.0
        expected = np.diag(
            [
                m / 12 * (0.4**2 + 0.8**2),
                m / 12 * (0.2**2 + 0.8**2),
                m / 12 * (0.2**2 + 0.4**2),
            ]
        )
        assert np.allclose(inertia, expected, atol=1e-12)
        assert np.allclose(com, 0.0, atol=1e-12)


class TestObjRoundTrip:
    def test_round_trip(self, tmp_path):
        mesh = icosphere(radius=0.5, subdivisions=1)
        path = tmp_path / "ball.obj"
        save_obj(mesh, path)
        loaded = load_obj(path)
        assert np.allclose(loaded.vertices, mesh.vertices)
        assert np.array_equal(loaded.faces, mesh.faces)

    def test_ignores_unsupported_records(self, tmp_path):
        path = tmp_path / "tri.obj"
        path.write_text("vn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = load_obj(path)
        assert mesh.n_faces == 1


@settings(max_examples=30, deadline=None)
@given(
    scale=st.floats(min_value=0.1, max_value=2.0),
    tx=st.floats(min_value=-3, max_value=3),
)
def test_sdf_lipschitz_property(scale, tx):
    sdf = Sdf(box_mesh(size=(scale, scale, scale), center=(tx, 0, 0)))
    rng = np.random.default_rng(0)
    p = rng.uniform(-4, 4, size=(10, 3))
    q = p + rng.normal(scale=0.3, size=(10, 3))
    dp, dq = sdf.query(p), sdf.query(q)
    gap = np.linalg.norm(p - q, axis=1)
    assert np.all(np.abs(dp - dq) <= gap + 1e-6)


def test_degenerate_faces_dropped():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.5, 0, 0]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 1, 3]])  # second face has zero area
    mesh = Mesh(verts, faces)
    assert mesh.n_faces == 1


def test_unsigned_distance_matches_signed_magnitude():
    mesh = icosphere(subdivisions=1)
    sdf = Sdf(mesh)
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1.5, 1.5, size=(30, 3))
    assert np.allclose(np.abs(sdf.query(pts)), unsigned_distance(pts, mesh), atol=1e-6)
