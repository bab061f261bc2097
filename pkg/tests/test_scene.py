import numpy as np
import pytest

from physloop.errors import EmptySelection
from physloop.geometry import Mesh, Sdf, box_mesh
from physloop.scene import (
    AlignPlacementOptions,
    BodyModel,
    Capsule,
    ContactLabel,
    PlacementState,
    align_placement,
    contact_loss,
    detect_contact,
    non_contact_loss,
    select_contact_part,
    sp3d,
    transform_about_pivot,
    world_to_object_local,
)


def simple_body(positions: dict, frames: int = 1) -> BodyModel:
    names = list(positions)
    kps = np.tile(np.array([positions[n] for n in names], dtype=float), (frames, 1, 1))
    parts = {
        "pelvis": [n for n in names if "pelvis" in n],
        "hands": [n for n in names if "hand" in n],
        "feet": [n for n in names if "foot" in n],
        "torso": [n for n in names if n not in ()
                  and "pelvis" not in n and "hand" not in n and "foot" not in n],
    }
    parts = {k: v for k, v in parts.items() if v}
    return BodyModel(keypoint_names=names, keypoints=kps, parts=parts)


class TestDetectContact:
    def test_far_body_non_contact(self):
        body = simple_body({"pelvis": (5.0, 0, 0), "head": (5.0, 0, 0.6)})
        state = detect_contact(body, 0, Sdf(box_mesh()), threshold=0.05)
        assert state.label is ContactLabel.NON_CONTACT
        assert state.min_distance == pytest.approx(4.5, abs=1e-6)

    def test_penetrating_keypoint_contact(self):
        body = simple_body({"pelvis": (0.0, 0, 0), "head": (3.0, 0, 0)})
        state = detect_contact(body, 0, Sdf(box_mesh()), threshold=0.05)
        assert state.label is ContactLabel.CONTACT
        assert state.closest_part == "pelvis"
        assert state.min_distance == pytest.approx(-0.5, abs=1e-9)

    def test_grazing_exactly_at_threshold_is_contact(self):
        # cube face at x = 0.5; keypoint exactly threshold away.  Binary-exact
        # threshold keeps the tie a true tie.
        body = simple_body({"hand_l": (0.53125, 0.0, 0.0), "head": (3.0, 0, 0)})
        state = detect_contact(body, 0, Sdf(box_mesh()), threshold=0.03125)
        assert state.label is ContactLabel.CONTACT
        assert state.closest_part == "hands"

    def test_select_part_by_mean_distance(self):
        body = simple_body(
            {"pelvis": (0.6, 0, 0), "hand_l": (2.0, 0, 0), "hand_r": (2.2, 0, 0)}
        )
        assert select_contact_part(body, 0, Sdf(box_mesh())) == "pelvis"


class TestNonContactLoss:
    def test_coincident_zero(self):
        assert non_contact_loss(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 2.0, 3.0]])) == 0.0

    def test_single_pair_closed_form(self):
        d = 0.73
        val = non_contact_loss(np.array([[0.0, 0, 0]]), np.array([[d, 0, 0]]))
        assert val == pytest.approx(2 * d, rel=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            kp = rng.normal(size=(3, 3))
            obj = rng.normal(size=(5, 3))
            centroid = kp.mean(axis=0)
            term1 = sum(np.linalg.norm(centroid - o) for o in obj) / len(kp)
            term2 = sum(min(np.linalg.norm(o - k) for k in kp) for o in obj) / len(obj)
            assert non_contact_loss(kp, obj) == pytest.approx(term1 + term2, abs=1e-12)

    def test_empty_selection(self):
        with pytest.raises(EmptySelection):
            non_contact_loss(np.zeros((0, 3)), np.ones((2, 3)))

    def test_continuity_probes(self):
        # |dl| <= L |dx| with L = 2 along random directions
        rng = np.random.default_rng(4)
        kp = rng.normal(size=(4, 3)) + [3.0, 0, 0]
        obj = rng.normal(size=(6, 3))
        base = non_contact_loss(kp, obj)
        for _ in range(20):
            step = rng.normal(size=3) * 0.01
            moved = non_contact_loss(kp + step, obj)
            assert abs(moved - base) <= 2.0 * np.linalg.norm(step) * (1 + len(obj) / len(kp))


class TestContactLoss:
    def test_all_outside_zero(self):
        pts = np.array([[2.0, 0, 0], [0, 3.0, 0], [0, 0, 1.0]])
        assert contact_loss(pts, Sdf(box_mesh())) == 0.0

    def test_one_of_four_at_center(self):
        pts = np.array([[0.0, 0, 0], [2.0, 0, 0], [0, 2.0, 0], [0, 0, 2.0]])
        assert contact_loss(pts, Sdf(box_mesh())) == pytest.approx(0.125, abs=1e-9)

    def test_matches_per_point_oracle(self):
        rng = np.random.default_rng(2)
        sdf = Sdf(box_mesh(size=(0.8, 1.2, 0.5)))
        for _ in range(10):
            pts = rng.uniform(-1, 1, size=(6, 3))
            expected = np.mean([max(0.0, -sdf(p)) for p in pts])
            assert contact_loss(pts, sdf) == pytest.approx(expected, abs=1e-12)

    def test_rigid_invariance(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(-0.6, 0.6, size=(5, 3))
        mesh = box_mesh(size=(0.9, 0.7, 1.1))
        theta = 0.9
        rot = np.array([[np.cos(theta), 0, np.sin(theta)],
                        [0, 1, 0],
                        [-np.sin(theta), 0, np.cos(theta)]])
        t = np.array([0.3, -1.2, 0.8])
        base = contact_loss(pts, Sdf(mesh))
        moved = contact_loss(pts @ rot.T + t, Sdf(mesh.transformed(rot, t)))
        assert moved == pytest.approx(base, abs=1e-8)

    def test_zero_iff_no_penetration(self):
        sdf = Sdf(box_mesh())
        inside = np.array([[0.1, 0.0, 0.0]])
        outside = np.array([[0.7, 0.0, 0.0]])
        assert contact_loss(inside, sdf) > 0
        assert contact_loss(outside, sdf) == 0.0


def sitting_fixture(pelvis_dz=0.0, chair_dx=0.0):
    """Chair seat box (top face at z = 0.5) with a small body."""
    seat = box_mesh(size=(0.5, 0.5, 0.3), center=(chair_dx, 0, 0.35), name="seat")
    body = simple_body(
        {
            "pelvis": (0.0, 0.0, 0.5 + pelvis_dz),
            "spine": (0.0, 0.0, 0.8 + pelvis_dz),
            "head": (0.0, 0.0, 1.1 + pelvis_dz),
            "foot_l": (-0.1, 0.2, 0.0),
            "foot_r": (-0.1, -0.2, 0.0),
        },
        frames=3,
    )
    return body, [seat]


class TestAlignPlacement:
    def test_already_seated_unchanged(self):
        body, objects = sitting_fixture(pelvis_dz=0.0)
        init = PlacementState.identity(1)
        res = align_placement(body, objects, init)
        assert np.allclose(res.state.to_vector(), init.to_vector(), atol=1e-6)

    def test_penetrating_pelvis_resolved(self):
        body, objects = sitting_fixture(pelvis_dz=-0.1)
        res = align_placement(body, objects, opts=AlignPlacementOptions(max_iters=60))
        assert res.improved
        # recompute penetration of the pelvis part under the final placement
        sdf = Sdf(objects[0])
        pivot_h = body.keypoints[0].mean(axis=0)
        kps = transform_about_pivot(
            body.keypoints[0], res.state.human_yaw, res.state.human_offset, pivot_h
        )
        local = world_to_object_local(
            kps, res.state.object_yaw[0], res.state.object_offset[0],
            objects[0].vertices.mean(axis=0),
        )
        final_pen = contact_loss(local[body.part_indices("pelvis")], sdf)
        assert final_pen < 1e-3
        assert all(b <= a + 1e-12 for a, b in zip(res.trace, res.trace[1:]))

    def test_distant_chair_pulled_closer(self):
        body, objects = sitting_fixture(chair_dx=1.0)
        sdf = Sdf(objects[0])
        init_min = float(sdf.query(body.keypoints[0]).min())
        res = align_placement(body, objects, opts=AlignPlacementOptions(max_iters=40))
        pivot_h = body.keypoints[0].mean(axis=0)
        kps = transform_about_pivot(
            body.keypoints[0], res.state.human_yaw, res.state.human_offset, pivot_h
        )
        local = world_to_object_local(
            kps, res.state.object_yaw[0], res.state.object_offset[0],
            objects[0].vertices.mean(axis=0),
        )
        final_min = float(sdf.query(local).min())
        assert final_min < init_min


class TestSp3d:
    def test_fully_outside(self):
        body = simple_body({"pelvis": (5, 0, 0), "head": (5, 0, 1)}, frames=4)
        assert sp3d(body, [box_mesh()]) == 0.0

    def test_fully_inside(self):
        body = simple_body({"pelvis": (0, 0, 0), "head": (0.05, 0, 0)}, frames=4)
        assert sp3d(body, [box_mesh()]) == 100.0

    def test_half_penetrating_constructed(self):
        # 2 keypoints x 10 frames = 20 pairs; exactly one keypoint inside
        names = ["pelvis", "head"]
        kps = np.zeros((10, 2, 3))
        kps[:, 0] = [0.0, 0.0, 0.0]   # inside the unit cube
        kps[:, 1] = [3.0, 0.0, 0.0]   # outside
        body = BodyModel(names, kps, {"pelvis": ["pelvis"], "torso": ["head"]})
        assert sp3d(body, [box_mesh()]) == pytest.approx(50.0)

    def test_eps_zero_matches_contact_loss_support(self):
        # contact_loss > 0 exactly when sp3d (eps=0) counts a penetration
        sdf = Sdf(box_mesh())
        cases = [
            {"pelvis": (0.5, 0.0, 0.0), "head": (2.0, 0, 0)},    # on the face
            {"pelvis": (0.499, 0.0, 0.0), "head": (2.0, 0, 0)},  # just inside
            {"pelvis": (0.7, 0.0, 0.0), "head": (2.0, 0, 0)},    # outside
        ]
        for pose in cases:
            body = simple_body(pose)
            pen = contact_loss(body.keypoints[0], sdf)
            ratio = sp3d(body, [box_mesh()], eps_pen=0.0)
            assert (pen > 0) == (ratio > 0)


def test_capsule_validation():
    with pytest.raises(ValueError):
        BodyModel(
            ["a"], np.zeros((1, 1, 3)), {"torso": ["a"]},
            capsules=[Capsule("a", "a", -0.1)],
        )


def test_parts_must_partition():
    with pytest.raises(ValueError):
        BodyModel(["a", "b"], np.zeros((1, 2, 3)), {"torso": ["a"]})
