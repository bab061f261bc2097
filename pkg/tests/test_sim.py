import numpy as np
import pytest

from physloop.errors import BlowUp
from physloop.geometry import Mesh, box_mesh, icosphere
from physloop.sim import (
    HumanTrack,
    OutcomeType,
    RigidBody,
    SettleParams,
    WorldState,
    classify_outcome,
    gravity_stability,
    linear_momentum,
    quat_from_axis_angle,
    quat_from_matrix,
    quat_to_matrix,
    settle,
    stability_label,
    step,
    step_inplace,
    total_energy,
)

DT = 1.0 / 240.0


def combine_boxes(parts, name="combo"):
    """Disjoint closed boxes as one watertight multi-component mesh."""
    verts, faces, pieces = [], [], []
    offset = 0
    for size, center in parts:
        b = box_mesh(size=size, center=center)
        verts.append(b.vertices)
        faces.append(b.faces + offset)
        pieces.append(b.vertices)
        offset += len(b.vertices)
    return Mesh(np.vstack(verts), np.vstack(faces), name=name), pieces


def three_leg_table(missing=(+1, +1)):
    """Tabletop shifted toward the missing leg so the loss is decisive."""
    legs = [(sx, sy) for sx in (-1, 1) for sy in (-1, 1) if (sx, sy) != missing]
    parts = [((0.8, 0.8, 0.05), (0.12 * missing[0], 0.12 * missing[1], 0.725))]
    for sx, sy in legs:
        parts.append(((0.06, 0.06, 0.7), (0.35 * sx, 0.35 * sy, 0.35)))
    return combine_boxes(parts, name="table3")


def four_leg_table():
    parts = [((0.8, 0.8, 0.05), (0, 0, 0.725))]
    for sx in (-1, 1):
        for sy in (-1, 1):
            parts.append(((0.06, 0.06, 0.7), (0.35 * sx, 0.35 * sy, 0.35)))
    return combine_boxes(parts, name="table4")


class TestStep:
    def test_resting_cube_unchanged(self):
        body = RigidBody.from_mesh(box_mesh(center=(0, 0, 0.5)), body_id="c")
        w = WorldState(bodies=[body])
        w2 = step(w, DT)
        assert np.linalg.norm(w2.bodies[0].position - w.bodies[0].position) < 1e-6

    def test_ballistic_closed_form(self):
        body = RigidBody.from_mesh(box_mesh(), body_id="d", position=(0, 0, 1.0))
        w = WorldState(bodies=[body])
        while w.time < 0.3:
            step_inplace(w, DT)
            z_exact = 1.0 - 0.5 * 9.81 * w.time**2
            drop = 1.0 - z_exact
            assert abs(w.bodies[0].position[2] - z_exact) <= 0.01 * max(drop, 1e-9)

    def test_bitwise_determinism(self):
        def run():
            body = RigidBody.from_mesh(
                box_mesh(), body_id="x", position=(0.1, 0.2, 0.8),
                quat=quat_from_axis_angle(np.array([1.0, 1.0, 0.0]), 0.4),
            )
            w = WorldState(bodies=[body])
            traj = []
            for _ in range(480):
                step_inplace(w, DT)
                traj.append(np.concatenate([w.bodies[0].position, w.bodies[0].quat,
                                            w.bodies[0].velocity, w.bodies[0].omega]))
            return np.array(traj)

        assert np.array_equal(run(), run())

    def test_dt_bounds(self):
        body = RigidBody.from_mesh(box_mesh(center=(0, 0, 0.5)), body_id="c")
        w = WorldState(bodies=[body])
        with pytest.raises(ValueError):
            step_inplace(w, 1.0 / 30.0)

    def test_blowup_reported(self):
        body = RigidBody.from_mesh(box_mesh(), body_id="fast", position=(0, 0, 50.0))
        body.velocity = np.array([2000.0, 0.0, 0.0])
        w = WorldState(bodies=[body])
        with pytest.raises(BlowUp) as exc:
            step_inplace(w, DT)
        assert exc.value.body_id == "fast"


class TestSettle:
    def test_flat_cube_static(self):
        body = RigidBody.from_mesh(box_mesh(center=(0, 0, 0.5)), body_id="c")
        out = settle(WorldState(bodies=[body]))
        assert out.stabilized
        lin, ang = out.displacement["c"]
        assert lin < 1e-3

    def test_edge_balanced_cube_topples(self):
        # perturbed 1e-3 rad about the +x edge axis: COM is offset toward -y
        # or +y depending on the perturbation sign; direction must follow
        for sign in (+1, -1):
            tilt = np.pi / 4 + sign * 1e-3
            body = RigidBody.from_mesh(
                box_mesh(), body_id="c",
                position=(0, 0, np.sqrt(2) / 2 + 1e-3),
                quat=quat_from_axis_angle(np.array([1.0, 0, 0]), tilt),
            )
            out = settle(WorldState(bodies=[body]))
            assert out.stabilized
            lin, ang = out.displacement["c"]
            assert ang > 0.5
            # rotation continued in the perturbed direction: the body axis that
            # pointed mostly up tips along +-y
            rot = out.final_poses["c"]["rotation"]
            tipped_y = float(rot[1, 2])
            assert np.sign(np.round(tipped_y)) == -sign or abs(tipped_y) < 1.0

    def test_tall_box_topples_flat(self):
        tall = box_mesh(size=(0.1, 0.1, 2.0))
        body = RigidBody.from_mesh(
            tall, body_id="t",
            position=(0, 0, np.cos(np.deg2rad(30)) + 0.002),
            quat=quat_from_axis_angle(np.array([0, 1.0, 0]), np.deg2rad(30)),
        )
        out = settle(WorldState(bodies=[body]))
        assert out.stabilized
        up = out.final_poses["t"]["rotation"] @ np.array([0.0, 0.0, 1.0])
        angle_from_horizontal = np.degrees(np.arcsin(abs(float(up[2]))))
        assert angle_from_horizontal < 15.0

    def test_tall_box_agrees_with_fine_reference(self):
        tall = box_mesh(size=(0.1, 0.1, 2.0))

        def run(dt, max_time):
            body = RigidBody.from_mesh(
                tall, body_id="t",
                position=(0, 0, np.cos(np.deg2rad(30)) + 0.002),
                quat=quat_from_axis_angle(np.array([0, 1.0, 0]), np.deg2rad(30)),
            )
            return settle(WorldState(bodies=[body]),
                          SettleParams(dt=dt, max_time=max_time))

        coarse = run(DT, 10.0)
        fine = run(1e-4, 4.0)
        up_c = coarse.final_poses["t"]["rotation"] @ np.array([0.0, 0.0, 1.0])
        up_f = fine.final_poses["t"]["rotation"] @ np.array([0.0, 0.0, 1.0])
        assert abs(float(up_c[2])) < 0.26 and abs(float(up_f[2])) < 0.26
        assert coarse.stabilized and fine.stabilized

    def test_energy_never_increases(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            size = tuple(rng.uniform(0.2, 0.9, 3))
            body = RigidBody.from_mesh(
                box_mesh(size=size), body_id="b",
                position=(0, 0, rng.uniform(0.3, 1.0)),
                quat=quat_from_axis_angle(rng.normal(size=3), rng.uniform(0, 0.5)),
            )
            w = WorldState(bodies=[body])
            prev = total_energy(w)
            for _ in range(720):
                step_inplace(w, DT)
                e = total_energy(w)
                assert e <= prev + 1e-6
                prev = e

    def test_momentum_conserved_frictionless(self):
        body = RigidBody.from_mesh(box_mesh(center=(0, 0, 0.5)), body_id="s", friction=0.0)
        body.velocity = np.array([0.5, 0.2, 0.0])
        w = WorldState(bodies=[body], ground_friction=0.0)
        prev = linear_momentum(w)[:2]
        for _ in range(240):
            step_inplace(w, DT)
            cur = linear_momentum(w)[:2]
            assert np.abs(cur - prev).max() < 1e-4
            prev = cur

    def test_max_time_must_cover_dwell(self):
        body = RigidBody.from_mesh(box_mesh(center=(0, 0, 0.5)), body_id="c")
        with pytest.raises(ValueError):
            settle(WorldState(bodies=[body]), SettleParams(max_time=0.1, dwell=0.5))


class TestGravityStability:
    def test_upright_cube(self):
        assert gravity_stability(box_mesh(center=(0, 0, 0.5)))

    def test_three_leg_table_tips(self):
        mesh, pieces = three_leg_table()
        assert not gravity_stability(mesh, pieces=pieces)

    def test_four_leg_table_stands(self):
        mesh, pieces = four_leg_table()
        assert gravity_stability(mesh, pieces=pieces)

    def test_sphere_consistent_with_trace(self):
        ball = icosphere(radius=0.2, subdivisions=2, center=(0, 0, 0.2))
        for friction in (0.6, 0.0):
            body = RigidBody.from_mesh(ball, body_id="ball", friction=friction)
            w = WorldState(bodies=[body], ground_friction=friction)
            out = settle(w)
            verdict = gravity_stability(ball, friction=friction)
            lin, ang = out.displacement["ball"]
            expected = out.stabilized and lin < 0.02 and ang < 0.1
            assert verdict == expected

    def test_yaw_invariance(self):
        mesh, pieces = three_leg_table()
        verdicts = []
        for k in range(8):
            yaw = 2 * np.pi * k / 8
            verdicts.append(
                gravity_stability(mesh, quat=quat_from_axis_angle(np.array([0, 0, 1.0]), yaw),
                                  pieces=pieces)
            )
        assert len(set(verdicts)) == 1


def sitting_human(x=0.0, hold=1.5, fps=30.0, z_seat=0.45):
    n = int(hold * fps) + 1
    names = ["pelvis_a", "pelvis_b"]
    frames = np.zeros((n, 2, 3))
    for i in range(n):
        t = i / fps
        z = max(0.62 - 0.15 * min(t, 1.0), z_seat + 0.08)
        frames[i, 0] = [x - 0.1, 0, z]
        frames[i, 1] = [x + 0.1, 0, z]
    return HumanTrack(keypoint_names=names, frames=frames, fps=fps,
                      capsules=[("pelvis_a", "pelvis_b", 0.08)])


def seat_world(human_x=0.0, seat_id="seat"):
    seat = box_mesh(size=(0.5, 0.5, 0.45), center=(0, 0, 0.225), name="seat")
    body = RigidBody.from_mesh(seat, body_id=seat_id)
    return WorldState(bodies=[body], humans=[sitting_human(x=human_x)])


class TestOutcomes:
    def test_sitting_is_type4(self):
        w = seat_world()
        out = settle(w)
        assert classify_outcome(w, out) is OutcomeType.TYPE4
        assert any(out.contact_trace[-120:])

    def test_far_human_is_type3(self):
        w = seat_world(human_x=3.0)
        out = settle(w)
        assert classify_outcome(w, out) is OutcomeType.TYPE3

    def test_unstable_object_is_type1(self):
        mesh, pieces = three_leg_table()
        body = RigidBody.from_mesh(mesh, body_id="t3", pieces=pieces)
        w = WorldState(bodies=[body], humans=[sitting_human(x=3.0)])
        out = settle(w)
        assert classify_outcome(w, out) is OutcomeType.TYPE1

    def test_endless_interaction_is_type2(self):
        # motion outlasts the settle budget: still interacting at timeout
        w = seat_world()
        long_human = sitting_human(hold=6.0)
        w.humans = [long_human]
        out = settle(w, SettleParams(max_time=2.0))
        assert not out.stabilized
        assert classify_outcome(w, out, SettleParams(max_time=2.0)) is OutcomeType.TYPE2

    def test_stability_label_matches_type(self):
        w = seat_world()
        assert stability_label(w) == 1
        w3 = seat_world(human_x=3.0)
        assert stability_label(w3) == 0

    def test_label_batch_deterministic(self):
        labels1 = [stability_label(seat_world(human_x=x)) for x in (0.0, 1.0, 3.0)]
        labels2 = [stability_label(seat_world(human_x=x)) for x in (0.0, 1.0, 3.0)]
        assert labels1 == labels2
        assert labels1 == [1, 0, 0]

    def test_gravity_only_mode(self):
        mesh, pieces = three_leg_table()
        bad = RigidBody.from_mesh(mesh, body_id="t3", pieces=pieces)
        w = WorldState(bodies=[bad])
        assert stability_label(w, gravity_only=True) == 0
        good = RigidBody.from_mesh(box_mesh(center=(0, 0, 0.5)), body_id="cube")
        assert stability_label(WorldState(bodies=[good]), gravity_only=True) == 1


def test_quat_matrix_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        r = quat_to_matrix(q)
        q2 = quat_from_matrix(r)
        assert np.allclose(quat_to_matrix(q2), r, atol=1e-10)


def test_body_validation():
    with pytest.raises(ValueError):
        RigidBody.from_mesh(box_mesh(), body_id="m", mass=-1.0)
    with pytest.raises(ValueError):
        RigidBody.from_mesh(box_mesh(), body_id="r", restitution=1.5)
