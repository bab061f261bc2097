"""Settling-run taxonomy and stability labels.

Type1: an object alone cannot stand under gravity.
Type2: the interacting scene never reaches rest.
Type3: rest reached but the human ends up without object contact.
Type4: rest reached with contact persisting through the final dwell window.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..geometry import Mesh
from .engine import SettleOutcome, SettleParams, settle
from .world import RigidBody, WorldState

GRAVITY_MAX_SHIFT = 0.02  # m
GRAVITY_MAX_TILT = 0.1    # rad


class OutcomeType(Enum):
    TYPE1 = 1  # gravity-unstable object
    TYPE2 = 2  # interaction never stabilizes
    TYPE3 = 3  # stable but no meaningful contact
    TYPE4 = 4  # stable with persistent contact


def gravity_stability(mesh: Mesh, position=(0.0, 0.0, 0.0), quat=(1.0, 0.0, 0.0, 0.0),
                      pieces: list | None = None, friction: float | None = None,
                      params: SettleParams | None = None,
                      mass: float | None = None) -> bool:
    """Whether the lone object stays put: settled, moved < 2 cm and < 0.1 rad."""
    kwargs = {}
    if friction is not None:
        kwargs["friction"] = friction
    body = RigidBody.from_mesh(
        mesh, body_id="probe", pieces=pieces, position=position, quat=quat,
        mass=mass, **kwargs,
    )
    world = WorldState(bodies=[body])
    outcome = settle(world, params or SettleParams())
    if not outcome.stabilized:
        return False
    lin, ang = outcome.displacement["probe"]
    return lin < GRAVITY_MAX_SHIFT and ang < GRAVITY_MAX_TILT


@dataclass
class OutcomeDetail:
    outcome_type: OutcomeType
    gravity_ok: dict  # body_id -> bool
    final_window_contact: bool


def classify_outcome(initial: WorldState, outcome: SettleOutcome,
                     params: SettleParams | None = None,
                     gravity_ok: dict | None = None) -> OutcomeType:
    return classify_outcome_detail(initial, outcome, params, gravity_ok).outcome_type


def classify_outcome_detail(initial: WorldState, outcome: SettleOutcome,
                            params: SettleParams | None = None,
                            gravity_ok: dict | None = None) -> OutcomeDetail:
    """Exactly one type per run; the gravity pre-check reruns each object alone
    from its initial pose (pass gravity_ok to reuse cached verdicts)."""
    params = params or SettleParams()
    checks = {}
    for body in initial.bodies:
        if gravity_ok is not None and body.body_id in gravity_ok:
            checks[body.body_id] = bool(gravity_ok[body.body_id])
            continue
        if body.source_mesh is None:
            checks[body.body_id] = True
            continue
        rot, t = body.mesh_pose()
        from .world import quat_from_matrix

        checks[body.body_id] = gravity_stability(
            body.source_mesh,
            position=t,
            quat=quat_from_matrix(rot),
            pieces=[p.shifted(body.com_offset) for p in body.pieces],
            friction=body.friction,
            params=params,
            mass=body.mass,
        )

    dwell_steps = max(1, int(round(params.dwell / params.dt)))
    tail = outcome.contact_trace[-dwell_steps:] if outcome.contact_trace else []
    window_contact = bool(np.any(tail))

    if not all(checks.values()):
        kind = OutcomeType.TYPE1
    elif not outcome.stabilized:
        kind = OutcomeType.TYPE2
    elif not window_contact:
        kind = OutcomeType.TYPE3
    else:
        kind = OutcomeType.TYPE4
    return OutcomeDetail(outcome_type=kind, gravity_ok=checks,
                         final_window_contact=window_contact)


def stability_label(world: WorldState, params: SettleParams | None = None,
                    gravity_only: bool = False,
                    gravity_ok: dict | None = None) -> int:
    """Binary stability feedback: 1 only for a fully stable interaction.

    gravity_only skips the interaction run and scores criterion (1) alone.
    """
    params = params or SettleParams()
    if gravity_only:
        verdicts = []
        for body in world.bodies:
            if gravity_ok is not None and body.body_id in gravity_ok:
                verdicts.append(bool(gravity_ok[body.body_id]))
                continue
            if body.source_mesh is None:
                verdicts.append(True)
                continue
            rot, t = body.mesh_pose()
            from .world import quat_from_matrix

            verdicts.append(
                gravity_stability(
                    body.source_mesh, position=t, quat=quat_from_matrix(rot),
                    pieces=[p.shifted(body.com_offset) for p in body.pieces],
                    friction=body.friction, params=params, mass=body.mass,
                )
            )
        return int(all(verdicts))
    try:
        outcome = settle(world, params)
    except Exception:
        return 0
    kind = classify_outcome(world, outcome, params, gravity_ok=gravity_ok)
    return int(kind is OutcomeType.TYPE4)
