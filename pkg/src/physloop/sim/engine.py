"""Deterministic settling integrator.

Semi-implicit velocity update with a trapezoidal position rule (exact for
ballistic flight), velocity-level contact impulses with Coulomb friction, and
no positional correction: de-penetration pushes would inject potential energy,
so bodies rest wherever the impact step left them (penetration is bounded by
one step of travel).  Speculative contact targets stop fallers at the surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from ..errors import BlowUp
from .world import WorldState, quat_from_axis_angle, quat_mul

SPEED_CEILING = 1e3      # m/s; beyond this the run is declared blown up
GROUND_HORIZON = 0.05    # m; contact detection margin against the plane
BODY_HORIZON = 0.02      # m; body-body speculative margin
TOUCH_EPS = 0.015        # m; human-object contact for the trace
REST_VEL_FACTOR = 4.0    # restitution kicks in above this multiple of g*dt
TOUCH_SLOP = 1e-3        # m; a contact this close counts as a support
SNAP_VEL = 5e-3          # m/s; static-rest clamp gate
SNAP_OMEGA = 5e-3        # rad/s
WAKE_MARGIN = 0.08       # m; sleepers wake when anything gets this close


@dataclass
class StepInfo:
    human_contact: bool = False
    human_engaged: bool = False  # any human impulse this step (external work)
    n_contacts: int = 0
    supported: list = None       # per-body: COM over a 3+ point support polygon
    static_rest: list = None     # per-body: snapped to exact static rest


def _cross(a, b):
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _matvec(m, v):
    return (
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    )


class _Contact:
    __slots__ = (
        "ia", "ib", "n", "ra", "rb", "vb", "k_n", "ta", "tb",
        "target", "mu", "accum_n", "ft", "_inv_i_a", "_inv_i_b",
    )

    def __init__(self, ia, ib, n, ra, rb, vb, k_n, ta, tb, target, mu):
        self.ia = ia
        self.ib = ib      # dynamic partner index or None (ground / human)
        self.n = n
        self.ra = ra
        self.rb = rb
        self.vb = vb      # fixed partner velocity when ib is None
        self.k_n = k_n
        self.ta = ta      # invI_a (ra x n)
        self.tb = tb
        self.target = target
        self.mu = mu
        self.accum_n = 0.0
        self.ft = [0.0, 0.0, 0.0]


def _hull2d(points):
    """Andrew's monotone chain; points is a list of (x, y)."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return lower[:-1] + upper[:-1]


def _com_over_support(com_xy, support_points) -> bool:
    """Static stability: COM projection inside the support convex hull."""
    hull = _hull2d(support_points)
    if len(hull) < 3:
        return False
    px, py = com_xy
    for i in range(len(hull)):
        ax, ay = hull[i]
        bx, by = hull[(i + 1) % len(hull)]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < -1e-9:
            return False
    return True


def _world_pieces(body) -> tuple[list, tuple]:
    """Transformed piece geometry plus AABB; sleeping poses reuse the cache."""
    cache = getattr(body, "_geom_cache", None)
    if cache is None:
        verts_all = np.vstack([p.vertices for p in body.pieces])
        norms_all = np.vstack([p.equations[:, :3] for p in body.pieces])
        offs_all = np.concatenate([p.equations[:, 3] for p in body.pieces])
        v_slices, n_slices = [], []
        v0 = n0 = 0
        for p in body.pieces:
            v_slices.append(slice(v0, v0 + len(p.vertices)))
            n_slices.append(slice(n0, n0 + len(p.equations)))
            v0 += len(p.vertices)
            n0 += len(p.equations)
        cache = (verts_all, norms_all, offs_all, v_slices, n_slices)
        body._geom_cache = cache
    verts_all, norms_all, offs_all, v_slices, n_slices = cache
    rot, x = body.rotation(), body.position
    vw = verts_all @ rot.T + x
    nw = norms_all @ rot.T
    ow = offs_all - nw @ x
    entries = [(vw[vs], nw[ns], ow[ns]) for vs, ns in zip(v_slices, n_slices)]
    return entries, (vw.min(axis=0), vw.max(axis=0))


def _detect_contacts(world: WorldState, dt: float, vel, omg, inv_mass, inv_inertia,
                     supports, awake, human_spheres):
    contacts = []
    human_touch = False
    bodies = world.bodies
    n_bodies = len(bodies)

    piece_world = []  # per body: list of (verts_world, normals_world, offsets_world)
    aabbs = []
    human_near = [False] * n_bodies
    body_near = [False] * n_bodies
    for bi, body in enumerate(bodies):
        frozen = getattr(body, "_sleep_world", None)
        if not awake[bi] and frozen is not None:
            entries, aabb = frozen
        else:
            entries, aabb = _world_pieces(body)
        piece_world.append(entries)
        aabbs.append(aabb)

    def rest_target(sep: float, vn0: float, e: float, g: float) -> float:
        if sep > 0.0:
            target = -sep / dt
        else:
            target = 0.0
        if e > 0.0 and vn0 < -REST_VEL_FACTOR * g * dt:
            target = max(target, -e * vn0)
        return target

    def add(ia, ib, point, n, sep, mu, e, vb_fixed):
        body = bodies[ia]
        ra = tuple(point - body.position)
        n_t = tuple(n)
        ta = _matvec(inv_inertia[ia], _cross(ra, n_t))
        k = inv_mass[ia] + _dot(n_t, _cross(ta, ra))
        va = vel[ia]
        wa = omg[ia]
        vn0 = _dot(n_t, (
            va[0] + wa[1] * ra[2] - wa[2] * ra[1] - vb_fixed[0],
            va[1] + wa[2] * ra[0] - wa[0] * ra[2] - vb_fixed[1],
            va[2] + wa[0] * ra[1] - wa[1] * ra[0] - vb_fixed[2],
        )) if ib is None else None
        if ib is not None:
            other = bodies[ib]
            rb = tuple(point - other.position)
            tb = _matvec(inv_inertia[ib], _cross(rb, n_t))
            k += inv_mass[ib] + _dot(n_t, _cross(tb, rb))
            va_p = (
                va[0] + wa[1] * ra[2] - wa[2] * ra[1],
                va[1] + wa[2] * ra[0] - wa[0] * ra[2],
                va[2] + wa[0] * ra[1] - wa[1] * ra[0],
            )
            vb_ = vel[ib]
            wb = omg[ib]
            vb_p = (
                vb_[0] + wb[1] * rb[2] - wb[2] * rb[1],
                vb_[1] + wb[2] * rb[0] - wb[0] * rb[2],
                vb_[2] + wb[0] * rb[1] - wb[1] * rb[0],
            )
            vn0 = _dot(n_t, (va_p[0] - vb_p[0], va_p[1] - vb_p[1], va_p[2] - vb_p[2]))
        else:
            rb, tb = (0.0, 0.0, 0.0), (0.0, 0.0, 0.0)
        target = rest_target(sep, vn0, e, world.gravity)
        contacts.append(_Contact(ia, ib, n_t, ra, rb, tuple(vb_fixed), k, ta, tb, target, mu))
        if sep <= TOUCH_SLOP:
            if n_t[2] > 0.5:
                supports[ia].append((float(point[0]), float(point[1])))
            if ib is not None and n_t[2] < -0.5:
                supports[ib].append((float(point[0]), float(point[1])))

    # wake pass: anything near a sleeper brings it back into the solve
    changed = True
    while changed:
        changed = False
        for i in range(n_bodies):
            for j in range(i + 1, n_bodies):
                lo_i, hi_i = aabbs[i]
                lo_j, hi_j = aabbs[j]
                if np.any(lo_i > hi_j + WAKE_MARGIN) or np.any(lo_j > hi_i + WAKE_MARGIN):
                    continue
                body_near[i] = body_near[j] = True
                if awake[i] != awake[j]:
                    awake[i] = awake[j] = True
                    changed = True
    for centers, cvels, radii in human_spheres:
        if not len(centers):
            continue
        rmax = radii.max()
        for bi in range(n_bodies):
            lo, hi = aabbs[bi]
            near = np.all(
                (centers > lo - rmax - WAKE_MARGIN) & (centers < hi + rmax + WAKE_MARGIN),
                axis=1,
            ).any()
            if near:
                human_near[bi] = True
                awake[bi] = True

    # body vs ground plane (z = 0, normal +z)
    for bi, body in enumerate(bodies):
        if not awake[bi]:
            continue
        mu = sqrt(body.friction * world.ground_friction)
        e = max(body.restitution, world.ground_restitution)
        speed = float(np.linalg.norm(body.velocity))
        horizon = max(GROUND_HORIZON, 2.0 * speed * dt)
        for verts, _, _ in piece_world[bi]:
            below = verts[:, 2] < horizon
            for v in verts[below]:
                add(bi, None, v, (0.0, 0.0, 1.0), float(v[2]), mu, e, (0.0, 0.0, 0.0))

    # body vs body: vertices of one against the hull planes of the other
    for i in range(n_bodies):
        for j in range(i + 1, n_bodies):
            if not (awake[i] and awake[j]):
                continue
            lo_i, hi_i = aabbs[i]
            lo_j, hi_j = aabbs[j]
            if np.any(lo_i > hi_j + BODY_HORIZON) or np.any(lo_j > hi_i + BODY_HORIZON):
                continue
            mu = sqrt(bodies[i].friction * bodies[j].friction)
            e = max(bodies[i].restitution, bodies[j].restitution)
            for va, vb in ((i, j), (j, i)):
                for verts, _, _ in piece_world[va]:
                    for _, normals, offsets in piece_world[vb]:
                        sep_all = verts @ normals.T + offsets
                        sep = sep_all.max(axis=1)
                        close = sep < BODY_HORIZON
                        if not close.any():
                            continue
                        face = sep_all.argmax(axis=1)
                        for vi in np.flatnonzero(close):
                            # hull normal points toward the vertex: push it out
                            n = normals[face[vi]]
                            add(va, vb, verts[vi], n, float(sep[vi]), mu, e,
                                (0.0, 0.0, 0.0))

    # human capsule spheres vs body pieces (one-way: human never responds)
    human_engaged = False
    for human, (centers, cvels, radii) in zip(world.humans, human_spheres):
        for bi, body in enumerate(bodies):
            if not awake[bi]:
                continue
            mu = sqrt(body.friction * human.friction)
            lo, hi = aabbs[bi]
            rmax = radii.max() if len(radii) else 0.0
            inside = np.all(
                (centers > lo - rmax - BODY_HORIZON) & (centers < hi + rmax + BODY_HORIZON),
                axis=1,
            )
            if not inside.any():
                continue
            for _, normals, offsets in piece_world[bi]:
                sep_all = centers @ normals.T + offsets
                plane = sep_all.max(axis=1)
                sep = plane - radii
                close = inside & (sep < BODY_HORIZON)
                if not close.any():
                    continue
                face = sep_all.argmax(axis=1)
                for si in np.flatnonzero(close):
                    human_engaged = True
                    if sep[si] < TOUCH_EPS:
                        human_touch = True
                    n = normals[face[si]]
                    point = centers[si] - n * radii[si]
                    add(bi, None, point, -n, float(sep[si]), mu, body.restitution,
                        tuple(cvels[si]))

    return contacts, human_touch, human_engaged, piece_world, aabbs, human_near, body_near


def _apply_impulse(c, ix, iy, iz, vel, omg, inv_mass):
    ia = c.ia
    va, wa = vel[ia], omg[ia]
    im = inv_mass[ia]
    va[0] += ix * im
    va[1] += iy * im
    va[2] += iz * im
    rax, ray, raz = c.ra
    t0 = ray * iz - raz * iy
    t1 = raz * ix - rax * iz
    t2 = rax * iy - ray * ix
    ii = c._inv_i_a
    wa[0] += ii[0][0] * t0 + ii[0][1] * t1 + ii[0][2] * t2
    wa[1] += ii[1][0] * t0 + ii[1][1] * t1 + ii[1][2] * t2
    wa[2] += ii[2][0] * t0 + ii[2][1] * t1 + ii[2][2] * t2
    if c.ib is not None:
        ib = c.ib
        vb, wb = vel[ib], omg[ib]
        im = inv_mass[ib]
        vb[0] -= ix * im
        vb[1] -= iy * im
        vb[2] -= iz * im
        rbx, rby, rbz = c.rb
        t0 = rby * iz - rbz * iy
        t1 = rbz * ix - rbx * iz
        t2 = rbx * iy - rby * ix
        ii = c._inv_i_b
        wb[0] -= ii[0][0] * t0 + ii[0][1] * t1 + ii[0][2] * t2
        wb[1] -= ii[1][0] * t0 + ii[1][1] * t1 + ii[1][2] * t2
        wb[2] -= ii[2][0] * t0 + ii[2][1] * t1 + ii[2][2] * t2


def _solve_contacts(contacts, vel, omg, inv_mass, inv_inertia, iterations: int):
    for _ in range(iterations):
        for c in contacts:
            ia, ib = c.ia, c.ib
            nx, ny, nz = c.n
            rax, ray, raz = c.ra
            va, wa = vel[ia], omg[ia]
            px = va[0] + wa[1] * raz - wa[2] * ray
            py = va[1] + wa[2] * rax - wa[0] * raz
            pz = va[2] + wa[0] * ray - wa[1] * rax
            if ib is None:
                qx, qy, qz = c.vb
            else:
                vb, wb = vel[ib], omg[ib]
                rbx, rby, rbz = c.rb
                qx = vb[0] + wb[1] * rbz - wb[2] * rby
                qy = vb[1] + wb[2] * rbx - wb[0] * rbz
                qz = vb[2] + wb[0] * rby - wb[1] * rbx
            rx, ry, rz = px - qx, py - qy, pz - qz
            vn = rx * nx + ry * ny + rz * nz

            dl = (c.target - vn) / c.k_n
            new_accum = c.accum_n + dl
            if new_accum < 0.0:
                dl = -c.accum_n
                new_accum = 0.0
            c.accum_n = new_accum
            if dl != 0.0:
                _apply_impulse(c, dl * nx, dl * ny, dl * nz, vel, omg, inv_mass)
                va, wa = vel[ia], omg[ia]
                px = va[0] + wa[1] * raz - wa[2] * ray
                py = va[1] + wa[2] * rax - wa[0] * raz
                pz = va[2] + wa[0] * ray - wa[1] * rax
                if ib is not None:
                    vb, wb = vel[ib], omg[ib]
                    qx = vb[0] + wb[1] * rbz - wb[2] * rby
                    qy = vb[1] + wb[2] * rbx - wb[0] * rbz
                    qz = vb[2] + wb[0] * rby - wb[1] * rbx
                rx, ry, rz = px - qx, py - qy, pz - qz
                vn = rx * nx + ry * ny + rz * nz

            if c.mu > 0.0 and c.accum_n > 0.0:
                tx = rx - vn * nx
                ty = ry - vn * ny
                tz = rz - vn * nz
                vt2 = tx * tx + ty * ty + tz * tz
                # below 1 um/s the tangential state is numerically at rest
                if vt2 > 1e-12:
                    vt = sqrt(vt2)
                    dx, dy, dz = tx / vt, ty / vt, tz / vt
                    # effective mass along the current tangent direction
                    c0 = ray * dz - raz * dy
                    c1 = raz * dx - rax * dz
                    c2 = rax * dy - ray * dx
                    ii = c._inv_i_a
                    u0 = ii[0][0] * c0 + ii[0][1] * c1 + ii[0][2] * c2
                    u1 = ii[1][0] * c0 + ii[1][1] * c1 + ii[1][2] * c2
                    u2 = ii[2][0] * c0 + ii[2][1] * c1 + ii[2][2] * c2
                    k_t = inv_mass[ia] + (
                        dx * (u1 * raz - u2 * ray)
                        + dy * (u2 * rax - u0 * raz)
                        + dz * (u0 * ray - u1 * rax)
                    )
                    if ib is not None:
                        rbx, rby, rbz = c.rb
                        c0 = rby * dz - rbz * dy
                        c1 = rbz * dx - rbx * dz
                        c2 = rbx * dy - rby * dx
                        ii = c._inv_i_b
                        u0 = ii[0][0] * c0 + ii[0][1] * c1 + ii[0][2] * c2
                        u1 = ii[1][0] * c0 + ii[1][1] * c1 + ii[1][2] * c2
                        u2 = ii[2][0] * c0 + ii[2][1] * c1 + ii[2][2] * c2
                        k_t += inv_mass[ib] + (
                            dx * (u1 * rbz - u2 * rby)
                            + dy * (u2 * rbx - u0 * rbz)
                            + dz * (u0 * rby - u1 * rbx)
                        )
                    dl_t = -vt / k_t
                    ft = c.ft
                    fx, fy, fz = ft[0] + dl_t * dx, ft[1] + dl_t * dy, ft[2] + dl_t * dz
                    fmag2 = fx * fx + fy * fy + fz * fz
                    fmax = c.mu * c.accum_n
                    if fmag2 > fmax * fmax:
                        s = fmax / sqrt(fmag2)
                        fx, fy, fz = fx * s, fy * s, fz * s
                    dfx, dfy, dfz = fx - ft[0], fy - ft[1], fz - ft[2]
                    ft[0], ft[1], ft[2] = fx, fy, fz
                    if dfx != 0.0 or dfy != 0.0 or dfz != 0.0:
                        _apply_impulse(c, dfx, dfy, dfz, vel, omg, inv_mass)


def step_inplace(world: WorldState, dt: float, solver_iters: int = 8) -> StepInfo:
    """Advance by one step, mutating the world; deterministic."""
    if not 0.0 < dt <= 1.0 / 60.0 + 1e-12:
        raise ValueError("dt must be in (0, 1/60]")
    bodies = world.bodies
    awake = [not getattr(b, "sleeping", False) for b in bodies]
    v_before = [b.velocity.copy() for b in bodies]
    energy_before = total_energy(world)
    human_spheres = [h.capsule_spheres(world.time, dt) for h in world.humans]

    # sleeping bodies stay exactly at rest; gravity only reaches awake ones
    vel = [
        [float(b.velocity[0]), float(b.velocity[1]),
         float(b.velocity[2] - world.gravity * dt)] if awake[bi] else [0.0, 0.0, 0.0]
        for bi, b in enumerate(bodies)
    ]
    omg = [[float(b.omega[0]), float(b.omega[1]), float(b.omega[2])] for b in bodies]
    inv_mass = [1.0 / b.mass for b in bodies]
    inv_inertia = [tuple(tuple(float(x) for x in row) for row in b.world_inv_inertia())
                   for b in bodies]

    supports = [[] for _ in bodies]
    contacts, human_touch, human_engaged, piece_world, aabbs, human_near, body_near = (
        _detect_contacts(world, dt, vel, omg, inv_mass, inv_inertia, supports,
                         awake, human_spheres)
    )
    for c in contacts:
        c._inv_i_a = inv_inertia[c.ia]
        c._inv_i_b = inv_inertia[c.ib] if c.ib is not None else None
    _solve_contacts(contacts, vel, omg, inv_mass, inv_inertia, solver_iters)

    in_contact = [False] * len(bodies)
    for c in contacts:
        in_contact[c.ia] = True
        if c.ib is not None:
            in_contact[c.ib] = True

    supported = [
        (not awake[bi])
        or (
            len(supports[bi]) >= 3
            and _com_over_support(
                (float(bodies[bi].position[0]), float(bodies[bi].position[1])),
                supports[bi],
            )
        )
        for bi in range(len(bodies))
    ]
    static_rest = [False] * len(bodies)
    for bi, body in enumerate(bodies):
        if not awake[bi]:
            static_rest[bi] = True
            continue
        body.sleeping = False  # woken bodies must not doze with neighbours near
        v1 = np.array(vel[bi])
        w1 = np.array(omg[bi])
        speed = float(np.linalg.norm(v1))
        if speed > SPEED_CEILING:
            raise BlowUp(body.body_id, speed)
        # static-rest clamp: a body whose COM sits over its support polygon
        # and whose residual speed is solver noise holds its pose exactly,
        # so resting bodies cannot random-walk in potential energy
        if supported[bi] and speed < SNAP_VEL and float(np.linalg.norm(w1)) < SNAP_OMEGA:
            body.velocity = np.zeros(3)
            body.omega = np.zeros(3)
            static_rest[bi] = True
            if not (human_near[bi] or body_near[bi]):
                body.sleeping = True
                body._sleep_world = (piece_world[bi], aabbs[bi])
            continue
        # free flight integrates trapezoidally (exact for constant gravity);
        # contact steps advance with the solved velocity, which biases the
        # discrete pivot exchange to the dissipative side
        if in_contact[bi]:
            body.position += v1 * dt
        else:
            body.position += 0.5 * (v_before[bi] + v1) * dt
        body.velocity = v1
        wnorm = float(np.linalg.norm(w1))
        if wnorm > 1e-12:
            dq = quat_from_axis_angle(w1, wnorm * dt)
            body.quat = quat_mul(dq, body.quat)
            body.quat /= np.linalg.norm(body.quat)
        body.omega = w1

    for bi, body in enumerate(bodies):
        if awake[bi] and getattr(body, "sleeping", False) and not static_rest[bi]:
            body.sleeping = False

    # energy projection: the discrete pivot/contact update can pump a small
    # fraction of the PE/KE exchange; rescale velocities so a step without
    # external (human) work never gains total energy
    if not human_engaged:
        energy_after = total_energy(world)
        excess = energy_after - energy_before
        if excess > 0.0:
            ke = kinetic_energy(world)
            scale = sqrt(max(ke - excess, 0.0) / ke) if ke > 0 else 0.0
            for body in bodies:
                body.velocity *= scale
                body.omega *= scale

    world.time += dt
    return StepInfo(
        human_contact=human_touch,
        human_engaged=human_engaged,
        n_contacts=len(contacts),
        supported=supported,
        static_rest=static_rest,
    )


def step(world: WorldState, dt: float, solver_iters: int = 8) -> WorldState:
    """Pure variant: returns the advanced copy, input untouched."""
    out = world.copy()
    step_inplace(out, dt, solver_iters)
    return out


def kinetic_energy(world: WorldState) -> float:
    total = 0.0
    for b in world.bodies:
        rot = b.rotation()
        i_world = rot @ b.inertia_body @ rot.T
        total += 0.5 * b.mass * float(b.velocity @ b.velocity)
        total += 0.5 * float(b.omega @ i_world @ b.omega)
    return total


def potential_energy(world: WorldState) -> float:
    return sum(b.mass * world.gravity * float(b.position[2]) for b in world.bodies)


def total_energy(world: WorldState) -> float:
    return kinetic_energy(world) + potential_energy(world)


def linear_momentum(world: WorldState) -> np.ndarray:
    return sum((b.mass * b.velocity for b in world.bodies), np.zeros(3))


@dataclass
class SettleParams:
    dt: float = 1.0 / 240.0
    max_time: float = 10.0
    rest_speed: float = 0.01   # m/s
    rest_spin: float = 0.05    # rad/s
    dwell: float = 0.5         # s below thresholds before declaring rest
    solver_iters: int = 8
    record_energy: bool = False
    record_trajectory: bool = False


@dataclass
class SettleOutcome:
    stabilized: bool
    settle_time: float
    final_poses: dict         # body_id -> {"rotation": (3,3), "translation": (3,)}
    displacement: dict        # body_id -> (meters, radians)
    contact_trace: list       # per-step human-object contact booleans
    steps: int
    energy_trace: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)  # (t, body_id, x, y, z, qw..qz)


def settle(world: WorldState, params: SettleParams | None = None) -> SettleOutcome:
    """Integrate until every body rests for the dwell window or time runs out."""
    params = params or SettleParams()
    if params.max_time < params.dwell:
        raise ValueError("max_time must cover at least one dwell window")
    sim = world.copy()
    start_com = {b.body_id: b.position.copy() for b in sim.bodies}
    start_quat = {b.body_id: b.quat.copy() for b in sim.bodies}
    motion_end = max((h.duration for h in sim.humans), default=0.0)

    dwell_steps = max(1, int(round(params.dwell / params.dt)))
    rest_run = 0
    contact_trace = []
    energy_trace = []
    trajectory = []
    stabilized = False
    steps = 0

    while sim.time < params.max_time - 1e-12:
        info = step_inplace(sim, params.dt, params.solver_iters)
        steps += 1
        contact_trace.append(info.human_contact)
        if params.record_energy:
            energy_trace.append(total_energy(sim))
        if params.record_trajectory:
            for b in sim.bodies:
                trajectory.append((sim.time, b.body_id, *b.position, *b.quat))
        # a body only counts as resting when it is in verified static
        # equilibrium: slow early tipping must not read as settled
        at_rest = all(
            info.supported[bi]
            and float(np.linalg.norm(b.velocity)) <= params.rest_speed
            and float(np.linalg.norm(b.omega)) <= params.rest_spin
            for bi, b in enumerate(sim.bodies)
        )
        if at_rest and sim.time >= motion_end:
            rest_run += 1
            if rest_run >= dwell_steps:
                stabilized = True
                break
        else:
            rest_run = 0

    from .world import quat_angle  # local import avoids a cycle at module load

    displacement = {}
    final_poses = {}
    for b in sim.bodies:
        lin = float(np.linalg.norm(b.position - start_com[b.body_id]))
        ang = quat_angle(start_quat[b.body_id], b.quat)
        displacement[b.body_id] = (lin, ang)
        rot, t = b.mesh_pose()
        final_poses[b.body_id] = {"rotation": rot, "translation": t}

    return SettleOutcome(
        stabilized=stabilized,
        settle_time=sim.time,
        final_poses=final_poses,
        displacement=displacement,
        contact_trace=contact_trace,
        steps=steps,
        energy_trace=energy_trace,
        trajectory=trajectory,
    )
