"""Parametric chair-like shapes decoded from a fixed-length vector.

The vector lives in a normalized space (zero mean, unit-ish scale over the
family's data distribution) so the diffusion model sees well-conditioned
coordinates.  Decoding denormalizes, clamps every dimension to physical
bounds, and assembles closed boxes: seat, backrest, and up to four legs whose
presence is gated by the sign of a logit.  The backrest biases the center of
mass rearward, so chairs missing a rear leg tip over while a chair missing
only a front leg still stands: the family has a crisp analytic stability rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ..geometry import Mesh

DIM_MIN = 0.01  # m, decoded dimension floor
DIM_MAX = 3.0   # m, decoded dimension ceiling

# raw layout: [seat_w, seat_d, seat_t, leg_h, leg_w, back_h, back_t, tilt,
#              leg_fl, leg_fr, leg_rl, leg_rr]  (logits: front/rear left/right)
CHAIR_DIM = 12


@dataclass(frozen=True)
class ShapeParam:
    """Normalized shape vector plus its family tag."""

    x0: np.ndarray
    family: str = "chair"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=np.float64))


@dataclass
class ChairFamily:
    name: str = "chair"
    dim: int = CHAIR_DIM
    logit_mean: float = 0.675   # P(leg present) ~ 0.75 at sigma 1
    logit_sigma: float = 1.0
    param_mean: np.ndarray = field(default_factory=lambda: np.array(
        [0.45, 0.45, 0.06, 0.42, 0.055, 0.60, 0.08, 0.0,
         0.675, 0.675, 0.675, 0.675]
    ))
    param_scale: np.ndarray = field(default_factory=lambda: np.array(
        [0.05, 0.05, 0.012, 0.05, 0.008, 0.06, 0.012, 0.05,
         1.0, 1.0, 1.0, 1.0]
    ))

    def to_raw(self, x0: np.ndarray) -> np.ndarray:
        return self.param_mean + self.param_scale * np.asarray(x0, dtype=np.float64)

    def to_normalized(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.param_mean) / self.param_scale

    def condition(self, raw: np.ndarray) -> np.ndarray:
        """(family id, target seat height, occlusion flag) descriptor."""
        seat_height = raw[3] + raw[2]
        return np.array([0.0, seat_height, 0.0])

    def sample_data(self, rng: np.random.Generator, n: int):
        """Draws from the pre-training data distribution: (x0_norm, cond)."""
        raw = np.empty((n, self.dim))
        raw[:, :7] = self.param_mean[:7] + self.param_scale[:7] * rng.normal(size=(n, 7))
        raw[:, 7] = 0.05 * rng.normal(size=n)
        raw[:, 8:] = self.logit_mean + self.logit_sigma * rng.normal(size=(n, 4))
        x0 = np.array([self.to_normalized(r) for r in raw])
        cond = np.array([self.condition(r) for r in raw])
        return x0, cond

    def decode(self, x0: np.ndarray) -> tuple[Mesh, list]:
        """Deterministic watertight mesh and its convex collision pieces."""
        raw = self.to_raw(x0)
        seat_w = float(np.clip(raw[0], 0.2, 1.0))
        seat_d = float(np.clip(raw[1], 0.2, 1.0))
        seat_t = float(np.clip(raw[2], 0.02, 0.15))
        leg_h = float(np.clip(raw[3], 0.1, 1.0))
        leg_w = float(np.clip(raw[4], 0.02, 0.12))
        back_h = float(np.clip(raw[5], 0.1, 1.0))
        back_t = float(np.clip(raw[6], DIM_MIN, 0.15))
        tilt = float(np.clip(raw[7], -0.15, 0.15))
        logits = raw[8:12]

        boxes = []
        inset = leg_w / 2 + 0.01
        # legs: (front = -y, rear = +y), order fl, fr, rl, rr
        corners = [(-1, -1), (+1, -1), (-1, +1), (+1, +1)]
        for (sx, sy), logit in zip(corners, logits):
            if logit < 0:
                continue
            cx = sx * (seat_w / 2 - inset)
            cy = sy * (seat_d / 2 - inset)
            boxes.append(_box_verts((leg_w, leg_w, leg_h), (cx, cy, leg_h / 2)))

        ct, st = np.cos(tilt), np.sin(tilt)
        rot_x = np.array([[1, 0, 0], [0, ct, -st], [0, st, ct]])
        seat_center = np.array([0.0, 0.0, leg_h + seat_t / 2])
        seat = _box_verts((seat_w, seat_d, seat_t), (0, 0, 0)) @ rot_x.T + seat_center
        boxes.append(seat)

        back_center = np.array(
            [0.0, seat_d / 2 - back_t / 2, leg_h + seat_t + back_h / 2]
        )
        boxes.append(_box_verts((seat_w, back_t, back_h), (0, 0, 0)) + back_center)

        verts = np.vstack(boxes)
        faces = np.vstack([_BOX_FACES + 8 * i for i in range(len(boxes))])
        return Mesh(verts, faces, name=self.name), [b.copy() for b in boxes]

    def design_stability_rate(self) -> float:
        """Analytic gravity-stability rate of the data distribution.

        The rear-heavy build stands iff all four legs are present or exactly
        one front leg is missing.
        """
        p = float(norm.cdf(self.logit_mean / self.logit_sigma))
        return p**4 + 2.0 * p**3 * (1.0 - p)


_BOX_SIGNS = np.array(
    [
        [-1, -1, -1], [+1, -1, -1], [+1, +1, -1], [-1, +1, -1],
        [-1, -1, +1], [+1, -1, +1], [+1, +1, +1], [-1, +1, +1],
    ],
    dtype=np.float64,
)

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],
        [4, 5, 6], [4, 6, 7],
        [0, 1, 5], [0, 5, 4],
        [2, 3, 7], [2, 7, 6],
        [1, 2, 6], [1, 6, 5],
        [3, 0, 4], [3, 4, 7],
    ],
    dtype=np.int64,
)


def _box_verts(size, center):
    return _BOX_SIGNS * (np.asarray(size) / 2.0) + np.asarray(center)


FAMILIES = {"chair": ChairFamily()}


def get_family(name: str) -> ChairFamily:
    return FAMILIES[name]


def decode_shape(shape: ShapeParam) -> Mesh:
    mesh, _ = get_family(shape.family).decode(shape.x0)
    return mesh


def decode_shape_pieces(shape: ShapeParam) -> tuple[Mesh, list]:
    return get_family(shape.family).decode(shape.x0)
