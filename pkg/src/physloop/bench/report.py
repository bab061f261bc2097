"""Benchmark orchestration: per-run pipeline, aggregation, CSV and JSON.

Each scenario-repeat row runs optional placement alignment, optional motion
refinement, then a settle-and-classify pass.  Aggregation is a deterministic
fold over rows ordered by (scenario id, repeat); nothing time-based lands in
the report, so identical configs reproduce identical bytes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..errors import PhysloopError
from ..motion import (
    MotionSequence,
    RefineParams,
    RefineScene,
    pa_mpjpe,
    refine_motion,
    w_mpjpe,
)
from ..scene import (
    AlignPlacementOptions,
    PlacementState,
    align_placement,
    sp3d,
    transform_about_pivot,
)
from ..sim import SettleParams, classify_outcome_detail, settle
from .io import check_keys, save_container
from .scenario import (
    DIFFICULTIES,
    Scenario,
    build_world,
    generate_scenario,
    placed_meshes,
    stable_seed,
)

CSV_COLUMNS = [
    "scenario_id", "tier", "repeat", "seed", "outcome", "stabilized",
    "gravity_ok", "final_contact", "sp3d_before", "sp3d_after",
    "wmpjpe_pre", "wmpjpe_post", "pampjpe_pre", "pampjpe_post", "error",
]


@dataclass
class BenchConfig:
    tiers: list = field(default_factory=lambda: list(DIFFICULTIES))
    n_per_tier: int = 4
    repeats: int = 15
    align: bool = True
    refine: bool = True
    refine_mode: str = "surface"
    corruption: str = "hover"
    seed: int = 0
    count_gravity_failures: bool = True  # Type1 stays in the denominator
    settle: SettleParams = field(default_factory=SettleParams)
    rollout: SettleParams = field(default_factory=lambda: SettleParams(
        dt=1.0 / 60.0, max_time=2.2, dwell=0.3, solver_iters=4))
    refine_params: RefineParams = field(default_factory=lambda: RefineParams(
        population=12, iterations=5, sigma=0.05, region_radius=0.15,
        knot_spacing=0.6))
    align_opts: AlignPlacementOptions = field(default_factory=lambda:
        AlignPlacementOptions(max_iters=40, frame_stride=4))

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        check_keys(
            d,
            {"tiers", "n_per_tier", "repeats", "align", "refine", "refine_mode",
             "corruption", "seed", "count_gravity_failures", "settle", "rollout",
             "refine_params", "align_opts"},
            set(), "$",
        )
        cfg = cls()
        for key in ("tiers", "n_per_tier", "repeats", "align", "refine",
                    "refine_mode", "corruption", "seed", "count_gravity_failures"):
            if key in d:
                setattr(cfg, key, d[key])
        if "settle" in d:
            cfg.settle = SettleParams(**d["settle"])
        if "rollout" in d:
            cfg.rollout = SettleParams(**d["rollout"])
        if "refine_params" in d:
            cfg.refine_params = RefineParams(**d["refine_params"])
        if "align_opts" in d:
            cfg.align_opts = AlignPlacementOptions(**d["align_opts"])
        for tier in cfg.tiers:
            if tier not in DIFFICULTIES:
                raise ValueError(f"unknown tier {tier!r}")
        if cfg.n_per_tier < 1 or cfg.repeats < 1:
            raise ValueError("n_per_tier and repeats must be >= 1")
        return cfg

    def to_dict(self) -> dict:
        return {
            "tiers": list(self.tiers),
            "n_per_tier": self.n_per_tier,
            "repeats": self.repeats,
            "align": self.align,
            "refine": self.refine,
            "refine_mode": self.refine_mode,
            "corruption": self.corruption,
            "seed": self.seed,
            "count_gravity_failures": self.count_gravity_failures,
            "settle": vars(self.settle).copy(),
            "rollout": vars(self.rollout).copy(),
            "refine_params": vars(self.refine_params).copy(),
            "align_opts": vars(self.align_opts).copy(),
        }


@dataclass
class BenchReport:
    version: str
    config: dict
    stability_hsi: dict       # tier -> percentage of Type4 runs
    stability_gravity: float  # percentage of runs whose gravity pre-check passed
    sp3d_before: float
    sp3d_after: float
    wmpjpe_pre: float
    wmpjpe_post: float
    pampjpe_pre: float
    pampjpe_post: float
    runs: int
    outcome_counts: dict      # tier -> {type: count}

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "kind": "bench_report",
            "version": self.version,
            "config": self.config,
            "stability_hsi": self.stability_hsi,
            "stability_gravity": self.stability_gravity,
            "sp3d_before": self.sp3d_before,
            "sp3d_after": self.sp3d_after,
            "wmpjpe_pre": self.wmpjpe_pre,
            "wmpjpe_post": self.wmpjpe_post,
            "pampjpe_pre": self.pampjpe_pre,
            "pampjpe_post": self.pampjpe_post,
            "runs": self.runs,
            "outcome_counts": self.outcome_counts,
        }


def _apply_placement_to_scenario(scenario: Scenario, placement: PlacementState,
                                 motion: MotionSequence) -> tuple[Scenario, MotionSequence]:
    """Bake an alignment result into object specs and the motion."""
    new_objects = []
    meshes = placed_meshes(scenario)
    for oi, spec in enumerate(scenario.objects):
        pivot = meshes[oi][0].vertices.mean(axis=0)
        yaw = placement.object_yaw[oi]
        off = placement.object_offset[oi]
        rot = np.array([[np.cos(yaw), -np.sin(yaw), 0],
                        [np.sin(yaw), np.cos(yaw), 0], [0, 0, 1.0]])
        new_spec = ObjectSpecView(spec, yaw_extra=yaw, pivot=pivot, offset=off, rot=rot)
        new_objects.append(new_spec.bake())
    pivot_h = motion.frames[0].mean(axis=0)
    moved = motion.copy()
    moved.frames = transform_about_pivot(
        moved.frames, placement.human_yaw, placement.human_offset, pivot_h
    )
    moved.root = transform_about_pivot(
        moved.root, placement.human_yaw, placement.human_offset, pivot_h
    )
    out = Scenario(
        scenario_id=scenario.scenario_id,
        difficulty=scenario.difficulty,
        seed=scenario.seed,
        objects=new_objects,
        motion=moved,
        contacts=scenario.contacts,
        reference_motion=scenario.reference_motion,
    )
    return out, moved


class ObjectSpecView:
    """Composes an extra yaw-about-pivot + offset onto an object spec."""

    def __init__(self, spec, yaw_extra, pivot, offset, rot):
        self.spec = spec
        self.yaw_extra = yaw_extra
        self.pivot = pivot
        self.offset = offset
        self.rot = rot

    def bake(self):
        from .scenario import ObjectSpec

        spec = self.spec
        # new transform: R_extra (R_old v + t_old - pivot) + pivot + offset
        new_yaw = spec.yaw + self.yaw_extra
        new_pos = self.rot @ (spec.position - self.pivot) + self.pivot + self.offset
        return ObjectSpec(
            object_id=spec.object_id,
            shape_params=spec.shape_params,
            family=spec.family,
            mesh_path=spec.mesh_path,
            yaw=new_yaw,
            position=new_pos,
            friction=spec.friction,
            restitution=spec.restitution,
            mass=spec.mass,
        )


def run_one(scenario: Scenario, repeat: int, config: BenchConfig) -> dict:
    """One pipeline pass; failures downgrade to a Type2 row, never abort."""
    from ..geometry import Sdf

    seed = stable_seed(scenario.scenario_id, repeat)
    row = {c: "" for c in CSV_COLUMNS}
    row.update(scenario_id=scenario.scenario_id, tier=scenario.difficulty,
               repeat=repeat, seed=seed)
    try:
        meshes = placed_meshes(scenario)
        body = scenario.body_model()
        sdfs = [Sdf(m) for m, _ in meshes]
        sp_before = sp3d(body, [m for m, _ in meshes], sdfs)
        row["sp3d_before"] = sp_before

        motion = scenario.motion
        working = scenario
        sp_after = sp_before
        if config.align:
            result = align_placement(body, [m for m, _ in meshes],
                                     opts=config.align_opts)
            working, motion = _apply_placement_to_scenario(
                scenario, result.state, scenario.motion
            )
            aligned_meshes = placed_meshes(working)
            sp_after = sp3d(working.body_model(motion),
                            [m for m, _ in aligned_meshes],
                            [Sdf(m) for m, _ in aligned_meshes])
        row["sp3d_after"] = sp_after

        if config.refine:
            refine_scene = RefineScene(
                objects=[(m, p, None) for m, p in placed_meshes(working)],
                capsules=_capsules(),
                target_index=working.object_index(
                    working.primary_contact().object_id),
                surface_seed=seed,
            )
            refined = refine_motion(
                motion, refine_scene, config.rollout, config.refine_params,
                seed=seed, mode=config.refine_mode,
            )
            motion = refined.motion

        world = build_world(working, motion, placement_jitter_seed=seed)
        outcome = settle(world, config.settle)
        detail = classify_outcome_detail(world, outcome, config.settle)
        row["outcome"] = detail.outcome_type.value
        row["stabilized"] = int(outcome.stabilized)
        row["gravity_ok"] = int(all(detail.gravity_ok.values()))
        row["final_contact"] = int(detail.final_window_contact)

        ref = scenario.reference_motion or scenario.motion
        row["wmpjpe_pre"] = w_mpjpe(scenario.motion, ref)
        row["wmpjpe_post"] = w_mpjpe(motion, ref)
        row["pampjpe_pre"] = pa_mpjpe(scenario.motion, ref)
        row["pampjpe_post"] = pa_mpjpe(motion, ref)
        row["error"] = ""
    except (PhysloopError, ValueError) as exc:
        row["outcome"] = 2
        row["stabilized"] = 0
        row["gravity_ok"] = ""
        row["final_contact"] = 0
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _capsules():
    from .scenario import CAPSULES

    return list(CAPSULES)


def aggregate(rows: list, config: BenchConfig) -> BenchReport:
    """Deterministic fold over rows ordered by (scenario id, repeat)."""
    rows = sorted(rows, key=lambda r: (r["scenario_id"], r["repeat"]))
    tiers = {}
    counts = {}
    for tier in config.tiers:
        tier_rows = [r for r in rows if r["tier"] == tier]
        if config.count_gravity_failures:
            pool = tier_rows
        else:
            pool = [r for r in tier_rows if r["outcome"] != 1]
        n_type4 = sum(1 for r in pool if r["outcome"] == 4)
        tiers[tier] = 100.0 * n_type4 / len(pool) if pool else 0.0
        counts[tier] = {
            str(k): sum(1 for r in tier_rows if r["outcome"] == k) for k in (1, 2, 3, 4)
        }

    def mean_of(key):
        vals = [r[key] for r in rows if r[key] != ""]
        return float(np.mean(vals)) if vals else 0.0

    gravity_vals = [r["gravity_ok"] for r in rows if r["gravity_ok"] != ""]
    return BenchReport(
        version=__version__,
        config=config.to_dict(),
        stability_hsi=tiers,
        stability_gravity=100.0 * float(np.mean(gravity_vals)) if gravity_vals else 0.0,
        sp3d_before=mean_of("sp3d_before"),
        sp3d_after=mean_of("sp3d_after"),
        wmpjpe_pre=mean_of("wmpjpe_pre"),
        wmpjpe_post=mean_of("wmpjpe_post"),
        pampjpe_pre=mean_of("pampjpe_pre"),
        pampjpe_post=mean_of("pampjpe_post"),
        runs=len(rows),
        outcome_counts=counts,
    )


def run_benchmark(config: BenchConfig, out_dir=None,
                  scenarios: list | None = None) -> tuple[BenchReport, list]:
    """Full loop; optionally persists report.json and runs.csv."""
    if scenarios is None:
        scenarios = []
        for tier in config.tiers:
            for i in range(config.n_per_tier):
                scenarios.append(
                    generate_scenario(tier, seed=stable_seed(config.seed, tier, i),
                                      corruption=config.corruption)
                )
    rows = []
    for scenario in scenarios:
        for repeat in range(config.repeats):
            rows.append(run_one(scenario, repeat, config))
    report = aggregate(rows, config)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_container(report.to_dict(), out_dir / "report.json")
        write_rows_csv(rows, out_dir / "runs.csv")
    return report, rows


def write_rows_csv(rows: list, path) -> None:
    rows = sorted(rows, key=lambda r: (r["scenario_id"], r["repeat"]))
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row[k]) for k in CSV_COLUMNS})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def read_rows_csv(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            parsed["repeat"] = int(row["repeat"])
            parsed["seed"] = int(row["seed"])
            parsed["outcome"] = int(row["outcome"]) if row["outcome"] else ""
            for key in ("stabilized", "gravity_ok", "final_contact"):
                parsed[key] = int(row[key]) if row[key] != "" else ""
            for key in ("sp3d_before", "sp3d_after", "wmpjpe_pre", "wmpjpe_post",
                        "pampjpe_pre", "pampjpe_post"):
                parsed[key] = float(row[key]) if row[key] != "" else ""
            out.append(parsed)
    return out
