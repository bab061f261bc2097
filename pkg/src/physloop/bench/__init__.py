from .io import canonical_dumps, load_container, save_container
from .report import (
    BenchConfig,
    BenchReport,
    aggregate,
    read_rows_csv,
    run_benchmark,
    run_one,
    write_rows_csv,
)
from .scenario import (
    CAPSULES,
    DIFFICULTIES,
    KEYPOINT_NAMES,
    PARTS,
    ContactPhase,
    ObjectSpec,
    Scenario,
    build_world,
    generate_scenario,
    motion_from_dict,
    motion_to_dict,
    placed_meshes,
    scenario_from_dict,
    scenario_to_dict,
    sit_motion,
    stable_seed,
)

__all__ = [
    "BenchConfig",
    "BenchReport",
    "CAPSULES",
    "ContactPhase",
    "DIFFICULTIES",
    "KEYPOINT_NAMES",
    "ObjectSpec",
    "PARTS",
    "Scenario",
    "aggregate",
    "build_world",
    "canonical_dumps",
    "generate_scenario",
    "load_container",
    "motion_from_dict",
    "motion_to_dict",
    "placed_meshes",
    "read_rows_csv",
    "run_benchmark",
    "run_one",
    "save_container",
    "scenario_from_dict",
    "scenario_to_dict",
    "sit_motion",
    "stable_seed",
    "write_rows_csv",
]
