from .mesh import (
    Mesh,
    WatertightReport,
    box_mesh,
    center_of_mass,
    icosphere,
    inertia_tensor,
    is_watertight,
    load_obj,
    save_obj,
    second_moment_matrix,
    volume,
)
from .sampling import SurfaceSamples, sample_surface
from .sdf import Sdf, signed_distance, unsigned_distance, winding_number

__all__ = [
    "Mesh",
    "WatertightReport",
    "Sdf",
    "SurfaceSamples",
    "box_mesh",
    "center_of_mass",
    "icosphere",
    "inertia_tensor",
    "is_watertight",
    "load_obj",
    "save_obj",
    "sample_surface",
    "second_moment_matrix",
    "signed_distance",
    "unsigned_distance",
    "volume",
    "winding_number",
]
