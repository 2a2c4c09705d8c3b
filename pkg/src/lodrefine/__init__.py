"""lodrefine: batch refinement of semantic building models to LoD3.

Detects facade openings by ray-casting MLS point clouds against
LoD1/LoD2 building models, fuses geometric and semantic evidence on
per-wall probability maps, and embeds the reconstructed windows, doors,
underpasses, and facade installations back into the model with CityGML
semantics.
"""

from .cloud import (
    FACADE_CLASSES,
    FacadeClass,
    LabeledPointCloud,
    UncertaintyParams,
    load_point_cloud,
    parse_point_cloud,
)
from .errors import LodRefineError
from .model import BuildingModel, load_model, parse_model, serialize_model, validate_model
from .visibility import (
    build_grid,
    cast_all,
    classify_conflicts,
    kernel_backend,
    positional_probability,
    traverse_ray,
    voxel_state,
)

__version__ = "0.1.0"

__all__ = [
    "FACADE_CLASSES",
    "FacadeClass",
    "LabeledPointCloud",
    "UncertaintyParams",
    "LodRefineError",
    "BuildingModel",
    "load_point_cloud",
    "parse_point_cloud",
    "load_model",
    "parse_model",
    "serialize_model",
    "validate_model",
    "build_grid",
    "cast_all",
    "classify_conflicts",
    "kernel_backend",
    "positional_probability",
    "traverse_ray",
    "voxel_state",
    "__version__",
]
