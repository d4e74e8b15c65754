"""Folded catadioptric omnistereo rigs: design, projection, panoramas and 3D sensing."""
from .rig import BIG_RIG, SMALL_RIG, CameraIntrinsics, RigError, RigSpec, load_spec
from .projection import project, project_points
from .backprojection import backproject, backproject_points
from .triangulation import triangulate_midpoint, triangulate_naive, propagate_uncertainty
from .analysis import fov_report, size_mass, stereo_roi, spatial_resolution

__version__ = "0.1.0"

__all__ = [
    "BIG_RIG", "SMALL_RIG", "CameraIntrinsics", "RigError", "RigSpec", "load_spec",
    "project", "project_points", "backproject", "backproject_points",
    "triangulate_midpoint", "triangulate_naive", "propagate_uncertainty",
    "fov_report", "size_mass", "stereo_roi", "spatial_resolution",
]
