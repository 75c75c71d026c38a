"""Indoor camera localization from fiducial markers.

Pinhole geometry, PnP with RANSAC, a constant-velocity Kalman filter with
detection-count dependent measurement noise, a marker scene simulator and
the Monte-Carlo experiments built on them.
"""
__version__ = "0.1.0"

from .errors import (ConfigError, ConsensusFailure, DegenerateGeometry, DegenerateRectangle,
                     DegenerateSpeed, InsufficientVisibility, LengthMismatch, MarkerLocError,
                     NoMeasurement, NonPositiveDepth, NumericalFailure)
from .geometry import (CameraIntrinsics, EulerPose, RigidTransform, project_point,
                       project_points, rotation_to_euler, euler_to_rotation)
from .pnp import (Correspondence, Correspondences, PnPConfig, PnPResult, ransac_pnp,
                  solve_pnp)
from .kalman import (FilterState, Measurement, ProcessModel, VarianceModel, init_state,
                     predict, track, update)
from .scene_sim import (DetectionNoiseModel, Frame, Marker, Scene, ceiling_grid,
                        circular_placement, rectangular_trajectory, simulate_frame)

__all__ = [
    "__version__",
    "ConfigError",
    "ConsensusFailure",
    "DegenerateGeometry",
    "DegenerateRectangle",
    "DegenerateSpeed",
    "InsufficientVisibility",
    "LengthMismatch",
    "MarkerLocError",
    "NoMeasurement",
    "NonPositiveDepth",
    "NumericalFailure",
    "CameraIntrinsics",
    "EulerPose",
    "RigidTransform",
    "project_point",
    "project_points",
    "rotation_to_euler",
    "euler_to_rotation",
    "Correspondence",
    "Correspondences",
    "PnPConfig",
    "PnPResult",
    "ransac_pnp",
    "solve_pnp",
    "FilterState",
    "Measurement",
    "ProcessModel",
    "VarianceModel",
    "init_state",
    "predict",
    "track",
    "update",
    "DetectionNoiseModel",
    "Frame",
    "Marker",
    "Scene",
    "ceiling_grid",
    "circular_placement",
    "rectangular_trajectory",
    "simulate_frame",
]
