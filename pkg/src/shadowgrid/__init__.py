"""Shadow-aware voxel scan matching for Lidar odometry, with a simulation harness."""

from .geometry import (
    GimbalLockError,
    RigidTransform,
    apply_transform,
    cartesian_from_spherical,
    compose,
    euler_from_rotation,
    invert,
    relative_transform,
    rotation_from_euler,
    spherical_from_cartesian,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    InsufficientDataError,
    SummaryTable,
    TrialRecord,
    default_grid,
    desk_config,
    full_scale_config,
    load_config,
    report,
    run_experiment,
    sensor_fov,
    simulate_pair,
    summarize,
)
from .scan_match import (
    MatchConfig,
    MatchError,
    SolutionReport,
    cartesian_model,
    match,
    predicted_sigma,
    remove_ground_plane,
    spherical_model,
)
from .shadow_model import ShadowScenario, apparent_mean_shift, shadow_edge_shift
from .sim import LidarModel, Scene, build_offroad_scene, build_roadway_scene, raycast_scan
from .spherical_grid import ShadowGrid, WedgeGridConfig, adaptive_radial_bounds, build_shadow_filtered_grid

__version__ = "0.1.0"
