"""3D time-lapse reconstruction from posed, timestamped photo sequences.

Given registered photos spread over months or years and a declared virtual
camera path, the pipeline solves temporally consistent depthmaps for every
output view, chains 3D tracks through the sequence, regularizes each
track's color profile over time, and reconstructs hole-free output frames
from the projected profiles.
"""

__version__ = "0.1.0"

from .cost_volume import (
    CostVolume,
    PlaneSet,
    SplineCost,
    SupportSet,
    aggregate,
    compute_depth_planes,
    eval_cost,
    fit_spline,
    pairwise_cost,
    support_set,
)
from .depth_solver import (
    DepthSolverParams,
    HuberLoss,
    energy,
    energy_and_gradient,
    huber,
    init_depthmap,
    optimize_joint,
    temporal_weight,
)
from .errors import TimelapseError
from .geometry import (
    Camera,
    Depthmap,
    OrbitPath,
    PosedImage,
    PushPath,
    ReprojectedDepthmap,
    SparsePoints,
    StaticPath,
    ViewSequence,
    backproject,
    generate_camera_path,
    project,
    reproject_depthmap,
    select_images,
)
from .kernels import BACKEND as kernel_backend
from .pipeline import PipelineConfig, metrics, psnr, run_pipeline
from .profiles import (
    ColorProfile,
    Observation,
    ObservationSampler,
    ProfileParams,
    ViewAssignment,
    assign_support,
    sample_observations,
    solve_profile,
)
from .reconstruct import (
    DensityReport,
    Frame,
    ProjectedSample,
    density_audit,
    reconstruct_frame,
    splat_baseline,
)
from .synthetic import SyntheticScene, SyntheticSceneSpec, generate_synthetic_scene
from .tracks import Track, TrackGenParams, chain_track, generate_tracks
