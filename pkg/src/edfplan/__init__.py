"""3D voxel path planning over Euclidean distance fields.

Occupancy grids and scenario generation (`voxmap`), exact distance fields and
clearance-weighted segment costs with analytic bounds (`edf`), baseline and
gradient-pruned any-angle planners (`search`), benchmark metrics (`metrics`),
and independent verification oracles (`verify`).
"""

from .voxmap import (
    GridCoord,
    WorldPoint,
    OccupancyGrid,
    Scenario,
    world_to_grid,
    gen_scenario,
    load_pointcloud_xyz,
    sample_start_goal,
    save_vxm,
    load_vxm,
)
from .edf import (
    EdfGrid,
    SegmentCost,
    compute_edf,
    edf_at,
    directional_derivative,
    segment_O,
    segment_O_quadrature,
    relative_error_bound,
    save_edf,
    load_edf,
)
from .search import (
    Full26,
    Fixed,
    Adaptive,
    PlannerConfig,
    PathResult,
    LosResult,
    NoPathError,
    parse_neighbour_policy,
    line_of_sight,
    edge_cost,
    heuristic,
    choose_neighbours,
    plan_astar,
    plan_lt_full,
    plan_fs,
    reconstruct_path,
)
from .metrics import (
    PathMetrics,
    MetricReport,
    AlgorithmSpec,
    path_length,
    mean_angle,
    mean_clearance,
    compute_path_metrics,
    run_benchmark,
)

__version__ = "0.1.0"
