"""First-passage percolation on Z^d: environments, passage times, geodesics,
competing growth, Busemann approximants and asymptotic shape estimates."""

from .busemann import (
    BusemannSeries,
    LinearFunctional,
    Placement,
    RegionPredicate,
    busemann_series,
    circle_separated,
    cones_disjoint,
    fit_gradient,
    fit_linear_functional,
    linearity_deviation,
    place_coexistence_points,
    ray_toward,
    region_contains,
    verify_placement,
)
from .competition import (
    GrowthTrace,
    Partition,
    coexistence_proxy,
    extract_disjoint_geodesics,
    fpp_voronoi,
    simulate_richardson,
)
from .errors import (
    ConfigError,
    DomainError,
    EnvironmentFileError,
    FPPError,
    InfeasibleGeometry,
    ReplicaAssertionError,
    TieError,
    WitnessError,
)
from .geodesics import EndCountReport, MergePoint, coalescence_merge, disjoint_geodesic_count, tree_end_count
from .lattice import (
    BoxRegion,
    Environment,
    WeightSpec,
    derive_seed,
    edge_weight,
    load_environment,
    make_environment,
    min_incident_weight,
    save_environment,
)
from .metric import (
    GeodesicTree,
    LatticePath,
    PassageMap,
    brute_force_passage_time,
    geodesic,
    geodesic_tree,
    passage_map,
    passage_time,
    path_weight,
)
from .shape import (
    ShapeEstimate,
    TimeConstantEstimate,
    count_sides,
    estimate_shape,
    estimate_time_constant,
    supporting_functional,
)
from .stats import Proportion, Summary, aggregate, wilson_interval

__version__ = "0.1.0"
