"""Group edge-connectivity survivable network design: solver and harness."""

from .graph import (
    CapacityMap,
    CutCertificate,
    DemandPair,
    Instance,
    connected_components,
    max_flow,
    reduce_to_uniform,
    set_pair_edge_connectivity,
)
from .lp import (
    AugmentationLp,
    FractionalSolution,
    InfeasibleInstanceError,
    build_augmentation_lp,
    solve_fractional,
    verify_lp_feasibility,
)
from .embedding import (
    CappedCapacities,
    EmbeddingConfig,
    TreeDistribution,
    TreeEmbedding,
    build_decomposition_tree,
    build_distribution,
    cap_capacities,
    fix_point_beta,
    measure_congestion,
)
from .gkr import RoundingTree, exact_connect_probability, round_gkr
from .rounding import TreeRoundingConfig, expected_cost_audit, mark_probability, tree_rounding
from .driver import AugmentationError, DriverConfig, PartialSolution, SolveResult, solve
from .instance_io import GenerationError, SchemaError, gen_random, load_instance, save_instance

__version__ = "0.1.0"
