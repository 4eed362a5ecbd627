"""Fast Harmonic Greedy Triplets tree reconstruction with a Jukes-Cantor simulator."""

from .distmat import (
    INFINITE,
    DistanceMatrix,
    center_leg,
    center_tail,
    closeness_to_distance,
    distance_matrix_from_sequences,
    estimate_closeness,
    hoeffding_pair_tail,
    is_positive,
    triplet_closeness,
)
from .evolve import (
    EvoModel,
    SequenceSet,
    TreeShape,
    evolve_sequences,
    exact_closeness,
    exact_distance_matrix,
    gen_tree,
    simulate_site_patterns,
)
from .hgt import (
    HgtFailure,
    HgtParams,
    ReconTree,
    default_delta_min,
    fast_hgt,
    sample_length,
    sample_length_terms,
    split_edge,
    thresholds,
    update_S,
)
from .treecore import (
    RootedEvoTree,
    WeightedTopology,
    bipartitions,
    g_depth,
    max_length_error,
    parse_newick,
    rf_distance,
    serialize_newick,
    suppress_root,
    topology_matches,
)

__version__ = "0.1.0"
