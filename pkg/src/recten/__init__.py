"""Recursive hierarchical soft clustering of sparse 3-mode tensors."""

from recten.tensor import (
    SparseTensor3,
    CpModel,
    from_coo,
    frobenius_norm_sq,
    mttkrp,
    gram,
    hadamard_grams,
    reconstruct_value,
    objective,
    restrict,
    read_tensor_text,
    write_tensor_text,
)
from recten.solver import (
    SolverOptions,
    RankDeficiencyError,
    CorcondiaReport,
    RankEstimate,
    nncp_als_l1,
    cp_apr,
    kl_divergence,
    corcondia,
    estimate_rank,
    rank_exceeds_one,
)
from recten.hierarchy import (
    Cluster,
    ClusterTree,
    RecTenParams,
    TERMINATION_KINDS,
    extract_clusters,
    cluster_to_tensor,
    perturb,
    too_small,
    recten_run,
)
from recten.synth import (
    PatternSpec,
    GroundTruth,
    gen_flat,
    gen_hier,
    add_noise,
    write_labels,
    read_labels,
)
from recten.metrics import (
    Partition,
    TreeNode,
    LabeledTree,
    majority_label,
    total_purity,
    rand_index,
    tree_edit_distance,
    hard_assign,
    tree_for_ted,
    format_metrics,
)

__version__ = "0.1.0"
