"""Recursive hierarchical soft clustering of sparse 3-mode tensors.

The driver (:func:`recten_run`) decomposes the input tensor with the
non-negative L1-penalized CP solver, turns each rank-one component into a
:class:`Cluster` (its per-mode positive supports), and recurses: a cluster
that is neither too small relative to its siblings nor rank-one after a
weighted perturbation is re-decomposed into child clusters, building a
:class:`ClusterTree` level by level.

Two termination tests stop the recursion:

1. *too small* — the cluster's cell count is below ``k`` percent of the
   mean cell count of its siblings;
2. *rank one* — the estimated rank of the cluster's perturbed data slice
   is 1: after removing a fraction of its weakest entries, the data the
   cluster covers shows no internal block structure worth splitting.

The tensor handed to the next level is the perturbed restriction of the
root data to the cluster's support grid.  A cluster's own rank-one
reconstruction (:func:`cluster_to_tensor`) is exactly rank one however it
is sliced, so perturbing the reconstruction instead would terminate
essentially every branch at level 1; recursing on the underlying data is
what lets nested structure surface.

Clusters are soft: supports may overlap, and every node keeps the
participation strength of each member index.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from recten.solver import SolverOptions, estimate_rank, nncp_als_l1
from recten.tensor import CpModel, SparseTensor3, from_coo, restrict

__all__ = [
    "Cluster",
    "ClusterTree",
    "RecTenParams",
    "TERMINATION_KINDS",
    "extract_clusters",
    "cluster_to_tensor",
    "perturb",
    "too_small",
    "recten_run",
]

#: Values a cluster's ``termination`` field may take.  "none" marks inner
#: nodes (the cluster was decomposed further); the rest mark leaves by the
#: reason recursion stopped there.
TERMINATION_KINDS = ("none", "too_small", "rank_one", "max_depth")

#: Factor entries at or below this are treated as zero when reading
#: supports off a fitted model (guards accumulated round-off).
_SUPPORT_EPS = 1e-12

#: Consecutive rejected draws tolerated before the sampler in
#: :func:`perturb` rebuilds its cumulative weight table.
_PERTURB_REBUILD_AFTER = 200


@dataclass
class Cluster:
    """One soft cluster: a rank-one component's positive supports.

    Attributes
    ----------
    id : int
        Unique within a tree; assigned in breadth-first discovery order
        (root components first, then children by parent id and component
        index).
    level : int
        Depth in the tree; top-level clusters have level 1.
    parent : int or None
        Id of the parent cluster, or None for top-level clusters.
    supports : tuple of 3 dicts
        Per mode, ``{index: strength}`` for every index with positive
        participation strength in the component.
    dims : tuple of 3 ints
        Shape of the root tensor the supports index into.
    nnz : int
        Cell count of the cluster, i.e. the product of the three support
        sizes (the size of the rank-one box the component spans).
    termination : str
        One of :data:`TERMINATION_KINDS`.
    """

    id: int
    level: int
    parent: int | None
    supports: tuple[dict[int, float], dict[int, float], dict[int, float]]
    dims: tuple[int, int, int]
    nnz: int = field(default=0)
    termination: str = "none"

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("cluster level must be >= 1")
        if len(self.supports) != 3:
            raise ValueError("a cluster needs one support per mode")
        for mode, (sup, dim) in enumerate(zip(self.supports, self.dims)):
            if not sup:
                raise ValueError(f"mode-{mode} support is empty")
            for idx, strength in sup.items():
                if not 0 <= idx < dim:
                    raise ValueError(f"mode-{mode} index {idx} out of range")
                if strength <= 0:
                    raise ValueError("support strengths must be positive")
        expected = 1
        for sup in self.supports:
            expected *= len(sup)
        if self.nnz == 0:
            self.nnz = expected
        elif self.nnz != expected:
            raise ValueError(
                f"nnz {self.nnz} != product of support sizes {expected}"
            )
        if self.termination not in TERMINATION_KINDS:
            raise ValueError(f"unknown termination {self.termination!r}")


@dataclass
class ClusterTree:
    """All clusters found by one run, linked parent-to-children.

    ``children[pid]`` lists child cluster ids in component order of the
    decomposition that produced them; ``root_ids`` lists the top-level
    clusters in component order of the root decomposition.
    """

    dims: tuple[int, int, int]
    nodes: dict[int, Cluster] = field(default_factory=dict)
    children: dict[int, list[int]] = field(default_factory=dict)
    root_ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def roots(self) -> list[Cluster]:
        return [self.nodes[i] for i in self.root_ids]

    def leaves(self) -> list[Cluster]:
        """Clusters with no children, in id order."""
        return [
            c for i, c in sorted(self.nodes.items())
            if not self.children.get(i)
        ]

    def level_counts(self) -> dict[int, int]:
        """Number of clusters per level, keyed by level."""
        counts: dict[int, int] = {}
        for c in self.nodes.values():
            counts[c.level] = counts.get(c.level, 0) + 1
        return counts

    def validate(self):
        """Check structural invariants; raises ValueError on the first hit.

        Verified: parent/child links are consistent and acyclic, child
        level is always parent level + 1, top-level clusters have no
        parent, and exactly the childless clusters carry a termination
        reason.
        """
        seen: set[int] = set()
        stack = [(None, i) for i in reversed(self.root_ids)]
        while stack:
            pid, cid = stack.pop()
            if cid in seen:
                raise ValueError(f"cluster {cid} reached twice (cycle or shared node)")
            seen.add(cid)
            node = self.nodes.get(cid)
            if node is None:
                raise ValueError(f"cluster {cid} is linked but not stored")
            if node.id != cid:
                raise ValueError(f"cluster {cid} stored under wrong key")
            if node.parent != pid:
                raise ValueError(f"cluster {cid} parent field disagrees with links")
            if node.dims != self.dims:
                raise ValueError(f"cluster {cid} dims disagree with tree dims")
            expected_level = 1 if pid is None else self.nodes[pid].level + 1
            if node.level != expected_level:
                raise ValueError(f"cluster {cid} has level {node.level}, expected {expected_level}")
            kids = self.children.get(cid, [])
            if kids and node.termination != "none":
                raise ValueError(f"cluster {cid} is terminated but has children")
            if not kids and node.termination == "none":
                raise ValueError(f"cluster {cid} is childless but unterminated")
            stack.extend((cid, k) for k in reversed(kids))
        if seen != set(self.nodes):
            orphans = sorted(set(self.nodes) - seen)
            raise ValueError(f"clusters unreachable from the roots: {orphans}")


@dataclass(frozen=True)
class RecTenParams:
    """Run parameters for :func:`recten_run`.

    Attributes
    ----------
    epsilon : float
        Perturbation percentage in (0, 100): the share of a cluster's
        cells removed (weakest-biased) before its rank is re-estimated.
    k : float
        Relative size cutoff in (0, 100): a cluster under ``k`` percent
        of its siblings' mean cell count is not recursed into.
    lam : float
        L1 penalty for the decomposition fits.
    r_max : int
        Largest candidate rank offered to rank estimation.
    cc_threshold : float
        Core-consistency acceptance threshold for rank estimation.
    seed : int
        Master seed; every cluster derives its own independent stream
        from ``(seed, cluster id)``.
    max_depth : int
        Hard depth cap; clusters at this level are not recursed into.
    est_sweeps, est_tol : int, float
        Solver budget for rank-estimation fits.
    fit_sweeps, fit_tol : int, float
        Solver budget for the decomposition fits that produce clusters.
    """

    epsilon: float = 6.0
    k: float = 15.0
    lam: float = 0.8
    r_max: int = 10
    cc_threshold: float = 50.0
    seed: int = 0
    max_depth: int = 10
    est_sweeps: int = 300
    est_tol: float = 1e-7
    fit_sweeps: int = 300
    fit_tol: float = 1e-7

    def __post_init__(self):
        if not 0 < self.epsilon < 100:
            raise ValueError("epsilon must be in (0, 100)")
        if not 0 < self.k < 100:
            raise ValueError("k must be in (0, 100)")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if not 0 < self.cc_threshold <= 100:
            raise ValueError("cc_threshold must be in (0, 100]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


def extract_clusters(
    model: CpModel,
    dims: tuple[int, int, int],
    *,
    level: int,
    parent: int | None,
    first_id: int,
) -> list[Cluster]:
    """Read the soft clusters off a fitted CP model.

    One cluster per component, in component order; the supports are the
    strictly positive factor entries (with a small round-off guard).
    Components with an empty support in any mode describe no cells at all
    and are dropped.  Ids are assigned consecutively from ``first_id`` to
    the surviving components.
    """
    clusters = []
    next_id = first_id
    for r in range(model.rank):
        supports = []
        for f in model.factors:
            col = f[:, r]
            hits = np.nonzero(col > _SUPPORT_EPS)[0]
            supports.append({int(i): float(col[i]) for i in hits})
        if any(not s for s in supports):
            continue
        clusters.append(
            Cluster(
                id=next_id,
                level=level,
                parent=parent,
                supports=tuple(supports),
                dims=dims,
            )
        )
        next_id += 1
    return clusters


def _support_arrays(cluster: Cluster):
    """Sorted index array and matching strength array per mode."""
    out = []
    for sup in cluster.supports:
        idx = np.array(sorted(sup), dtype=np.int64)
        out.append((idx, np.array([sup[int(i)] for i in idx])))
    return out


def cluster_to_tensor(cluster: Cluster) -> SparseTensor3:
    """The rank-one tensor a cluster describes, in root coordinates.

    Contains exactly the cross product of the three supports; the value
    at ``(i, j, k)`` is the product of the three participation strengths.
    The result has ``cluster.nnz`` entries, so callers should mind
    ``nnz`` before materializing very large clusters.
    """
    (ia, va), (jb, vb), (kc, vc) = _support_arrays(cluster)
    gi, gj, gk = np.meshgrid(
        np.arange(ia.size), np.arange(jb.size), np.arange(kc.size),
        indexing="ij",
    )
    gi, gj, gk = gi.ravel(), gj.ravel(), gk.ravel()
    coords = np.column_stack([ia[gi], jb[gj], kc[gk]])
    vals = va[gi] * vb[gj] * vc[gk]
    return from_coo(cluster.dims, coords, vals)


def perturb(t: SparseTensor3, epsilon: float, rng: np.random.Generator) -> SparseTensor3:
    """Remove ``ceil(epsilon% of nnz)`` entries, weakest-biased.

    Entries are drawn sequentially without replacement with probability
    proportional to ``1/value`` (renormalized over the remaining entries
    after each draw), so small values are removed preferentially but any
    entry can survive.  At most ``nnz - 1`` entries are removed: the
    result is never empty (Claim 1).  A tensor with a single entry is
    returned unchanged.
    """
    if not 0 < epsilon < 100:
        raise ValueError("epsilon must be in (0, 100)")
    if t.nnz == 0:
        raise ValueError("cannot perturb an empty tensor")
    m = min(math.ceil(epsilon * t.nnz / 100.0), t.nnz - 1)
    if m <= 0:
        return t
    # Sequential renormalized draws, implemented by rejection: a draw
    # against the original cumulative weights conditioned on hitting a
    # not-yet-removed entry is exactly a draw from the renormalized
    # distribution.  The table is rebuilt if dead entries are hit too
    # often (possible when removed entries carried most of the weight).
    weights = 1.0 / t.vals
    cum = np.cumsum(weights)
    alive = np.ones(t.nnz, dtype=bool)
    removed = 0
    misses = 0
    while removed < m:
        u = rng.random() * cum[-1]
        pos = int(np.searchsorted(cum, u, side="right"))
        pos = min(pos, t.nnz - 1)
        if alive[pos]:
            alive[pos] = False
            removed += 1
            misses = 0
        else:
            misses += 1
            if misses > _PERTURB_REBUILD_AFTER:
                cum = np.cumsum(np.where(alive, weights, 0.0))
                misses = 0
    coords = np.column_stack([t.i[alive], t.j[alive], t.k[alive]])
    return from_coo(t.dims, coords, t.vals[alive])


def too_small(candidate: Cluster, siblings: list[Cluster], k: float) -> bool:
    """Whether a cluster is under ``k`` percent of its siblings' mean size.

    ``siblings`` must not contain the candidate itself.  A cluster with
    no siblings is never too small (there is no scale to compare to).
    """
    if not 0 < k < 100:
        raise ValueError("k must be in (0, 100)")
    if not siblings:
        return False
    mean = sum(s.nnz for s in siblings) / len(siblings)
    return candidate.nnz * 100.0 / mean < k


def _derived_seed(master: int, cluster_id: int, tag: int) -> int:
    """A solver seed unique to (master seed, cluster, purpose)."""
    ss = np.random.SeedSequence([master & 0xFFFFFFFF, cluster_id, tag])
    return int(ss.generate_state(1, np.uint64)[0])


# Purpose tags for _derived_seed.
_TAG_EST, _TAG_FIT = 1, 2

#: Cluster id stand-in for the root decomposition's derived seeds.
_ROOT_ID = 0


def _est_opts(params: RecTenParams, seed: int) -> SolverOptions:
    return SolverOptions(
        max_sweeps=params.est_sweeps, rel_tol=params.est_tol, lam=0.0, seed=seed
    )


def _fit(
    t: SparseTensor3,
    rank: int,
    params: RecTenParams,
    seed: int,
    warm: CpModel | None = None,
) -> CpModel:
    """Decomposition fit: unpenalized warm-up, then the L1 pass.

    The unpenalized solution is the natural initializer for the
    penalized pass: a cold penalized fit at realistic scales collapses
    most components before they can latch onto structure (shrinkage
    zeroes them for good), while warm-starting preserves every component
    that explains data and still lets the penalty zero out the
    insignificant factor entries.

    The unpenalized pass itself starts from ``warm`` when given — the
    model that earned the rank its qualifying diagnostic score.  A cold
    fit at the same rank can land in a poor local optimum (for data with
    disjoint blocks, every component may chase the heaviest block and
    leave the rest unexplained); polishing the model that justified the
    rank cannot lose structure that model already separates.
    """
    opts = SolverOptions(
        max_sweeps=params.fit_sweeps, rel_tol=params.fit_tol, lam=0.0, seed=seed
    )
    init = None
    if warm is not None and warm.rank == rank:
        init = warm.factors
    model = nncp_als_l1(t, rank, opts, init=init)
    if params.lam > 0:
        model = nncp_als_l1(
            t, rank,
            SolverOptions(
                max_sweeps=params.fit_sweeps, rel_tol=params.fit_tol,
                lam=params.lam, seed=seed,
            ),
            init=model.factors,
        )
    return model


def _compact_restriction(t: SparseTensor3, cluster: Cluster):
    """Entries of ``t`` inside the cluster's support box, reindexed densely.

    Returns the compacted tensor plus the per-mode index arrays mapping
    local indices back to root indices.
    """
    axes = [np.array(sorted(sup), dtype=np.int64) for sup in cluster.supports]
    sub = restrict(t, axes[0], axes[1], axes[2])
    li = np.searchsorted(axes[0], sub.i)
    lj = np.searchsorted(axes[1], sub.j)
    lk = np.searchsorted(axes[2], sub.k)
    dims = (axes[0].size, axes[1].size, axes[2].size)
    coords = np.column_stack([li, lj, lk]) if sub.nnz else np.empty((0, 3), dtype=np.int64)
    return from_coo(dims, coords, sub.vals), axes


def _expand(t: SparseTensor3, cluster: Cluster, params: RecTenParams, rng):
    """Try to decompose a cluster; returns child supports or None.

    The cluster's slice of the root data is compacted, perturbed, and
    re-estimated; estimated rank 1 (or an empty slice) means the cluster
    is a leaf.  Otherwise the perturbed slice is decomposed at the
    estimated rank and the child supports are mapped back to root
    indices.
    """
    sub, axes = _compact_restriction(t, cluster)
    if sub.nnz == 0:
        return None
    psub = perturb(sub, params.epsilon, rng)
    est = estimate_rank(
        psub, params.r_max, params.cc_threshold,
        _est_opts(params, _derived_seed(params.seed, cluster.id, _TAG_EST)),
        keep_model=True,
    )
    if est.rank <= 1:
        return None
    model = _fit(
        psub, est.rank, params,
        _derived_seed(params.seed, cluster.id, _TAG_FIT),
        warm=est.model,
    )
    children = []
    for r in range(model.rank):
        supports = []
        for mode, f in enumerate(model.factors):
            col = f[:, r]
            hits = np.nonzero(col > _SUPPORT_EPS)[0]
            supports.append({int(axes[mode][i]): float(col[i]) for i in hits})
        if any(not s for s in supports):
            continue
        children.append(tuple(supports))
    # A decomposition that keeps a single component did not actually
    # split the cluster; treat that exactly like an estimated rank of 1.
    if len(children) < 2:
        return None
    return children


def _thread_count() -> int:
    raw = os.environ.get("RECTEN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RECTEN_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def recten_run(t: SparseTensor3, params: RecTenParams = RecTenParams()) -> ClusterTree:
    """Build the full cluster hierarchy of a sparse 3-mode tensor.

    The root tensor is decomposed at its estimated rank; each resulting
    cluster is then either marked terminal (too small next to its
    siblings, at the depth cap, or rank-one under perturbation) or
    re-decomposed from its own slice of the root data, level by level,
    until every branch terminates.

    The run is deterministic for fixed inputs and ``params.seed``
    regardless of ``RECTEN_THREADS``: every cluster derives its own
    random stream from ``(seed, cluster id)``, and results are merged in
    (parent id, component index) order.
    """
    if t.nnz == 0:
        raise ValueError("cannot cluster an empty tensor")
    tree = ClusterTree(dims=t.dims)

    est = estimate_rank(
        t, params.r_max, params.cc_threshold,
        _est_opts(params, _derived_seed(params.seed, _ROOT_ID, _TAG_EST)),
        keep_model=True,
    )
    root_model = _fit(
        t, est.rank, params,
        _derived_seed(params.seed, _ROOT_ID, _TAG_FIT),
        warm=est.model,
    )
    frontier = extract_clusters(
        root_model, t.dims, level=1, parent=None, first_id=1
    )
    next_id = 1 + len(frontier)
    for c in frontier:
        tree.nodes[c.id] = c
        tree.root_ids.append(c.id)

    workers = _thread_count()
    while frontier:
        # Decide each cluster's fate; the expansion work is independent
        # across the frontier, so it may fan out over threads.  Results
        # are merged serially in frontier order, which keeps ids and the
        # tree layout deterministic.
        def decide(cluster: Cluster):
            if cluster.parent is None:
                siblings = [tree.nodes[i] for i in tree.root_ids if i != cluster.id]
            else:
                siblings = [
                    tree.nodes[i]
                    for i in tree.children[cluster.parent]
                    if i != cluster.id
                ]
            if too_small(cluster, siblings, params.k):
                return "too_small"
            if cluster.level >= params.max_depth:
                return "max_depth"
            rng = np.random.default_rng(
                np.random.SeedSequence([params.seed & 0xFFFFFFFF, cluster.id])
            )
            expanded = _expand(t, cluster, params, rng)
            if expanded is None:
                return "rank_one"
            return expanded

        if workers > 1 and len(frontier) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(decide, frontier))
        else:
            outcomes = [decide(c) for c in frontier]

        next_frontier = []
        for cluster, outcome in zip(frontier, outcomes):
            if isinstance(outcome, str):
                cluster.termination = outcome
                continue
            kids = []
            for supports in outcome:
                child = Cluster(
                    id=next_id,
                    level=cluster.level + 1,
                    parent=cluster.id,
                    supports=supports,
                    dims=t.dims,
                )
                next_id += 1
                tree.nodes[child.id] = child
                kids.append(child.id)
                next_frontier.append(child)
            tree.children[cluster.id] = kids
        frontier = next_frontier

    tree.validate()
    return tree
