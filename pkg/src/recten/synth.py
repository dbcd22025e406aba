"""Ground-truthed synthetic tensors: the 21-pattern flat benchmark, the
Kronecker-hierarchy benchmark, and additive noise injection.

The flat generator plants 21 point-cloud patterns (3 per axis-sharing
type) in a 300x300x30 tensor.  A type is a word over {S, D}: the three
patterns of a type occupy identical coordinate ranges on their S
("same") axes and disjoint ranges on their D ("different") axes, which
is arranged by giving all three the same offset template and moving
their clustroids only along D axes.  Four designated cross-type pairs
are collocated and share a common template core, producing 8 patterns
that pairwise overlap in about 20% of their cells.

The hierarchical generator stacks ten copies of the support of
K3 = K1 (x) K1 (x) K1 (Kronecker products of a 5x5 diagonal-support
matrix), yielding 5 superblock communities of 5 leaf blocks each, then
plants two fresh cells in ten random leaf regions per slice so leaves
carry internal structure.

Both return a :class:`GroundTruth` holding the cell-label map and the
reference tree the tree-edit-distance metric compares against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import LabeledTree, TreeNode, majority_label
from .tensor import SparseTensor3, from_coo

__all__ = [
    "PatternSpec",
    "GroundTruth",
    "gen_flat",
    "gen_hier",
    "add_noise",
    "write_labels",
    "read_labels",
]

#: The seven axis-sharing pattern types, one letter per mode.
PATTERN_TYPES = ("SSD", "SDS", "DSS", "DDD", "DDS", "DSD", "SDD")

#: Global pattern indices (0-based) of the four collocated overlap pairs;
#: members come from the DDD/DDS/DSD/SDD groups only.
OVERLAP_PAIRS = ((9, 12), (10, 15), (11, 18), (13, 16))


@dataclass(frozen=True)
class PatternSpec:
    """One planted pattern: a point cloud around a clustroid.

    Attributes
    ----------
    type : str
        Axis-sharing type, one of :data:`PATTERN_TYPES`.
    clustroid : (int, int, int)
        Center cell the offsets are applied to.
    dispersion : int
        Manhattan radius bounding the offsets.
    concentration : int
        Number of cells in the pattern.
    mu, sigma : float
        Cell-value distribution Gaussian(mu, sigma); mu > 3*sigma keeps
        negative draws rare before the positivity clamp.
    """

    type: str
    clustroid: tuple
    dispersion: int
    concentration: int
    mu: float
    sigma: float

    def __post_init__(self):
        if self.type not in PATTERN_TYPES:
            raise ValueError(f"unknown pattern type {self.type!r}")
        if self.dispersion < 0:
            raise ValueError("dispersion must be >= 0")
        if self.concentration < 1:
            raise ValueError("concentration must be >= 1")
        if not self.mu > 3 * self.sigma:
            raise ValueError("mu must exceed 3*sigma")


@dataclass(frozen=True)
class GroundTruth:
    """Cell labels plus the reference tree for tree-edit comparison."""

    labels: dict
    tree: LabeledTree


#: Value floor applied to all Gaussian draws (keeps the tensor positive).
_VALUE_FLOOR = 0.01


def _clamped_normal(rng, mu, sigma, size):
    return np.maximum(_VALUE_FLOOR, rng.normal(mu, sigma, size=size))


# ---------------------------------------------------------------------------
# Flat generator


def _l1_ball(radius: int, time_cap: int) -> list:
    """All offsets with |da|+|db|+|dc| <= radius and |dc| <= time_cap,
    lexicographically sorted."""
    out = []
    for da in range(-radius, radius + 1):
        for db in range(-radius + abs(da), radius - abs(da) + 1):
            room = radius - abs(da) - abs(db)
            for dc in range(-min(room, time_cap), min(room, time_cap) + 1):
                out.append((da, db, dc))
    return out


def _draw_offsets(rng, pool: list, count: int) -> list:
    """``count`` distinct offsets from ``pool`` (a sorted list)."""
    picks = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in sorted(picks.tolist())]


def _separated_tuple(rng, lo: int, hi: int, k: int, gap: int) -> list:
    """k coordinates in [lo, hi], pairwise at least ``gap`` apart, in
    random assignment order (order-statistics construction)."""
    width = hi - lo + 1 - (k - 1) * (gap - 1)
    if width < k:
        raise ValueError("axis too short for the requested separation")
    ys = sorted(rng.choice(width, size=k, replace=False).tolist())
    xs = [lo + y + i * (gap - 1) for i, y in enumerate(ys)]
    order = rng.permutation(k)
    return [xs[i] for i in order]


def _flat_templates(rng, ball: list, rho: int, core_size: int) -> tuple:
    """Per-type offset templates plus the shared overlap core.

    The DDD/DDS/DSD templates are pairwise disjoint outside the core and
    the SDD template is disjoint from the DDD one, so every collocated
    overlap pair shares exactly the core cells.
    """
    origin = (0, 0, 0)
    remaining = [o for o in ball if o != origin]
    core = [origin] + _draw_offsets(rng, remaining, core_size - 1)

    def draw_extra(avoid: set) -> list:
        pool = [o for o in ball if o not in avoid]
        if len(pool) < rho - core_size:
            raise ValueError(
                "dispersion ball too small for the requested concentration"
            )
        return _draw_offsets(rng, pool, rho - core_size)

    # Each collocated pair must share exactly the core, so a group's
    # extras avoid the extras of every group it is paired with: DDS and
    # DSD pair with DDD and with each other; SDD pairs with DDD only and
    # may therefore reuse DDS/DSD offsets.
    extra = {}
    extra["DDD"] = draw_extra(set(core))
    extra["DDS"] = draw_extra(set(core) | set(extra["DDD"]))
    extra["DSD"] = draw_extra(set(core) | set(extra["DDD"]) | set(extra["DDS"]))
    extra["SDD"] = draw_extra(set(core) | set(extra["DDD"]))

    templates = {}
    for ptype in PATTERN_TYPES:
        if ptype in extra:
            templates[ptype] = core + extra[ptype]
        else:
            pool = [o for o in ball if o != origin]
            if len(pool) < rho - 1:
                raise ValueError(
                    "dispersion ball too small for the requested concentration"
                )
            templates[ptype] = [origin] + _draw_offsets(rng, pool, rho - 1)
    return templates, core


def _propose_clustroids(rng, margins, gaps) -> list:
    """One layout attempt: 21 clustroids honoring the sharing structure.

    Returns clustroids in global pattern order (3 per type, type order as
    in :data:`PATTERN_TYPES`).  Collocated overlap pairs reuse the same
    tuple; within-group separations come from order-statistics draws plus
    a short rejection loop for the two coordinates conditioned on an
    already-fixed one.
    """
    (lo_a, hi_a), (lo_b, hi_b), (lo_c, hi_c) = margins
    gap_a, gap_b, gap_c = gaps

    def uniform(lo, hi):
        return int(rng.integers(lo, hi + 1))

    # Group-shared S-axis coordinates.
    a_ssd, b_ssd = uniform(lo_a, hi_a), uniform(lo_b, hi_b)
    a_sds, c_sds = uniform(lo_a, hi_a), uniform(lo_c, hi_c)
    b_dss, c_dss = uniform(lo_b, hi_b), uniform(lo_c, hi_c)

    # Coupled D-axis coordinates: one separated tuple per axis covers
    # every within-group pair among the DDD/DDS/DSD/SDD groups.
    a9, a10, a_sdd, a13, a14, a17 = _separated_tuple(rng, lo_a, hi_a, 6, gap_a)
    b9, b_dsd, b11, b14, b19, b20 = _separated_tuple(rng, lo_b, hi_b, 6, gap_b)
    c_dds, c10, c11, c17 = _separated_tuple(rng, lo_c, hi_c, 4, gap_c)
    for _ in range(100):
        c19, c20 = uniform(lo_c, hi_c), uniform(lo_c, hi_c)
        if abs(c19 - c11) >= gap_c and abs(c20 - c11) >= gap_c and abs(c19 - c20) >= gap_c:
            break
    else:
        return None

    eta = [None] * 21
    eta[0:3] = [(a_ssd, b_ssd, c) for c in _separated_tuple(rng, lo_c, hi_c, 3, gap_c)]
    eta[3:6] = [(a_sds, b, c_sds) for b in _separated_tuple(rng, lo_b, hi_b, 3, gap_b)]
    eta[6:9] = [(a, b_dss, c_dss) for a in _separated_tuple(rng, lo_a, hi_a, 3, gap_a)]
    eta[9] = (a9, b9, c_dds)
    eta[10] = (a10, b_dsd, c10)
    eta[11] = (a_sdd, b11, c11)
    eta[12] = eta[9]
    eta[13] = (a13, b_dsd, c_dds)
    eta[14] = (a14, b14, c_dds)
    eta[15] = eta[10]
    eta[16] = eta[13]
    eta[17] = (a17, b_dsd, c17)
    eta[18] = eta[11]
    eta[19] = (a_sdd, b19, c19)
    eta[20] = (a_sdd, b20, c20)
    return eta


def _check_layout(eta, gaps) -> bool:
    """Declarative re-check: within every group, D-axis coordinates are
    pairwise separated by the per-axis gap."""
    for g, ptype in enumerate(PATTERN_TYPES):
        members = [eta[3 * g + m] for m in range(3)]
        for axis, letter in enumerate(ptype):
            coords = [m[axis] for m in members]
            if letter == "S":
                if len(set(coords)) != 1:
                    return False
            else:
                for x in range(3):
                    for y in range(x + 1, 3):
                        if abs(coords[x] - coords[y]) < gaps[axis]:
                            return False
    return True


def _materialize(eta, templates) -> list:
    """Per-pattern absolute cell sets, global pattern order."""
    cells = []
    for p in range(21):
        template = templates[PATTERN_TYPES[p // 3]]
        a, b, c = eta[p]
        cells.append({(a + da, b + db, c + dc) for (da, db, dc) in template})
    return cells


def _collisions_ok(cells, eta, core) -> bool:
    """Designated pairs share exactly the translated core; every other
    pair of patterns is disjoint."""
    designated = {tuple(sorted(pair)) for pair in OVERLAP_PAIRS}
    for p in range(21):
        for q in range(p + 1, 21):
            shared = cells[p] & cells[q]
            if (p, q) in designated:
                a, b, c = eta[p]
                want = {(a + da, b + db, c + dc) for (da, db, dc) in core}
                if shared != want:
                    return False
            elif shared:
                return False
    return True


def gen_flat(
    d: int = 5,
    rho: int = 60,
    mu: float = 10.0,
    sigma: float = 3.0,
    seed: int = 0,
    *,
    dims: tuple = (300, 300, 30),
    time_dispersion: int = 2,
    max_attempts: int = 200,
) -> tuple:
    """The 21-pattern flat benchmark tensor with ground truth.

    Plants 3 patterns per axis-sharing type with concentration ``rho``,
    Manhattan dispersion ``d`` (time offsets additionally capped at
    ``time_dispersion`` — the 30-slice axis is too short for three
    disjoint full-radius ranges), and values from Gaussian(mu, sigma)
    floored at 0.01.  Four designated cross-type pairs overlap in a
    shared core of about rho/5 cells; an overlap cell keeps the larger
    of the two drawn values and the label of the pattern that drew it.

    Returns
    -------
    (SparseTensor3, GroundTruth)
        Labels are 1..21 in pattern order; the truth tree is the root
        plus one leaf per pattern.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    # Validates d/rho/mu/sigma once; the real clustroids are placed below.
    PatternSpec("SSD", (0, 0, 0), d, rho, mu, sigma)
    if time_dispersion < 0:
        raise ValueError("time_dispersion must be >= 0")

    core_size = max(1, round(rho / 5))
    ball = _l1_ball(d, time_dispersion)
    if rho > len(ball):
        raise ValueError("dispersion ball too small for the requested concentration")
    templates, core = _flat_templates(rng, ball, rho, core_size)

    ext = (d, d, min(d, time_dispersion))
    margins = [(ext[axis], dims[axis] - 1 - ext[axis]) for axis in range(3)]
    for axis in range(3):
        if margins[axis][0] > margins[axis][1]:
            raise ValueError("tensor dimensions too small for the dispersion")
    gaps = tuple(2 * ext[axis] + 2 for axis in range(3))

    for _ in range(max_attempts):
        eta = _propose_clustroids(rng, margins, gaps)
        if eta is None or not _check_layout(eta, gaps):
            continue
        cells = _materialize(eta, templates)
        if _collisions_ok(cells, eta, core):
            break
    else:
        raise RuntimeError("placement retries exhausted; relax d/rho or enlarge dims")

    values: dict = {}
    labels: dict = {}
    for p in range(21):
        template = templates[PATTERN_TYPES[p // 3]]
        a, b, c = eta[p]
        draws = _clamped_normal(rng, mu, sigma, len(template))
        for (da, db, dc), value in zip(template, draws):
            cell = (a + da, b + db, c + dc)
            if cell not in values or value > values[cell]:
                values[cell] = float(value)
                labels[cell] = p + 1

    coords = np.array(sorted(values), dtype=np.int64)
    vals = np.array([values[tuple(c)] for c in coords])
    tensor = from_coo(dims, coords, vals)
    return tensor, GroundTruth(labels, _truth_tree(labels))


# ---------------------------------------------------------------------------
# Hierarchical generator


def _kron_support(support: list, times: int) -> list:
    """Support of the repeated Kronecker product of a 0/1 pattern with
    itself: ``times`` factors in total."""
    size = max(max(i, j) for i, j in support) + 1
    out = list(support)
    out_size = size
    for _ in range(times - 1):
        out = [
            (i * size + p, j * size + q) for (i, j) in out for (p, q) in support
        ]
        out_size *= size
    return sorted(out)


def gen_hier(
    seed: int = 0,
    *,
    regions_per_slice: int = 10,
    extras_per_region: int = 2,
) -> tuple:
    """The Kronecker-hierarchy benchmark tensor with ground truth.

    The base slice is the support of K3 = K1 (x) K1 (x) K1 with K1 the
    5x5 diagonal — 125 diagonal cells organized as 5 superblocks of 5
    leaf blocks.  One set of Gaussian(10, 3) values is drawn for the
    base slice and copied across 10 stacked slices; then, per slice,
    ``regions_per_slice`` random leaf regions each get
    ``extras_per_region`` of their zero cells replaced by fresh draws,
    giving every leaf internal structure that varies over time.

    Returns
    -------
    (SparseTensor3, GroundTruth)
        Labels are the 25 leaf ids (1..25); the truth tree is
        root -> 5 superblocks -> 5 leaves each (31 nodes).
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dims = (125, 125, 10)
    n_slices = dims[2]
    k1 = [(i, i) for i in range(5)]
    base_support = _kron_support(k1, 3)

    base_values = _clamped_normal(rng, 10.0, 3.0, len(base_support))
    entries: dict = {}
    labels: dict = {}
    for k in range(n_slices):
        for (i, j), value in zip(base_support, base_values):
            entries[(i, j, k)] = float(value)

    off_diagonal = [(u, v) for u in range(5) for v in range(5) if u != v]
    for k in range(n_slices):
        leaves = rng.choice(25, size=regions_per_slice, replace=False)
        for leaf in sorted(leaves.tolist()):
            s, t = leaf // 5, leaf % 5
            base = 25 * s + 5 * t
            slots = rng.choice(len(off_diagonal), size=extras_per_region, replace=False)
            draws = _clamped_normal(rng, 10.0, 3.0, extras_per_region)
            for slot, value in zip(sorted(slots.tolist()), draws):
                u, v = off_diagonal[slot]
                entries[(base + u, base + v, k)] = float(value)

    for (i, j, k) in entries:
        s = i // 25
        t = (i % 25) // 5
        labels[(i, j, k)] = 5 * s + t + 1

    coords = np.array(sorted(entries), dtype=np.int64)
    vals = np.array([entries[tuple(c)] for c in coords])
    tensor = from_coo(dims, coords, vals)
    return tensor, GroundTruth(labels, _truth_tree(labels, superblock_of=_hier_superblock))


def _hier_superblock(label: int) -> int:
    return (label - 1) // 5


def _truth_tree(labels: dict, superblock_of=None) -> LabeledTree:
    """Reference tree over the label map.

    Flat truth (no grouping): root -> one leaf per label.  Hierarchical
    truth: root -> one node per superblock -> its leaf labels.  Node
    labels and child order follow the same conventions as the
    cluster-tree rendering (majority label, then (label, -size) order),
    so a perfect recovery has edit distance zero.
    """
    cells_by_label: dict = {}
    for cell, label in labels.items():
        cells_by_label.setdefault(label, []).append(cell)

    def leaf_node(label):
        node = TreeNode(str(label))
        return node, len(cells_by_label[label])

    if superblock_of is None:
        children = [leaf_node(label) for label in cells_by_label]
    else:
        groups: dict = {}
        for label in cells_by_label:
            groups.setdefault(superblock_of(label), []).append(label)
        children = []
        for group_labels in groups.values():
            kids = [leaf_node(label) for label in group_labels]
            kids.sort(key=lambda pair: (pair[0].label, -pair[1]))
            group_cells = [
                labels[c] for label in group_labels for c in cells_by_label[label]
            ]
            node = TreeNode(majority_label(group_cells), [k for k, _ in kids])
            children.append((node, len(group_cells)))
    children.sort(key=lambda pair: (pair[0].label, -pair[1]))
    return LabeledTree(TreeNode("root", [c for c, _ in children]))


# ---------------------------------------------------------------------------
# Noise


def add_noise(t: SparseTensor3, n_percent: float, seed: int = 0) -> SparseTensor3:
    """Additive positive Gaussian noise on a per-slice share of cells.

    For each time slice, ``ceil(n_percent/100 * I * J)`` distinct cells
    sampled uniformly over the full I x J grid receive an additive
    |Gaussian(0, 1)| draw; noise on a zero cell creates a new entry.
    Ground-truth labels are unaffected (noise cells stay unlabeled).
    """
    if not 0 <= n_percent < 100:
        raise ValueError("n_percent must be in [0, 100)")
    if n_percent == 0:
        return t
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    I, J, K = t.dims
    per_slice = math.ceil(n_percent / 100.0 * I * J)

    coords = [np.column_stack([t.i, t.j, t.k])]
    vals = [t.vals]
    for k in range(K):
        flat = rng.choice(I * J, size=per_slice, replace=False)
        noise = np.abs(rng.normal(0.0, 1.0, size=per_slice))
        block = np.column_stack([flat // J, flat % J, np.full(per_slice, k)])
        coords.append(block)
        vals.append(noise)
    return from_coo(t.dims, np.concatenate(coords), np.concatenate(vals))


# ---------------------------------------------------------------------------
# Label file I/O


def write_labels(path, labels: dict) -> None:
    """Write ``i j k label`` lines, cells in lexicographic order."""
    with open(path, "w", encoding="utf-8") as fh:
        for (i, j, k) in sorted(labels):
            fh.write(f"{i} {j} {k} {labels[(i, j, k)]}\n")


def read_labels(path) -> dict:
    """Inverse of :func:`write_labels`."""
    labels: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'i j k label'")
            try:
                i, j, k, label = (int(p) for p in parts)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer field") from exc
            labels[(i, j, k)] = label
    return labels
