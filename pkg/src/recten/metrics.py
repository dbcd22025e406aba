"""Evaluation of cluster trees against ground truth.

Three metrics cover the three views of a clustering result:

* :func:`total_purity` — how label-pure the produced clusters are
  (1 minus the mean minority fraction over clusters);
* :func:`rand_index` — pair-agreement between two partitions of the same
  universe, computed from the contingency table rather than the O(n^2)
  pair list;
* :func:`tree_edit_distance` — minimal unit-cost insert/delete/rename
  script between two labeled ordered trees (Zhang–Shasha dynamic
  program).

Soft cluster trees are bridged to partitions by :func:`hard_assign`
(maximal participation strength, id tie-break) and to labeled ordered
trees by :func:`tree_for_ted` (majority-label nodes, canonical child
order), so the partition metrics and the tree metric can both be applied
to the same run.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

__all__ = [
    "Partition",
    "TreeNode",
    "LabeledTree",
    "majority_label",
    "total_purity",
    "rand_index",
    "tree_edit_distance",
    "hard_assign",
    "tree_for_ted",
    "format_metrics",
]


# ---------------------------------------------------------------------------
# Partitions


@dataclass(frozen=True)
class Partition:
    """A hard partition of a finite universe.

    Attributes
    ----------
    assignment : dict
        Element -> cluster index; indices must be dense from 0.
    unclustered : int or None
        Index of the designated catch-all class for elements no cluster
        covers.  It takes part in pair counting (:func:`rand_index`) but
        is excluded from the per-cluster purity mean.
    """

    assignment: dict
    unclustered: int | None = None

    def __post_init__(self):
        used = set(self.assignment.values())
        if used:
            expected = set(range(max(used) + 1))
            if used != expected:
                raise ValueError("cluster indices must be dense from 0")
        if self.unclustered is not None and self.unclustered not in used:
            raise ValueError("unclustered index not present in assignment")

    @property
    def n(self) -> int:
        return len(self.assignment)

    def groups(self) -> dict:
        """Cluster index -> list of member elements."""
        out: dict = {}
        for element, idx in self.assignment.items():
            out.setdefault(idx, []).append(element)
        return out

    @classmethod
    def from_groups(cls, groups, unclustered: int | None = None) -> "Partition":
        assignment = {}
        for idx, members in enumerate(groups):
            for element in members:
                if element in assignment:
                    raise ValueError(f"element {element!r} in two groups")
                assignment[element] = idx
        return cls(assignment, unclustered)


def total_purity(partition: Partition, labels: dict) -> float:
    """1 minus the mean minority-label fraction over produced clusters.

    Each cluster contributes the fraction of its members whose label
    differs from the cluster's majority label; the mean of those
    fractions is the total impurity and the result is its complement.
    The designated unclustered class and empty clusters contribute
    nothing to the mean.

    Parameters
    ----------
    partition : Partition
    labels : dict
        Element -> ground-truth label; must cover the whole universe.
    """
    if partition.n == 0:
        raise ValueError("cannot score an empty partition")
    impurities = []
    for idx, members in sorted(partition.groups().items()):
        if idx == partition.unclustered:
            continue
        counts = Counter()
        for element in members:
            if element not in labels:
                raise ValueError(f"element {element!r} has no label")
            counts[labels[element]] += 1
        impurities.append(1.0 - max(counts.values()) / len(members))
    if not impurities:
        raise ValueError("partition has no clusters besides the catch-all")
    return 1.0 - sum(impurities) / len(impurities)


def rand_index(p1: Partition, p2: Partition) -> float:
    """Pair-agreement similarity (a + b) / C(n, 2) of two partitions.

    ``a`` counts pairs placed together by both partitions and ``b`` pairs
    separated by both; the counts come from the contingency table, so the
    cost is O(clusters of p1 x clusters of p2) instead of O(n^2) while
    the result is exactly the pair-enumeration value (all arithmetic is
    integer until the final division).
    """
    if set(p1.assignment) != set(p2.assignment):
        raise ValueError("partitions cover different universes")
    n = p1.n
    if n < 2:
        raise ValueError("rand index needs at least 2 elements")
    contingency = Counter(
        (p1.assignment[x], p2.assignment[x]) for x in p1.assignment
    )
    same_both = sum(math.comb(c, 2) for c in contingency.values())
    same_1 = sum(math.comb(c, 2) for c in Counter(p1.assignment.values()).values())
    same_2 = sum(math.comb(c, 2) for c in Counter(p2.assignment.values()).values())
    total = math.comb(n, 2)
    diff_both = total - same_1 - same_2 + same_both
    return (same_both + diff_both) / total


# ---------------------------------------------------------------------------
# Labeled ordered trees


@dataclass
class TreeNode:
    """One node of a labeled ordered tree."""

    label: str
    children: list = field(default_factory=list)


class LabeledTree:
    """A rooted tree of :class:`TreeNode` with non-empty string labels."""

    def __init__(self, root: TreeNode):
        if not isinstance(root, TreeNode):
            raise ValueError("root must be a TreeNode")
        seen = set()
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                raise ValueError("tree nodes must not be shared or cyclic")
            seen.add(id(node))
            if not isinstance(node.label, str) or not node.label:
                raise ValueError("every node needs a non-empty string label")
            stack.extend(node.children)
        self.root = root

    @property
    def size(self) -> int:
        return sum(1 for _ in self.postorder())

    def postorder(self):
        """Yield nodes children-first (left to right)."""

        def walk(node):
            for child in node.children:
                yield from walk(child)
            yield node

        yield from walk(self.root)

    def to_nested(self):
        """(label, [children...]) nesting, convenient for tests."""

        def conv(node):
            return (node.label, [conv(c) for c in node.children])

        return conv(self.root)

    @classmethod
    def from_nested(cls, nested) -> "LabeledTree":
        def build(item):
            label, children = item
            return TreeNode(label, [build(c) for c in children])

        return cls(build(nested))

    def canonicalized(self) -> "LabeledTree":
        """Copy with children everywhere sorted by (label, -subtree size)."""

        def conv(node):
            kids = [conv(c) for c in node.children]
            kids.sort(key=lambda pair: (pair[0].label, -pair[1]))
            size = 1 + sum(s for _, s in kids)
            return TreeNode(node.label, [k for k, _ in kids]), size

        root, _ = conv(self.root)
        return LabeledTree(root)


def majority_label(label_values) -> str:
    """Most frequent label as a string, smallest value breaking ties.

    Returns ``"unlabeled"`` for an empty collection.  Shared by the
    synthetic truth-tree builders and :func:`tree_for_ted` so both sides
    of a tree comparison resolve ties identically.
    """
    counts = Counter(label_values)
    if not counts:
        return "unlabeled"
    best = min(counts, key=lambda lab: (-counts[lab], lab))
    return str(best)


def tree_edit_distance(t1: LabeledTree, t2: LabeledTree) -> int:
    """Minimal number of node insertions, deletions and renames mapping
    one labeled ordered tree onto the other (Zhang–Shasha dynamic
    program, unit costs)."""
    return _zhang_shasha(_Flat(t1), _Flat(t2))


class _Flat:
    """Postorder-indexed view of a tree: labels and leftmost-leaf links."""

    def __init__(self, tree: LabeledTree):
        self.labels: list[str] = []
        self.lml: list[int] = []  # postorder index of leftmost leaf

        def walk(node):
            child_lml = [walk(c) for c in node.children]
            self.labels.append(node.label)
            mine = child_lml[0] if child_lml else len(self.labels) - 1
            self.lml.append(mine)
            return mine

        walk(tree.root)
        self.n = len(self.labels)
        # Keyroots: nodes with no ancestor sharing their leftmost leaf,
        # i.e. the highest node for each distinct leftmost-leaf value.
        highest: dict[int, int] = {}
        for idx, leaf in enumerate(self.lml):
            highest[leaf] = idx
        self.keyroots = sorted(highest.values())


def _zhang_shasha(f1: _Flat, f2: _Flat) -> int:
    n1, n2 = f1.n, f2.n
    dist = [[0] * n2 for _ in range(n1)]
    for kr1 in f1.keyroots:
        for kr2 in f2.keyroots:
            _treedist(f1, f2, kr1, kr2, dist)
    return dist[n1 - 1][n2 - 1]


def _treedist(f1: _Flat, f2: _Flat, i: int, j: int, dist) -> None:
    """Fill dist[x][y] for subtree pairs whose leftmost leaves match the
    keyroots i, j; standard forest-distance table with index offsets."""
    li, lj = f1.lml[i], f2.lml[j]
    m, n = i - li + 2, j - lj + 2
    fd = [[0] * n for _ in range(m)]
    for x in range(1, m):
        fd[x][0] = fd[x - 1][0] + 1
    for y in range(1, n):
        fd[0][y] = fd[0][y - 1] + 1
    for x in range(1, m):
        for y in range(1, n):
            node1 = li + x - 1
            node2 = lj + y - 1
            if f1.lml[node1] == li and f2.lml[node2] == lj:
                rename = 0 if f1.labels[node1] == f2.labels[node2] else 1
                fd[x][y] = min(
                    fd[x - 1][y] + 1,
                    fd[x][y - 1] + 1,
                    fd[x - 1][y - 1] + rename,
                )
                dist[node1][node2] = fd[x][y]
            else:
                px = f1.lml[node1] - li
                py = f2.lml[node2] - lj
                fd[x][y] = min(
                    fd[x - 1][y] + 1,
                    fd[x][y - 1] + 1,
                    fd[px][py] + dist[node1][node2],
                )


# ---------------------------------------------------------------------------
# Bridges from cluster trees


def hard_assign(tree, cells) -> Partition:
    """Assign each cell to the leaf cluster with the largest
    participation-strength product.

    The strength of cell (i, j, k) in a leaf is the product of the
    leaf's per-mode support strengths at i, j and k (zero if any index
    is outside the support).  Ties go to the smaller cluster id; cells
    with zero strength in every leaf land in a designated catch-all
    class appended after the real clusters.

    Parameters
    ----------
    tree : ClusterTree
        A finished decomposition tree; its childless clusters are the
        assignment targets.
    cells : iterable of (i, j, k)
        The evaluation universe.
    """
    leaves = sorted(tree.leaves(), key=lambda c: c.id)
    if not leaves:
        raise ValueError("tree has no leaf clusters")
    chosen: dict = {}
    for cell in cells:
        i, j, k = cell
        best_strength = 0.0
        best_leaf = None
        for leaf in leaves:
            sa, sb, sc = leaf.supports
            strength = sa.get(i, 0.0) * sb.get(j, 0.0) * sc.get(k, 0.0)
            if strength > best_strength:
                best_strength = strength
                best_leaf = leaf.id
        chosen[cell] = best_leaf  # None -> catch-all

    used_ids = sorted({lid for lid in chosen.values() if lid is not None})
    index_of = {lid: pos for pos, lid in enumerate(used_ids)}
    unclustered = None
    if any(lid is None for lid in chosen.values()):
        unclustered = len(used_ids)
    assignment = {
        cell: index_of[lid] if lid is not None else unclustered
        for cell, lid in chosen.items()
    }
    return Partition(assignment, unclustered)


def tree_for_ted(tree, labels: dict) -> LabeledTree:
    """Render a cluster tree as a labeled ordered tree for TED.

    Every cluster node is labeled by the majority ground-truth label of
    the cells hard-assigned to the leaves of its subtree ("unlabeled"
    when none are); children are canonically ordered by (label,
    descending cell count) so the ordered-tree edit distance is
    well-defined.

    Parameters
    ----------
    tree : ClusterTree
    labels : dict
        Cell -> ground-truth label (the evaluation universe).
    """
    partition = hard_assign(tree, labels.keys())
    by_leaf: dict = {}
    for cell, idx in partition.assignment.items():
        if idx != partition.unclustered:
            by_leaf.setdefault(idx, []).append(cell)
    leaf_ids = sorted(c.id for c in tree.leaves())
    id_to_index = {lid: pos for pos, lid in enumerate(leaf_ids)}

    def child_nodes(cluster) -> list:
        return [tree.nodes[cid] for cid in tree.children.get(cluster.id, [])]

    def cells_of(cluster) -> list:
        kids = child_nodes(cluster)
        if not kids:
            idx = id_to_index.get(cluster.id)
            return by_leaf.get(idx, []) if idx is not None else []
        out = []
        for child in kids:
            out.extend(cells_of(child))
        return out

    def convert(cluster) -> tuple[TreeNode, int]:
        cells = cells_of(cluster)
        node = TreeNode(majority_label(labels[c] for c in cells))
        kids = [convert(child) for child in child_nodes(cluster)]
        kids.sort(key=lambda pair: (pair[0].label, -pair[1]))
        node.children = [k for k, _ in kids]
        return node, len(cells)

    roots = [convert(top) for top in tree.roots()]
    roots.sort(key=lambda pair: (pair[0].label, -pair[1]))
    root = TreeNode("root", [r for r, _ in roots])
    return LabeledTree(root)


def format_metrics(values: dict) -> str:
    """Flat ``key=value`` text block, one metric per line."""
    lines = []
    for key in sorted(values):
        value = values[key]
        shown = f"{value:.6f}" if isinstance(value, float) else str(value)
        lines.append(f"{key}={shown}")
    return "\n".join(lines) + "\n"
