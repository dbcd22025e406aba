"""Metric tests: exact oracles for the pair-counting and tree-edit
metrics, hand-computed purity values, and the soft-to-hard bridges."""

import functools
import math

import numpy as np
import pytest

from recten.metrics import (
    LabeledTree,
    Partition,
    TreeNode,
    format_metrics,
    hard_assign,
    majority_label,
    rand_index,
    total_purity,
    tree_edit_distance,
    tree_for_ted,
)

# ---------------------------------------------------------------------------
# Oracles


def rand_index_pairs_oracle(p1: Partition, p2: Partition) -> float:
    """Literal pair enumeration over all C(n, 2) pairs."""
    elements = sorted(p1.assignment)
    n = len(elements)
    agree = 0
    for x in range(n):
        for y in range(x + 1, n):
            same1 = p1.assignment[elements[x]] == p1.assignment[elements[y]]
            same2 = p2.assignment[elements[x]] == p2.assignment[elements[y]]
            agree += same1 == same2
    return agree / math.comb(n, 2)


def ted_recurrence_oracle(t1: LabeledTree, t2: LabeledTree) -> int:
    """Memoized textbook recurrence on ordered forests, written
    independently of the production dynamic program."""

    def tup(node):
        return (node.label, tuple(tup(c) for c in node.children))

    def size(forest):
        return sum(1 + size(tree[1]) for tree in forest)

    @functools.lru_cache(maxsize=None)
    def dist(f, g):
        if not f and not g:
            return 0
        if not f:
            return size(g)
        if not g:
            return size(f)
        v, w = f[-1], g[-1]
        delete = dist(f[:-1] + v[1], g) + 1
        insert = dist(f, g[:-1] + w[1]) + 1
        match = dist(v[1], w[1]) + dist(f[:-1], g[:-1]) + int(v[0] != w[0])
        return min(delete, insert, match)

    return dist((tup(t1.root),), (tup(t2.root),))


def random_partition(rng, n) -> Partition:
    k = int(rng.integers(1, 6))
    raw = rng.integers(0, k, size=n)
    dense = {old: new for new, old in enumerate(dict.fromkeys(raw.tolist()))}
    return Partition({i: dense[int(c)] for i, c in enumerate(raw)})


def random_tree(rng, max_nodes, labels=("a", "b", "c")) -> LabeledTree:
    n = int(rng.integers(1, max_nodes + 1))
    nodes = [TreeNode(str(rng.choice(labels)))]
    for _ in range(n - 1):
        parent = nodes[int(rng.integers(0, len(nodes)))]
        child = TreeNode(str(rng.choice(labels)))
        parent.children.append(child)
        nodes.append(child)
    return LabeledTree(nodes[0])


# ---------------------------------------------------------------------------
# Partition type


def test_partition_dense_indices_enforced():
    with pytest.raises(ValueError):
        Partition({"x": 0, "y": 2})


def test_partition_unclustered_must_exist():
    with pytest.raises(ValueError):
        Partition({"x": 0}, unclustered=1)


def test_partition_from_groups_roundtrip():
    p = Partition.from_groups([["a", "b"], ["c"]])
    assert p.assignment == {"a": 0, "b": 0, "c": 1}
    assert p.groups() == {0: ["a", "b"], 1: ["c"]}
    assert p.n == 3


def test_partition_from_groups_rejects_duplicates():
    with pytest.raises(ValueError):
        Partition.from_groups([["a"], ["a"]])


# ---------------------------------------------------------------------------
# Total purity


def test_total_purity_pure_clusters():
    p = Partition.from_groups([["a", "b"], ["c", "d"]])
    labels = {"a": 1, "b": 1, "c": 2, "d": 2}
    assert total_purity(p, labels) == 1.0


def test_total_purity_single_cluster_two_thirds():
    p = Partition.from_groups([["x", "y", "z"]])
    labels = {"x": "L1", "y": "L1", "z": "L2"}
    assert total_purity(p, labels) == pytest.approx(2.0 / 3.0)


def test_total_purity_two_cluster_mean():
    p = Partition.from_groups([["x", "y", "z"], ["u", "v"]])
    labels = {"x": 1, "y": 1, "z": 2, "u": 3, "v": 3}
    assert total_purity(p, labels) == pytest.approx(5.0 / 6.0)


def test_total_purity_ignores_unclustered_class():
    p = Partition.from_groups([["x", "y"], ["noise1", "noise2"]], unclustered=1)
    labels = {"x": 1, "y": 1, "noise1": 2, "noise2": 3}
    assert total_purity(p, labels) == 1.0


def test_total_purity_relabeling_invariance():
    rng = np.random.default_rng(11)
    for _ in range(20):
        p = random_partition(rng, 24)
        labels = {i: int(rng.integers(0, 4)) for i in range(24)}
        base = total_purity(p, labels)
        # permute cluster indices
        k = max(p.assignment.values()) + 1
        perm = rng.permutation(k)
        shuffled = Partition({e: int(perm[c]) for e, c in p.assignment.items()})
        assert total_purity(shuffled, labels) == pytest.approx(base)
        # permute the label alphabet
        lperm = {lab: chr(65 + lab) for lab in set(labels.values())}
        assert total_purity(p, {e: lperm[v] for e, v in labels.items()}) == pytest.approx(base)


def test_total_purity_errors():
    with pytest.raises(ValueError):
        total_purity(Partition({}), {})
    with pytest.raises(ValueError):
        total_purity(Partition.from_groups([["a"]]), {})
    only_noise = Partition.from_groups([["a"]], unclustered=0)
    with pytest.raises(ValueError):
        total_purity(only_noise, {"a": 1})


# ---------------------------------------------------------------------------
# Rand index


def test_rand_index_identical_is_one():
    p = Partition.from_groups([["a", "b"], ["c"]])
    assert rand_index(p, p) == 1.0


def test_rand_index_three_element_example():
    p1 = Partition.from_groups([[1, 2], [3]])
    p2 = Partition.from_groups([[1], [2, 3]])
    assert rand_index(p1, p2) == pytest.approx(1.0 / 3.0)


def test_rand_index_matches_pair_enumeration():
    rng = np.random.default_rng(7)
    for case in range(200):
        n = int(rng.integers(2, 31))
        p1 = random_partition(rng, n)
        p2 = random_partition(rng, n)
        fast = rand_index(p1, p2)
        slow = rand_index_pairs_oracle(p1, p2)
        assert fast == slow, (case, n)
        assert rand_index(p2, p1) == fast


def test_rand_index_one_element_moved_below_one():
    p = Partition.from_groups([["a", "b", "c"], ["d", "e"]])
    moved = Partition.from_groups([["a", "b"], ["d", "e", "c"]])
    assert rand_index(p, moved) < 1.0


def test_rand_index_errors():
    p = Partition.from_groups([["a", "b"]])
    q = Partition.from_groups([["a", "c"]])
    with pytest.raises(ValueError):
        rand_index(p, q)
    single = Partition.from_groups([["a"]])
    with pytest.raises(ValueError):
        rand_index(single, single)


# ---------------------------------------------------------------------------
# Labeled trees


def test_labeled_tree_roundtrip_and_size():
    nested = ("root", [("a", [("b", [])]), ("c", [])])
    tree = LabeledTree.from_nested(nested)
    assert tree.to_nested() == nested
    assert tree.size == 4
    assert [n.label for n in tree.postorder()] == ["b", "a", "c", "root"]


def test_labeled_tree_validation():
    shared = TreeNode("x")
    with pytest.raises(ValueError):
        LabeledTree(TreeNode("r", [shared, shared]))
    with pytest.raises(ValueError):
        LabeledTree(TreeNode(""))
    with pytest.raises(ValueError):
        LabeledTree("not a node")


def test_canonicalized_orders_by_label_then_size():
    tree = LabeledTree.from_nested(
        ("root", [("b", []), ("a", []), ("a", [("z", [])])])
    )
    got = tree.canonicalized().to_nested()
    assert got == ("root", [("a", [("z", [])]), ("a", []), ("b", [])])


def test_majority_label_counts_and_ties():
    assert majority_label([2, 2, 9]) == "2"
    assert majority_label([3, 1, 3, 1]) == "1"  # tie -> smallest
    assert majority_label([]) == "unlabeled"


# ---------------------------------------------------------------------------
# Tree edit distance


def test_ted_identical_zero():
    t = LabeledTree.from_nested(("r", [("x", []), ("y", [("z", [])])]))
    s = LabeledTree.from_nested(("r", [("x", []), ("y", [("z", [])])]))
    assert tree_edit_distance(t, s) == 0


def test_ted_delete_one_leaf():
    both = LabeledTree.from_nested(("root", [("x", []), ("y", [])]))
    one = LabeledTree.from_nested(("root", [("x", [])]))
    assert tree_edit_distance(both, one) == 1
    assert tree_edit_distance(one, both) == 1


def test_ted_single_rename():
    t = LabeledTree.from_nested(("r", [("x", [])]))
    s = LabeledTree.from_nested(("r", [("q", [])]))
    assert tree_edit_distance(t, s) == 1


def test_ted_matches_recurrence_oracle():
    rng = np.random.default_rng(13)
    for case in range(100):
        t1 = random_tree(rng, 6)
        t2 = random_tree(rng, 6)
        got = tree_edit_distance(t1, t2)
        want = ted_recurrence_oracle(t1, t2)
        assert got == want, (case, t1.to_nested(), t2.to_nested())
        assert tree_edit_distance(t2, t1) == got


def test_ted_triangle_inequality():
    rng = np.random.default_rng(17)
    for _ in range(40):
        a, b, c = (random_tree(rng, 5) for _ in range(3))
        ab = tree_edit_distance(a, b)
        bc = tree_edit_distance(b, c)
        ac = tree_edit_distance(a, c)
        assert ac <= ab + bc


def test_ted_zero_iff_canonically_identical():
    rng = np.random.default_rng(19)
    for _ in range(60):
        t1 = random_tree(rng, 5).canonicalized()
        t2 = random_tree(rng, 5).canonicalized()
        dist = tree_edit_distance(t1, t2)
        if dist == 0:
            assert t1.to_nested() == t2.to_nested()
        if t1.to_nested() == t2.to_nested():
            assert dist == 0


# ---------------------------------------------------------------------------
# Soft-to-hard bridges (duck-typed stand-in trees)


class FakeCluster:
    def __init__(self, cid, supports):
        self.id = cid
        self.supports = supports


class FakeTree:
    """Container mirroring the cluster tree's nodes/children/root_ids shape."""

    def __init__(self, entries):
        # entries: (cluster, parent id or None for a top-level cluster)
        self.nodes = {}
        self.children = {}
        self.root_ids = []
        for cluster, parent in entries:
            self.nodes[cluster.id] = cluster
            self.children.setdefault(cluster.id, [])
            if parent is None:
                self.root_ids.append(cluster.id)
            else:
                self.children[parent].append(cluster.id)

    def roots(self):
        return [self.nodes[i] for i in self.root_ids]

    def leaves(self):
        return [
            c for i, c in sorted(self.nodes.items())
            if not self.children.get(i)
        ]


def two_leaf_tree():
    left = FakeCluster(1, ({0: 1.0, 1: 0.5}, {0: 1.0}, {0: 1.0}))
    right = FakeCluster(2, ({1: 0.5, 2: 1.0}, {0: 1.0}, {0: 1.0}))
    return FakeTree([(left, None), (right, None)]), left, right


def test_hard_assign_unique_support():
    tree, _, _ = two_leaf_tree()
    p = hard_assign(tree, [(0, 0, 0), (2, 0, 0)])
    assert p.assignment[(0, 0, 0)] != p.assignment[(2, 0, 0)]
    assert p.unclustered is None


def test_hard_assign_uncovered_goes_to_catch_all():
    tree, _, _ = two_leaf_tree()
    p = hard_assign(tree, [(0, 0, 0), (9, 0, 0)])
    assert p.unclustered is not None
    assert p.assignment[(9, 0, 0)] == p.unclustered


def test_hard_assign_overlap_and_tie():
    tree, _, _ = two_leaf_tree()
    # (1,0,0): strengths 0.5 in both leaves -> tie -> smaller id (cluster 1)
    p = hard_assign(tree, [(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    assert p.assignment[(1, 0, 0)] == p.assignment[(0, 0, 0)]
    # raise the right leaf's strength -> larger product wins
    tree2, _, right = two_leaf_tree()
    right.supports[0][1] = 0.9
    p2 = hard_assign(tree2, [(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    assert p2.assignment[(1, 0, 0)] == p2.assignment[(2, 0, 0)]


def test_hard_assign_empty_tree_errors():
    with pytest.raises(ValueError):
        hard_assign(FakeTree([]), [(0, 0, 0)])


def test_tree_for_ted_majority_labels_and_order():
    leaf1 = FakeCluster(1, ({0: 1.0}, {0: 1.0}, {0: 1.0}))
    leaf2 = FakeCluster(2, ({5: 1.0}, {0: 1.0}, {0: 1.0}))
    parent = FakeCluster(3, ({0: 1.0, 5: 1.0}, {0: 1.0}, {0: 1.0}))
    tree = FakeTree([(parent, None), (leaf1, 3), (leaf2, 3)])
    labels = {(0, 0, 0): 7, (5, 0, 0): 2}
    rendered = tree_for_ted(tree, labels)
    # parent majority over {7, 2} ties -> smaller label 2; children sorted
    assert rendered.to_nested() == ("root", [("2", [("2", []), ("7", [])])])


def test_tree_for_ted_unlabeled_nodes():
    leaf = FakeCluster(1, ({0: 1.0}, {0: 1.0}, {0: 1.0}))
    dead = FakeCluster(2, ({9: 1.0}, {9: 1.0}, {9: 1.0}))
    tree = FakeTree([(leaf, None), (dead, None)])
    labels = {(0, 0, 0): 4}
    rendered = tree_for_ted(tree, labels)
    assert rendered.to_nested() == ("root", [("4", []), ("unlabeled", [])])


def test_format_metrics_block():
    text = format_metrics({"tp": 0.5, "levels": 3})
    assert text == "levels=3\ntp=0.500000\n"
