"""Generator tests: pinned counts, sharing/disjointness geometry, the
Kronecker support oracle, and the noise-injection contract."""

import math
from collections import Counter

import numpy as np
import pytest

from recten.synth import (
    OVERLAP_PAIRS,
    PATTERN_TYPES,
    GroundTruth,
    PatternSpec,
    add_noise,
    gen_flat,
    gen_hier,
    read_labels,
    write_labels,
)

# ---------------------------------------------------------------------------
# PatternSpec validation


def test_pattern_spec_validation():
    good = PatternSpec("SSD", (5, 5, 5), 5, 60, 10.0, 3.0)
    assert good.type == "SSD"
    with pytest.raises(ValueError):
        PatternSpec("XYZ", (0, 0, 0), 5, 60, 10.0, 3.0)
    with pytest.raises(ValueError):
        PatternSpec("SSD", (0, 0, 0), -1, 60, 10.0, 3.0)
    with pytest.raises(ValueError):
        PatternSpec("SSD", (0, 0, 0), 5, 0, 10.0, 3.0)
    with pytest.raises(ValueError):
        PatternSpec("SSD", (0, 0, 0), 5, 60, 9.0, 3.0)


# ---------------------------------------------------------------------------
# Flat generator


@pytest.fixture(scope="module")
def flat():
    return gen_flat(seed=0)


def cells_by_label(truth: GroundTruth) -> dict:
    out = {}
    for cell, label in truth.labels.items():
        out.setdefault(label, set()).add(cell)
    return out


def test_flat_has_21_labels(flat):
    _, truth = flat
    assert set(truth.labels.values()) == set(range(1, 22))


def test_flat_nnz_is_1260_minus_shared(flat):
    tensor, truth = flat
    assert tensor.nnz == 21 * 60 - 4 * 12 == 1212
    assert len(truth.labels) == tensor.nnz


def test_flat_every_labeled_cell_is_stored(flat):
    tensor, truth = flat
    stored = set(zip(tensor.i.tolist(), tensor.j.tolist(), tensor.k.tolist()))
    assert set(truth.labels) == stored


def test_flat_determinism():
    t1, truth1 = gen_flat(seed=3)
    t2, truth2 = gen_flat(seed=3)
    assert t1 == t2
    assert truth1.labels == truth2.labels
    assert truth1.tree.to_nested() == truth2.tree.to_nested()
    t3, _ = gen_flat(seed=4)
    assert t1 != t3


def test_flat_truth_tree_is_root_plus_21_leaves(flat):
    _, truth = flat
    nested = truth.tree.to_nested()
    assert nested[0] == "root"
    assert len(nested[1]) == 21
    assert all(not kids for _, kids in nested[1])
    assert sorted(label for label, _ in nested[1]) == sorted(
        str(i) for i in range(1, 22)
    )


def test_flat_same_axis_projections_equal_diff_axes_disjoint(flat):
    _, truth = flat
    by_label = cells_by_label(truth)
    # Reconstruct each pattern's full cell set: overlap cells carry one
    # label, so take the union of the designated partner's shared cells.
    # Projection checks need the full geometric pattern, which equals
    # the labeled cells plus cells lost to the partner; recover them by
    # checking projections only on the winning-label cells is too weak.
    # Instead re-generate per-pattern sets through labels of both pair
    # members where needed: the S/D law must hold for labeled subsets
    # too (a subset of a translated template still projects inside the
    # shared range and stays disjoint on D axes), and equality is
    # checked on the *union* within each type triple.
    for g, ptype in enumerate(PATTERN_TYPES):
        members = [by_label[3 * g + m + 1] for m in range(3)]
        for axis, letter in enumerate(ptype):
            projections = [{c[axis] for c in member} for member in members]
            if letter == "D":
                assert not (projections[0] & projections[1])
                assert not (projections[0] & projections[2])
                assert not (projections[1] & projections[2])


def test_flat_same_axis_ranges_shared(flat):
    # On every S axis the three clouds sit in one common narrow band:
    # the union projection is no wider than one template extent.
    _, truth = flat
    by_label = cells_by_label(truth)
    widths = {0: 10, 1: 10, 2: 4}  # 2*dispersion per axis (time capped)
    for g, ptype in enumerate(PATTERN_TYPES):
        union = set()
        for m in range(3):
            union |= by_label[3 * g + m + 1]
        for axis, letter in enumerate(ptype):
            if letter == "S":
                coords = {c[axis] for c in union}
                assert max(coords) - min(coords) <= widths[axis]


def test_flat_overlap_pairs_lose_cells(flat):
    _, truth = flat
    counts = Counter(truth.labels.values())
    overlap_members = {p + 1 for pair in OVERLAP_PAIRS for p in pair}
    lost = {label: 60 - counts[label] for label in range(1, 22)}
    assert sum(lost.values()) == 48
    for label in range(1, 22):
        if label in overlap_members:
            assert 48 <= counts[label] <= 60
        else:
            assert counts[label] == 60, label
    for a, b in OVERLAP_PAIRS:
        assert lost[a + 1] + lost[b + 1] == 12


def test_flat_pattern_extent_bounded(flat):
    _, truth = flat
    by_label = cells_by_label(truth)
    for label, cells in by_label.items():
        arr = np.array(sorted(cells))
        spread = arr.max(axis=0) - arr.min(axis=0)
        assert spread[0] <= 10 and spread[1] <= 10 and spread[2] <= 4
        # All cells lie in one Manhattan ball, so the pairwise L1
        # diameter is at most twice the dispersion radius.
        pair_l1 = np.abs(arr[:, None, :] - arr[None, :, :]).sum(axis=2)
        assert pair_l1.max() <= 10


def test_flat_values_positive(flat):
    tensor, _ = flat
    assert (tensor.vals >= 0.01).all()


def test_flat_capacity_errors():
    with pytest.raises(ValueError):
        gen_flat(d=1, rho=60)  # ball far too small
    with pytest.raises(ValueError):
        gen_flat(mu=5.0, sigma=2.0)  # mu <= 3*sigma
    with pytest.raises(ValueError):
        gen_flat(dims=(20, 20, 8))  # no room for separated layouts


def test_flat_small_rho_works():
    tensor, truth = gen_flat(rho=20, seed=1)
    assert set(truth.labels.values()) == set(range(1, 22))
    assert tensor.nnz == 21 * 20 - 4 * 4  # core = round(20/5) = 4


# ---------------------------------------------------------------------------
# Hierarchical generator


@pytest.fixture(scope="module")
def hier():
    return gen_hier(seed=0)


def kron_support_oracle(support, times):
    """Naive nested-loop Kronecker support for 0/1 square patterns."""
    size = max(max(i, j) for i, j in support) + 1
    result = set(support)
    current = size
    for _ in range(times - 1):
        result = {
            (i * size + p, j * size + q) for (i, j) in result for (p, q) in support
        }
        current *= size
    return result


def test_hier_dims(hier):
    tensor, _ = hier
    assert tensor.dims == (125, 125, 10)


def test_hier_base_support_matches_kronecker_oracle():
    tensor, _ = gen_hier(seed=5, regions_per_slice=10, extras_per_region=0)
    oracle = kron_support_oracle([(i, i) for i in range(5)], 3)
    assert len(oracle) == 125
    for k in range(10):
        mask = tensor.k == k
        slice_support = set(zip(tensor.i[mask].tolist(), tensor.j[mask].tolist()))
        assert slice_support == oracle


def test_hier_tree_has_31_nodes(hier):
    _, truth = hier
    assert truth.tree.size == 31
    nested = truth.tree.to_nested()
    assert nested[0] == "root"
    assert len(nested[1]) == 5
    for _, kids in nested[1]:
        assert len(kids) == 5
        assert all(not grandkids for _, grandkids in kids)


def test_hier_labels_and_regions(hier):
    tensor, truth = hier
    assert set(truth.labels.values()) == set(range(1, 26))
    stored = set(zip(tensor.i.tolist(), tensor.j.tolist(), tensor.k.tolist()))
    assert set(truth.labels) == stored
    for (i, j, _k), label in truth.labels.items():
        s, t = (label - 1) // 5, (label - 1) % 5
        base = 25 * s + 5 * t
        assert base <= i < base + 5
        assert base <= j < base + 5


def test_hier_nnz_with_default_extras(hier):
    tensor, _ = hier
    assert tensor.nnz == 125 * 10 + 10 * 10 * 2


def test_hier_base_values_copied_across_slices():
    tensor, _ = gen_hier(seed=2, extras_per_region=0)
    by_slice = {}
    for i, j, k, v in zip(tensor.i, tensor.j, tensor.k, tensor.vals):
        by_slice.setdefault(int(k), {})[(int(i), int(j))] = float(v)
    for k in range(1, 10):
        assert by_slice[k] == by_slice[0]


def test_hier_determinism():
    t1, truth1 = gen_hier(seed=9)
    t2, truth2 = gen_hier(seed=9)
    assert t1 == t2
    assert truth1.labels == truth2.labels
    assert truth1.tree.to_nested() == truth2.tree.to_nested()


# ---------------------------------------------------------------------------
# Noise


def test_add_noise_zero_is_identity(hier):
    tensor, _ = hier
    assert add_noise(tensor, 0, seed=3) == tensor


def test_add_noise_rejects_out_of_range(hier):
    tensor, _ = hier
    with pytest.raises(ValueError):
        add_noise(tensor, 100, seed=0)
    with pytest.raises(ValueError):
        add_noise(tensor, -1, seed=0)


def test_add_noise_per_slice_touch_count(hier):
    tensor, _ = hier
    noisy = add_noise(tensor, 20, seed=4)
    expect = math.ceil(0.20 * 125 * 125)
    before = {}
    for i, j, k, v in zip(tensor.i, tensor.j, tensor.k, tensor.vals):
        before[(int(i), int(j), int(k))] = float(v)
    touched = Counter()
    for i, j, k, v in zip(noisy.i, noisy.j, noisy.k, noisy.vals):
        cell = (int(i), int(j), int(k))
        if cell not in before or before[cell] != float(v):
            touched[int(k)] += 1
    assert all(touched[k] == expect for k in range(10)), touched


def test_add_noise_determinism_and_growth(hier):
    tensor, _ = hier
    n1 = add_noise(tensor, 10, seed=5)
    n2 = add_noise(tensor, 10, seed=5)
    assert n1 == n2
    assert n1.nnz > tensor.nnz
    assert add_noise(tensor, 10, seed=6) != n1


# ---------------------------------------------------------------------------
# Label file round-trip


def test_labels_roundtrip(tmp_path, hier):
    _, truth = hier
    path = tmp_path / "labels.txt"
    write_labels(path, truth.labels)
    assert read_labels(path) == truth.labels


def test_read_labels_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError):
        read_labels(path)
    path.write_text("1 2 x 4\n")
    with pytest.raises(ValueError):
        read_labels(path)
