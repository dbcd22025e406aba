"""Command-line interface: flows, exit codes, determinism."""

import json

import numpy as np
import pytest

from recten.cli import main
from recten.hierarchy import Cluster, ClusterTree
from recten.tensor import from_coo, write_tensor_text
from recten.treedoc import TreeDocument


def rank_one_tensor(dims=(6, 5, 4), box=(4, 3, 2), seed=3):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 1.5, box[0])
    b = rng.uniform(0.5, 1.5, box[1])
    c = rng.uniform(0.5, 1.5, box[2])
    ii, jj, kk = np.meshgrid(
        np.arange(box[0]), np.arange(box[1]), np.arange(box[2]), indexing="ij"
    )
    coords = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    vals = (a[:, None, None] * b[None, :, None] * c[None, None, :]).ravel()
    return from_coo(dims, coords, vals)


# ---------------------------------------------------------------------------
# decompose


def test_decompose_rank_one_tensor(tmp_path):
    tns = tmp_path / "t.tns"
    write_tensor_text(rank_one_tensor(), tns)
    out = tmp_path / "tree.json"
    assert main(["decompose", "--input-tensor", str(tns), "--output", str(out)]) == 0
    doc = TreeDocument.load(out)
    assert len(doc.nodes) == 1
    assert doc.nodes[0]["termination"] == "rank_one"
    assert doc.metadata["seed"] == 42
    assert "created" in doc.metadata


def test_decompose_missing_input_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["decompose", "--output", str(tmp_path / "x.json")])
    assert err.value.code == 2


def test_decompose_missing_file_is_runtime_error(tmp_path):
    rc = main(["decompose", "--input-tensor", str(tmp_path / "nope.tns"),
               "--output", str(tmp_path / "x.json")])
    assert rc == 1
    assert not (tmp_path / "x.json").exists()


def test_decompose_no_timestamps_is_byte_reproducible(tmp_path):
    tns = tmp_path / "t.tns"
    write_tensor_text(rank_one_tensor(), tns)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        assert main(["decompose", "--input-tensor", str(tns), "--output",
                     str(out), "--no-timestamps", "--seed", "9"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "created" not in TreeDocument.load(a).metadata


def test_decompose_from_events_keeps_string_keys(tmp_path):
    ev = tmp_path / "ev.csv"
    lines = ["actor,object,time"]
    rng = np.random.default_rng(0)
    for _ in range(60):
        lines.append(
            f"user{rng.integers(4)},thr{rng.integers(3)},{int(rng.integers(0, 2) * 604800)}"
        )
    ev.write_text("\n".join(lines) + "\n")
    out = tmp_path / "tree.json"
    html = tmp_path / "tree.html"
    rc = main(["decompose", "--input-events", str(ev), "--output", str(out),
               "--html", str(html), "--no-timestamps"])
    assert rc == 0
    text = out.read_text()
    assert '"user0"' in text and '"thr0"' in text
    assert html.exists() and "user0" in html.read_text()
    assert TreeDocument.load(out).metadata["input"]["kind"] == "events"


def test_decompose_rejects_both_inputs(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["decompose", "--input-tensor", "a", "--input-events", "b",
              "--output", str(tmp_path / "x.json")])
    assert err.value.code == 2


# ---------------------------------------------------------------------------
# synth


def test_synth_hier_deterministic_and_truth_tree(tmp_path):
    args = ["synth", "hier", "--seed", "1",
            "--out", str(tmp_path / "h.tns"), "--labels", str(tmp_path / "h.lab"),
            "--truth-tree", str(tmp_path / "h.tree")]
    assert main(args) == 0
    first = [(tmp_path / n).read_bytes() for n in ("h.tns", "h.lab", "h.tree")]
    assert main(args) == 0
    second = [(tmp_path / n).read_bytes() for n in ("h.tns", "h.lab", "h.tree")]
    assert first == second

    nested = json.loads((tmp_path / "h.tree").read_text())

    def count(node):
        return 1 + sum(count(c) for c in node[1])

    assert count(nested) == 31  # root + 5 + 25


def test_synth_noise_adds_cells(tmp_path):
    base = tmp_path / "a.tns"
    noisy = tmp_path / "b.tns"
    assert main(["synth", "hier", "--seed", "2", "--out", str(base),
                 "--labels", str(tmp_path / "a.lab")]) == 0
    assert main(["synth", "hier", "--seed", "2", "--noise", "20",
                 "--out", str(noisy), "--labels", str(tmp_path / "b.lab")]) == 0
    n_base = sum(1 for ln in base.read_text().splitlines() if not ln.startswith("dims"))
    n_noisy = sum(1 for ln in noisy.read_text().splitlines() if not ln.startswith("dims"))
    assert n_noisy > n_base
    # labels describe the clean structure either way
    assert (tmp_path / "a.lab").read_bytes() == (tmp_path / "b.lab").read_bytes()


# ---------------------------------------------------------------------------
# eval


def perfect_fixture(tmp_path):
    """A two-leaf tree whose leaves exactly partition the labeled cells."""
    dims = (8, 4, 3)
    tree = ClusterTree(dims=dims)
    left = Cluster(id=1, level=1, parent=None, dims=dims, termination="rank_one",
                   supports=({0: 1.0, 1: 1.0}, {0: 1.0, 1: 1.0}, {0: 1.0}))
    right = Cluster(id=2, level=1, parent=None, dims=dims, termination="rank_one",
                    supports=({5: 1.0, 6: 1.0}, {2: 1.0, 3: 1.0}, {1: 1.0}))
    tree.nodes = {1: left, 2: right}
    tree.root_ids = [1, 2]
    labels = {}
    for i in (0, 1):
        for j in (0, 1):
            labels[(i, j, 0)] = 1
    for i in (5, 6):
        for j in (2, 3):
            labels[(i, j, 1)] = 2
    tree_path = tmp_path / "tree.json"
    TreeDocument.from_tree(tree).save(tree_path)
    labels_path = tmp_path / "cells.lab"
    labels_path.write_text(
        "".join(f"{i} {j} {k} {v}\n" for (i, j, k), v in sorted(labels.items()))
    )
    truth_path = tmp_path / "truth.tree"
    truth_path.write_text(json.dumps(["root", [["1", []], ["2", []]]]))
    return tree_path, labels_path, truth_path


def test_eval_perfect_tree(tmp_path, capsys):
    tree_path, labels_path, truth_path = perfect_fixture(tmp_path)
    rc = main(["eval", "--tree", str(tree_path), "--labels", str(labels_path),
               "--truth-tree", str(truth_path), "--metrics", "tp,ri,ted"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "tp=1.000000" in out and "ri=1.000000" in out and "ted=0" in out


def test_eval_missing_leaf_costs_one_edit(tmp_path, capsys):
    tree_path, labels_path, truth_path = perfect_fixture(tmp_path)
    doc = TreeDocument.load(tree_path)
    doc.nodes = [n for n in doc.nodes if n["id"] == 1]
    doc.root_ids = [1]
    doc.save(tree_path)
    labels_path.write_text("0 0 0 1\n1 1 0 1\n")  # only leaf-1 cells remain labeled
    rc = main(["eval", "--tree", str(tree_path), "--labels", str(labels_path),
               "--truth-tree", str(truth_path), "--metrics", "ted"])
    assert rc == 0
    assert "ted=1" in capsys.readouterr().out


def test_eval_ted_without_truth_tree_is_usage_error(tmp_path):
    tree_path, labels_path, _ = perfect_fixture(tmp_path)
    rc = main(["eval", "--tree", str(tree_path), "--labels", str(labels_path),
               "--metrics", "ted"])
    assert rc == 2


def test_eval_unknown_metric_is_usage_error(tmp_path):
    tree_path, labels_path, _ = perfect_fixture(tmp_path)
    rc = main(["eval", "--tree", str(tree_path), "--labels", str(labels_path),
               "--metrics", "tp,bogus"])
    assert rc == 2


def test_eval_universe_mismatch(tmp_path, capsys):
    tree_path, labels_path, _ = perfect_fixture(tmp_path)
    labels_path.write_text("100 0 0 1\n")
    rc = main(["eval", "--tree", str(tree_path), "--labels", str(labels_path)])
    assert rc == 1
    assert "universe mismatch" in capsys.readouterr().err


def test_eval_csv_row(tmp_path, capsys):
    tree_path, labels_path, _ = perfect_fixture(tmp_path)
    csv_path = tmp_path / "rows.csv"
    for _ in range(2):
        assert main(["eval", "--tree", str(tree_path), "--labels", str(labels_path),
                     "--csv", str(csv_path)]) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "tree,labels,tp,ri"
    assert len(lines) == 3 and lines[1] == lines[2]


# ---------------------------------------------------------------------------
# sweep


def test_sweep_single_point_csv_and_plot(tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--param", "epsilon", "--grid", "6:6:1", "--repeats", "1",
               "--out", str(out), "--plot"])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "param_value,seed,tp,ri,ted,l1,l2,l3,leaves,nodes"
    assert len(lines) == 3  # one repeat row + one median row
    assert lines[2].startswith("6,median,")
    png = tmp_path / "sweep.png"
    assert png.exists() and png.stat().st_size > 1000


def test_sweep_bad_grid_is_usage_error(tmp_path):
    rc = main(["sweep", "--param", "epsilon", "--grid", "8:2:2",
               "--out", str(tmp_path / "s.csv")])
    assert rc == 2
    rc = main(["sweep", "--param", "epsilon", "--grid", "nope",
               "--out", str(tmp_path / "s.csv")])
    assert rc == 2


def test_sweep_unknown_param_rejected(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["sweep", "--param", "zeta", "--grid", "1:2:1",
              "--out", str(tmp_path / "s.csv")])
    assert err.value.code == 2


def test_version_flag():
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
