"""Command-line interface: decompose | synth | eval | sweep.

``decompose`` turns an event log or a tensor text file into a cluster
hierarchy (JSON, optionally HTML).  ``synth`` writes the synthetic
benchmarks.  ``eval`` scores a saved tree against ground-truth labels.
``sweep`` reruns the decomposition across a parameter grid and reports
per-value medians (CSV, optionally a PNG figure).

Exit codes: 0 success, 1 runtime error, 2 usage error.  The
``RECTEN_THREADS`` environment variable caps decomposition worker
threads.  All outputs are written atomically — a failed run never
leaves a partial file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone

from recten import __version__
from recten.hierarchy import RecTenParams, recten_run
from recten.ingest import EventSchema, build_tensor, parse_events
from recten.metrics import (
    LabeledTree,
    Partition,
    format_metrics,
    hard_assign,
    rand_index,
    total_purity,
    tree_edit_distance,
    tree_for_ted,
)
from recten.sweep import SWEEP_PARAMS, parse_grid, run_sweep, write_sweep_csv
from recten.synth import add_noise, gen_flat, gen_hier, read_labels, write_labels
from recten.tensor import read_tensor_text, write_tensor_text
from recten.treedoc import TreeDocument, export_html, write_text_atomic

__all__ = ["main"]


# ---------------------------------------------------------------------------
# Shared flag groups


def _add_param_flags(parser: argparse.ArgumentParser):
    d = RecTenParams()
    parser.add_argument("--k", type=float, default=d.k,
                        help="relative-size termination cutoff, percent")
    parser.add_argument("--epsilon", type=float, default=d.epsilon,
                        help="perturbation percentage")
    parser.add_argument("--lambda", dest="lam", type=float, default=d.lam,
                        help="L1 penalty weight")
    parser.add_argument("--rank-max", dest="r_max", type=int, default=d.r_max,
                        help="largest candidate rank for rank estimation")
    parser.add_argument("--cc-threshold", type=float, default=d.cc_threshold,
                        help="core-consistency acceptance threshold")
    parser.add_argument("--seed", type=int, default=42, help="master RNG seed")
    parser.add_argument("--max-depth", type=int, default=d.max_depth,
                        help="maximum tree depth")


def _params_from(args) -> RecTenParams:
    return RecTenParams(
        epsilon=args.epsilon, k=args.k, lam=args.lam, r_max=args.r_max,
        cc_threshold=args.cc_threshold, seed=args.seed, max_depth=args.max_depth,
    )


def _metadata(args, descriptor: dict) -> dict:
    meta = {
        "input": descriptor,
        "params": asdict(_params_from(args)),
        "seed": args.seed,
        "version": __version__,
    }
    if not args.no_timestamps:
        meta["created"] = datetime.now(timezone.utc).isoformat()
    return meta


# ---------------------------------------------------------------------------
# decompose


def cmd_decompose(args) -> int:
    if args.input_events:
        schema = EventSchema(
            actor=args.actor_col, object=args.object_col, time=args.time_col,
            weight=args.weight_col, delimiter=args.delimiter,
        )
        events = parse_events(args.input_events, schema, skip_bad=args.skip_bad)
        tensor, actors, objects, t_min = build_tensor(events)
        maps = (actors, objects, None)
        descriptor = {
            "kind": "events", "path": args.input_events, "events": len(events),
            "t_min": t_min, "dims": list(tensor.dims), "nnz": tensor.nnz,
        }
    else:
        tensor = read_tensor_text(args.input_tensor)
        maps = None
        descriptor = {
            "kind": "tensor", "path": args.input_tensor,
            "dims": list(tensor.dims), "nnz": tensor.nnz,
        }

    tree = recten_run(tensor, _params_from(args))
    doc = TreeDocument.from_tree(tree, metadata=_metadata(args, descriptor), maps=maps)
    doc.save(args.output)
    if args.html:
        export_html(doc, args.html)
    counts = tree.level_counts()
    shape = " ".join(f"L{lv}={counts[lv]}" for lv in sorted(counts))
    print(f"wrote {args.output}: {len(tree)} clusters ({shape})")
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    gen = gen_hier if args.kind == "hier" else gen_flat
    tensor, truth = gen(seed=args.seed)
    if args.noise > 0:
        tensor = add_noise(tensor, args.noise, seed=args.seed)
    write_tensor_text(tensor, args.out)
    write_labels(args.labels, truth.labels)
    if args.truth_tree:
        write_text_atomic(
            args.truth_tree,
            json.dumps(truth.tree.to_nested(), sort_keys=True) + "\n",
        )
    print(f"wrote {args.out}: dims={tensor.dims} nnz={tensor.nnz}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _check_universe(doc: TreeDocument, labels: dict):
    dims = tuple(doc.dims)
    for cell in labels:
        if not all(0 <= cell[m] < dims[m] for m in range(3)):
            raise ValueError(
                f"universe mismatch: labeled cell {cell} lies outside the "
                f"tree's tensor dims {dims}"
            )


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metrics if m not in ("tp", "ri", "ted")]
    if unknown or not metrics:
        raise UsageError(f"--metrics must be a subset of tp,ri,ted, got {args.metrics!r}")
    if "ted" in metrics and not args.truth_tree:
        raise UsageError("--metrics ted requires --truth-tree")

    doc = TreeDocument.load(args.tree)
    labels = read_labels(args.labels)
    _check_universe(doc, labels)
    tree = doc.to_tree()

    out: dict = {}
    if "tp" in metrics or "ri" in metrics:
        cells = list(labels)
        part = hard_assign(tree, cells)
        if "tp" in metrics:
            out["tp"] = total_purity(part, labels)
        if "ri" in metrics:
            ids = {lb: n for n, lb in enumerate(sorted(set(labels.values())))}
            out["ri"] = rand_index(part, Partition({c: ids[labels[c]] for c in cells}))
    if "ted" in metrics:
        with open(args.truth_tree, encoding="utf-8") as fh:
            truth_tree = LabeledTree.from_nested(json.load(fh))
        ours = tree_for_ted(tree, labels)
        out["ted"] = tree_edit_distance(ours.canonicalized(), truth_tree.canonicalized())

    text = format_metrics(out)
    sys.stdout.write(text)
    if args.csv:
        order = [m for m in ("tp", "ri", "ted") if m in out]
        header = "tree,labels," + ",".join(order)
        row = f"{args.tree},{args.labels}," + ",".join(repr(float(out[m])) for m in order)
        fresh = not os.path.exists(args.csv)
        with open(args.csv, "a", encoding="utf-8") as fh:
            if fresh:
                fh.write(header + "\n")
            fh.write(row + "\n")
    return 0


# ---------------------------------------------------------------------------
# sweep


def cmd_sweep(args) -> int:
    try:
        values = parse_grid(args.grid)
    except ValueError as exc:
        raise UsageError(str(exc))
    base = RecTenParams(epsilon=args.epsilon, k=args.k, lam=args.lam,
                        r_max=args.r_max, cc_threshold=args.cc_threshold,
                        max_depth=args.max_depth)

    def progress(value, seed, row):
        print(f"{args.param}={value:g} seed={seed} tp={row.tp:.4f} "
              f"ri={row.ri:.4f} ted={row.ted}")

    result = run_sweep(
        args.param, values, repeats=args.repeats, data=args.data, base=base,
        noise=args.noise, master_seed=args.seed, progress=progress,
    )
    write_sweep_csv(result, args.out)
    for value in result.values:
        med = result.medians[value]
        print(f"{args.param}={value:g} median: tp={med['tp']:.4f} "
              f"ri={med['ri']:.4f} ted={med['ted']:g}")
    if args.plot:
        from recten.figures import render_sweep_figure

        figure_path = os.path.splitext(args.out)[0] + ".png"
        render_sweep_figure(result, figure_path)
        print(f"wrote {figure_path}")
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point


class UsageError(Exception):
    """Bad flag combination detected after argparse (exit code 2)."""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recten",
        description="Recursive hierarchical soft clustering of sparse 3-mode tensors.",
    )
    parser.add_argument("--version", action="version", version=f"recten {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="build a cluster hierarchy from events or a tensor")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input-events", help="delimited event log with a header row")
    src.add_argument("--input-tensor", help="tensor text file (i j k value lines)")
    p.add_argument("--output", required=True, help="tree JSON output path")
    p.add_argument("--html", help="also write a self-contained HTML view")
    p.add_argument("--no-timestamps", action="store_true",
                   help="omit the creation timestamp from metadata")
    p.add_argument("--actor-col", default="actor")
    p.add_argument("--object-col", default="object")
    p.add_argument("--time-col", default="time")
    p.add_argument("--weight-col", default=None)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--skip-bad", action="store_true",
                   help="drop malformed event rows instead of aborting")
    _add_param_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("kind", choices=["flat", "hier"])
    p.add_argument("--out", required=True, help="tensor text output path")
    p.add_argument("--labels", required=True, help="ground-truth labels output path")
    p.add_argument("--truth-tree", help="ground-truth tree JSON output path")
    p.add_argument("--noise", type=float, default=0.0, help="noise percentage")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a tree against ground-truth labels")
    p.add_argument("--tree", required=True, help="tree JSON from decompose")
    p.add_argument("--labels", required=True, help="labels file (i j k label lines)")
    p.add_argument("--truth-tree", help="truth tree JSON (needed for ted)")
    p.add_argument("--metrics", default="tp,ri", help="subset of tp,ri,ted")
    p.add_argument("--csv", help="append a CSV result row here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="sweep one parameter over a grid")
    p.add_argument("--param", required=True, choices=list(SWEEP_PARAMS))
    p.add_argument("--grid", required=True, help="lo:hi:step, inclusive")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--data", choices=["hier", "flat"], default="hier")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--noise", type=float, default=0.0,
                   help="fixed noise percentage (when not sweeping noise)")
    p.add_argument("--plot", action="store_true",
                   help="render the median metrics to a PNG next to the CSV")
    _add_param_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"recten: usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: report, exit 1
        print(f"recten: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
