"""Parameter sweeps over the synthetic benchmarks.

One sweep varies a single run parameter (``epsilon``, ``k``, ``lambda``)
or the data-noise level (``noise``) across a grid, repeating each grid
point on several independently generated datasets, and reports the
per-repeat quality metrics plus per-value medians.  This is the engine
behind the ``sweep`` command and the sensitivity experiments.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field, replace

from recten.hierarchy import RecTenParams, recten_run
from recten.metrics import (
    Partition,
    hard_assign,
    rand_index,
    total_purity,
    tree_edit_distance,
    tree_for_ted,
)
from recten.synth import add_noise, gen_flat, gen_hier
from recten.treedoc import write_text_atomic

__all__ = [
    "SWEEP_PARAMS",
    "SweepRow",
    "SweepResult",
    "parse_grid",
    "evaluate_tree",
    "run_sweep",
    "write_sweep_csv",
]

#: Parameters a sweep may vary.
SWEEP_PARAMS = ("epsilon", "k", "lambda", "noise")

#: CSV column order for sweep output.
_CSV_COLUMNS = (
    "param_value", "seed", "tp", "ri", "ted", "l1", "l2", "l3", "leaves", "nodes",
)


@dataclass(frozen=True)
class SweepRow:
    """Metrics of one (grid value, repeat) run."""

    value: float
    seed: int
    tp: float
    ri: float
    ted: int
    l1: int
    l2: int
    l3: int
    leaves: int
    nodes: int


@dataclass
class SweepResult:
    """All rows of one sweep plus per-value medians.

    ``medians[value]`` maps metric name (tp/ri/ted) to the median over
    the repeats at that grid value.
    """

    param: str
    values: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    medians: dict = field(default_factory=dict)

    def argmax_tp(self) -> float:
        """Grid value whose median TP is largest (first on ties)."""
        return max(self.values, key=lambda v: (self.medians[v]["tp"], -self.values.index(v)))


def parse_grid(text: str) -> list:
    """Parse ``lo:hi:step`` into the inclusive list of grid values.

    Raises
    ------
    ValueError
        On malformed syntax, non-positive step, hi < lo, or an empty
        grid.
    """
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be lo:hi:step, got {text!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"grid bounds must be numbers, got {text!r}")
    if step <= 0:
        raise ValueError("grid step must be positive")
    if hi < lo:
        raise ValueError("grid upper bound is below the lower bound")
    values = []
    i = 0
    while True:
        v = lo + i * step
        if v > hi + 1e-9:
            break
        values.append(round(v, 10))
        i += 1
    if not values:
        raise ValueError(f"grid {text!r} is empty")
    return values


def evaluate_tree(tree, truth) -> dict:
    """Quality metrics of a cluster tree against a synthetic ground truth.

    Returns tp, ri, ted, per-level counts (l1..l3), leaf and node totals.
    """
    cells = list(truth.labels)
    part = hard_assign(tree, cells)
    tp = total_purity(part, truth.labels)
    ids = {lb: n for n, lb in enumerate(sorted(set(truth.labels.values())))}
    truth_part = Partition({c: ids[truth.labels[c]] for c in cells})
    ri = rand_index(part, truth_part)
    ours = tree_for_ted(tree, truth.labels)
    ted = tree_edit_distance(ours.canonicalized(), truth.tree.canonicalized())
    counts = tree.level_counts()
    return {
        "tp": tp,
        "ri": ri,
        "ted": ted,
        "l1": counts.get(1, 0),
        "l2": counts.get(2, 0),
        "l3": counts.get(3, 0),
        "leaves": len(tree.leaves()),
        "nodes": len(tree),
    }


def _make_dataset(data: str, seed: int, noise: float):
    gen = {"hier": gen_hier, "flat": gen_flat}.get(data)
    if gen is None:
        raise ValueError(f"unknown dataset kind {data!r} (expected hier or flat)")
    tensor, truth = gen(seed=seed)
    if noise > 0:
        tensor = add_noise(tensor, noise, seed=seed)
    return tensor, truth


def run_sweep(
    param: str,
    values: list,
    repeats: int = 5,
    data: str = "hier",
    base: RecTenParams = RecTenParams(),
    noise: float = 0.0,
    master_seed: int = 42,
    progress=None,
) -> SweepResult:
    """Run the full (values x repeats) grid and collect metrics.

    Repeat ``r`` of every grid value runs on the dataset generated with
    seed ``master_seed + r`` (and decomposes with that same seed), so
    medians at different grid values compare like against like.

    Parameters
    ----------
    param : str
        One of :data:`SWEEP_PARAMS`; ``noise`` varies the dataset, the
        others vary the matching :class:`RecTenParams` field.
    values : list of float
        Grid values, e.g. from :func:`parse_grid`.
    repeats : int
        Independent datasets per grid value.
    data : str
        Benchmark family: ``hier`` or ``flat``.
    base : RecTenParams
        Parameters for everything not being swept.
    noise : float
        Fixed noise percentage applied when ``param != "noise"``.
    progress : callable, optional
        Called as ``progress(value, seed, row)`` after each run.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"param must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ValueError("empty sweep grid")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")

    field_name = {"epsilon": "epsilon", "k": "k", "lambda": "lam"}.get(param)
    result = SweepResult(param=param, values=list(values))
    for value in values:
        for rep in range(repeats):
            seed = master_seed + rep
            level = value if param == "noise" else noise
            tensor, truth = _make_dataset(data, seed, level)
            params = replace(base, seed=seed)
            if field_name is not None:
                params = replace(params, **{field_name: value})
            tree = recten_run(tensor, params)
            row = SweepRow(value=value, seed=seed, **evaluate_tree(tree, truth))
            result.rows.append(row)
            if progress is not None:
                progress(value, seed, row)
        at_value = [r for r in result.rows if r.value == value]
        result.medians[value] = {
            m: statistics.median(getattr(r, m) for r in at_value)
            for m in ("tp", "ri", "ted")
        }
    return result


def write_sweep_csv(result: SweepResult, path):
    """Write per-repeat rows plus per-value median rows, atomically.

    One line per (value, repeat) in grid order, then one ``median`` line
    per value (seed column says ``median``).  Floats use ``.`` decimals.
    """
    lines = [",".join(_CSV_COLUMNS)]
    for r in result.rows:
        lines.append(
            f"{r.value:g},{r.seed},{r.tp!r},{r.ri!r},{r.ted},"
            f"{r.l1},{r.l2},{r.l3},{r.leaves},{r.nodes}"
        )
    for value in result.values:
        med = result.medians[value]
        lines.append(
            f"{value:g},median,{med['tp']!r},{med['ri']!r},{med['ted']!r},,,,,"
        )
    write_text_atomic(path, "\n".join(lines) + "\n")
