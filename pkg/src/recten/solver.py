"""CP solvers and rank selection for non-negative sparse 3-mode tensors.

Two fitting routes are provided: a least-squares solver with an L1 penalty
(:func:`nncp_als_l1`, the workhorse) and a KL-divergence multiplicative
solver (:func:`cp_apr`, used as a second opinion during rank selection).
Rank selection combines both via the core-consistency diagnostic
(:func:`corcondia`): for each route, the chosen rank is the largest one
whose diagnostic clears a threshold, and the final estimate is the maximum
over the two routes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from recten.tensor import (
    CpModel,
    SparseTensor3,
    frobenius_norm_sq,
    gram,
    mttkrp,
)

__all__ = [
    "SolverOptions",
    "RankDeficiencyError",
    "CorcondiaReport",
    "RankEstimate",
    "nncp_als_l1",
    "cp_apr",
    "kl_divergence",
    "corcondia",
    "estimate_rank",
    "rank_exceeds_one",
]

#: Smallest model value allowed inside KL updates (keeps logs finite).
_APR_FLOOR = 1e-12

#: Hard ceiling on multiplicative KL sweeps regardless of options.
_APR_SWEEP_CAP = 200

#: Relative singular-value cutoff for pseudo-inverses in corcondia.
_PINV_RTOL = 1e-10

#: L2 norm given to re-seeded columns.  Small enough that the replacement
#: barely moves the objective, large enough to stay clearly above
#: min_col_norm; the next HALS update rescales it onto whatever residual
#: mass it finds.
_RESEED_NORM = 1e-2

#: Re-seed attempts granted to each component before it is retired to an
#: exact zero column for the rest of the run.
_MAX_RESEEDS = 8


class RankDeficiencyError(ValueError):
    """A factor matrix is numerically rank deficient where full column rank
    is required (e.g. for the pseudo-inverses in :func:`corcondia`)."""


@dataclass(frozen=True)
class SolverOptions:
    """Knobs shared by the CP solvers.

    Attributes
    ----------
    max_sweeps : int
        Upper bound on full passes over the three modes.
    rel_tol : float
        Stop once the objective decrease over one sweep falls below
        ``rel_tol * max(1, previous objective)``.
    lam : float
        L1 penalty weight for :func:`nncp_als_l1` (ignored by the KL
        solver).  The tuned default is 0.8.
    seed : int
        Seed for the factor initialization stream.
    min_col_norm : float
        A factor column whose gram diagonal falls below this value is
        treated as dead.  With ``lam > 0`` the least-squares solver zeroes
        it out (an all-zero column is a legitimate sparse optimum); with
        ``lam == 0`` it is redrawn from the seeded stream at a tiny norm,
        since without shrinkage a collapse is only ever a lost race
        between components.  A column that collapses repeatedly is
        retired to exact zero, leaving the model effectively lower rank.
    """

    max_sweeps: int = 100
    rel_tol: float = 1e-6
    lam: float = 0.8
    seed: int = 0
    min_col_norm: float = 1e-12

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be > 0")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.min_col_norm <= 0:
            raise ValueError("min_col_norm must be > 0")


def _init_factors(dims, rank, seed):
    """Seeded uniform(0.1, 1.1) init: strictly positive by construction."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return [rng.uniform(0.1, 1.1, size=(d, rank)) for d in dims]


def _check_init(init, dims, rank):
    """Validate warm-start factors and return float copies."""
    if len(init) != 3:
        raise ValueError("init must provide one factor per mode")
    factors = []
    for mode, (f, d) in enumerate(zip(init, dims)):
        f = np.array(f, dtype=float)
        if f.shape != (d, rank):
            raise ValueError(
                f"init factor for mode {mode} has shape {f.shape}, "
                f"expected {(d, rank)}"
            )
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise ValueError("init factors must be finite and non-negative")
        factors.append(f)
    return factors


def _check_fit_args(t: SparseTensor3, rank: int):
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    if t.nnz == 0:
        raise ValueError("cannot fit an empty tensor")
    if rank > min(t.dims):
        warnings.warn(
            f"rank {rank} exceeds the smallest tensor dimension {min(t.dims)}; "
            "the fit is allowed but likely overparameterized",
            stacklevel=3,
        )


def nncp_als_l1(
    t: SparseTensor3,
    rank: int,
    opts: SolverOptions = SolverOptions(),
    trace: list | None = None,
    callback=None,
    init=None,
) -> CpModel:
    """Non-negative CP fit minimizing squared error plus an L1 penalty.

    Minimizes ``||X - D||_F^2 + lam * (sum(A) + sum(B) + sum(C))`` over
    non-negative factors by cyclic column-wise updates: with ``w_r`` the
    residual MTTKRP column and ``g_r`` the matching Hadamard-gram diagonal,
    each column update is ``max(0, (w_r - lam/2) / g_r)``, which both
    enforces non-negativity and produces exact zeros under shrinkage.
    Each column update solves its subproblem exactly, so the objective is
    non-increasing sweep over sweep, with one exception: at ``lam == 0`` a
    column that collapses to zero (a lost race between components, never a
    sparse optimum) is redrawn from the seeded stream, which may bump the
    objective for the sweeps in which a redraw occurs.

    Parameters
    ----------
    t : SparseTensor3
    rank : int
        Number of components, >= 1.
    opts : SolverOptions
    trace : list, optional
        If given, one objective value is appended per completed sweep.
    callback : callable, optional
        Called as ``callback(sweep, factors)`` after every sweep; the
        factor list must be treated as read-only.
    init : sequence of 3 arrays, optional
        Starting factors, one ``(dim, rank)`` non-negative matrix per mode.
        When omitted, factors start from the seeded uniform(0.1, 1.1)
        stream.  Warm-starting a penalized fit from an unpenalized one
        avoids losing components to early shrinkage.

    Returns
    -------
    CpModel
        Deterministic for fixed inputs and seed.
    """
    _check_fit_args(t, rank)
    rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    if init is None:
        factors = [rng.uniform(0.1, 1.1, size=(d, rank)) for d in t.dims]
    else:
        factors = _check_init(init, t.dims, rank)
    indices = (t.i, t.j, t.k)
    grams = [gram(f) for f in factors]
    norm_x = frobenius_norm_sq(t)
    lam = opts.lam
    # With no shrinkage a collapsed column is a numerical dead end (a lost
    # race between components), so it is redrawn from the ongoing stream at
    # a tiny norm: the replacement costs next to nothing in objective and
    # the following update rescales it onto any residual mass (a full-scale
    # redraw would add so much mass that its own best response is zero
    # again).  A component that keeps collapsing is retired to exact zero.
    # Under lam > 0 an all-zero column is a legitimate sparse optimum and
    # stays zero immediately.
    reseed = lam == 0.0
    reseeds_left = np.full(rank, _MAX_RESEEDS if reseed else 0)
    prev = None

    def fresh_column(n):
        draw = rng.uniform(0.1, 1.1, size=n)
        return draw * (_RESEED_NORM / float(np.linalg.norm(draw)))

    for _ in range(opts.max_sweeps):
        redrawn = False
        for mode in range(3):
            m = _mttkrp_raw(t, factors, indices, mode)
            other = [grams[o] for o in range(3) if o != mode]
            g = other[0] * other[1]
            f = factors[mode]
            for r in range(rank):
                denom = g[r, r]
                if denom < opts.min_col_norm:
                    if reseeds_left[r] > 0:
                        reseeds_left[r] -= 1
                        f[:, r] = fresh_column(f.shape[0])
                        redrawn = True
                    else:
                        f[:, r] = 0.0
                    continue
                w = m[:, r] - f @ g[:, r] + f[:, r] * denom
                col = np.maximum(0.0, (w - 0.5 * lam) / denom)
                if reseed and float(col @ col) < opts.min_col_norm:
                    if reseeds_left[r] > 0:
                        reseeds_left[r] -= 1
                        col = fresh_column(col.size)
                        redrawn = True
                    else:
                        col = np.zeros_like(col)
                f[:, r] = col
            grams[mode] = gram(f)

        # <X, D> contracts the mode-3 MTTKRP (all factors current) with C.
        inner = float(np.einsum("ir,ir->", _mttkrp_raw(t, factors, indices, 2), factors[2]))
        norm_d = float(np.sum(grams[0] * grams[1] * grams[2]))
        obj = norm_x - 2.0 * inner + norm_d + lam * sum(float(f.sum()) for f in factors)
        if trace is not None:
            trace.append(obj)
        if callback is not None:
            callback(len(trace) if trace is not None else 0, factors)
        # A redrawn column needs at least one more sweep to settle, and the
        # redraw itself may bump the objective, so don't test convergence.
        if redrawn:
            prev = None
            continue
        if prev is not None and prev - obj <= opts.rel_tol * max(1.0, abs(prev)):
            break
        prev = obj

    return CpModel(tuple(factors))


def _mttkrp_raw(t, factors, indices, mode):
    """MTTKRP against a plain factor list (no CpModel validation)."""
    others = [o for o in range(3) if o != mode]
    f1, f2 = factors[others[0]], factors[others[1]]
    x1, x2 = indices[others[0]], indices[others[1]]
    dim = t.dims[mode]
    rank = f1.shape[1]
    out = np.zeros((dim, rank))
    if t.nnz == 0:
        return out
    tmp = t.vals[:, None] * f1[x1] * f2[x2]
    target = indices[mode]
    for r in range(rank):
        out[:, r] = np.bincount(target, weights=tmp[:, r], minlength=dim)
    return out


def kl_divergence(t: SparseTensor3, model: CpModel) -> float:
    """Generalized KL divergence D(X || D) over the full dense grid.

    Equals ``sum(d) - sum(x) + sum(x * log(x / d))`` where the first term
    factorizes over the column sums, so no densification is needed.
    """
    A, B, C = model.factors
    total_model = float(np.sum(A.sum(axis=0) * B.sum(axis=0) * C.sum(axis=0)))
    m = np.einsum("nr,nr,nr->n", A[t.i], B[t.j], C[t.k])
    m = np.maximum(m, _APR_FLOOR)
    x = t.vals
    return total_model - float(x.sum()) + float(np.dot(x, np.log(x / m)))


def cp_apr(
    t: SparseTensor3,
    rank: int,
    opts: SolverOptions = SolverOptions(),
    trace: list | None = None,
) -> CpModel:
    """Non-negative CP fit under KL divergence via multiplicative updates.

    Plain mode-cycling multiplicative updates with a small value floor to
    preserve strict positivity; each mode update is of
    majorize-minimize type, so the KL objective is non-increasing.  Used
    as the second solver family during rank estimation.

    Parameters and return mirror :func:`nncp_als_l1`; ``opts.lam`` is
    ignored.  Sweeps are capped at 200 regardless of options.
    """
    _check_fit_args(t, rank)
    factors = _init_factors(t.dims, rank, opts.seed)
    indices = (t.i, t.j, t.k)
    prev = None

    for _ in range(min(opts.max_sweeps, _APR_SWEEP_CAP)):
        for mode in range(3):
            others = [o for o in range(3) if o != mode]
            f1, f2 = factors[others[0]], factors[others[1]]
            x1, x2 = indices[others[0]], indices[others[1]]
            f = factors[mode]
            target = indices[mode]
            kr = f1[x1] * f2[x2]
            m = np.einsum("nr,nr->n", f[target], kr)
            ratio = t.vals / np.maximum(m, _APR_FLOOR)
            numer = np.empty_like(f)
            weights = ratio[:, None] * kr
            for r in range(rank):
                numer[:, r] = np.bincount(
                    target, weights=weights[:, r], minlength=f.shape[0]
                )
            denom = f1.sum(axis=0) * f2.sum(axis=0)
            factors[mode] = np.maximum(f * numer / np.maximum(denom, _APR_FLOOR), _APR_FLOOR)

        obj = kl_divergence(t, CpModel(tuple(factors)))
        if trace is not None:
            trace.append(obj)
        if prev is not None and prev - obj <= opts.rel_tol * max(1.0, abs(prev)):
            break
        prev = obj

    return CpModel(tuple(factors))


@dataclass(frozen=True)
class CorcondiaReport:
    """Core-consistency diagnostic result.

    Attributes
    ----------
    rank : int
        Rank of the scored model.
    core : ndarray, shape (R, R, R)
        Least-squares Tucker core of the data against the model factors.
    score : float
        ``100 * (1 - sum((core - superdiag)^2) / R)``; 100 for a perfect
        superdiagonal core, and 100 by convention at rank 1.
    """

    rank: int
    core: np.ndarray
    score: float


def _pinv_full_rank(f: np.ndarray, mode: int) -> np.ndarray:
    """Pseudo-inverse that refuses numerically rank-deficient factors."""
    u, s, vt = np.linalg.svd(f, full_matrices=False)
    if s[0] <= 0 or s[-1] <= _PINV_RTOL * s[0]:
        raise RankDeficiencyError(
            f"mode-{mode} factor is numerically rank deficient "
            f"(singular values {s[0]:.3e} .. {s[-1]:.3e})"
        )
    return (vt.T / s) @ u.T


def corcondia(t: SparseTensor3, model: CpModel) -> CorcondiaReport:
    """Core-consistency diagnostic of a CP model against a sparse tensor.

    Computes the least-squares Tucker core ``G = X x1 A+ x2 B+ x3 C+``
    through factor pseudo-inverses applied entry-wise to the stored
    entries, then scores the distance of ``G`` from the superdiagonal.

    Raises
    ------
    RankDeficiencyError
        If any factor lacks numerically full column rank; callers doing
        rank selection treat the rank as invalid.
    """
    if model.dims != t.dims:
        raise ValueError(f"model dims {model.dims} do not match tensor dims {t.dims}")
    rank = model.rank
    pinvs = [_pinv_full_rank(f, m + 1) for m, f in enumerate(model.factors)]
    pa = pinvs[0][:, t.i] * t.vals
    pb = pinvs[1][:, t.j]
    pc = pinvs[2][:, t.k]

    core2d = np.zeros((rank * rank, rank))
    chunk = max(1024, int(4_000_000 / max(rank * rank, 1)))
    for lo in range(0, t.nnz, chunk):
        hi = lo + chunk
        z = pa[:, None, lo:hi] * pb[None, :, lo:hi]
        core2d += z.reshape(rank * rank, -1) @ pc[:, lo:hi].T
    core = core2d.reshape(rank, rank, rank)

    if rank == 1:
        score = 100.0
    else:
        ideal = np.zeros_like(core)
        ideal[np.arange(rank), np.arange(rank), np.arange(rank)] = 1.0
        score = 100.0 * (1.0 - float(np.sum((core - ideal) ** 2)) / rank)
    return CorcondiaReport(rank=rank, core=core, score=score)


@dataclass(frozen=True)
class RankEstimate:
    """Outcome of the two-route rank sweep.

    ``scores_als`` / ``scores_apr`` map each attempted rank to its
    diagnostic score (``-inf`` marks a failed or rank-deficient fit), and
    ``rank`` is the maximum of the per-route choices.  When the sweep ran
    with ``keep_model=True``, ``model`` is the fitted model that earned
    the winning route its choice — the natural warm start for a final
    decomposition at ``rank`` (``None`` when the choice is the fit-free
    rank 1).
    """

    rank_als: int
    rank_apr: int
    scores_als: dict = field(default_factory=dict)
    scores_apr: dict = field(default_factory=dict)
    model: CpModel | None = None

    @property
    def rank(self) -> int:
        return max(self.rank_als, self.rank_apr)


def _fit_seed(base_seed: int, family: int, rank: int) -> int:
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, family, rank])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _score_rank(t, rank, family, opts):
    """Fit one (solver family, rank) pair; returns (score, model)."""
    fit_opts = replace(opts, seed=_fit_seed(opts.seed, family, rank),
                       lam=0.0 if family == 0 else opts.lam)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = nncp_als_l1(t, rank, fit_opts) if family == 0 else cp_apr(t, rank, fit_opts)
        return corcondia(t, model).score, model
    except (RankDeficiencyError, np.linalg.LinAlgError, FloatingPointError):
        return float("-inf"), None


def estimate_rank(
    t: SparseTensor3,
    r_max: int = 25,
    cc_threshold: float = 50.0,
    opts: SolverOptions = SolverOptions(),
    keep_model: bool = False,
) -> RankEstimate:
    """Pick a decomposition rank via the core-consistency threshold rule.

    For each solver route (least-squares with ``lam = 0``, then KL), fits
    ranks ``2 .. r_max`` and scores each with :func:`corcondia`; the route's
    choice is the largest rank scoring at least ``cc_threshold``.  Rank 1
    scores 100 by convention, so it always qualifies and the result is
    >= 1.  Ranks exceeding the smallest tensor dimension cannot have full
    column rank and are recorded as failed without fitting.

    With ``keep_model=True`` the fit behind the winning route's choice is
    kept on the result.  That model is the one whose core consistency
    justified the rank, which makes it a much safer starting point for a
    final decomposition than a fresh random draw: an independent fit at
    the same rank may land in a poor local optimum even though a
    qualifying one is known to exist.

    Returns
    -------
    RankEstimate
        ``rank`` is the max over the two routes.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    if not (0 < cc_threshold <= 100):
        raise ValueError("cc_threshold must be in (0, 100]")
    if t.nnz == 0:
        raise ValueError("cannot estimate the rank of an empty tensor")

    feasible = min(r_max, min(t.dims))
    picks = []
    all_scores = []
    kept = []
    for family in (0, 1):
        scores = {1: 100.0}
        best_model = None
        for rank in range(2, r_max + 1):
            if rank <= feasible:
                scores[rank], model = _score_rank(t, rank, family, opts)
            else:
                scores[rank], model = float("-inf"), None
            # Ranks ascend, so the last qualifying model seen belongs to
            # the route's final (largest qualifying) choice.
            if keep_model and scores[rank] >= cc_threshold:
                best_model = model
        qualifying = [r for r, s in scores.items() if s >= cc_threshold]
        picks.append(max(qualifying))
        all_scores.append(scores)
        kept.append(best_model if picks[-1] > 1 else None)
    # On a tie the least-squares route wins: its model shares the final
    # decomposition's objective, so it is the more faithful warm start.
    winner = 0 if picks[0] >= picks[1] else 1
    return RankEstimate(
        rank_als=picks[0],
        rank_apr=picks[1],
        scores_als=all_scores[0],
        scores_apr=all_scores[1],
        model=kept[winner] if keep_model else None,
    )


def rank_exceeds_one(
    t: SparseTensor3,
    r_max: int = 25,
    cc_threshold: float = 50.0,
    opts: SolverOptions = SolverOptions(),
) -> bool:
    """True iff the threshold rule would choose a rank greater than one.

    Equivalent to ``estimate_rank(...).rank > 1`` but returns as soon as
    any rank >= 2 in either route clears the threshold, which is the
    common case on tensors that are about to be split further.
    """
    if t.nnz == 0:
        raise ValueError("cannot estimate the rank of an empty tensor")
    feasible = min(r_max, min(t.dims))
    for rank in range(2, feasible + 1):
        for family in (0, 1):
            if _score_rank(t, rank, family, opts)[0] >= cc_threshold:
                return True
    return False
