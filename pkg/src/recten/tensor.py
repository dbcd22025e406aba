"""Sparse 3-mode tensor storage and the dense-free kernels built on it.

The tensor type stores only nonzero entries in coordinate form, canonically
sorted, with duplicate coordinates coalesced by summation.  All numeric
kernels (MTTKRP, gram products, objective evaluation) work directly on the
coordinate arrays and never materialize a dense tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparseTensor3",
    "CpModel",
    "from_coo",
    "frobenius_norm_sq",
    "mttkrp",
    "gram",
    "hadamard_grams",
    "reconstruct_value",
    "objective",
    "restrict",
    "read_tensor_text",
    "write_tensor_text",
]


class SparseTensor3:
    """Immutable sparse 3-mode tensor in coordinate (COO) form.

    Entries are kept lexicographically sorted by (i, j, k), duplicates are
    coalesced by summation and exact zeros are dropped.  Use
    :func:`from_coo` to build one; the constructor trusts its inputs.

    Attributes
    ----------
    dims : tuple of int
        Extents (I, J, K) of the three modes.
    i, j, k : ndarray of int64
        Coordinate arrays, one value per stored entry.
    vals : ndarray of float64
        Entry values, strictly positive and finite.
    """

    __slots__ = ("dims", "i", "j", "k", "vals")

    def __init__(self, dims, i, j, k, vals):
        self.dims = (int(dims[0]), int(dims[1]), int(dims[2]))
        self.i = np.ascontiguousarray(i, dtype=np.int64)
        self.j = np.ascontiguousarray(j, dtype=np.int64)
        self.k = np.ascontiguousarray(k, dtype=np.int64)
        self.vals = np.ascontiguousarray(vals, dtype=np.float64)
        for arr in (self.i, self.j, self.k, self.vals):
            arr.setflags(write=False)

    @property
    def nnz(self) -> int:
        """Number of stored entries."""
        return int(self.vals.shape[0])

    def __eq__(self, other):
        if not isinstance(other, SparseTensor3):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.nnz == other.nnz
            and bool(np.array_equal(self.i, other.i))
            and bool(np.array_equal(self.j, other.j))
            and bool(np.array_equal(self.k, other.k))
            and bool(np.array_equal(self.vals, other.vals))
        )

    def __hash__(self):  # pragma: no cover - identity hashing only
        return id(self)

    def __repr__(self):
        return f"SparseTensor3(dims={self.dims}, nnz={self.nnz})"


def from_coo(dims, coords, vals) -> SparseTensor3:
    """Build a :class:`SparseTensor3` from coordinate data.

    Parameters
    ----------
    dims : sequence of 3 ints
        Positive extents (I, J, K).
    coords : array_like, shape (n, 3)
        Integer coordinates, possibly with duplicates.
    vals : array_like, shape (n,)
        Non-negative finite values.  Duplicated coordinates are summed;
        entries whose (coalesced) value is zero are dropped.

    Returns
    -------
    SparseTensor3

    Raises
    ------
    ValueError
        On non-positive dims, out-of-range coordinates, or negative or
        non-finite values.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    coords = np.asarray(coords, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if coords.size == 0:
        coords = coords.reshape(0, 3)
    if coords.ndim != 2 or coords.shape[1] != 3:
        raise ValueError(f"coords must have shape (n, 3), got {coords.shape}")
    if vals.shape != (coords.shape[0],):
        raise ValueError("coords and vals length mismatch")
    if not np.all(np.isfinite(vals)):
        raise ValueError("values must be finite")
    if np.any(vals < 0):
        raise ValueError("values must be non-negative")
    for m in range(3):
        if coords.shape[0] and (
            coords[:, m].min() < 0 or coords[:, m].max() >= dims[m]
        ):
            raise ValueError(f"mode-{m + 1} coordinate out of range for dims {dims}")

    # Coalesce duplicates via a flat linear index, then drop zeros.
    flat = (coords[:, 0] * dims[1] + coords[:, 1]) * dims[2] + coords[:, 2]
    uniq, inverse = np.unique(flat, return_inverse=True)
    summed = np.bincount(inverse, weights=vals, minlength=uniq.shape[0])
    keep = summed != 0.0
    uniq = uniq[keep]
    summed = summed[keep]
    kk = uniq % dims[2]
    ij = uniq // dims[2]
    jj = ij % dims[1]
    ii = ij // dims[1]
    return SparseTensor3(dims, ii, jj, kk, summed)


@dataclass(frozen=True)
class CpModel:
    """A rank-R CP model: three non-negative factor matrices.

    Attributes
    ----------
    factors : tuple of ndarray
        (A, B, C) with shapes (I, R), (J, R), (K, R); all entries finite
        and non-negative.
    """

    factors: tuple

    def __post_init__(self):
        if len(self.factors) != 3:
            raise ValueError("CpModel needs exactly three factor matrices")
        fixed = []
        rank = None
        for m, f in enumerate(self.factors):
            f = np.ascontiguousarray(f, dtype=np.float64)
            if f.ndim != 2:
                raise ValueError(f"factor {m + 1} must be 2-D")
            if rank is None:
                rank = f.shape[1]
            elif f.shape[1] != rank:
                raise ValueError("factor matrices disagree on rank")
            if not np.all(np.isfinite(f)):
                raise ValueError(f"factor {m + 1} has non-finite entries")
            if np.any(f < 0):
                raise ValueError(f"factor {m + 1} has negative entries")
            f.setflags(write=False)
            fixed.append(f)
        if rank < 1:
            raise ValueError("rank must be >= 1")
        object.__setattr__(self, "factors", tuple(fixed))

    @property
    def rank(self) -> int:
        return int(self.factors[0].shape[1])

    @property
    def dims(self) -> tuple:
        return tuple(int(f.shape[0]) for f in self.factors)


def frobenius_norm_sq(t: SparseTensor3) -> float:
    """Squared Frobenius norm: sum of squared stored values."""
    return float(np.dot(t.vals, t.vals))


def _check_model_dims(t: SparseTensor3, model: CpModel):
    if model.dims != t.dims:
        raise ValueError(f"model dims {model.dims} do not match tensor dims {t.dims}")


def mttkrp(t: SparseTensor3, model: CpModel, mode: int) -> np.ndarray:
    """Matricized-tensor times Khatri-Rao product, sparse-aware.

    For ``mode == 1`` returns M with ``M[i, r] = sum_{(i,j,k)} value *
    B[j, r] * C[k, r]`` over the stored entries; modes 2 and 3 permute the
    roles accordingly.  Only the two factors of the other modes are read.

    Parameters
    ----------
    t : SparseTensor3
    model : CpModel
        Supplies the fixed factors; dims must match ``t``.
    mode : int
        1, 2 or 3.

    Returns
    -------
    ndarray, shape (dims[mode-1], R)
    """
    _check_model_dims(t, model)
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode}")
    A, B, C = model.factors
    idx = (t.i, t.j, t.k)
    target = idx[mode - 1]
    others = [(B, t.j), (C, t.k)] if mode == 1 else (
        [(A, t.i), (C, t.k)] if mode == 2 else [(A, t.i), (B, t.j)]
    )
    (f1, x1), (f2, x2) = others
    dim = t.dims[mode - 1]
    rank = model.rank
    out = np.zeros((dim, rank))
    if t.nnz == 0:
        return out
    tmp = t.vals[:, None] * f1[x1] * f2[x2]
    for r in range(rank):
        out[:, r] = np.bincount(target, weights=tmp[:, r], minlength=dim)
    return out


def gram(factor: np.ndarray) -> np.ndarray:
    """Gram matrix ``F.T @ F`` of a factor matrix."""
    factor = np.asarray(factor, dtype=np.float64)
    if factor.ndim != 2:
        raise ValueError("factor must be 2-D")
    return factor.T @ factor


def hadamard_grams(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Elementwise product of two same-shaped square gram matrices."""
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    if g1.shape != g2.shape or g1.ndim != 2 or g1.shape[0] != g1.shape[1]:
        raise ValueError(f"gram shape mismatch: {g1.shape} vs {g2.shape}")
    return g1 * g2


def reconstruct_value(model: CpModel, i: int, j: int, k: int) -> float:
    """Model value at one cell: ``sum_r A[i,r] * B[j,r] * C[k,r]``."""
    A, B, C = model.factors
    dims = model.dims
    if not (0 <= i < dims[0] and 0 <= j < dims[1] and 0 <= k < dims[2]):
        raise ValueError(f"cell ({i}, {j}, {k}) out of range for dims {dims}")
    return float(np.sum(A[i] * B[j] * C[k]))


def _inner_product(t: SparseTensor3, model: CpModel) -> float:
    """<X, D> over the stored entries of X."""
    A, B, C = model.factors
    if t.nnz == 0:
        return 0.0
    prods = np.einsum("nr,nr,nr->n", A[t.i], B[t.j], C[t.k])
    return float(np.dot(t.vals, prods))


def _model_norm_sq(model: CpModel) -> float:
    A, B, C = model.factors
    return float(np.sum(gram(A) * gram(B) * gram(C)))


def objective(t: SparseTensor3, model: CpModel, lam: float) -> float:
    """L1-regularized squared reconstruction error.

    Evaluates ``||X - D||_F^2 + lam * (sum(A) + sum(B) + sum(C))`` without
    densifying, via ``||X||^2 - 2<X, D> + ||D||^2`` where ``||D||^2`` comes
    from the Hadamard product of the three gram matrices.
    """
    _check_model_dims(t, model)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    A, B, C = model.factors
    fit = frobenius_norm_sq(t) - 2.0 * _inner_product(t, model) + _model_norm_sq(model)
    penalty = lam * (float(A.sum()) + float(B.sum()) + float(C.sum()))
    return fit + penalty


def restrict(t: SparseTensor3, idx_a, idx_b, idx_c) -> SparseTensor3:
    """Entries of ``t`` whose coordinates fall in the given index sets.

    Dims are unchanged; coordinates keep their original values.
    """
    mask = (
        np.isin(t.i, np.asarray(idx_a, dtype=np.int64))
        & np.isin(t.j, np.asarray(idx_b, dtype=np.int64))
        & np.isin(t.k, np.asarray(idx_c, dtype=np.int64))
    )
    return SparseTensor3(t.dims, t.i[mask], t.j[mask], t.k[mask], t.vals[mask])


def read_tensor_text(path) -> SparseTensor3:
    """Read the plain-text tensor format.

    First non-comment line is ``dims I J K``; every further non-comment
    line is ``i j k value`` (0-based indices).  Lines starting with ``#``
    and blank lines are ignored.  Duplicate coordinates are legal and are
    coalesced by summation.
    """
    dims = None
    coords = []
    vals = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if dims is None:
                if parts[0] != "dims" or len(parts) != 4:
                    raise ValueError(
                        f"{path}:{lineno}: expected 'dims I J K' header, got {line!r}"
                    )
                try:
                    dims = tuple(int(p) for p in parts[1:])
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: bad dims: {line!r}") from exc
                continue
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 'i j k value', got {line!r}")
            try:
                coords.append((int(parts[0]), int(parts[1]), int(parts[2])))
                vals.append(float(parts[3]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: bad entry: {line!r}") from exc
    if dims is None:
        raise ValueError(f"{path}: missing 'dims I J K' header")
    coords = np.asarray(coords, dtype=np.int64).reshape(len(vals), 3)
    return from_coo(dims, coords, vals)


def write_tensor_text(t: SparseTensor3, path):
    """Write a tensor in the plain-text format (canonical entry order)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dims {t.dims[0]} {t.dims[1]} {t.dims[2]}\n")
        for i, j, k, v in zip(t.i, t.j, t.k, t.vals):
            fh.write(f"{i} {j} {k} {float(v)!r}\n")
