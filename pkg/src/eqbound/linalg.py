"""SPD solves, redundant-constraint elimination and equality-constrained QP.

The saddle solver minimizes ``1/2 x^T A x - x^T B`` subject to a sequence of
linear equality blocks by factorizing the bordered (KKT) matrix.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack
from scipy.sparse.csgraph import connected_components

from .errors import InfeasibleConstraintsError, NotSPDError, RankDeficiencyError

log = logging.getLogger(__name__)

PIVOT_TOL = 1e-10
RHS_TOL = 1e-8
DENSE_LIMIT = 1500
COMPONENT_LIMIT = 600


@dataclass(frozen=True, eq=False)
class SparseSymmetric:
    """Symmetric matrix stored by its lower triangle (COO, duplicates summed)."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @classmethod
    def from_matrix(cls, a) -> "SparseSymmetric":
        m = sp.tril(sp.coo_matrix(a)).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        coo = m.tocoo()
        return cls(m.shape[0], coo.row.copy(), coo.col.copy(), coo.data.copy())

    @classmethod
    def from_triplets(cls, n, rows, cols, vals) -> "SparseSymmetric":
        """Build from entries of the full matrix; upper entries are dropped."""
        rows, cols, vals = map(np.asarray, (rows, cols, vals))
        keep = rows >= cols
        m = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
        return cls.from_matrix(m)

    def tocsc(self) -> sp.csc_matrix:
        low = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, self.n))
        diag = sp.diags(low.diagonal())
        return (low + low.T - diag).tocsc()

    def toarray(self) -> np.ndarray:
        return self.tocsc().toarray()

    def __matmul__(self, x):
        return self.tocsc() @ x


def _as_symmetric(a) -> SparseSymmetric:
    return a if isinstance(a, SparseSymmetric) else SparseSymmetric.from_matrix(a)


@dataclass(eq=False)
class ConstraintBlock:
    """Rows ``matrix @ x = rhs`` with a label (``C``, ``L``, ``P`` or other)."""

    matrix: object
    rhs: np.ndarray
    label: str = "L"
    kept: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        if self.matrix.shape[0] != len(self.rhs):
            raise ValueError(
                f"block {self.label}: {self.matrix.shape[0]} rows but rhs has {len(self.rhs)} entries"
            )

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x - self.rhs


# --------------------------------------------------------------------------

def solve_spd(a, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``."""
    a = _as_symmetric(a)
    b = np.asarray(b, dtype=float)
    if np.all(a.rows == a.cols):  # diagonal: divide exactly
        diag = np.zeros(a.n)
        diag[a.rows] = a.vals
        if np.any(diag <= 0):
            raise NotSPDError("non-positive diagonal entry")
        return b / (diag if b.ndim == 1 else diag[:, None])
    if a.n <= DENSE_LIMIT:
        try:
            c = sla.cho_factor(a.toarray(), lower=True, check_finite=True)
        except sla.LinAlgError as exc:
            raise NotSPDError(f"matrix is not positive definite: {exc}") from exc
        return sla.cho_solve(c, b)
    csc = a.tocsc()
    try:
        lu = spla.splu(csc, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NotSPDError(f"zero pivot during factorization: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0):
        raise NotSPDError("non-positive pivot encountered")
    return lu.solve(b)


# --------------------------------------------------------------------------

def _project_out(m: sp.csr_matrix, rhs: np.ndarray, basis: ConstraintBlock):
    """Remove the row space of ``basis`` from the rows of ``m``."""
    bm = basis.matrix.tocsr()
    nnz_per_row = np.diff(bm.indptr)
    if np.all(nnz_per_row == 1):
        cols = bm.indices
        scale = bm.data
        q = basis.rhs / scale
        rhs = rhs - m[:, cols] @ q
        keep = np.ones(m.shape[1], dtype=bool)
        keep[cols] = False
        m = (m @ sp.diags(keep.astype(float))).tocsr()
        m.eliminate_zeros()
        return m, rhs
    b = bm.toarray()
    gram = b @ b.T
    md = m.toarray()
    coef = sla.solve(gram, b @ md.T, assume_a="pos").T
    return sp.csr_matrix(md - coef @ b), rhs - coef @ basis.rhs


def redundant_rows_dense(m: np.ndarray, rhs: np.ndarray, label: str = "L", tol: float = PIVOT_TOL,
                         basis: tuple[np.ndarray, np.ndarray] | None = None,
                         rhs_tol: float = RHS_TOL) -> np.ndarray:
    """Dense counterpart of :func:`eliminate_redundant_rows`.

    ``basis`` is an optional pair ``(matrix, rhs)``.  Returns the sorted
    indices of the kept rows.
    """
    m = np.asarray(m, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if m.shape[0] == 0:
        return np.zeros(0, dtype=int)
    row_max = np.sqrt((m * m).sum(axis=1)).max()
    rhs_scale = np.abs(rhs).max()
    if basis is not None and len(basis[1]):
        b, brhs = np.asarray(basis[0], dtype=float), np.asarray(basis[1], dtype=float)
        bnorm = np.sqrt((b * b).sum(axis=1))
        rhs_scale = max(rhs_scale, row_max * np.abs(brhs / np.maximum(bnorm, 1e-300)).max())
        nnz = (b != 0).sum(axis=1)
        if np.all(nnz == 1):
            cols = np.argmax(b != 0, axis=1)
            q = brhs / b[np.arange(len(cols)), cols]
            rhs = rhs - m[:, cols] @ q
            m = m.copy()
            m[:, cols] = 0.0
        else:
            coef = sla.solve(b @ b.T, b @ m.T, assume_a="pos").T
            m, rhs = m - coef @ b, rhs - coef @ brhs
    norms = np.sqrt((m * m).sum(axis=1))
    rhs_scale = max(rhs_scale, np.abs(rhs).max())
    zero = norms <= tol * max(norms.max(), np.finfo(float).tiny)
    bad = [(int(r), float(rhs[r])) for r in np.flatnonzero(zero) if abs(rhs[r]) > rhs_tol * rhs_scale]
    live = np.flatnonzero(~zero)
    kept = live
    if len(live) > 1:
        nm = m[live] / norms[live, None]
        c = rhs[live] / norms[live]
        c_scale = max(np.abs(c).max(), rhs_scale / max(row_max, np.finfo(float).tiny),
                      np.finfo(float).tiny)
        gram = nm @ nm.T
        fac, piv, rank, info = lapack.dpstrf(gram, lower=0, tol=tol * gram.diagonal().max())
        if info < 0:
            raise RankDeficiencyError(f"pivoted Cholesky failed (info={info})")
        piv = piv - 1
        rank = int(rank)
        kept = live[piv[:rank]]
        if rank < len(live):
            alpha = sla.solve_triangular(np.triu(fac[:rank, :rank]), fac[:rank, rank:], lower=False)
            mismatch = c[piv[rank:]] - alpha.T @ c[piv[:rank]]
            bad += [(int(live[p]), float(mm)) for p, mm in zip(piv[rank:], mismatch)
                    if abs(mm) > rhs_tol * c_scale]
    if bad:
        row, mm = bad[0]
        raise InfeasibleConstraintsError(
            f"block {label}: redundant row {row} is inconsistent (rhs mismatch {mm:.3e}); "
            f"{len(bad)} inconsistent row(s) in total"
        )
    return np.sort(kept)


def _sparse_component(sub: sp.csr_matrix, c: np.ndarray, tol: float):
    """Redundancy of one large group of normalized rows without dense algebra.

    The near-null space of the row Gram matrix is found by shift-invert
    Lanczos, the rows to drop are picked by pivoted QR of that basis, and the
    exact dependency of each dropped row on the kept rows is recomputed from
    the (nonsingular) Gram matrix of the kept rows.  Returns ``None`` when the
    null space is too large for this to pay off; the caller then falls back to
    the dense factorization.
    """
    n = sub.shape[0]
    gram = (sub @ sub.T).tocsc()
    thr = tol * gram.diagonal().max()
    k = min(8, n - 2)
    while True:
        try:
            w, v = spla.eigsh(gram, k=k, sigma=-1e-6 * gram.diagonal().max(), which="LM", v0=np.ones(n))
        except (RuntimeError, spla.ArpackError):
            return None
        null = w <= thr
        if not np.all(null):
            break
        if 2 * k >= n // 4:
            return None
        k = min(2 * k, n - 2)
    z = v[:, null]
    nk = z.shape[1]
    if nk == 0:
        return np.arange(n), np.zeros(0, dtype=int), np.zeros(0)
    _, _, piv = sla.qr(z.T, mode="economic", pivoting=True)
    drop = np.sort(piv[:nk])
    mask = np.ones(n, dtype=bool)
    mask[drop] = False
    keep = np.flatnonzero(mask)
    g_kk = gram[keep][:, keep].tocsc()
    g_kd = gram[keep][:, drop].toarray()
    try:
        alpha = spla.splu(g_kk).solve(g_kd)
    except RuntimeError:
        return None
    resid = sub[drop] - sp.csr_matrix(alpha.T) @ sub[keep]
    if np.abs(resid.toarray()).max(initial=0.0) > np.sqrt(tol):
        return None
    mismatch = c[drop] - alpha.T @ c[keep]
    return keep, drop, mismatch


def eliminate_redundant_rows(block: ConstraintBlock, tol: float = PIVOT_TOL,
                             basis: ConstraintBlock | None = None,
                             rhs_tol: float = RHS_TOL) -> ConstraintBlock:
    """Discard rows that are linear combinations of other rows.

    Rows are normalized and the Gram matrix of every connected group of rows
    is factorized by Cholesky with complete pivoting; pivots below
    ``tol * max pivot`` mark redundant rows.  A redundant row whose rhs
    disagrees with the combination of kept rows by more than ``rhs_tol``
    times the data scale (largest rhs, including the basis rhs) raises :class:`InfeasibleConstraintsError`.

    With ``basis`` given, redundancy is judged modulo the row space of
    ``basis`` (rows implied by basis rows are dropped too).

    The returned block keeps the original rows, in their original order;
    ``kept`` holds their indices.
    """
    m = block.matrix.tocsr().astype(float)
    rhs = block.rhs.copy()
    n = m.shape[0]
    if n == 0:
        return ConstraintBlock(block.matrix, block.rhs, block.label, kept=np.zeros(0, dtype=int))
    if n * m.shape[1] <= DENSE_LIMIT ** 2 // 16:
        bpair = (basis.matrix.toarray(), basis.rhs) if basis is not None else None
        kept = redundant_rows_dense(m.toarray(), rhs, block.label, tol, bpair, rhs_tol)
        return ConstraintBlock(block.matrix[kept], block.rhs[kept], block.label, kept=kept)
    # consistency is judged against the data magnitudes before projection,
    # since projected right-hand sides may be pure round-off
    row_max = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel()).max()
    rhs_scale = np.abs(rhs).max()
    if basis is not None and basis.n_rows:
        bnorm = np.sqrt(np.asarray(basis.matrix.multiply(basis.matrix).sum(axis=1)).ravel())
        rhs_scale = max(rhs_scale, row_max * np.abs(basis.rhs / np.maximum(bnorm, 1e-300)).max())
        m, rhs = _project_out(m, rhs, basis)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    rhs_scale = max(rhs_scale, np.abs(rhs).max())
    zero = norms <= tol * max(norms.max(), np.finfo(float).tiny)
    kept: list[int] = []
    bad: list[tuple[int, float]] = []
    for r in np.flatnonzero(zero):
        if abs(rhs[r]) > rhs_tol * rhs_scale:
            bad.append((int(r), float(rhs[r])))
    live = np.flatnonzero(~zero)
    if len(live):
        nm = sp.diags(1.0 / norms[live]) @ m[live]
        c = rhs[live] / norms[live]
        c_scale = max(np.abs(c).max(), rhs_scale / max(row_max, np.finfo(float).tiny),
                      np.finfo(float).tiny)
        adj = (abs(nm) @ abs(nm).T).tocsr()
        ncomp, comp = connected_components(adj, directed=False)
        order = np.argsort(comp, kind="stable")
        bounds = np.searchsorted(comp[order], np.arange(ncomp + 1))
        for k in range(ncomp):
            idx = order[bounds[k]:bounds[k + 1]]
            sub = nm[idx]
            if len(idx) == 1:
                kept.append(int(live[idx[0]]))
                continue
            if len(idx) > COMPONENT_LIMIT:
                local = _sparse_component(sub, c[idx], tol)
                if local is not None:
                    keep_l, drop_l, mismatch = local
                    kept.extend(int(live[idx[p]]) for p in keep_l)
                    for p, mm in zip(drop_l, mismatch):
                        if abs(mm) > rhs_tol * c_scale:
                            bad.append((int(live[idx[p]]), float(mm)))
                    continue
            gram = (sub @ sub.T).toarray()
            fac, piv, rank, info = lapack.dpstrf(gram, lower=0, tol=tol * gram.diagonal().max())
            if info < 0:
                raise RankDeficiencyError(f"pivoted Cholesky failed (info={info})")
            piv = piv - 1
            rank = int(rank)
            kept.extend(int(live[idx[p]]) for p in piv[:rank])
            if rank < len(idx):
                r11 = np.triu(fac[:rank, :rank])
                r12 = fac[:rank, rank:]
                alpha = sla.solve_triangular(r11, r12, lower=False)
                ck = c[idx[piv[:rank]]]
                cd = c[idx[piv[rank:]]]
                mismatch = cd - alpha.T @ ck
                for p, mm in zip(piv[rank:], mismatch):
                    if abs(mm) > rhs_tol * c_scale:
                        bad.append((int(live[idx[p]]), float(mm)))
    if bad:
        row, mm = bad[0]
        raise InfeasibleConstraintsError(
            f"block {block.label}: redundant row {row} is inconsistent (rhs mismatch {mm:.3e}); "
            f"{len(bad)} inconsistent row(s) in total"
        )
    kept_arr = np.array(sorted(kept), dtype=int)
    return ConstraintBlock(block.matrix[kept_arr], block.rhs[kept_arr], block.label, kept=kept_arr)


# --------------------------------------------------------------------------

class SaddleResult(NamedTuple):
    primal: np.ndarray
    multipliers: dict
    ridge: float


def _block_rank_deficient(block: ConstraintBlock) -> bool:
    if block.n_rows == 0:
        return False
    try:
        red = eliminate_redundant_rows(block, rhs_tol=np.inf)
    except RankDeficiencyError:
        return True
    return red.n_rows < block.n_rows


def _factor_solve(kkt, rhs, dense: bool):
    if dense:
        with warnings.catch_warnings():
            warnings.simplefilter("error", sla.LinAlgWarning)
            lu = sla.lu_factor(kkt.toarray() if sp.issparse(kkt) else kkt)
        return lambda r: sla.lu_solve(lu, r), lu
    lu = spla.splu(kkt.tocsc())
    return lu.solve, lu


def solve_saddle_dense(a: np.ndarray, b: np.ndarray, c: np.ndarray, q: np.ndarray,
                       tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Dense KKT solve of ``min 1/2 x^T a x - x^T b`` s.t. ``c x = q``.

    ``c`` must have full row rank.  Returns ``(x, multipliers)``; two steps
    of iterative refinement are applied.
    """
    n, m = a.shape[0], c.shape[0]
    k = np.zeros((n + m, n + m))
    k[:n, :n] = a
    k[:n, n:] = c.T
    k[n:, :n] = c
    rhs = np.concatenate([b, q])
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu = sla.lu_factor(k, check_finite=False)
        except (sla.LinAlgError, sla.LinAlgWarning) as exc:
            raise RankDeficiencyError(f"dense KKT matrix is singular: {exc}") from exc
    sol = sla.lu_solve(lu, rhs, check_finite=False)
    scale = max(np.abs(rhs).max(), 1e-300)
    for _ in range(2):
        res = rhs - k @ sol
        if np.abs(res).max() <= 1e-2 * tol * scale:
            break
        sol = sol + sla.lu_solve(lu, res, check_finite=False)
    if not np.all(np.isfinite(sol)):
        raise RankDeficiencyError("dense KKT solve produced non-finite values")
    return sol[:n], sol[n:]


def solve_saddle(a, b, blocks: Sequence[ConstraintBlock] = (), tol: float = 1e-10) -> SaddleResult:
    """Minimize ``1/2 x^T A x - x^T b`` subject to every block ``C x = q``.

    Blocks must already have full row rank (jointly).  Returns the primal
    solution and one multiplier vector per block label.
    """
    a = _as_symmetric(a)
    bvec = np.asarray(b, dtype=float)
    n = a.n
    blocks = [blk for blk in blocks]
    cmat = sp.vstack([blk.matrix for blk in blocks]).tocsr() if blocks else sp.csr_matrix((0, n))
    q = np.concatenate([blk.rhs for blk in blocks]) if blocks else np.zeros(0)
    m = cmat.shape[0]
    amat = a.tocsc()
    rhs = np.concatenate([bvec, q])
    dense = n + m <= DENSE_LIMIT

    if dense:
        ad, cd = amat.toarray(), cmat.toarray()

    def kkt_matrix(ridge):
        if dense:
            k = np.zeros((n + m, n + m))
            k[:n, :n] = ad + ridge * np.eye(n)
            k[:n, n:] = cd.T
            k[n:, :n] = cd
            return k
        aa = amat + ridge * sp.identity(n, format="csc") if ridge else amat
        return sp.bmat([[aa, cmat.T], [cmat, None]], format="csc")

    ridge = 0.0
    try:
        solve, _ = _factor_solve(kkt_matrix(0.0), rhs, dense)
        sol = solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise RuntimeError("non-finite solution")
    except (RuntimeError, sla.LinAlgError, sla.LinAlgWarning) as exc:
        for blk in blocks:
            if _block_rank_deficient(blk):
                raise RankDeficiencyError(
                    f"constraint block {blk.label} is rank deficient ({blk.n_rows} rows)"
                ) from exc
        if m and _block_rank_deficient(ConstraintBlock(cmat, q, "stacked")):
            raise RankDeficiencyError("constraint blocks are jointly rank deficient") from exc
        ridge = 1e-12 * max(amat.diagonal().sum() / max(n, 1), np.finfo(float).tiny)
        log.warning("KKT factorization failed (%s); retrying with ridge %.3e", exc, ridge)
        try:
            solve, _ = _factor_solve(kkt_matrix(ridge), rhs, dense)
            sol = solve(rhs)
        except (RuntimeError, sla.LinAlgError, sla.LinAlgWarning) as exc2:
            raise RankDeficiencyError(
                "KKT matrix singular: A is not definite on the constraint null space"
            ) from exc2
    kkt = kkt_matrix(ridge)
    scale = max(np.abs(rhs).max(), 1e-300)
    for _ in range(3):
        res = rhs - kkt @ sol
        if np.abs(res).max() <= 1e-2 * tol * scale:
            break
        sol = sol + solve(res)
    x = sol[:n]
    mult = {}
    off = n
    for blk in blocks:
        mult[blk.label] = sol[off:off + blk.n_rows]
        off += blk.n_rows
    return SaddleResult(x, mult, ridge)


def constraint_residual(blocks: Sequence[ConstraintBlock], x: np.ndarray) -> float:
    """Largest relative violation ``|Cx - q|_inf / (1 + |q|_inf)`` over blocks."""
    worst = 0.0
    for blk in blocks:
        if blk.n_rows:
            worst = max(worst, np.abs(blk.residual(x)).max() / (1.0 + np.abs(blk.rhs).max()))
    return worst
