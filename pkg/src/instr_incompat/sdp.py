"""Self-contained deterministic solver for small semidefinite programs.

Problems consist of Hermitian PSD block variables (a block of dimension 1 is
a nonnegative scalar), a real linear objective, and affine equality
constraints ``sum_b <C_kb, X_b> = r_k`` in the real Hilbert-Schmidt pairing.

The solver is a first-order operator-splitting iteration: it alternates a
projection onto the affine subspace (through a cached least-squares
factorization of the constraint operator) with a blockwise projection onto
the PSD cone by eigenvalue clipping, with over-relaxation and the standard
residual-based stopping rule.  Everything is dense and deterministic: the
same problem bits and settings produce the same solution bits.

Internally each Hermitian block is flattened to a real vector through the
isometry ``svec`` (diagonal, then sqrt(2) times the real and imaginary parts
of the upper triangle), so constraints are stored as sparse real rows rather
than as the coefficient matrices they are built from.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .linalg import as_matrix, dagger, frobenius

_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Real parametrization of Hermitian matrices
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _triu(n: int):
    return np.triu_indices(n, 1)


def svec(x: np.ndarray) -> np.ndarray:
    """Flatten a Hermitian matrix to a real vector, preserving inner products."""
    n = x.shape[0]
    if n == 1:
        return np.array([x[0, 0].real])
    iu, ju = _triu(n)
    off = x[iu, ju]
    return np.concatenate([np.diag(x).real, _SQRT2 * off.real, _SQRT2 * off.imag])


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    if n == 1:
        return np.array([[v[0]]], dtype=np.complex128)
    t = n * (n - 1) // 2
    x = np.zeros((n, n), dtype=np.complex128)
    np.fill_diagonal(x, v[:n])
    iu, ju = _triu(n)
    upper = (v[n : n + t] + 1j * v[n + t :]) / _SQRT2
    x[iu, ju] = upper
    x[ju, iu] = upper.conj()
    return x


def _offdiag_pos(i: int, j: int, n: int) -> int:
    # Position of the pair (i, j), i < j, in row-major upper-triangle order.
    return i * n - i * (i + 1) // 2 + (j - i - 1)


# Hermitian coefficient matrices picking out single real coordinates of a block.


def unit_diag(i: int, d: int) -> np.ndarray:
    """Hermitian C with ``tr(C X) = X_ii``."""
    c = np.zeros((d, d), dtype=np.complex128)
    c[i, i] = 1.0
    return c


def unit_real(i: int, j: int, d: int) -> np.ndarray:
    """Hermitian C with ``tr(C X) = Re X_ij`` for Hermitian X."""
    c = np.zeros((d, d), dtype=np.complex128)
    c[i, j] = 0.5
    c[j, i] = 0.5
    return c


def unit_imag(i: int, j: int, d: int) -> np.ndarray:
    """Hermitian C with ``tr(C X) = Im X_ij`` for Hermitian X."""
    c = np.zeros((d, d), dtype=np.complex128)
    c[i, j] = 0.5j
    c[j, i] = -0.5j
    return c


# ---------------------------------------------------------------------------
# Linear terms of matrix-valued constraints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityTerm:
    """The block itself, scaled: contributes ``scale * X_b`` to the equation."""

    scale: float = 1.0

    def rows(self, eq_dim: int, block_dim: int) -> sp.spmatrix:
        if eq_dim != block_dim:
            raise ValueError(
                f"identity term needs equation dim {eq_dim} == block dim {block_dim}"
            )
        return self.scale * sp.identity(eq_dim * eq_dim, format="coo")


@dataclass(frozen=True)
class PTraceTerm:
    """Partial trace of the block over the factors not in ``keep``, scaled."""

    dims: tuple
    keep: tuple
    scale: float = 1.0

    def rows(self, eq_dim: int, block_dim: int) -> sp.spmatrix:
        return _ptrace_rows(tuple(self.dims), tuple(sorted(self.keep)), self.scale)


@dataclass(frozen=True)
class ScalarTerm:
    """A 1x1 block entering as ``x * matrix``; ``matrix`` must be Hermitian."""

    matrix: np.ndarray

    def rows(self, eq_dim: int, block_dim: int) -> sp.spmatrix:
        if block_dim != 1:
            raise ValueError("scalar term requires a 1x1 block")
        m = as_matrix(self.matrix)
        if m.shape != (eq_dim, eq_dim):
            raise ValueError(f"scalar term matrix shape {m.shape} != equation dim {eq_dim}")
        col = svec(m).reshape(-1, 1)
        return sp.coo_matrix(col)


@dataclass(frozen=True)
class MapTerm:
    """A general real linear map given as a matrix acting on svec coordinates."""

    matrix: np.ndarray

    def rows(self, eq_dim: int, block_dim: int) -> sp.spmatrix:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (eq_dim * eq_dim, block_dim * block_dim):
            raise ValueError(
                f"map term shape {m.shape} incompatible with equation dim {eq_dim} "
                f"and block dim {block_dim}"
            )
        return sp.coo_matrix(m)


@lru_cache(maxsize=None)
def _ptrace_rows(dims: tuple, keep: tuple, scale: float) -> sp.coo_matrix:
    """Sparse matrix R with ``svec(ptrace(X)) = R svec(X)``."""
    dims = [int(d) for d in dims]
    n_fac = len(dims)
    traced = [k for k in range(n_fac) if k not in keep]
    d_full = int(np.prod(dims))
    d_small = int(np.prod([dims[k] for k in keep])) if keep else 1
    strides = [int(np.prod(dims[k + 1 :])) for k in range(n_fac)]

    kept_digits = []
    for s in range(d_small):
        digits, rem = [], s
        for k in keep:
            block = int(np.prod([dims[q] for q in keep if q > k])) if keep else 1
            digits.append(rem // block)
            rem = rem % block
        kept_digits.append(digits)

    traced_tuples = [[]]
    for k in traced:
        traced_tuples = [t + [v] for t in traced_tuples for v in range(dims[k])]

    def full_index(small: int, tdigits) -> int:
        idx = 0
        for pos, k in enumerate(keep):
            idx += kept_digits[small][pos] * strides[k]
        for pos, k in enumerate(traced):
            idx += tdigits[pos] * strides[k]
        return idx

    rows, cols, vals = [], [], []
    t_half = d_small * (d_small - 1) // 2
    f_half = d_full * (d_full - 1) // 2

    def emit(row: int, fr: int, fc: int, val: complex) -> None:
        # svec coordinates of a Hermitian coefficient with entry val at (fr, fc)
        # (and conj(val) at (fc, fr), handled by only emitting fr <= fc).
        if fr == fc:
            rows.append(row), cols.append(fr), vals.append(val.real)
        else:
            p = _offdiag_pos(fr, fc, d_full)
            re, im = _SQRT2 * val.real, _SQRT2 * val.imag
            if re != 0.0:
                rows.append(row), cols.append(d_full + p), vals.append(re)
            if im != 0.0:
                rows.append(row), cols.append(d_full + f_half + p), vals.append(im)

    for s_row in range(d_small):
        for s_col in range(s_row, d_small):
            if s_row == s_col:
                basis = [(s_row, s_col, 1.0 + 0.0j, s_row)]  # diag coordinate
            else:
                p = _offdiag_pos(s_row, s_col, d_small)
                basis = [
                    (s_row, s_col, 1.0 / _SQRT2 + 0.0j, d_small + p),
                    (s_row, s_col, 1j / _SQRT2, d_small + t_half + p),
                ]
            for i_s, j_s, b_val, row in basis:
                for t in traced_tuples:
                    fr = full_index(i_s, t)
                    fc = full_index(j_s, t)
                    if fr <= fc:
                        emit(row, fr, fc, scale * b_val)
                    else:
                        emit(row, fc, fr, scale * np.conjugate(b_val))

    return sp.coo_matrix(
        (vals, (rows, cols)), shape=(d_small * d_small, d_full * d_full)
    )


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------


class SdpProblem:
    """A conic program: PSD blocks, linear objective, affine equality rows.

    Constraints are entered either as scalar equalities with one Hermitian
    coefficient matrix per involved block (:meth:`add_constraint`) or as
    matrix-valued equalities assembled from linear terms
    (:meth:`add_matrix_constraint`); both are scalarized immediately into
    sparse rows over svec coordinates.
    """

    def __init__(self):
        self.blocks: list[int] = []
        self._obj: dict[int, np.ndarray] = {}
        self._rows: list[int] = []
        self._cols: list[int] = []
        self._vals: list[float] = []
        self._rhs: list[float] = []

    # -- construction -------------------------------------------------------

    def add_block(self, dim: int) -> int:
        if dim < 1:
            raise ValueError("block dimension must be positive")
        self.blocks.append(int(dim))
        return len(self.blocks) - 1

    def _offset(self, block: int) -> int:
        return sum(d * d for d in self.blocks[:block])

    @property
    def n_vars(self) -> int:
        return sum(d * d for d in self.blocks)

    @property
    def n_constraints(self) -> int:
        return len(self._rhs)

    def _check_coeff(self, block: int, coeff: np.ndarray) -> np.ndarray:
        if block < 0 or block >= len(self.blocks):
            raise ValueError(f"unknown block index {block}")
        c = as_matrix(coeff)
        d = self.blocks[block]
        if c.shape != (d, d):
            raise ValueError(f"coefficient shape {c.shape} does not match block dim {d}")
        if frobenius(c - dagger(c)) > 1e-12 * (1.0 + frobenius(c)):
            raise ValueError("constraint and objective coefficients must be Hermitian")
        return c

    def add_objective(self, block: int, coeff: np.ndarray) -> None:
        c = self._check_coeff(block, coeff)
        if block in self._obj:
            self._obj[block] = self._obj[block] + c
        else:
            self._obj[block] = c

    def add_constraint(self, coeffs: Mapping[int, np.ndarray], rhs: float) -> None:
        """Add one scalar equality ``sum_b <coeffs[b], X_b> = rhs``."""
        rhs = float(rhs)
        if not np.isfinite(rhs):
            raise ValueError("constraint right-hand side must be finite")
        row = len(self._rhs)
        for block, coeff in coeffs.items():
            c = self._check_coeff(block, coeff)
            vec = svec(c)
            off = self._offset(block)
            nz = np.nonzero(vec)[0]
            self._rows.extend([row] * len(nz))
            self._cols.extend((off + nz).tolist())
            self._vals.extend(vec[nz].tolist())
        self._rhs.append(rhs)

    def add_matrix_constraint(self, terms: Sequence, rhs_matrix: np.ndarray) -> None:
        """Add the Hermitian matrix equality ``sum terms = rhs_matrix``.

        ``terms`` is a sequence of ``(block_index, term)`` pairs where each
        term is one of :class:`IdentityTerm`, :class:`PTraceTerm`,
        :class:`ScalarTerm`, :class:`MapTerm`.  The equation is scalarized
        over an orthonormal Hermitian basis of the equation space, adding
        ``eq_dim**2`` rows.
        """
        r = as_matrix(rhs_matrix)
        eq_dim = r.shape[0]
        if frobenius(r - dagger(r)) > 1e-12 * (1.0 + frobenius(r)):
            raise ValueError("matrix constraint right-hand side must be Hermitian")
        row0 = len(self._rhs)
        for block, term in terms:
            if block < 0 or block >= len(self.blocks):
                raise ValueError(f"unknown block index {block}")
            mat = term.rows(eq_dim, self.blocks[block]).tocoo()
            off = self._offset(block)
            self._rows.extend((mat.row + row0).tolist())
            self._cols.extend((mat.col + off).tolist())
            self._vals.extend(mat.data.tolist())
        self._rhs.extend(svec(r).tolist())

    # -- assembled data ------------------------------------------------------

    def assemble(self):
        n, m = self.n_vars, self.n_constraints
        a = sp.coo_matrix(
            (self._vals, (self._rows, self._cols)), shape=(m, n)
        ).tocsr()
        a.sum_duplicates()
        b = np.array(self._rhs, dtype=np.float64)
        c = np.zeros(n, dtype=np.float64)
        for block, coeff in self._obj.items():
            off = self._offset(block)
            d = self.blocks[block]
            c[off : off + d * d] = svec(coeff)
        return a, b, c


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITERATIONS = "max_iterations"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class SolveSettings:
    """Solver settings; ``rho`` and ``over_relax`` are the step parameters."""

    tol: float = 1e-7
    max_iter: int = 200000
    rho: float = 1.0
    over_relax: float = 1.6
    check_every: int = 25


@dataclass(frozen=True)
class SdpSolution:
    status: SolveStatus
    objective_value: float
    block_values: tuple
    primal_residual: float
    dual_residual: float
    min_eigenvalue: float
    iterations: int


class _AffineProjector:
    """Cached least-squares projection onto ``{x : Ax = b}``.

    Uses an eigendecomposition of the (small, dense) Gram matrix ``A A^T``
    with spectral-cutoff pseudo-inversion, so consistent redundant rows are
    harmless.
    """

    def __init__(self, a: sp.csr_matrix, b: np.ndarray):
        self.a = a
        self.b = b
        m = a.shape[0]
        if m == 0:
            self.empty = True
            return
        self.empty = False
        gram = (a @ a.T).toarray()
        w, u = np.linalg.eigh(gram)
        cutoff = max(w[-1], 0.0) * 1e-12 if w.size else 0.0
        inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
        self._u = u
        self._inv = inv

    def gram_solve(self, y: np.ndarray) -> np.ndarray:
        return self._u @ (self._inv * (self._u.T @ y))

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.empty:
            return x
        return x - self.a.T @ self.gram_solve(self.a @ x - self.b)

    def residual(self, x: np.ndarray) -> float:
        if self.empty:
            return 0.0
        return float(np.linalg.norm(self.a @ x - self.b))


def _normalize_rows(a: sp.csr_matrix, b: np.ndarray):
    norms = np.sqrt(np.asarray(a.multiply(a).sum(axis=1)).ravel())
    keep = norms > 1e-300
    bad = ~keep & (np.abs(b) > 1e-12)
    scale = np.where(keep, norms, 1.0)
    d = sp.diags(1.0 / scale)
    return (d @ a).tocsr(), b / scale, bool(bad.any())


def _project_blocks(v: np.ndarray, blocks, offsets) -> np.ndarray:
    out = np.empty_like(v)
    for dim, off in zip(blocks, offsets):
        if dim == 1:
            out[off] = max(v[off], 0.0)
            continue
        x = smat(v[off : off + dim * dim], dim)
        w, q = np.linalg.eigh(x)
        w = np.maximum(w, 0.0)
        out[off : off + dim * dim] = svec((q * w) @ dagger(q))
    return out


def _extract(v: np.ndarray, blocks, offsets):
    return tuple(
        smat(v[off : off + d * d], d) for d, off in zip(blocks, offsets)
    )


def _run(problem: SdpProblem, settings: SolveSettings, z0=None) -> SdpSolution:
    a_raw, b_raw, c = problem.assemble()
    a, b, inconsistent = _normalize_rows(a_raw, b_raw)
    blocks = problem.blocks
    offsets = [problem._offset(i) for i in range(len(blocks))]
    n = problem.n_vars

    if inconsistent:
        zeros = _extract(np.zeros(n), blocks, offsets)
        return SdpSolution(
            SolveStatus.DIVERGED, 0.0, zeros, float(np.linalg.norm(b)), np.inf, 0.0, 0
        )

    proj = _AffineProjector(a, b)
    rho = settings.rho
    alpha = settings.over_relax
    tol = settings.tol
    b_scale = 1.0 + float(np.linalg.norm(b))

    z = np.zeros(n) if z0 is None else z0.copy()
    u = np.zeros(n)
    x = z.copy()
    r_prim = np.inf
    r_dual = np.inf
    feas = np.inf
    it = 0

    for it in range(1, settings.max_iter + 1):
        x = proj.project(z - u - c / rho)
        xh = alpha * x + (1.0 - alpha) * z
        z_new = _project_blocks(xh + u, blocks, offsets)
        u = u + xh - z_new
        r_dual = rho * float(np.linalg.norm(z_new - z))
        z = z_new

        if it % settings.check_every == 0 or it == settings.max_iter:
            r_prim = float(np.linalg.norm(x - z))
            if not np.isfinite(r_prim) or float(np.linalg.norm(x)) > 1e14:
                return SdpSolution(
                    SolveStatus.DIVERGED,
                    float(c @ z),
                    _extract(z, blocks, offsets),
                    np.inf,
                    np.inf,
                    0.0,
                    it,
                )
            scale = 1.0 + max(float(np.linalg.norm(x)), float(np.linalg.norm(z)))
            feas = proj.residual(z)
            if (
                feas <= tol * b_scale
                and r_prim <= tol * scale
                and r_dual <= tol * (1.0 + rho * float(np.linalg.norm(u)))
            ):
                break
            # Deterministic residual balancing keeps the two rates comparable.
            if it % (settings.check_every * 8) == 0:
                if r_prim > 10.0 * r_dual and rho < 1e4:
                    rho *= 2.0
                    u /= 2.0
                elif r_dual > 10.0 * r_prim and rho > 1e-4:
                    rho /= 2.0
                    u *= 2.0

    converged = (
        feas <= tol * b_scale
        and r_prim <= tol * (1.0 + max(float(np.linalg.norm(x)), float(np.linalg.norm(z))))
    )
    values = _extract(z, blocks, offsets)
    min_eig = min(
        (float(np.linalg.eigvalsh((v + dagger(v)) / 2)[0]) for v in values),
        default=0.0,
    )
    status = SolveStatus.OPTIMAL if converged else SolveStatus.MAX_ITERATIONS
    return SdpSolution(
        status,
        float(c @ z),
        values,
        feas,
        r_dual,
        min_eig,
        it,
    )


def solve(problem: SdpProblem, settings: SolveSettings | None = None) -> SdpSolution:
    """Solve the program from a cold start."""
    return _run(problem, settings or SolveSettings())


def refine(
    problem: SdpProblem, warm: SdpSolution, settings: SolveSettings | None = None
) -> SdpSolution:
    """Re-solve starting from the blocks of a previous (or constructed) solution."""
    blocks = problem.blocks
    if len(warm.block_values) != len(blocks) or any(
        v.shape != (d, d) for v, d in zip(warm.block_values, blocks)
    ):
        raise ValueError("warm-start blocks do not match problem blocks")
    z0 = np.concatenate([svec(as_matrix(v)) for v in warm.block_values])
    return _run(problem, settings or SolveSettings(), z0=z0)
