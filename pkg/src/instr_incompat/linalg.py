"""Dense complex linear algebra primitives shared by every other module.

All operators are plain ``numpy.ndarray`` objects with ``complex128`` dtype,
stored row-major.  Multipartite operators carry their tensor-factor structure
as an explicit list of subsystem dimensions (``dims``); factors are indexed
zero-based with the leftmost factor at index 0.  Every function here is pure
and returns freshly allocated arrays.

Tolerances are explicit arguments with documented defaults: 1e-9 for
structural checks, matching the rest of the package.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

STRUCT_TOL = 1e-9


def as_matrix(m) -> np.ndarray:
    """Coerce input to a 2-D complex128 array and reject non-finite entries."""
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got array of shape {a.shape}")
    if not np.all(np.isfinite(a.real)) or not np.all(np.isfinite(a.imag)):
        raise ValueError("matrix contains NaN or Inf entries")
    return a


def dagger(m: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.conjugate(m).T


def frobenius(m: np.ndarray) -> float:
    """Frobenius norm."""
    return float(np.linalg.norm(m))


def is_hermitian(m: np.ndarray, tol: float = STRUCT_TOL) -> bool:
    """True if ``m`` equals its conjugate transpose within ``tol`` (Frobenius)."""
    return frobenius(m - dagger(m)) <= tol


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker (tensor) product of two matrices.

    The result acts on the composite space with the factor of ``a`` first.
    """
    return np.kron(as_matrix(a), as_matrix(b))


def check_shape(m: np.ndarray, dims: Sequence[int]) -> None:
    """Validate that ``dims`` factorizes the dimension of the square matrix ``m``."""
    dims = list(dims)
    if any(int(d) != d or d < 1 for d in dims):
        raise ValueError(f"subsystem dimensions must be positive integers, got {dims}")
    total = int(np.prod(dims))
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if m.shape[0] != total:
        raise ValueError(
            f"subsystem dimensions {dims} have product {total}, "
            f"but the matrix has dimension {m.shape[0]}"
        )


def partial_trace(m: np.ndarray, dims: Sequence[int], keep) -> np.ndarray:
    """Trace out all tensor factors not listed in ``keep``.

    :param m: square matrix on the composite space described by ``dims``.
    :param dims: subsystem dimensions, leftmost factor = index 0.
    :param keep: index or iterable of factor indices to retain.  The kept
        factors stay in their original relative order.
    :return: operator on the kept factors; its trace equals ``tr(m)``.
    """
    m = as_matrix(m)
    dims = [int(d) for d in dims]
    check_shape(m, dims)
    if np.isscalar(keep):
        keep = [int(keep)]
    keep = sorted(set(int(k) for k in keep))
    n = len(dims)
    if any(k < 0 or k >= n for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {n} factors")

    tensor = m.reshape(dims + dims)
    traced = [k for k in range(n) if k not in keep]
    # Trace the rightmost pending factor first so earlier axis indices stay valid.
    for k in sorted(traced, reverse=True):
        tensor = np.trace(tensor, axis1=k, axis2=k + (tensor.ndim // 2))
    d_keep = int(np.prod([dims[k] for k in keep])) if keep else 1
    return tensor.reshape(d_keep, d_keep)


def permute_subsystems(m: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Reorder the tensor factors of a square matrix.

    ``perm`` follows the :func:`numpy.transpose` convention: factor ``k`` of
    the output is factor ``perm[k]`` of the input.  Applying the inverse
    permutation afterwards restores the input exactly.
    """
    m = as_matrix(m)
    dims = [int(d) for d in dims]
    check_shape(m, dims)
    perm = [int(p) for p in perm]
    n = len(dims)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    tensor = m.reshape(dims + dims)
    axes = perm + [p + n for p in perm]
    d = int(np.prod(dims))
    return tensor.transpose(axes).reshape(d, d)


def eig_hermitian(m: np.ndarray, tol: float = STRUCT_TOL):
    """Eigendecomposition of a Hermitian matrix.

    :param m: matrix with ``|m - m^dag|_F <= tol``.
    :param tol: Hermiticity tolerance.
    :return: ``(eigenvalues, eigenvectors)`` with real eigenvalues sorted in
        descending order and the matching orthonormal eigenvectors as columns,
        so that ``m = V diag(w) V^dag`` up to roundoff.
    :raises ValueError: if ``m`` is not Hermitian within ``tol``.
    """
    m = as_matrix(m)
    herm_gap = frobenius(m - dagger(m))
    if herm_gap > tol:
        raise ValueError(f"matrix is not Hermitian: |m - m^dag|_F = {herm_gap:.3e} > {tol:.3e}")
    sym = (m + dagger(m)) / 2.0
    w, v = np.linalg.eigh(sym)
    order = np.argsort(w)[::-1]
    return w[order].real.copy(), v[:, order].copy()


def psd_project(m: np.ndarray) -> np.ndarray:
    """Project onto the positive semidefinite cone (nearest in Frobenius norm).

    The input is symmetrized first, then negative eigenvalues are clipped
    at zero.  Idempotent on PSD inputs.
    """
    m = as_matrix(m)
    sym = (m + dagger(m)) / 2.0
    w, v = np.linalg.eigh(sym)
    w = np.maximum(w, 0.0)
    return (v * w) @ dagger(v)


def psd_sqrt(m: np.ndarray, tol: float = STRUCT_TOL) -> np.ndarray:
    """Principal square root of a PSD matrix.

    Eigenvalues in ``[-tol, 0)`` are clipped to zero before the square root;
    numerically produced POVM effects routinely carry eigenvalues around
    -1e-15.  Raises if an eigenvalue is below ``-tol * max(1, lambda_max)``.
    """
    m = as_matrix(m)
    w, v = np.linalg.eigh((m + dagger(m)) / 2.0)
    floor = -tol * max(1.0, float(w[-1]) if w.size else 1.0)
    if w.size and float(w[0]) < floor:
        raise ValueError(f"matrix is not PSD: min eigenvalue {w[0]:.3e}")
    w = np.sqrt(np.maximum(w, 0.0))
    return (v * w) @ dagger(v)


def min_eigenvalue(m: np.ndarray) -> float:
    """Smallest eigenvalue of the Hermitian part of ``m``."""
    m = as_matrix(m)
    w = np.linalg.eigvalsh((m + dagger(m)) / 2.0)
    return float(w[0])
