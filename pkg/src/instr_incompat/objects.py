"""Domain types for measurements, CP maps, channels and instruments.

Conventions fixed once for the whole package:

* Choi matrices use the input factor FIRST: ``J(Phi) = sum_ij E_ij (x) Phi(E_ij)``,
  so ``J`` lives on the space ``input (x) output`` and every partial-trace
  direction below depends on this ordering ("choi-input-first" in files).
* Outcome labels are contiguous integers ``0..n-1``; joint outcomes over a
  grid ``(n1, n2)`` are flattened row-major, i.e. ``(x, y) -> x * n2 + y``.
* Validation functions return structured reports instead of raising, so
  callers (and the CLI) can print diagnostics; constructors that require a
  valid input reject invalid ones with ``ValueError``.

Values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import (
    STRUCT_TOL,
    as_matrix,
    dagger,
    eig_hermitian,
    frobenius,
    kron,
    min_eigenvalue,
    partial_trace,
    permute_subsystems,
    psd_sqrt,
)


def matrix_unit(i: int, j: int, d: int) -> np.ndarray:
    """The matrix unit ``E_ij`` on a ``d``-dimensional space."""
    e = np.zeros((d, d), dtype=np.complex128)
    e[i, j] = 1.0
    return e


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Povm:
    """A quantum measurement: one positive effect per outcome, summing to identity."""

    effects: tuple

    def __init__(self, effects: Sequence[np.ndarray]):
        mats = tuple(as_matrix(e) for e in effects)
        if not mats:
            raise ValueError("a POVM needs at least one effect")
        d = mats[0].shape[0]
        for e in mats:
            if e.shape != (d, d):
                raise ValueError("all effects must be square matrices of equal dimension")
        object.__setattr__(self, "effects", mats)

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    @property
    def n_outcomes(self) -> int:
        return len(self.effects)


@dataclass(frozen=True, eq=False)
class ChoiOperation:
    """One completely positive, trace non-increasing map in Choi form."""

    dim_in: int
    dim_out: int
    choi: np.ndarray

    def __init__(self, dim_in: int, dim_out: int, choi: np.ndarray):
        choi = as_matrix(choi)
        d = dim_in * dim_out
        if choi.shape != (d, d):
            raise ValueError(
                f"Choi matrix has shape {choi.shape}, expected {(d, d)} "
                f"for dims {dim_in} -> {dim_out}"
            )
        object.__setattr__(self, "dim_in", int(dim_in))
        object.__setattr__(self, "dim_out", int(dim_out))
        object.__setattr__(self, "choi", choi)


@dataclass(frozen=True, eq=False)
class Instrument:
    """Outcome-indexed CP maps whose sum is a quantum channel."""

    operations: tuple

    def __init__(self, operations: Sequence[ChoiOperation]):
        ops = tuple(operations)
        if not ops:
            raise ValueError("an instrument needs at least one operation")
        d_in, d_out = ops[0].dim_in, ops[0].dim_out
        for op in ops:
            if (op.dim_in, op.dim_out) != (d_in, d_out):
                raise ValueError("all operations of an instrument must share dimensions")
        object.__setattr__(self, "operations", ops)

    @property
    def dim_in(self) -> int:
        return self.operations[0].dim_in

    @property
    def dim_out(self) -> int:
        return self.operations[0].dim_out

    @property
    def n_outcomes(self) -> int:
        return len(self.operations)


@dataclass(frozen=True, eq=False)
class KrausOperation:
    """A CP map given by a list of Kraus operators (each ``dim_out x dim_in``)."""

    dim_in: int
    dim_out: int
    kraus: tuple

    def __init__(self, dim_in: int, dim_out: int, kraus: Sequence[np.ndarray]):
        mats = tuple(as_matrix(k) for k in kraus)
        for k in mats:
            if k.shape != (dim_out, dim_in):
                raise ValueError(
                    f"Kraus operator has shape {k.shape}, expected {(dim_out, dim_in)}"
                )
        object.__setattr__(self, "dim_in", int(dim_in))
        object.__setattr__(self, "dim_out", int(dim_out))
        object.__setattr__(self, "kraus", mats)


@dataclass(frozen=True)
class PovmValidation:
    """Validation report for a POVM."""

    valid: bool
    effect_min_eigenvalues: tuple
    completeness_residual: float
    tol: float


@dataclass(frozen=True)
class InstrumentValidation:
    """Validation report for an instrument."""

    valid: bool
    choi_min_eigenvalues: tuple
    tp_residual: float
    tol: float


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate_povm(p: Povm, tol: float = STRUCT_TOL) -> PovmValidation:
    """Check positivity of every effect and completeness of their sum.

    Reports the most negative eigenvalue per effect and the Frobenius
    residual of ``sum_x A(x) - I``.
    """
    mins = tuple(min_eigenvalue(e) for e in p.effects)
    total = sum(p.effects)
    residual = frobenius(total - np.eye(p.dim))
    herm = max(frobenius(e - dagger(e)) for e in p.effects)
    valid = all(m >= -tol for m in mins) and residual <= tol and herm <= tol
    return PovmValidation(valid, mins, float(residual), tol)


def validate_instrument(i: Instrument, tol: float = STRUCT_TOL) -> InstrumentValidation:
    """Check complete positivity per outcome and trace preservation of the sum.

    Complete positivity is the smallest eigenvalue of each Choi matrix; the
    TP residual is ``|Tr_out(sum_x J_x) - I|_F`` on the input space.
    """
    mins = tuple(min_eigenvalue(op.choi) for op in i.operations)
    total = sum(op.choi for op in i.operations)
    reduced = partial_trace(total, (i.dim_in, i.dim_out), keep=0)
    residual = frobenius(reduced - np.eye(i.dim_in))
    valid = all(m >= -tol for m in mins) and residual <= tol
    return InstrumentValidation(valid, mins, float(residual), tol)


def require_valid_povm(p: Povm, tol: float = 1e-7) -> None:
    report = validate_povm(p, tol)
    if not report.valid:
        raise ValueError(
            f"invalid POVM: min effect eigenvalue {min(report.effect_min_eigenvalues):.3e}, "
            f"completeness residual {report.completeness_residual:.3e}"
        )


def require_valid_instrument(i: Instrument, tol: float = 1e-7) -> None:
    report = validate_instrument(i, tol)
    if not report.valid:
        raise ValueError(
            f"invalid instrument: min Choi eigenvalue {min(report.choi_min_eigenvalues):.3e}, "
            f"TP residual {report.tp_residual:.3e}"
        )


def require_state(rho: np.ndarray, dim: int, tol: float = 1e-7) -> np.ndarray:
    """Validate a density matrix of the given dimension."""
    rho = as_matrix(rho)
    if rho.shape != (dim, dim):
        raise ValueError(f"state has shape {rho.shape}, expected {(dim, dim)}")
    if min_eigenvalue(rho) < -tol or abs(np.trace(rho) - 1.0) > tol:
        raise ValueError("state is not a valid density matrix")
    return rho


# ---------------------------------------------------------------------------
# Representation changes and map application
# ---------------------------------------------------------------------------


def choi_from_kraus(k: KrausOperation) -> ChoiOperation:
    """Choi matrix of a Kraus-represented map (input factor first)."""
    d = k.dim_in * k.dim_out
    choi = np.zeros((d, d), dtype=np.complex128)
    for op in k.kraus:
        v = op.T.reshape(-1)  # v[(i, a)] = K[a, i] with composite index i*dim_out + a
        choi += np.outer(v, v.conj())
    return ChoiOperation(k.dim_in, k.dim_out, choi)


def kraus_from_choi(c: ChoiOperation, tol: float = STRUCT_TOL) -> KrausOperation:
    """Kraus operators of a CP map, one per Choi eigenvalue above ``tol``.

    The threshold is relative to the largest eigenvalue, so the number of
    returned operators equals the numerical Choi rank.

    :raises ValueError: if the Choi matrix has a significantly negative
        eigenvalue (the map is not completely positive).
    """
    w, v = eig_hermitian(c.choi, tol=max(tol, 1e-8) * max(1.0, frobenius(c.choi)))
    top = max(float(w[0]), 0.0)
    if w.size and float(w[-1]) < -tol * max(1.0, top):
        raise ValueError(f"Choi matrix is not PSD: min eigenvalue {w[-1]:.3e}")
    kraus = []
    for lam, vec in zip(w, v.T):
        if lam > tol * max(1.0, top):
            kraus.append(np.sqrt(lam) * vec.reshape(c.dim_in, c.dim_out).T)
    if not kraus:
        kraus.append(np.zeros((c.dim_out, c.dim_in), dtype=np.complex128))
    return KrausOperation(c.dim_in, c.dim_out, kraus)


def apply_operation(c: ChoiOperation, rho: np.ndarray) -> np.ndarray:
    """Apply a Choi-represented map to an input operator.

    Computes ``Phi(rho) = Tr_in[(rho^T (x) I_out) J]``; linear in ``rho``.
    """
    rho = as_matrix(rho)
    if rho.shape != (c.dim_in, c.dim_in):
        raise ValueError(f"input has shape {rho.shape}, expected {(c.dim_in,) * 2}")
    j4 = c.choi.reshape(c.dim_in, c.dim_out, c.dim_in, c.dim_out)
    return np.einsum("ij,ikjl->kl", rho, j4)


def compose_operations(second: ChoiOperation, first: ChoiOperation) -> ChoiOperation:
    """Choi matrix of ``second . first`` (apply ``first``, then ``second``)."""
    if first.dim_out != second.dim_in:
        raise ValueError(
            f"cannot compose: first outputs dim {first.dim_out}, "
            f"second expects dim {second.dim_in}"
        )
    f4 = first.choi.reshape(first.dim_in, first.dim_out, first.dim_in, first.dim_out)
    s4 = second.choi.reshape(second.dim_in, second.dim_out, second.dim_in, second.dim_out)
    out = np.einsum("ikjl,kcld->icjd", f4, s4)
    d_in, d_out = first.dim_in, second.dim_out
    return ChoiOperation(d_in, d_out, out.reshape(d_in * d_out, d_in * d_out))


def tensor_operation(a: ChoiOperation, b: ChoiOperation) -> ChoiOperation:
    """Choi matrix of ``a (x) b`` acting on the product of the input spaces.

    The raw Kronecker product of the two Choi matrices carries factor order
    ``(in_a, out_a, in_b, out_b)``; it is permuted to the package convention
    ``(in_a, in_b, out_a, out_b)``.
    """
    raw = kron(a.choi, b.choi)
    dims = (a.dim_in, a.dim_out, b.dim_in, b.dim_out)
    j = permute_subsystems(raw, dims, (0, 2, 1, 3))
    return ChoiOperation(a.dim_in * b.dim_in, a.dim_out * b.dim_out, j)


def constant_operation(dim_in: int, state: np.ndarray, weight: float = 1.0) -> ChoiOperation:
    """The map ``rho -> weight * tr(rho) * state`` in Choi form."""
    state = as_matrix(state)
    return ChoiOperation(dim_in, state.shape[0], weight * kron(np.eye(dim_in), state))


def identity_operation(d: int) -> ChoiOperation:
    """Choi matrix of the identity channel: the unnormalized maximally entangled state."""
    j = np.zeros((d * d, d * d), dtype=np.complex128)
    for i in range(d):
        for k in range(d):
            j += kron(matrix_unit(i, k, d), matrix_unit(i, k, d))
    return ChoiOperation(d, d, j)


# ---------------------------------------------------------------------------
# Induced objects
# ---------------------------------------------------------------------------


def induced_povm(i: Instrument) -> Povm:
    """The unique measurement implemented by an instrument.

    With the input-first Choi convention the effect of outcome ``x`` is the
    transpose of the partial trace of ``J_x`` over the output factor, which
    satisfies ``tr[rho A(x)] = tr[Phi_x(rho)]`` for every state.
    """
    effects = [
        partial_trace(op.choi, (i.dim_in, i.dim_out), keep=0).T for op in i.operations
    ]
    return Povm(effects)


def induced_channel(i: Instrument) -> ChoiOperation:
    """The total channel of an instrument (sum of its operations)."""
    total = sum(op.choi for op in i.operations)
    return ChoiOperation(i.dim_in, i.dim_out, total)


# ---------------------------------------------------------------------------
# Instrument families
# ---------------------------------------------------------------------------


def make_special_measure_prepare(a: Povm) -> Instrument:
    """Measure ``a`` and prepare the matching basis state of an ``n``-dim output.

    Outcome ``x`` acts as ``rho -> tr[rho A(x)] |x><x|``.
    """
    require_valid_povm(a)
    n = a.n_outcomes
    ops = [
        ChoiOperation(a.dim, n, kron(e.T, matrix_unit(x, x, n)))
        for x, e in enumerate(a.effects)
    ]
    return Instrument(ops)


def make_measure_prepare(a: Povm, states: Sequence[np.ndarray]) -> Instrument:
    """Measure ``a`` and prepare a fixed state per outcome.

    Outcome ``x`` acts as ``rho -> tr[rho A(x)] states[x]``.
    """
    require_valid_povm(a)
    if len(states) != a.n_outcomes:
        raise ValueError(
            f"got {len(states)} states for {a.n_outcomes} outcomes"
        )
    states = [as_matrix(s) for s in states]
    d_out = states[0].shape[0]
    states = [require_state(s, d_out) for s in states]
    ops = [
        ChoiOperation(a.dim, d_out, kron(e.T, s))
        for e, s in zip(a.effects, states)
    ]
    return Instrument(ops)


def make_trash_prepare(
    probs: Sequence[float], states: Sequence[np.ndarray], dim_in: int
) -> Instrument:
    """Discard the input and prepare ``states[x]`` with probability ``probs[x]``.

    The outcome distribution is independent of the input state; the induced
    measurement is the trivial one with effects ``probs[x] * I``.
    """
    probs = [float(p) for p in probs]
    if len(probs) != len(states):
        raise ValueError("probs and states must have equal length")
    if any(p < -1e-12 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
        raise ValueError(f"probs must be a probability distribution, got {probs}")
    states = [as_matrix(s) for s in states]
    d_out = states[0].shape[0]
    states = [require_state(s, d_out) for s in states]
    ops = [constant_operation(dim_in, s, p) for p, s in zip(probs, states)]
    return Instrument(ops)


def make_lueders(a: Povm) -> Instrument:
    """The instrument with Kraus operator ``sqrt(A(x))`` for each outcome."""
    require_valid_povm(a)
    ops = [
        choi_from_kraus(KrausOperation(a.dim, a.dim, [psd_sqrt(e, tol=1e-7)]))
        for e in a.effects
    ]
    return Instrument(ops)


def make_identity_instrument(d: int) -> Instrument:
    """The identity channel viewed as a one-outcome instrument."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return Instrument([identity_operation(d)])


def joint_marginal(
    joint: Instrument,
    outcome_grid: tuple,
    side: int,
    output_split: tuple,
) -> Instrument:
    """Marginal instrument of a joint instrument over an outcome grid.

    :param joint: instrument with ``n1 * n2`` outcomes indexed row-major and
        output space factoring as ``output_split = (dK1, dK2)``.
    :param outcome_grid: ``(n1, n2)`` outcome counts of the two sides.
    :param side: 1 or 2; side 1 sums over the second index and traces out the
        second output factor, side 2 symmetrically.
    :return: the marginal instrument on the requested side.
    """
    n1, n2 = outcome_grid
    dk1, dk2 = output_split
    if joint.n_outcomes != n1 * n2:
        raise ValueError(
            f"joint has {joint.n_outcomes} outcomes, grid {outcome_grid} needs {n1 * n2}"
        )
    if joint.dim_out != dk1 * dk2:
        raise ValueError(
            f"joint output dim {joint.dim_out} does not factor as {output_split}"
        )
    if side not in (1, 2):
        raise ValueError("side must be 1 or 2")
    d = joint.dim_in
    dims = (d, dk1, dk2)
    ops = []
    if side == 1:
        for x in range(n1):
            total = sum(joint.operations[x * n2 + y].choi for y in range(n2))
            ops.append(ChoiOperation(d, dk1, partial_trace(total, dims, keep=(0, 1))))
    else:
        for y in range(n2):
            total = sum(joint.operations[x * n2 + y].choi for x in range(n1))
            ops.append(ChoiOperation(d, dk2, partial_trace(total, dims, keep=(0, 2))))
    return Instrument(ops)
