"""Post-processing machinery, indecomposability, and explicit constructions.

Covers the outcome-conditioned post-processing of instruments (and the SDP
deciding whether one instrument is a post-processing of another), rank-1
refinements (detailed instruments), Naimark dilations with deterministic
unitary completion, the compatible-indecomposable-pair pipeline built on
them, and the programmable-instrument-device counterexample instruments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import dagger, frobenius, kron, psd_sqrt
from .objects import (
    ChoiOperation,
    Instrument,
    KrausOperation,
    Povm,
    choi_from_kraus,
    compose_operations,
    constant_operation,
    identity_operation,
    joint_marginal,
    kraus_from_choi,
    matrix_unit,
    require_state,
    require_valid_instrument,
    require_valid_povm,
    tensor_operation,
)
from .robustness import SolverConvergenceError, robustness_instruments
from .sdp import (
    IdentityTerm,
    MapTerm,
    PTraceTerm,
    ScalarTerm,
    SdpProblem,
    SolveSettings,
    SolveStatus,
    smat,
    solve,
    svec,
)

#: Relative eigenvalue threshold for rank decisions (scale-free).
RANK_TOL = 1e-8


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PostProcessingFamily:
    """One instrument per parent outcome, all with shared dimensions.

    Applying the family to a parent instrument produces the child instrument
    with operations ``sum_x R^x_y . Phi^1_x``.
    """

    instruments: tuple

    def __init__(self, instruments: Sequence[Instrument]):
        fams = tuple(instruments)
        if not fams:
            raise ValueError("a post-processing family needs at least one instrument")
        d_in, d_out, n_child = fams[0].dim_in, fams[0].dim_out, fams[0].n_outcomes
        for f in fams:
            if (f.dim_in, f.dim_out, f.n_outcomes) != (d_in, d_out, n_child):
                raise ValueError(
                    "all family members must share dimensions and outcome count"
                )
        object.__setattr__(self, "instruments", fams)

    @property
    def n_parent_outcomes(self) -> int:
        return len(self.instruments)

    @property
    def n_child_outcomes(self) -> int:
        return self.instruments[0].n_outcomes

    @property
    def dim_in(self) -> int:
        return self.instruments[0].dim_in

    @property
    def dim_out(self) -> int:
        return self.instruments[0].dim_out


def identity_family(n_parent: int, dim: int, n_child: int | None = None) -> PostProcessingFamily:
    """The family that relabels the parent outcome into child outcome 0.

    With ``n_child == 1`` (default) this merges nothing and keeps the parent
    operations intact up to the single-outcome relabeling; with larger
    ``n_child`` the identity operation sits at child outcome 0 and the rest
    are zero.
    """
    n_child = 1 if n_child is None else n_child
    ident = identity_operation(dim)
    zero = ChoiOperation(dim, dim, np.zeros_like(ident.choi))
    member = Instrument([ident] + [zero] * (n_child - 1))
    return PostProcessingFamily([member] * n_parent)


def post_process(parent: Instrument, fam: PostProcessingFamily) -> Instrument:
    """Apply an outcome-conditioned family of instruments to a parent."""
    if fam.n_parent_outcomes != parent.n_outcomes:
        raise ValueError(
            f"family covers {fam.n_parent_outcomes} parent outcomes, "
            f"instrument has {parent.n_outcomes}"
        )
    if fam.dim_in != parent.dim_out:
        raise ValueError(
            f"family input dim {fam.dim_in} != parent output dim {parent.dim_out}"
        )
    ops = []
    for y in range(fam.n_child_outcomes):
        total = sum(
            compose_operations(fam.instruments[x].operations[y], parent.operations[x]).choi
            for x in range(parent.n_outcomes)
        )
        ops.append(ChoiOperation(parent.dim_in, fam.dim_out, total))
    return Instrument(ops)


def _composition_matrix(parent_op: ChoiOperation, dim_child_out: int) -> np.ndarray:
    """Real matrix of ``J(R) -> J(R . parent_op)`` in svec coordinates."""
    k1 = parent_op.dim_out
    n_in = k1 * dim_child_out
    d_h = parent_op.dim_in
    n_out = d_h * dim_child_out
    m = np.zeros((n_out * n_out, n_in * n_in))
    for idx in range(n_in * n_in):
        e = np.zeros(n_in * n_in)
        e[idx] = 1.0
        basis = ChoiOperation(k1, dim_child_out, smat(e, n_in))
        m[:, idx] = svec(compose_operations(basis, parent_op).choi)
    return m


def is_post_processing_of(
    child: Instrument,
    parent: Instrument,
    tol: float = 1e-6,
    settings: SolveSettings | None = None,
):
    """Decide whether ``child`` can be produced from ``parent`` by post-processing.

    Solves for the family Choi matrices and the smallest ``t`` such that
    every child operation deviates from its reconstruction by at most ``t``
    in operator norm (encoded as the pair of PSD slacks ``t I +/- gap``).

    :return: ``(is_post_processing, gap)`` with the decision ``gap <= tol``.
    """
    if child.dim_in != parent.dim_in:
        raise ValueError("child and parent must share the input space")
    d = parent.dim_in
    k1, k2 = parent.dim_out, child.dim_out
    n_par, n_chi = parent.n_outcomes, child.n_outcomes

    comp = [_composition_matrix(parent.operations[x], k2) for x in range(n_par)]

    p = SdpProblem()
    r_blocks = [[p.add_block(k1 * k2) for _ in range(n_chi)] for _ in range(n_par)]
    t_blk = p.add_block(1)
    s_plus = [p.add_block(d * k2) for _ in range(n_chi)]
    s_minus = [p.add_block(d * k2) for _ in range(n_chi)]
    p.add_objective(t_blk, np.array([[1.0]]))

    eye_k1 = np.eye(k1)
    eye_out = np.eye(d * k2)
    for x in range(n_par):
        p.add_matrix_constraint(
            [(r_blocks[x][y], PTraceTerm((k1, k2), (0,))) for y in range(n_chi)],
            eye_k1,
        )
    for y in range(n_chi):
        child_choi = child.operations[y].choi
        terms_plus = [(s_plus[y], IdentityTerm()), (t_blk, ScalarTerm(-eye_out))]
        terms_plus += [(r_blocks[x][y], MapTerm(comp[x])) for x in range(n_par)]
        p.add_matrix_constraint(terms_plus, child_choi)
        terms_minus = [(s_minus[y], IdentityTerm()), (t_blk, ScalarTerm(-eye_out))]
        terms_minus += [(r_blocks[x][y], MapTerm(-comp[x])) for x in range(n_par)]
        p.add_matrix_constraint(terms_minus, -child_choi)

    sol = solve(p, settings or SolveSettings())
    if sol.status is not SolveStatus.OPTIMAL:
        raise SolverConvergenceError(sol)
    gap = float(sol.objective_value)
    return gap <= tol, gap


# ---------------------------------------------------------------------------
# Detailed instruments and indecomposability
# ---------------------------------------------------------------------------


def _choi_eigs(i: Instrument):
    return [np.linalg.eigvalsh((op.choi + dagger(op.choi)) / 2.0) for op in i.operations]


def detailed_instrument(i: Instrument, tol: float = RANK_TOL):
    """Rank-1 refinement of an instrument via Choi eigendecomposition.

    Every eigenvalue above ``tol`` (relative to the largest eigenvalue across
    the whole instrument) becomes one rank-1 child operation; the returned
    outcome map lists the parent outcome of each child.

    :return: ``(detailed, parent_map)``.
    """
    require_valid_instrument(i)
    scale = max(max(w[-1] for w in _choi_eigs(i)), 0.0)
    children, parent_map = [], []
    for x, op in enumerate(i.operations):
        w, v = np.linalg.eigh((op.choi + dagger(op.choi)) / 2.0)
        for lam, vec in zip(w[::-1], v.T[::-1]):
            if lam > tol * max(scale, 1e-300):
                children.append(
                    ChoiOperation(i.dim_in, i.dim_out, lam * np.outer(vec, vec.conj()))
                )
                parent_map.append(x)
    return Instrument(children), tuple(parent_map)


def merge_outcomes(i: Instrument, parent_map: Sequence[int], n_parent: int) -> Instrument:
    """Coarse-grain child outcomes back onto their parents (inverse of detailing)."""
    totals = [
        np.zeros((i.dim_in * i.dim_out,) * 2, dtype=np.complex128)
        for _ in range(n_parent)
    ]
    for op, x in zip(i.operations, parent_map):
        totals[x] = totals[x] + op.choi
    return Instrument([ChoiOperation(i.dim_in, i.dim_out, t) for t in totals])


def is_indecomposable(i: Instrument, tol: float = RANK_TOL):
    """Per-outcome check that every nonzero operation has Choi (Kraus) rank one.

    Zero operations are vacuously fine.  The rank threshold is ``tol`` times
    the largest eigenvalue of the operation, with operation nonzeroness
    judged against the largest eigenvalue in the whole instrument.
    """
    eigs = _choi_eigs(i)
    scale = max(max(w[-1] for w in eigs), 0.0)
    flags = []
    for w in eigs:
        top = float(w[-1])
        if top <= tol * max(scale, 1e-300):
            flags.append(True)  # zero operation
            continue
        rank = int(np.sum(w > tol * top))
        flags.append(rank == 1)
    return flags


def check_detailed_equivalence(i: Instrument, tol: float = 1e-9) -> bool:
    """Sufficient condition for post-processing equivalence with the detailed instrument.

    True when within every outcome the Kraus operators are mutually
    orthogonal, ``K_i^dag K_j = 0`` for ``i != j``.
    """
    for op in i.operations:
        kraus = kraus_from_choi(op).kraus
        for a in range(len(kraus)):
            for b in range(a + 1, len(kraus)):
                if frobenius(dagger(kraus[a]) @ kraus[b]) > tol:
                    return False
    return True


def free_operation_compat_transport(
    joint: Instrument, fam1: PostProcessingFamily, fam2: PostProcessingFamily
) -> Instrument:
    """Transport a joint instrument through per-side post-processing families.

    Child joint outcome ``(xt, yt)`` is ``sum_{x,y} (R1^x_xt (x) R2^y_yt) . Phi_xy``;
    its marginals reproduce the post-processed sides, which is the
    constructive witness that post-processing preserves compatibility.
    """
    n1, n2 = fam1.n_parent_outcomes, fam2.n_parent_outcomes
    if joint.n_outcomes != n1 * n2:
        raise ValueError(
            f"joint has {joint.n_outcomes} outcomes, families imply {n1 * n2}"
        )
    if joint.dim_out != fam1.dim_in * fam2.dim_in:
        raise ValueError("joint output space does not match the family inputs")
    nc1, nc2 = fam1.n_child_outcomes, fam2.n_child_outcomes
    d = joint.dim_in
    d_out = fam1.dim_out * fam2.dim_out

    ops = []
    for xt in range(nc1):
        for yt in range(nc2):
            total = np.zeros((d * d_out, d * d_out), dtype=np.complex128)
            for x in range(n1):
                for y in range(n2):
                    pair = tensor_operation(
                        fam1.instruments[x].operations[xt],
                        fam2.instruments[y].operations[yt],
                    )
                    total += compose_operations(pair, joint.operations[x * n2 + y]).choi
            ops.append(ChoiOperation(d, d_out, total))
    return Instrument(ops)


# ---------------------------------------------------------------------------
# Naimark dilation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NaimarkDilation:
    """A projective model of a POVM on system (x) ancilla with a fixed ancilla state.

    ``unitary`` maps the embedded system so that measuring the ancilla in its
    basis reproduces the POVM statistics with the ancilla prepared in basis
    state ``ancilla_index``.  ``projectors[x]`` is the dilated projector of
    outcome ``x`` and ``vectors[x]`` its orthonormal rank-1 fine-graining.
    """

    dim_system: int
    ancilla_dim: int
    ancilla_index: int
    unitary: np.ndarray
    projectors: tuple
    vectors: tuple


def _complete_to_unitary(columns: np.ndarray, total: int):
    """Deterministic orthonormal completion of a set of orthonormal columns.

    Each new column is the standard basis vector with the largest residual
    after projecting out the accepted columns (first index wins ties),
    re-orthogonalized twice for stability.  Returns the full accepted list
    and the newly added columns in order.
    """
    accepted = [columns[:, k] for k in range(columns.shape[1])]
    added = []
    while len(accepted) < total:
        best_idx, best_norm, best_vec = -1, -1.0, None
        basis_block = np.column_stack(accepted)
        for k in range(total):
            e = np.zeros(total, dtype=np.complex128)
            e[k] = 1.0
            resid = e - basis_block @ (dagger(basis_block) @ e)
            nrm = float(np.linalg.norm(resid))
            if nrm > best_norm + 1e-12:
                best_idx, best_norm, best_vec = k, nrm, resid
        vec = best_vec
        vec = vec - basis_block @ (dagger(basis_block) @ vec)
        vec = vec / np.linalg.norm(vec)
        accepted.append(vec)
        added.append(vec)
    return accepted, added


def naimark_dilate(g: Povm) -> NaimarkDilation:
    """Dilate a POVM to a projective measurement with an ``n``-dimensional ancilla.

    The isometry sends ``psi`` to ``sum_x sqrt(G(x)) psi (x) |x>`` and is
    completed to a unitary on system (x) ancilla; outcome projectors are the
    pullbacks of the ancilla basis projectors and their rank-1 fine-graining
    vectors are the matching rows of the unitary.
    """
    require_valid_povm(g)
    d, n = g.dim, g.n_outcomes
    total = d * n
    roots = [psd_sqrt(e, tol=1e-7) for e in g.effects]

    v = np.zeros((total, d), dtype=np.complex128)
    for x in range(n):
        for h in range(d):
            v[h * n + x, :] = roots[x][h, :]

    u = np.zeros((total, total), dtype=np.complex128)
    slots = [h * n + 0 for h in range(d)]  # columns acting on psi (x) |0>
    free = [k for k in range(total) if k not in slots]
    for col, slot in enumerate(slots):
        u[:, slot] = v[:, col]
    accepted, added = _complete_to_unitary(v, total)
    for vec, slot in zip(added, free):
        u[:, slot] = vec

    unitarity = frobenius(dagger(u) @ u - np.eye(total))
    if unitarity > 1e-10:
        raise AssertionError(f"unitary completion failed: residual {unitarity:.3e}")

    projectors, vectors = [], []
    for x in range(n):
        vecs = tuple(np.conj(u[h * n + x, :]) for h in range(d))
        proj = sum(np.outer(w, w.conj()) for w in vecs)
        projectors.append(proj)
        vectors.append(vecs)
    return NaimarkDilation(d, n, 0, u, tuple(projectors), tuple(vectors))


def naimark_statistics_residual(dil: NaimarkDilation, g: Povm, rho: np.ndarray) -> float:
    """Largest deviation between dilated and direct outcome probabilities."""
    d, n = dil.dim_system, dil.ancilla_dim
    anc = matrix_unit(dil.ancilla_index, dil.ancilla_index, n)
    embedded = kron(rho, anc)
    worst = 0.0
    for x in range(n):
        p_dil = float(np.real(np.trace(embedded @ dil.projectors[x])))
        p_direct = float(np.real(np.trace(rho @ g.effects[x])))
        worst = max(worst, abs(p_dil - p_direct))
    return worst


# ---------------------------------------------------------------------------
# Compatible indecomposable pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IndecomposablePair:
    """Output of the compatible-indecomposable-pair pipeline.

    ``instrument_a`` and ``instrument_b`` are the rank-1 refined instruments;
    ``parent_map_a``/``parent_map_b`` list the grid row (column) of each
    child outcome, and ``joint`` is the explicit joint instrument whose
    marginals reproduce the pair.
    """

    instrument_a: Instrument
    instrument_b: Instrument
    joint: Instrument
    parent_map_a: tuple
    parent_map_b: tuple
    dilation: NaimarkDilation


def compatible_indecomposable_pair(g: Povm, grid: tuple) -> IndecomposablePair:
    """Build a compatible pair of indecomposable instruments from a joint POVM.

    ``g`` is indexed row-major over ``grid = (n1, n2)``.  Both instruments
    act on the dilation space: each kept fine-graining vector contributes the
    single Kraus operator ``|phi_z><phi_z| (I (x) |0>)``, grouped by grid row
    for the first instrument and by grid column for the second.  The joint
    instrument applies both projections simultaneously and certifies
    compatibility constructively.
    """
    n1, n2 = grid
    if g.n_outcomes != n1 * n2:
        raise ValueError(f"POVM has {g.n_outcomes} outcomes, grid {grid} needs {n1 * n2}")
    dil = naimark_dilate(g)
    d, n = dil.dim_system, dil.ancilla_dim
    dn = d * n

    # Raw refinement labels: z = (cell, h) with weight |v_z|^2, v_z the
    # system part of phi_z at the ancilla preparation index.
    entries = []  # (cell, h, phi, v)
    for cell in range(n1 * n2):
        for h, phi in enumerate(dil.vectors[cell]):
            vsys = phi.reshape(d, n)[:, dil.ancilla_index]
            entries.append((cell, h, phi, vsys))
    scale = max(float(np.vdot(v, v).real) for _, _, _, v in entries)
    kept = [e for e in entries if float(np.vdot(e[3], e[3]).real) > RANK_TOL * scale]

    def kraus_single(phi: np.ndarray, vsys: np.ndarray) -> np.ndarray:
        return np.outer(phi, vsys.conj())

    order_a = sorted(range(len(kept)), key=lambda i: (kept[i][0] // n2, kept[i][0] % n2, kept[i][1]))
    order_b = sorted(range(len(kept)), key=lambda i: (kept[i][0] % n2, kept[i][0] // n2, kept[i][1]))

    ops_a, parent_a = [], []
    for i in order_a:
        cell, h, phi, vsys = kept[i]
        ops_a.append(choi_from_kraus(KrausOperation(d, dn, [kraus_single(phi, vsys)])))
        parent_a.append(cell // n2)
    ops_b, parent_b = [], []
    for i in order_b:
        cell, h, phi, vsys = kept[i]
        ops_b.append(choi_from_kraus(KrausOperation(d, dn, [kraus_single(phi, vsys)])))
        parent_b.append(cell % n2)

    inst_a = Instrument(ops_a)
    inst_b = Instrument(ops_b)

    zero = np.zeros((d * dn * dn, d * dn * dn), dtype=np.complex128)
    joint_ops = []
    for ia, i in enumerate(order_a):
        for ib, jdx in enumerate(order_b):
            if i == jdx:
                cell, h, phi, vsys = kept[i]
                w = np.outer(np.kron(phi, phi), vsys.conj())
                joint_ops.append(choi_from_kraus(KrausOperation(d, dn * dn, [w])))
            else:
                joint_ops.append(ChoiOperation(d, dn * dn, zero))
    joint = Instrument(joint_ops)
    return IndecomposablePair(
        inst_a, inst_b, joint, tuple(parent_a), tuple(parent_b), dil
    )


# ---------------------------------------------------------------------------
# PID counterexample
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PidCounterexample:
    """The two instrument families separating traditional from parallel compatibility.

    ``inst_constant`` discards the input and prepares ``eta`` uniformly over
    ``n`` outcomes; ``inst_split_identity`` outputs the input state with a
    uniform classical coin.  Both are traditionally self-compatible through
    the recorded joints (verified by plain outcome sums with no partial
    trace); only the first is parallel self-compatible.
    """

    inst_constant: Instrument
    inst_split_identity: Instrument
    traditional_joint_constant: Instrument
    traditional_joint_split: Instrument
    parallel_joint_constant: Instrument
    traditional_residual_constant: float
    traditional_residual_split: float
    parallel_residual_constant: float
    r_constant_pair: float
    r_split_pair: float


def _traditional_residual(joint: Instrument, side: Instrument, grid: tuple) -> float:
    """Residual of the plain-sum marginal equations (no partial trace)."""
    n1, n2 = grid
    worst = 0.0
    for x in range(n1):
        total = sum(joint.operations[x * n2 + y].choi for y in range(n2))
        worst = max(worst, frobenius(total - side.operations[x].choi))
    for y in range(n2):
        total = sum(joint.operations[x * n2 + y].choi for x in range(n1))
        worst = max(worst, frobenius(total - side.operations[y].choi))
    return worst


def pid_counterexample(
    n: int, d: int, eta: np.ndarray, settings: SolveSettings | None = None
) -> PidCounterexample:
    """Construct the counterexample showing PID supermaps are not free for
    parallel compatibility, and measure both self-robustnesses."""
    if n < 1:
        raise ValueError("outcome count must be at least 1")
    eta = require_state(eta, d)

    inst_constant = Instrument(
        [constant_operation(d, eta, 1.0 / n) for _ in range(n)]
    )
    ident = identity_operation(d)
    inst_split = Instrument(
        [ChoiOperation(d, d, ident.choi / n) for _ in range(n)]
    )

    trad_constant = Instrument(
        [constant_operation(d, eta, 1.0 / n**2) for _ in range(n * n)]
    )
    trad_split = Instrument(
        [ChoiOperation(d, d, ident.choi / n**2) for _ in range(n * n)]
    )
    par_constant = Instrument(
        [constant_operation(d, kron(eta, eta), 1.0 / n**2) for _ in range(n * n)]
    )

    res_t_const = _traditional_residual(trad_constant, inst_constant, (n, n))
    res_t_split = _traditional_residual(trad_split, inst_split, (n, n))

    worst_par = 0.0
    for side in (1, 2):
        marg = joint_marginal(par_constant, (n, n), side, (d, d))
        worst_par = max(
            worst_par,
            max(
                frobenius(a.choi - b.choi)
                for a, b in zip(marg.operations, inst_constant.operations)
            ),
        )

    r_const = robustness_instruments(inst_constant, inst_constant, settings).r
    r_split = robustness_instruments(inst_split, inst_split, settings).r

    return PidCounterexample(
        inst_constant,
        inst_split,
        trad_constant,
        trad_split,
        par_constant,
        res_t_const,
        res_t_split,
        worst_par,
        r_const,
        r_split,
    )
