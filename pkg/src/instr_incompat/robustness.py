"""Generalized incompatibility robustness of measurement, channel and instrument pairs.

Each robustness is the direct single-SDP reformulation of the fractional
noisy-compatibility program: the joint variable absorbs the factor ``1 + r``
and the noise variables absorb ``r``, which is an exact substitution.  For a
measurement pair the program reads

    minimize r   over  G'(x,y) >= 0, N1(x) >= 0, N2(y) >= 0, r >= 0
    subject to   sum_y G'(x,y) - N1(x) = A1(x)   for all x
                 sum_x G'(x,y) - N2(y) = A2(y)   for all y
                 sum_x N1(x) = r I,   sum_y N2(y) = r I

and the channel and instrument programs replace the outcome sums by partial
traces of Choi matrices on the joint output space.  Implied constraints
(such as the normalization of the joint) are never added redundantly.

Compatibility is always decided through the minimized ``r``, never through a
raw feasibility test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import frobenius, kron, partial_trace, permute_subsystems
from .objects import (
    ChoiOperation,
    Instrument,
    Povm,
    constant_operation,
    induced_channel,
    induced_povm,
    require_state,
    require_valid_instrument,
    require_valid_povm,
    validate_instrument,
)
from .sdp import (
    IdentityTerm,
    PTraceTerm,
    ScalarTerm,
    SdpProblem,
    SdpSolution,
    SolveSettings,
    SolveStatus,
    refine,
    solve,
)

#: r at or below which a pair is reported compatible (one order of headroom
#: above the solver tolerance of 1e-7).
COMPAT_TOL = 1e-6

#: r below which witness rescaling by 1/(1+r) is skipped and the noise
#: witness is returned unnormalized (it is numerically zero).
_RESCALE_FLOOR = 1e-9


class SolverConvergenceError(RuntimeError):
    """Raised when the embedded SDP solver fails to reach its tolerance."""

    def __init__(self, solution: SdpSolution):
        super().__init__(
            f"SDP solver did not converge: status={solution.status.value}, "
            f"primal residual {solution.primal_residual:.3e} "
            f"after {solution.iterations} iterations"
        )
        self.solution = solution


@dataclass(frozen=True, eq=False)
class RobustnessResult:
    """Minimized robustness with rescaled optimizer witnesses.

    ``joint`` and the noise objects are domain types of the same kind as the
    inputs.  ``residuals`` holds the Frobenius norms of the scaled marginal
    and noise-normalization equations evaluated at the returned witnesses.
    When ``r`` is numerically zero the noise witnesses are the raw
    (vanishing) solver blocks.
    """

    r: float
    joint: object
    noise1: object
    noise2: object
    residuals: dict
    solution: SdpSolution


def _solved(problem: SdpProblem, settings: SolveSettings | None) -> SdpSolution:
    sol = solve(problem, settings or SolveSettings())
    if sol.status is not SolveStatus.OPTIMAL:
        raise SolverConvergenceError(sol)
    return sol


def _rescale(mat: np.ndarray, r: float) -> np.ndarray:
    return mat if r < _RESCALE_FLOOR else mat / (1.0 + r)


def _noise_scale(mat: np.ndarray, r: float) -> np.ndarray:
    return mat if r < _RESCALE_FLOOR else mat / r


# ---------------------------------------------------------------------------
# Measurements
# ---------------------------------------------------------------------------


def robustness_measurements(
    a1: Povm, a2: Povm, settings: SolveSettings | None = None
) -> RobustnessResult:
    """Generalized incompatibility robustness of two measurements on the same space."""
    require_valid_povm(a1)
    require_valid_povm(a2)
    if a1.dim != a2.dim:
        raise ValueError(f"dimension mismatch: {a1.dim} vs {a2.dim}")
    d, n1, n2 = a1.dim, a1.n_outcomes, a2.n_outcomes
    eye = np.eye(d)

    p = SdpProblem()
    g = [[p.add_block(d) for _ in range(n2)] for _ in range(n1)]
    m1 = [p.add_block(d) for _ in range(n1)]
    m2 = [p.add_block(d) for _ in range(n2)]
    r_blk = p.add_block(1)
    p.add_objective(r_blk, np.array([[1.0]]))

    for x in range(n1):
        terms = [(g[x][y], IdentityTerm()) for y in range(n2)]
        terms.append((m1[x], IdentityTerm(-1.0)))
        p.add_matrix_constraint(terms, a1.effects[x])
    for y in range(n2):
        terms = [(g[x][y], IdentityTerm()) for x in range(n1)]
        terms.append((m2[y], IdentityTerm(-1.0)))
        p.add_matrix_constraint(terms, a2.effects[y])
    p.add_matrix_constraint(
        [(b, IdentityTerm()) for b in m1] + [(r_blk, ScalarTerm(-eye))],
        np.zeros((d, d)),
    )
    p.add_matrix_constraint(
        [(b, IdentityTerm()) for b in m2] + [(r_blk, ScalarTerm(-eye))],
        np.zeros((d, d)),
    )

    sol = _solved(p, settings)
    r = float(sol.objective_value)
    vals = sol.block_values
    g_raw = [[vals[g[x][y]] for y in range(n2)] for x in range(n1)]
    n1_raw = [vals[b] for b in m1]
    n2_raw = [vals[b] for b in m2]

    residuals = {
        "marginal_1": max(
            frobenius(sum(g_raw[x]) - n1_raw[x] - a1.effects[x]) for x in range(n1)
        ),
        "marginal_2": max(
            frobenius(
                sum(g_raw[x][y] for x in range(n1)) - n2_raw[y] - a2.effects[y]
            )
            for y in range(n2)
        ),
        "noise_1": frobenius(sum(n1_raw) - r * eye),
        "noise_2": frobenius(sum(n2_raw) - r * eye),
    }
    joint = Povm([_rescale(g_raw[x][y], r) for x in range(n1) for y in range(n2)])
    noise1 = Povm([_noise_scale(m, r) for m in n1_raw])
    noise2 = Povm([_noise_scale(m, r) for m in n2_raw])
    return RobustnessResult(r, joint, noise1, noise2, residuals, sol)


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------


def _require_channel(c: ChoiOperation, tol: float = 1e-7) -> None:
    reduced = partial_trace(c.choi, (c.dim_in, c.dim_out), keep=0)
    if frobenius(reduced - np.eye(c.dim_in)) > tol:
        raise ValueError("input map is not trace preserving")


def robustness_channels(
    c1: ChoiOperation, c2: ChoiOperation, settings: SolveSettings | None = None
) -> RobustnessResult:
    """Generalized incompatibility robustness of two channels with a common input."""
    _require_channel(c1)
    _require_channel(c2)
    if c1.dim_in != c2.dim_in:
        raise ValueError(f"input dimension mismatch: {c1.dim_in} vs {c2.dim_in}")
    d, k1, k2 = c1.dim_in, c1.dim_out, c2.dim_out
    dims = (d, k1, k2)
    eye = np.eye(d)

    p = SdpProblem()
    j_blk = p.add_block(d * k1 * k2)
    m1 = p.add_block(d * k1)
    m2 = p.add_block(d * k2)
    r_blk = p.add_block(1)
    p.add_objective(r_blk, np.array([[1.0]]))

    p.add_matrix_constraint(
        [(j_blk, PTraceTerm(dims, (0, 1))), (m1, IdentityTerm(-1.0))], c1.choi
    )
    p.add_matrix_constraint(
        [(j_blk, PTraceTerm(dims, (0, 2))), (m2, IdentityTerm(-1.0))], c2.choi
    )
    p.add_matrix_constraint(
        [(m1, PTraceTerm((d, k1), (0,))), (r_blk, ScalarTerm(-eye))], np.zeros((d, d))
    )
    p.add_matrix_constraint(
        [(m2, PTraceTerm((d, k2), (0,))), (r_blk, ScalarTerm(-eye))], np.zeros((d, d))
    )

    sol = _solved(p, settings)
    r = float(sol.objective_value)
    j_raw, n1_raw, n2_raw = sol.block_values[j_blk], sol.block_values[m1], sol.block_values[m2]

    residuals = {
        "marginal_1": frobenius(partial_trace(j_raw, dims, (0, 1)) - n1_raw - c1.choi),
        "marginal_2": frobenius(partial_trace(j_raw, dims, (0, 2)) - n2_raw - c2.choi),
        "noise_1": frobenius(partial_trace(n1_raw, (d, k1), 0) - r * eye),
        "noise_2": frobenius(partial_trace(n2_raw, (d, k2), 0) - r * eye),
    }
    joint = ChoiOperation(d, k1 * k2, _rescale(j_raw, r))
    noise1 = ChoiOperation(d, k1, _noise_scale(n1_raw, r))
    noise2 = ChoiOperation(d, k2, _noise_scale(n2_raw, r))
    return RobustnessResult(r, joint, noise1, noise2, residuals, sol)


# ---------------------------------------------------------------------------
# Instruments
# ---------------------------------------------------------------------------


def robustness_instruments(
    i1: Instrument,
    i2: Instrument,
    settings: SolveSettings | None = None,
    warm_joint: Instrument | None = None,
) -> RobustnessResult:
    """Generalized incompatibility robustness of two instruments with a common input.

    One PSD block per joint-outcome Choi matrix on the composite output
    space, per-outcome noise blocks, and a scalar ``r``; minimizes ``r``
    subject to the scaled marginal and noise-normalization equations.

    ``warm_joint`` optionally seeds the iteration with a candidate joint
    instrument (noise and ``r`` start at zero), which is much faster when a
    construction is believed to already certify compatibility.
    """
    require_valid_instrument(i1)
    require_valid_instrument(i2)
    if i1.dim_in != i2.dim_in:
        raise ValueError(f"input dimension mismatch: {i1.dim_in} vs {i2.dim_in}")
    d, k1, k2 = i1.dim_in, i1.dim_out, i2.dim_out
    n1, n2 = i1.n_outcomes, i2.n_outcomes
    dims = (d, k1, k2)
    eye = np.eye(d)

    p = SdpProblem()
    j = [[p.add_block(d * k1 * k2) for _ in range(n2)] for _ in range(n1)]
    m1 = [p.add_block(d * k1) for _ in range(n1)]
    m2 = [p.add_block(d * k2) for _ in range(n2)]
    r_blk = p.add_block(1)
    p.add_objective(r_blk, np.array([[1.0]]))

    for x in range(n1):
        terms = [(j[x][y], PTraceTerm(dims, (0, 1))) for y in range(n2)]
        terms.append((m1[x], IdentityTerm(-1.0)))
        p.add_matrix_constraint(terms, i1.operations[x].choi)
    for y in range(n2):
        terms = [(j[x][y], PTraceTerm(dims, (0, 2))) for x in range(n1)]
        terms.append((m2[y], IdentityTerm(-1.0)))
        p.add_matrix_constraint(terms, i2.operations[y].choi)
    p.add_matrix_constraint(
        [(b, PTraceTerm((d, k1), (0,))) for b in m1] + [(r_blk, ScalarTerm(-eye))],
        np.zeros((d, d)),
    )
    p.add_matrix_constraint(
        [(b, PTraceTerm((d, k2), (0,))) for b in m2] + [(r_blk, ScalarTerm(-eye))],
        np.zeros((d, d)),
    )

    if warm_joint is None:
        sol = _solved(p, settings)
    else:
        if warm_joint.n_outcomes != n1 * n2 or warm_joint.dim_out != k1 * k2:
            raise ValueError("warm-start joint does not match the outcome grid")
        values = [None] * (n1 * n2 + n1 + n2 + 1)
        for x in range(n1):
            for y in range(n2):
                values[j[x][y]] = warm_joint.operations[x * n2 + y].choi
        for b in m1:
            values[b] = np.zeros((d * k1, d * k1), dtype=np.complex128)
        for b in m2:
            values[b] = np.zeros((d * k2, d * k2), dtype=np.complex128)
        values[r_blk] = np.zeros((1, 1), dtype=np.complex128)
        warm = SdpSolution(
            SolveStatus.OPTIMAL, 0.0, tuple(values), np.inf, np.inf, 0.0, 0
        )
        sol = refine(p, warm, settings or SolveSettings())
        if sol.status is not SolveStatus.OPTIMAL:
            raise SolverConvergenceError(sol)
    r = float(sol.objective_value)
    vals = sol.block_values
    j_raw = [[vals[j[x][y]] for y in range(n2)] for x in range(n1)]
    n1_raw = [vals[b] for b in m1]
    n2_raw = [vals[b] for b in m2]

    residuals = {
        "marginal_1": max(
            frobenius(
                sum(partial_trace(j_raw[x][y], dims, (0, 1)) for y in range(n2))
                - n1_raw[x]
                - i1.operations[x].choi
            )
            for x in range(n1)
        ),
        "marginal_2": max(
            frobenius(
                sum(partial_trace(j_raw[x][y], dims, (0, 2)) for x in range(n1))
                - n2_raw[y]
                - i2.operations[y].choi
            )
            for y in range(n2)
        ),
        "noise_1": frobenius(
            sum(partial_trace(m, (d, k1), 0) for m in n1_raw) - r * eye
        ),
        "noise_2": frobenius(
            sum(partial_trace(m, (d, k2), 0) for m in n2_raw) - r * eye
        ),
    }
    joint = Instrument(
        [
            ChoiOperation(d, k1 * k2, _rescale(j_raw[x][y], r))
            for x in range(n1)
            for y in range(n2)
        ]
    )
    noise1 = Instrument([ChoiOperation(d, k1, _noise_scale(m, r)) for m in n1_raw])
    noise2 = Instrument([ChoiOperation(d, k2, _noise_scale(m, r)) for m in n2_raw])
    return RobustnessResult(r, joint, noise1, noise2, residuals, sol)


def is_compatible(
    i1: Instrument,
    i2: Instrument,
    tol: float = COMPAT_TOL,
    settings: SolveSettings | None = None,
):
    """Decide parallel compatibility through the minimized robustness.

    :return: ``(compatible, r)`` where ``compatible`` is ``r <= tol``.
    """
    result = robustness_instruments(i1, i2, settings)
    return result.r <= tol, result.r


# ---------------------------------------------------------------------------
# Bound verification and the universal upper-bound construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """Robustness of an instrument pair next to its induced-pair lower bounds."""

    r_instruments: float
    r_measurements: float
    r_channels: float
    lower_ok: bool
    upper_ok: bool


def verify_bound_theorems(
    i1: Instrument,
    i2: Instrument,
    settings: SolveSettings | None = None,
    slack: float = 1e-5,
) -> BoundReport:
    """Check the universal bounds relating the three robustnesses.

    The instrument robustness must dominate both the induced-measurement and
    the induced-channel robustness (within ``slack``) and must not exceed 1.
    """
    r_i = robustness_instruments(i1, i2, settings).r
    r_m = robustness_measurements(induced_povm(i1), induced_povm(i2), settings).r
    r_c = robustness_channels(induced_channel(i1), induced_channel(i2), settings).r
    lower_ok = r_i >= max(r_m, r_c) - slack
    upper_ok = r_i <= 1.0 + slack
    return BoundReport(r_i, r_m, r_c, lower_ok, upper_ok)


def upper_bound_joint(
    i1: Instrument, i2: Instrument, eta1: np.ndarray, eta2: np.ndarray
) -> Instrument:
    """The explicit joint instrument certifying robustness at most 1.

    Outcome ``(x, y)`` acts as the equal mixture of "run instrument 1,
    prepare ``eta2``" and "prepare ``eta1``, run instrument 2", each
    prepared state weighted by the other side's outcome count.  Its
    marginals are the half-noisy instruments mixing each input with the
    matching trash-and-prepare instrument.
    """
    if i1.dim_in != i2.dim_in:
        raise ValueError("input dimension mismatch")
    d, k1, k2 = i1.dim_in, i1.dim_out, i2.dim_out
    n1, n2 = i1.n_outcomes, i2.n_outcomes
    eta1 = require_state(eta1, k1)
    eta2 = require_state(eta2, k2)

    ops = []
    for x in range(n1):
        side1 = kron(i1.operations[x].choi, eta2) / n2  # factors (H, K1, K2)
        for y in range(n2):
            raw2 = kron(i2.operations[y].choi, eta1) / n1  # factors (H, K2, K1)
            side2 = permute_subsystems(raw2, (d, k2, k1), (0, 2, 1))
            ops.append(ChoiOperation(d, k1 * k2, (side1 + side2) / 2.0))
    joint = Instrument(ops)
    report = validate_instrument(joint)
    if not report.valid:
        raise AssertionError(
            f"upper-bound joint failed validation: TP residual {report.tp_residual:.3e}"
        )
    return joint


def mix_with_trash_prepare(inst: Instrument, trash: Instrument, weight: float) -> Instrument:
    """Convex mixture ``(1 - weight) * inst + weight * trash`` outcome by outcome."""
    if (inst.n_outcomes, inst.dim_in, inst.dim_out) != (
        trash.n_outcomes,
        trash.dim_in,
        trash.dim_out,
    ):
        raise ValueError("mixture requires matching outcome counts and dimensions")
    ops = [
        ChoiOperation(
            inst.dim_in,
            inst.dim_out,
            (1.0 - weight) * a.choi + weight * b.choi,
        )
        for a, b in zip(inst.operations, trash.operations)
    ]
    return Instrument(ops)


def trash_prepare_noise(inst: Instrument, state: np.ndarray) -> Instrument:
    """The uniform trash-and-prepare instrument matching ``inst`` in shape."""
    n = inst.n_outcomes
    state = require_state(state, inst.dim_out)
    return Instrument(
        [constant_operation(inst.dim_in, state, 1.0 / n) for _ in range(n)]
    )
