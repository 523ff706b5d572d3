"""Bundled reference programs with analytically known optima.

Used to pin down solver accuracy: every problem returns its name, the
assembled :class:`~instr_incompat.sdp.SdpProblem` and the exact optimal
value.  The set mixes scalar, single-block and multi-block programs,
eigenvalue bounds, a Schur-complement completion, and one measurement
robustness instance (the canonical maximally incompatible qubit pair, whose
optimum ``3 - 2*sqrt(2)`` is the fixed point of the noisy joint-measurement
criterion for unbiased qubit effects and was cross-checked against an
independent bisection oracle).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sdp import (
    IdentityTerm,
    ScalarTerm,
    SdpProblem,
    unit_diag,
    unit_imag,
    unit_real,
)

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


@dataclass(frozen=True)
class ReferenceProblem:
    name: str
    problem: SdpProblem
    optimum: float


def _scalar_pin() -> ReferenceProblem:
    # min x  s.t. x = 3
    p = SdpProblem()
    x = p.add_block(1)
    p.add_objective(x, np.array([[1.0]]))
    p.add_constraint({x: np.array([[1.0]])}, 3.0)
    return ReferenceProblem("scalar-pin", p, 3.0)


def _forced_diagonal() -> ReferenceProblem:
    # min tr X  s.t. X00 = X11 = 1, X01 = 0.5  (2x2 PSD)
    p = SdpProblem()
    x = p.add_block(2)
    p.add_objective(x, np.eye(2))
    p.add_constraint({x: unit_diag(0, 2)}, 1.0)
    p.add_constraint({x: unit_diag(1, 2)}, 1.0)
    p.add_constraint({x: unit_real(0, 1, 2)}, 0.5)
    p.add_constraint({x: unit_imag(0, 1, 2)}, 0.0)
    return ReferenceProblem("forced-diagonal", p, 2.0)


def _max_eig(name: str, matrix: np.ndarray, lam: float) -> ReferenceProblem:
    # min t  s.t. t I - M >= 0, via a PSD slack block
    p = SdpProblem()
    t = p.add_block(1)
    s = p.add_block(matrix.shape[0])
    p.add_objective(t, np.array([[1.0]]))
    p.add_matrix_constraint(
        [(s, IdentityTerm()), (t, ScalarTerm(-np.eye(matrix.shape[0])))], -matrix
    )
    return ReferenceProblem(name, p, lam)


def _min_trace_functional(name: str, matrix: np.ndarray, optimum: float) -> ReferenceProblem:
    # min tr X  s.t. <M, X> = 1, X >= 0; optimum 1 / lambda_max(M)
    p = SdpProblem()
    x = p.add_block(matrix.shape[0])
    p.add_objective(x, np.eye(matrix.shape[0]))
    p.add_constraint({x: matrix}, 1.0)
    return ReferenceProblem(name, p, optimum)


def _lp_pair() -> ReferenceProblem:
    # min x1 + 2 x2  s.t. x1 + x2 = 1, x >= 0
    p = SdpProblem()
    x1 = p.add_block(1)
    x2 = p.add_block(1)
    p.add_objective(x1, np.array([[1.0]]))
    p.add_objective(x2, np.array([[2.0]]))
    p.add_constraint({x1: np.array([[1.0]]), x2: np.array([[1.0]])}, 1.0)
    return ReferenceProblem("lp-pair", p, 1.0)


def _schur_completion() -> ReferenceProblem:
    # min X11  s.t. X00 = 1, X01 = 0.5, X >= 0; optimum 0.25 by the Schur complement
    p = SdpProblem()
    x = p.add_block(2)
    p.add_objective(x, unit_diag(1, 2))
    p.add_constraint({x: unit_diag(0, 2)}, 1.0)
    p.add_constraint({x: unit_real(0, 1, 2)}, 0.5)
    p.add_constraint({x: unit_imag(0, 1, 2)}, 0.0)
    return ReferenceProblem("schur-completion", p, 0.25)


def _pinned_state() -> ReferenceProblem:
    # Every entry of a 2x2 block pinned to a PSD matrix; objective is its trace.
    target = np.array([[0.6, 0.2 - 0.1j], [0.2 + 0.1j, 0.4]], dtype=np.complex128)
    p = SdpProblem()
    x = p.add_block(2)
    p.add_objective(x, np.eye(2))
    p.add_constraint({x: unit_diag(0, 2)}, 0.6)
    p.add_constraint({x: unit_diag(1, 2)}, 0.4)
    p.add_constraint({x: unit_real(0, 1, 2)}, 0.2)
    p.add_constraint({x: unit_imag(0, 1, 2)}, 0.1)
    assert np.linalg.eigvalsh(target)[0] > 0
    return ReferenceProblem("pinned-state", p, 1.0)


def _coupled_scalars() -> ReferenceProblem:
    # min r  s.t. x + r = 2, x = 1, both nonnegative scalars
    p = SdpProblem()
    x = p.add_block(1)
    r = p.add_block(1)
    p.add_objective(r, np.array([[1.0]]))
    p.add_constraint({x: np.array([[1.0]]), r: np.array([[1.0]])}, 2.0)
    p.add_constraint({x: np.array([[1.0]])}, 1.0)
    return ReferenceProblem("coupled-scalars", p, 1.0)


def _mub_measurement_robustness() -> ReferenceProblem:
    # Generalized incompatibility robustness of the two unbiased qubit
    # measurements (I +/- sigma_x)/2 and (I +/- sigma_z)/2, assembled here
    # directly in its scaled single-SDP form.  Optimum 3 - 2*sqrt(2).
    eye = np.eye(2)
    a1 = [(eye + SIGMA_X) / 2, (eye - SIGMA_X) / 2]
    a2 = [(eye + SIGMA_Z) / 2, (eye - SIGMA_Z) / 2]
    p = SdpProblem()
    g = [[p.add_block(2) for _ in range(2)] for _ in range(2)]
    n1 = [p.add_block(2) for _ in range(2)]
    n2 = [p.add_block(2) for _ in range(2)]
    r = p.add_block(1)
    p.add_objective(r, np.array([[1.0]]))
    for x in range(2):
        p.add_matrix_constraint(
            [(g[x][0], IdentityTerm()), (g[x][1], IdentityTerm()), (n1[x], IdentityTerm(-1.0))],
            a1[x],
        )
    for y in range(2):
        p.add_matrix_constraint(
            [(g[0][y], IdentityTerm()), (g[1][y], IdentityTerm()), (n2[y], IdentityTerm(-1.0))],
            a2[y],
        )
    p.add_matrix_constraint(
        [(n1[0], IdentityTerm()), (n1[1], IdentityTerm()), (r, ScalarTerm(-eye))],
        np.zeros((2, 2)),
    )
    p.add_matrix_constraint(
        [(n2[0], IdentityTerm()), (n2[1], IdentityTerm()), (r, ScalarTerm(-eye))],
        np.zeros((2, 2)),
    )
    return ReferenceProblem("mub-measurement-robustness", p, 3.0 - 2.0 * np.sqrt(2.0))


def reference_problems() -> list:
    """The bundled set of analytic-optimum programs (eleven problems)."""
    return [
        _scalar_pin(),
        _forced_diagonal(),
        _max_eig("max-eig-sigma-x", SIGMA_X, 1.0),
        _max_eig("max-eig-diag", np.diag([3.0, 1.0]).astype(np.complex128), 3.0),
        _max_eig("max-eig-sigma-y-half", SIGMA_Y / 2.0, 0.5),
        _min_trace_functional("min-trace-sigma-x", SIGMA_X, 1.0),
        _min_trace_functional(
            "min-trace-diag3", np.diag([2.0, 1.0, -1.0]).astype(np.complex128), 0.5
        ),
        _lp_pair(),
        _schur_completion(),
        _pinned_state(),
        _coupled_scalars(),
        _mub_measurement_robustness(),
    ]
