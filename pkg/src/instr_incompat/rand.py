"""Seeded random quantum objects for the verification suites.

All generators take a ``numpy.random.Generator`` so trials can be split
deterministically: trial ``k`` of a suite with seed ``s`` uses
``trial_rng(s, k)``, which is stable across runs and platforms.
"""

from __future__ import annotations

import numpy as np

from .linalg import dagger
from .objects import ChoiOperation, Instrument, KrausOperation, Povm, choi_from_kraus
from .structure import PostProcessingFamily


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent deterministic stream for one trial of a seeded suite."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def ginibre(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(size=(rows, cols)) + 1j * rng.normal(size=(rows, cols))


def random_state(rng: np.random.Generator, d: int) -> np.ndarray:
    g = ginibre(rng, d, d)
    rho = g @ dagger(g)
    return rho / np.trace(rho).real


def random_pure_state(rng: np.random.Generator, d: int) -> np.ndarray:
    v = ginibre(rng, d, 1).ravel()
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def random_povm(rng: np.random.Generator, d: int, n: int) -> Povm:
    pieces = []
    for _ in range(n):
        g = ginibre(rng, d, d)
        pieces.append(g @ dagger(g))
    total = sum(pieces)
    w, v = np.linalg.eigh(total)
    inv_root = (v * (1.0 / np.sqrt(w))) @ dagger(v)
    return Povm([inv_root @ p @ inv_root for p in pieces])


def random_instrument(
    rng: np.random.Generator,
    dim_in: int,
    dim_out: int,
    n_outcomes: int,
    kraus_per_outcome: int = 1,
) -> Instrument:
    """Random instrument built from normalized Gaussian Kraus operators."""
    raw = [
        [ginibre(rng, dim_out, dim_in) for _ in range(kraus_per_outcome)]
        for _ in range(n_outcomes)
    ]
    total = sum(dagger(k) @ k for ks in raw for k in ks)
    w, v = np.linalg.eigh(total)
    inv_root = (v * (1.0 / np.sqrt(w))) @ dagger(v)
    ops = [
        choi_from_kraus(
            KrausOperation(dim_in, dim_out, [k @ inv_root for k in ks])
        )
        for ks in raw
    ]
    return Instrument(ops)


def random_distribution(rng: np.random.Generator, n: int) -> np.ndarray:
    p = rng.random(n) + 1e-3
    return p / p.sum()


def random_trash_prepare(
    rng: np.random.Generator, dim_in: int, dim_out: int, n_outcomes: int
) -> Instrument:
    from .objects import make_trash_prepare

    probs = random_distribution(rng, n_outcomes)
    states = [random_state(rng, dim_out) for _ in range(n_outcomes)]
    return make_trash_prepare(probs, states, dim_in)


def random_post_family(
    rng: np.random.Generator,
    n_parent: int,
    dim_in: int,
    dim_out: int,
    n_child: int,
) -> PostProcessingFamily:
    members = [
        random_instrument(rng, dim_in, dim_out, n_child) for _ in range(n_parent)
    ]
    return PostProcessingFamily(members)
