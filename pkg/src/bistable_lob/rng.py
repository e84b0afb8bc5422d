"""Seeding rules.

Every run draws from numpy's PCG64 bit generator. A run seeded with ``s``
uses ``Generator(PCG64(s))``; within a step it first draws the arrival
permutation (``Generator.permutation(n_traders)``) and then the expectation
noise (``Generator.uniform(-sigma, sigma, n_traders)``). Steps taken at a
zero price draw nothing, since no trader can act there.

Per-run seeds of an ensemble are derived with numpy's ``SeedSequence``
hash: ``SeedSequence(base_seed, spawn_key=(run_index,))`` produces one
64-bit word that becomes the run seed.
"""

import numpy as np

U64_MAX = 2**64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= U64_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(check_seed(seed)))


def derive_seed(base_seed, run_index):
    """Seed of run ``run_index`` in an ensemble started from ``base_seed``."""
    ss = np.random.SeedSequence(check_seed(base_seed), spawn_key=(int(run_index),))
    return int(ss.generate_state(1, np.uint64)[0])
