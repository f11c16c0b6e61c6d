"""Seeded rng streams and minibatch iteration shared by all training stages.

Every source of randomness is a named stream derived from (seed, purpose),
so identical seed + config reproduces parameter trajectories bit-for-bit
and ablation rows sharing a seed also share initialization and batching.
"""

from __future__ import annotations

import numpy as np

_PURPOSES = {
    "teacher_init": 0,
    "teacher_train": 1,
    "student_init": 2,
    "stage1_train": 3,
    "stage2_train": 4,
}
_NAMESPACE = 2_000_000  # keep clear of the dataset generator's seed tuples


def rng_stream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((int(seed), _NAMESPACE + _PURPOSES[purpose]))
    )


def minibatches(num_samples: int, batch_size: int, rng: np.random.Generator):
    """Yield shuffled index arrays covering all samples once."""
    order = rng.permutation(num_samples)
    for start in range(0, num_samples, batch_size):
        yield order[start : start + batch_size]
