"""Named RNG streams derived from one master seed.

Every stochastic concern (init, shuffling, per-class sampling, ...) draws from
its own child generator so that adding draws to one concern never perturbs
another.  Streams are keyed by small integer ids plus context (epoch, class).
"""

import numpy as np

STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_SELECT = 2
STREAM_SPLIT = 3
STREAM_SAMPLE = 4
STREAM_KMEANS = 5
STREAM_VERIFY = 6


def child_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))


def child_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(child_sequence(seed, *key))


def derive_seed(seed: int, *key: int) -> int:
    """Stable 64-bit seed for handing to components that take a plain seed."""
    return int(child_sequence(seed, *key).generate_state(1, np.uint64)[0])
