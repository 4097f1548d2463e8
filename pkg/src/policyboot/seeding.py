"""Counter-based seed derivation for reproducible parallelism.

Every stochastic task (posterior draw, bootstrap replicate, simulation rep)
derives its own 64-bit seed from the user seed and its counter index, so
results never depend on how tasks are scheduled across workers.

The mix function is SplitMix64 (Steele, Lea & Flood): state advances by the
golden-gamma constant, outputs pass through two xor-shift multiplies.  The
derived seed for counters (c1, .., ck) is obtained by folding each counter
into the stream in order.  The constants below are the reference ones; any
independent implementation of the same recipe reproduces the seeds exactly.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 output function applied to a 64-bit state."""
    z = (z + _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *counters: int) -> int:
    """Derive a 64-bit task seed from a user seed and counter path.

    derive_seed(seed, s) is the documented per-draw seed H(seed, s); extra
    counters nest (experiment rep, bootstrap replicate, ...).  Counters must
    be nonnegative; the user seed may be any Python int and is reduced mod
    2**64.
    """
    state = mix64(seed & _MASK64)
    for c in counters:
        if c < 0:
            raise ValueError(f"counter must be nonnegative, got {c}")
        state = mix64(state ^ ((c + 1) * _GAMMA & _MASK64))
    return state


def rng_for(seed: int, *counters: int) -> np.random.Generator:
    """Generator seeded by the derived task seed."""
    return np.random.default_rng(derive_seed(seed, *counters))
