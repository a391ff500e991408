"""Seed derivation and counter-based streams.

Every random quantity in the package is a pure function of a 64-bit master
seed and a small integer key:

* bond fields: edge ``i`` of a configuration with seed ``s`` is driven by the
  ``i``-th 64-bit word of ``Philox(key=s)``, so any edge range can be produced
  independently of every other range;
* walk trials: ``SeedSequence(master_seed, spawn_key=(WALK, i))`` is split into
  three Philox generators (jump choices, holding times, blind clocks);
* direct blind walks, conditioned-sampling attempts and batch blocks use their
  own spawn-key tags, so no two consumers ever share randomness.
"""

from __future__ import annotations

import numpy as np

# spawn-key domain tags
BONDS = 0
WALK = 1
BLOCK = 2
ENVIRONMENT = 3
BLIND = 4
BLIND_BLOCK = 5
COUPLED_BLOCK = 6

_WORDS_PER_COUNTER = 4
_MANTISSA_BITS = 53


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(master_seed: int, tag: int, index: int) -> int:
    """Return the 64-bit child seed for ``(master_seed, tag, index)``."""
    ss = np.random.SeedSequence(_check_seed(master_seed), spawn_key=(tag, int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def stream(master_seed: int, tag: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(_check_seed(master_seed), spawn_key=(tag, int(index)))
    return np.random.Generator(np.random.Philox(ss))


def trial_streams(master_seed: int, trial_index: int, tag: int = WALK):
    """Independent (jump, hold, blind) generators for one walk trial."""
    ss = np.random.SeedSequence(_check_seed(master_seed), spawn_key=(tag, int(trial_index)))
    return tuple(np.random.Generator(np.random.Philox(child)) for child in ss.spawn(3))


def edge_words(seed: int, start: int, count: int) -> np.ndarray:
    """Raw 64-bit words ``start .. start+count-1`` of the edge stream for ``seed``."""
    bg = np.random.Philox(key=_check_seed(seed))
    skip, offset = divmod(int(start), _WORDS_PER_COUNTER)
    if skip:
        bg.advance(skip)
    return bg.random_raw(offset + int(count))[offset:]


def edge_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms in [0, 1) attached to edges ``start .. start+count-1``."""
    words = edge_words(seed, start, count)
    return (words >> np.uint64(64 - _MANTISSA_BITS)).astype(np.float64) * 2.0**-_MANTISSA_BITS


def open_threshold(p: float) -> int:
    """Integer cut such that ``(word >> 11) < cut`` iff the edge uniform is ``< p``."""
    # p * 2**53 is exact in binary floating point
    return int(np.ceil(p * 2.0**_MANTISSA_BITS))
