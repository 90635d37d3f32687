"""Counter-based random streams.

Every random number used by an SGD run is a pure function of
``(seed, trial, step, slot)``.  A stream key is derived from the first three
words by repeated SplitMix64 finalisation, and the ``slot``-th output of the
stream is the SplitMix64 output of state ``key + (slot + 1) * GAMMA``.  Nothing
depends on call order, so trials can be computed in any order (or in lockstep)
and produce the same bits.

Constants (all mod 2**64)::

    GAMMA = 0x9E3779B97F4A7C15
    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    key(seed, trial, step) = fold(fold(mix64(seed + GAMMA), trial), step)
    fold(h, w)             = mix64(h ^ mix64(w + GAMMA))

Uniforms in [0, 1) take the top 53 bits: ``(x >> 11) * 2**-53``.  Normals use
Box-Muller on slot pairs ``(2j, 2j + 1)`` with the first uniform shifted into
(0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _fold(h: np.ndarray, word) -> np.ndarray:
    w = np.asarray(word, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(h ^ mix64(w + GAMMA))


def stream_keys(seed: int, trials, step: int) -> np.ndarray:
    """Keys for ``(seed, t, step)`` for every ``t`` in ``trials``."""
    s = np.array([seed & _MASK], dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = mix64(s + GAMMA)
    h = _fold(h, np.asarray(trials, dtype=np.uint64))
    return _fold(h, np.uint64(step & _MASK))


def raw_bits(keys: np.ndarray, count: int) -> np.ndarray:
    """``(len(keys), count)`` array of 64-bit stream outputs."""
    slots = np.arange(1, count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        states = keys[:, None] + slots[None, :] * GAMMA
    return mix64(states)


def uniforms(keys: np.ndarray, count: int) -> np.ndarray:
    return (raw_bits(keys, count) >> np.uint64(11)).astype(np.float64) * _TWO_M53


def indices(keys: np.ndarray, count: int, n: int) -> np.ndarray:
    """Uniform integers in ``[0, n)``, i.i.d. with replacement."""
    idx = np.floor(uniforms(keys, count) * n).astype(np.int64)
    return np.minimum(idx, n - 1)


def normals(keys: np.ndarray, count: int) -> np.ndarray:
    bits = raw_bits(keys, 2 * count) >> np.uint64(11)
    u1 = (bits[:, 0::2].astype(np.float64) + 1.0) * _TWO_M53
    u2 = bits[:, 1::2].astype(np.float64) * _TWO_M53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass
class StreamState:
    """Position in the counter-based stream for one trial.

    ``next_keys`` returns the key for the current step and advances ``step``.
    """

    seed: int
    trial: int = 0
    step: int = 0

    def next_keys(self) -> np.ndarray:
        keys = stream_keys(self.seed, [self.trial], self.step)
        self.step += 1
        return keys
