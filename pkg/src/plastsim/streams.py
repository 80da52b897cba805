"""Deterministic, context-keyed randomness.

Every stochastic decision in the simulator is keyed by *what* is being
decided (seed, update index, neuron id, octree path, ...) instead of by
draw order.  This makes runs reproducible bit-for-bit across logical rank
counts and scheduler modes: the same decision always sees the same draw,
no matter which rank computes it or when.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_SEED0 = 0x243F6A8885A308D3
_FINAL = 0xD1B54A32D192ED03

_INV_2_53 = 1.0 / (1 << 53)


def _mix(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def fold(*parts) -> int:
    """Fold an arbitrary key tuple (ints, strings, nested tuples) to 64 bits."""
    h = _SEED0
    for part in parts:
        if isinstance(part, str):
            h = _mix((h + _GAMMA) ^ len(part))
            for b in part.encode():
                h = _mix((h + _GAMMA) ^ b)
        elif isinstance(part, (tuple, list)):
            h = _mix((h + _GAMMA) ^ len(part))
            h = _mix(fold(h, *part))
        else:
            h = _mix((h + _GAMMA) ^ (int(part) & _MASK))
    return h


def unit_uniform(*parts) -> float:
    """One uniform in [0, 1) fully determined by the key."""
    return (_mix(fold(*parts) ^ _FINAL) >> 11) * _INV_2_53


def uniform_array(ids: np.ndarray, *parts) -> np.ndarray:
    """Per-id uniforms; element i equals ``unit_uniform(*parts, ids[i])``."""
    base = np.uint64((fold(*parts) + _GAMMA) & _MASK)
    z = base ^ ids.astype(np.uint64)
    z = _mix_vec(z)
    z = _mix_vec(z ^ np.uint64(_FINAL))
    return (z >> np.uint64(11)).astype(np.float64) * _INV_2_53


def _mix_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def generator(*parts) -> np.random.Generator:
    """A PCG64 generator seeded from the key (for multi-draw decisions)."""
    return np.random.Generator(np.random.PCG64(fold(*parts)))


class KeyedStream:
    """Minimal random-stream facade over a fixed key.

    Exposes ``random()`` like ``numpy.random.Generator`` so operations that
    take a generic stream can also be driven by a context key.  Successive
    calls advance a draw counter folded into the key.
    """

    def __init__(self, *parts):
        self._base = fold(*parts)
        self._n = 0

    def random(self) -> float:
        u = unit_uniform(self._base, self._n)
        self._n += 1
        return u
