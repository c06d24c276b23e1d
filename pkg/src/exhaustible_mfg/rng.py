"""Counter-based random numbers keyed by (seed, stream, counter).

Every particle owns a 64-bit stream key derived from the run seed and its
index (and round, for repeated games). The k-th draw of a stream is a pure
function of (key, k): a SplitMix64 finalizer applied twice to the key offset
by k golden-ratio increments. No generator state is shared, so particles can
be processed in any order or on any number of threads with identical output.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# counter offsets for draws made outside the time loop
INIT_OFFSET = 1 << 40


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def derive_key(seed, a, b):
    """Stream key for the pair (a, b) under ``seed``; all arguments uint64."""
    k = mix64(seed + _GOLDEN)
    k = mix64(k ^ mix64(a + _GOLDEN * np.uint64(2)))
    return mix64(k ^ mix64(b + _GOLDEN * np.uint64(3)))


@njit(cache=True, nogil=True)
def uniform01(key, counter):
    """Uniform in the open interval (0, 1) with 53 random bits."""
    z = mix64(mix64(key + _GOLDEN * counter))
    return (float(z >> _S11) + 0.5) * _INV53


@njit(cache=True, nogil=True)
def _keys(seed, a, ids):
    out = np.empty(ids.shape[0], dtype=np.uint64)
    for i in range(ids.shape[0]):
        out[i] = derive_key(seed, a, ids[i])
    return out


@njit(cache=True, nogil=True)
def _uniforms(keys, counter):
    out = np.empty(keys.shape[0])
    for i in range(keys.shape[0]):
        out[i] = uniform01(keys[i], counter)
    return out


def stream_keys(seed: int, ids, group: int = 0) -> np.ndarray:
    """Per-particle keys for particle indices ``ids`` within ``group``."""
    ids = np.ascontiguousarray(ids, dtype=np.uint64)
    return _keys(np.uint64(seed), np.uint64(group), ids)


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Draw number ``counter`` of every stream."""
    return _uniforms(np.ascontiguousarray(keys, dtype=np.uint64), np.uint64(counter))
