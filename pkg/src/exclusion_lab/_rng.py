"""Counter-based keyed uniforms.

A variate is a hash of ``(seed, purpose, site, index)`` through chained
splitmix64 finalizers, so the k-th draw of a site never depends on which
other sites exist or on the order in which they are queried.
"""
import numpy as np
from numba import njit

# purposes
CLOCK = 0
JUMP = 1
INITIAL = 2
BURN_TIME = 3
REPLICA = 4
BURN_STREAM = 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def mix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def keyed_bits(seed, purpose, site, index):
    h = mix64(np.uint64(seed) ^ mix64(np.uint64(purpose)))
    h = mix64(h ^ np.uint64(site))
    return mix64(h ^ np.uint64(index))


@njit(cache=True)
def site_key(seed, purpose, site):
    """Prefix of :func:`keyed_bits` that does not depend on the index."""
    return mix64(mix64(np.uint64(seed) ^ mix64(np.uint64(purpose))) ^ np.uint64(site))


@njit(cache=True)
def uniform_from_key(key, index):
    return float(mix64(key ^ np.uint64(index)) >> _S11) * _INV53


@njit(cache=True)
def keyed_uniform(seed, purpose, site, index):
    """Uniform on [0, 1) with 53 random bits."""
    return float(keyed_bits(seed, purpose, site, index) >> _S11) * _INV53


@njit(cache=True)
def uniforms_for_sites(seed, purpose, lo, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = keyed_uniform(seed, purpose, np.int64(lo + i), np.int64(0))
    return out


def to_seed(value: int) -> np.uint64:
    """Reduce an arbitrary Python int to the 64-bit seed space."""
    return np.uint64(int(value) & 0xFFFFFFFFFFFFFFFF)


def derive_seed(master: int, index: int, purpose: int = REPLICA) -> int:
    return int(keyed_bits(to_seed(master), np.int64(purpose), np.int64(index), np.int64(0)))
