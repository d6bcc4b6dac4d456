"""Keyed hash families for local hashing.

The default family is a fixed, versioned 64-bit avalanche construction
(murmur3 ``fmix64`` finaliser applied to a mixed key and value) reduced mod
the hash range.  It stands in for a universal family; collision rates over
random seeds are ~1/d' but nothing here is provably universal.

Families are callables ``family(seeds, values, d_prime) -> ndarray`` that
broadcast like numpy ufuncs, plus ``n_seeds`` and ``sample_seeds``.  Tests
inject tiny enumerable families (``TableHash``) or the identity stub.
"""

from __future__ import annotations

import numpy as np

HASH_VERSION = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xFF51AFD7ED558CCD)
_M2 = np.uint64(0xC4CEB9FE1A85EC53)
_S33 = np.uint64(33)
# Per-version salt so a future family never aliases version 1 outputs.
_SALT = np.uint64(0x5AD0_0000_0000_0000 | HASH_VERSION)


def fmix64(x: np.ndarray) -> np.ndarray:
    """murmur3 64-bit finaliser; a bijection on uint64 with full avalanche."""
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):  # wrap-around is the point; 0-d inputs warn
        x = x ^ (x >> _S33)
        x = x * _M1
        x = x ^ (x >> _S33)
        x = x * _M2
        return x ^ (x >> _S33)


def fmix64_inplace(x: np.ndarray) -> np.ndarray:
    """``fmix64`` overwriting a uint64 array (avoids temporaries in hot loops)."""
    tmp = np.empty_like(x)
    for mult in (_M1, _M2):
        np.right_shift(x, _S33, out=tmp)
        np.bitwise_xor(x, tmp, out=x)
        np.multiply(x, mult, out=x)
    np.right_shift(x, _S33, out=tmp)
    np.bitwise_xor(x, tmp, out=x)
    return x


class AvalancheHash:
    """Default seeded hash ``h_seed(v) = fmix64(K(seed) ^ V(v)) mod d'``."""

    version = HASH_VERSION

    def __init__(self, seed_bits: int = 32):
        if not 1 <= seed_bits <= 32:
            raise ValueError("seed_bits must be in [1, 32]")
        self.seed_bits = seed_bits
        self.n_seeds = 1 << seed_bits

    def keys(self, seeds) -> np.ndarray:
        return fmix64(np.asarray(seeds, dtype=np.uint64) ^ _SALT)

    @staticmethod
    def value_codes(values) -> np.ndarray:
        v = np.asarray(values, dtype=np.uint64)
        return fmix64(v * _GOLDEN + _GOLDEN)

    def hash_keyed(self, keys, codes, d_prime: int) -> np.ndarray:
        """Hash with pre-mixed keys/codes; used by aggregation hot loops."""
        return (fmix64(np.bitwise_xor(keys, codes)) % np.uint64(d_prime)).astype(np.int64)

    def __call__(self, seeds, values, d_prime: int) -> np.ndarray:
        return self.hash_keyed(self.keys(seeds), self.value_codes(values), d_prime)

    def sample_seeds(self, size, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.n_seeds, size=size, dtype=np.uint64)

    def __repr__(self):
        return f"AvalancheHash(v{self.version}, seed_bits={self.seed_bits})"

    def __eq__(self, other):
        return isinstance(other, AvalancheHash) and other.seed_bits == self.seed_bits

    def __hash__(self):
        return hash(("avalanche", self.version, self.seed_bits))


class TableHash:
    """Explicit family: ``table[seed, v]`` gives the hashed value.

    Used for exact enumeration, where the whole seed space must be small.
    """

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.int64)
        if self.table.ndim != 2:
            raise ValueError("hash table must be 2-D (seeds x values)")
        self.n_seeds = self.table.shape[0]
        self.seed_bits = max(1, int(self.n_seeds - 1).bit_length())

    def __call__(self, seeds, values, d_prime: int) -> np.ndarray:
        out = self.table[np.asarray(seeds, dtype=np.int64), np.asarray(values, dtype=np.int64)]
        if out.size and out.max() >= d_prime:
            raise ValueError("table entry outside hash range")
        return out

    def sample_seeds(self, size, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.n_seeds, size=size).astype(np.uint64)

    def __eq__(self, other):
        return isinstance(other, TableHash) and np.array_equal(self.table, other.table)

    def __hash__(self):
        return hash(self.table.tobytes())


class IdentityHash(TableHash):
    """Single-seed stub with ``h(v) = v``; only valid when d' = d."""

    def __init__(self, d: int):
        super().__init__(np.arange(d)[None, :])


def enumerable_family(n_seeds: int, d: int, d_prime: int) -> TableHash:
    """Deterministic small family built from the default hash's first seeds."""
    base = AvalancheHash()
    seeds = np.arange(n_seeds, dtype=np.uint64)[:, None]
    return TableHash(base(seeds, np.arange(d)[None, :], d_prime))
