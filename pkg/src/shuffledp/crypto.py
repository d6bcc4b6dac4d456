"""Additive secret sharing, additively homomorphic encryption and onions.

Shares are residues mod 2^l held in ``uint64`` arrays (any l in 1..64).

The homomorphic scheme is Paillier over a large modulus N.  Plaintexts are
residues mod 2^l; sums are reduced mod 2^l after decryption, which is
correct as long as fewer than ``N // 2^l`` residues were added together.
Every ciphertext carries that term count and operations refuse to exceed it.

Both the real scheme and the identity double expose the same vector
interface (``encrypt``, ``add_plain``, ``add``, ``permute``, ``split``,
``decrypt``) so shuffle code is written once.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import gmpy2
import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import InputError, OnionError, OverflowBudgetError

KEY_MAGIC = b"SDP1"

# ------------------------------------------------------------ secret sharing


def _mask(ell: int) -> np.uint64:
    if not 1 <= ell <= 64:
        raise InputError("bit width must be in [1, 64]")
    return np.uint64((1 << ell) - 1)


def random_residues(shape, rng: np.random.Generator, ell: int = 64) -> np.ndarray:
    _mask(ell)
    return rng.integers(0, 1 << ell, size=shape, dtype=np.uint64)


def as_residues(values, ell: int = 64) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind == "i" and arr.size and arr.min() < 0:
        raise InputError("residues must be non-negative")
    arr = arr.astype(np.uint64)
    if ell < 64 and arr.size and int(arr.max()) >> ell:
        raise InputError(f"value does not fit in {ell} bits")
    return arr


def add_mod(a, b, ell: int = 64) -> np.ndarray:
    return (np.asarray(a, dtype=np.uint64) + np.asarray(b, dtype=np.uint64)) & _mask(ell)


def sub_mod(a, b, ell: int = 64) -> np.ndarray:
    return (np.asarray(a, dtype=np.uint64) - np.asarray(b, dtype=np.uint64)) & _mask(ell)


def neg_mod(a, ell: int = 64) -> np.ndarray:
    return (np.uint64(0) - np.asarray(a, dtype=np.uint64)) & _mask(ell)


@dataclass(frozen=True, eq=False)
class ShareVector:
    """``shares[j]`` is party j's share; trailing axes index secrets."""

    ell: int
    shares: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shares", as_residues(self.shares, self.ell))

    @property
    def r(self) -> int:
        return self.shares.shape[0]

    def __len__(self):
        return self.r

    def __eq__(self, other):
        return isinstance(other, ShareVector) and self.ell == other.ell and np.array_equal(self.shares, other.shares)


def split_residues(values, parts: int, rng: np.random.Generator, ell: int = 64) -> np.ndarray:
    """(parts, ...) array: parts-1 uniform rows, last row completes the sum."""
    if parts < 2:
        raise InputError("need at least two shares")
    v = as_residues(values, ell)
    rand = random_residues((parts - 1,) + v.shape, rng, ell)
    last = sub_mod(v, rand.sum(axis=0, dtype=np.uint64), ell)
    return np.concatenate([rand, last[None]], axis=0)


def share(v, r: int, rng: np.random.Generator, ell: int = 64) -> ShareVector:
    return ShareVector(ell, split_residues(v, r, rng, ell))


def reconstruct(shares, ell: int | None = None):
    """Sum of shares mod 2^l; accepts a ShareVector or a list of them."""
    if isinstance(shares, ShareVector):
        ell = shares.ell
        arr = shares.shares
    elif isinstance(shares, (list, tuple)) and shares and isinstance(shares[0], ShareVector):
        ells = {s.ell for s in shares}
        if len(ells) != 1:
            raise InputError(f"mismatched share widths {sorted(ells)}")
        ell = ells.pop()
        arr = np.concatenate([s.shares for s in shares], axis=0)
    else:
        arr = as_residues(shares, 64 if ell is None else ell)
        ell = 64 if ell is None else ell
        if arr.ndim == 0:
            raise InputError("no shares")
    if arr.shape[0] == 0:
        raise InputError("no shares")
    out = arr.sum(axis=0, dtype=np.uint64) & _mask(ell)
    return int(out) if out.ndim == 0 else out


# ------------------------------------------------------------ Paillier


def _rand_int(rng: np.random.Generator, bits: int) -> int:
    return int.from_bytes(rng.bytes((bits + 7) // 8), "big") >> (-bits % 8)


def _random_prime(rng: np.random.Generator, bits: int) -> gmpy2.mpz:
    x = _rand_int(rng, bits) | (3 << (bits - 2)) | 1
    return gmpy2.next_prime(gmpy2.mpz(x))


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    ell: int

    @property
    def nsq(self):
        return gmpy2.mpz(self.n) ** 2

    @property
    def budget(self) -> int:
        """Maximum number of l-bit residues a ciphertext may sum."""
        return self.n >> self.ell

    @property
    def ciphertext_bytes(self) -> int:
        return (int(self.nsq).bit_length() + 7) // 8

    def fingerprint(self) -> str:
        return hashlib.sha256(serialize_key(self)).hexdigest()[:16]


@dataclass(frozen=True)
class PaillierSecretKey:
    p: int
    q: int
    public: PaillierPublicKey = field(repr=False)

    def __post_init__(self):
        n = gmpy2.mpz(self.public.n)
        lam = gmpy2.lcm(self.p - 1, self.q - 1)
        mu = gmpy2.invert(lam, n)
        object.__setattr__(self, "_lam", lam)
        object.__setattr__(self, "_mu", mu)


@dataclass(frozen=True)
class AheKeyPair:
    public: PaillierPublicKey
    secret: PaillierSecretKey


def ahe_keygen(bits: int = 512, ell: int = 64, rng: np.random.Generator | None = None) -> AheKeyPair:
    """Paillier key pair with a ``bits``-bit modulus (deterministic given rng)."""
    if bits < 128 or bits % 2:
        raise InputError("modulus size must be an even number of bits >= 128")
    if bits <= ell + 16:
        raise InputError("modulus too small for the plaintext width")
    _mask(ell)
    if rng is None:
        raise InputError("key generation needs an explicit rng")
    half = bits // 2
    while True:
        p = _random_prime(rng, half)
        q = _random_prime(rng, half)
        if p != q and gmpy2.gcd(p * q, (p - 1) * (q - 1)) == 1:
            break
    pk = PaillierPublicKey(int(p * q), ell)
    return AheKeyPair(pk, PaillierSecretKey(int(p), int(q), pk))


@dataclass(frozen=True)
class Ciphertext:
    value: object  # gmpy2.mpz
    terms: int = 1


def _fresh_nonce_power(pk: PaillierPublicKey, rng: np.random.Generator):
    n = gmpy2.mpz(pk.n)
    while True:
        r = gmpy2.mpz(_rand_int(rng, pk.n.bit_length())) % n
        if r > 1 and gmpy2.gcd(r, n) == 1:
            return gmpy2.powmod(r, n, n * n)


def ahe_enc(pk: PaillierPublicKey, v: int, rng: np.random.Generator) -> Ciphertext:
    if not 0 <= int(v) < 1 << pk.ell:
        raise InputError(f"plaintext outside [0, 2^{pk.ell})")
    n = gmpy2.mpz(pk.n)
    nsq = n * n
    c = (1 + gmpy2.mpz(int(v)) * n) * _fresh_nonce_power(pk, rng) % nsq
    return Ciphertext(c, 1)


def _check_terms(terms: int, pk: PaillierPublicKey) -> None:
    if terms > pk.budget:
        raise OverflowBudgetError(f"{terms} accumulated terms exceed budget {pk.budget}")


def ahe_add(pk: PaillierPublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    terms = c1.terms + c2.terms
    _check_terms(terms, pk)
    return Ciphertext(c1.value * c2.value % pk.nsq, terms)


def ahe_add_plain(pk: PaillierPublicKey, c: Ciphertext, v: int) -> Ciphertext:
    terms = c.terms + 1
    _check_terms(terms, pk)
    n = gmpy2.mpz(pk.n)
    return Ciphertext(c.value * (1 + gmpy2.mpz(int(v)) * n) % (n * n), terms)


def ahe_dec(sk: PaillierSecretKey, c: Ciphertext) -> int:
    n = gmpy2.mpz(sk.public.n)
    u = gmpy2.powmod(c.value, sk._lam, n * n)
    m = (u - 1) // n * sk._mu % n
    return int(m) & ((1 << sk.public.ell) - 1)


def ahe_split(c: Ciphertext, t: int, rng: np.random.Generator, pk: PaillierPublicKey,
              enc_rng: np.random.Generator | None = None, forced=None):
    """Split an encrypted residue into t-1 plaintext shares and one ciphertext.

    ``forced`` (test hook) fixes the plaintext shares instead of sampling.
    """
    if t < 2:
        raise InputError("need at least two parts")
    if forced is not None:
        masks = as_residues(forced, pk.ell)
        if masks.shape != (t - 1,):
            raise InputError("forced shares must have length t-1")
    else:
        masks = random_residues(t - 1, rng, pk.ell)
    neg = int(neg_mod(masks.sum(dtype=np.uint64), pk.ell))
    enc = ahe_enc(pk, neg, enc_rng if enc_rng is not None else rng)
    return [int(m) for m in masks], ahe_add(pk, c, enc)


# ------------------------------------------------------------ vector schemes


@dataclass(frozen=True, eq=False)
class CipherVector:
    """A column of ciphertexts, all with the same accumulated term count."""

    items: object  # list of mpz for Paillier, uint64 array for the double
    terms: int

    def __len__(self):
        return len(self.items)


class PaillierScheme:
    """Vector interface over Paillier; holds the secret key for decryption."""

    name = "paillier"

    def __init__(self, keypair: AheKeyPair):
        self.keypair = keypair
        self.pk = keypair.public
        self.ell = self.pk.ell
        self._n = gmpy2.mpz(self.pk.n)
        self._nsq = self._n * self._n

    @property
    def ciphertext_bytes(self) -> int:
        return self.pk.ciphertext_bytes

    @property
    def budget(self) -> int:
        return self.pk.budget

    def encrypt(self, values, rng: np.random.Generator) -> CipherVector:
        vals = as_residues(values, self.ell)
        n, nsq = self._n, self._nsq
        out = [(1 + gmpy2.mpz(int(v)) * n) * _fresh_nonce_power(self.pk, rng) % nsq for v in vals.tolist()]
        return CipherVector(out, 1)

    def add_plain(self, cv: CipherVector, values) -> CipherVector:
        vals = as_residues(values, self.ell)
        if vals.shape != (len(cv),):
            raise InputError("length mismatch in homomorphic addition")
        terms = cv.terms + 1
        _check_terms(terms, self.pk)
        n, nsq = self._n, self._nsq
        return CipherVector([c * (1 + gmpy2.mpz(v) * n) % nsq for c, v in zip(cv.items, vals.tolist())], terms)

    def add(self, a: CipherVector, b: CipherVector) -> CipherVector:
        if len(a) != len(b):
            raise InputError("length mismatch in homomorphic addition")
        terms = a.terms + b.terms
        _check_terms(terms, self.pk)
        nsq = self._nsq
        return CipherVector([x * y % nsq for x, y in zip(a.items, b.items)], terms)

    def permute(self, cv: CipherVector, perm) -> CipherVector:
        return CipherVector([cv.items[i] for i in np.asarray(perm).tolist()], cv.terms)

    def split(self, cv: CipherVector, t: int, mask_rng, enc_rng):
        """t-1 plaintext residue columns and one re-randomised ciphertext column."""
        masks = random_residues((t - 1, len(cv)), mask_rng, self.ell)
        neg = neg_mod(masks.sum(axis=0, dtype=np.uint64), self.ell)
        return list(masks), self.add(cv, self.encrypt(neg, enc_rng))

    def decrypt(self, cv: CipherVector) -> np.ndarray:
        sk = self.keypair.secret
        return np.array([ahe_dec(sk, Ciphertext(c, cv.terms)) for c in cv.items], dtype=np.uint64)

    def serialize(self, cv: CipherVector) -> bytes:
        w = self.ciphertext_bytes
        return b"".join(struct.pack(">I", w) + int(c).to_bytes(w, "big") for c in cv.items)

    def vector_bytes(self, length: int) -> int:
        return length * (4 + self.ciphertext_bytes)


class IdentityScheme:
    """Transparent stand-in: 'ciphertexts' are the residues themselves.

    Byte accounting reports ``ciphertext_bytes`` per item so transcripts have
    the same shape as under the real scheme.
    """

    name = "identity"

    def __init__(self, ell: int = 64, ciphertext_bytes: int = 128, budget: int | None = None):
        _mask(ell)
        self.ell = ell
        self.ciphertext_bytes = ciphertext_bytes
        self.budget = budget if budget is not None else 1 << 400

    def _check(self, terms):
        if terms > self.budget:
            raise OverflowBudgetError(f"{terms} accumulated terms exceed budget {self.budget}")

    def encrypt(self, values, rng=None) -> CipherVector:
        return CipherVector(as_residues(values, self.ell).copy(), 1)

    def add_plain(self, cv: CipherVector, values) -> CipherVector:
        vals = as_residues(values, self.ell)
        if vals.shape != cv.items.shape:
            raise InputError("length mismatch in homomorphic addition")
        self._check(cv.terms + 1)
        return CipherVector(add_mod(cv.items, vals, self.ell), cv.terms + 1)

    def add(self, a: CipherVector, b: CipherVector) -> CipherVector:
        if len(a) != len(b):
            raise InputError("length mismatch in homomorphic addition")
        self._check(a.terms + b.terms)
        return CipherVector(add_mod(a.items, b.items, self.ell), a.terms + b.terms)

    def permute(self, cv: CipherVector, perm) -> CipherVector:
        return CipherVector(cv.items[np.asarray(perm)], cv.terms)

    def split(self, cv: CipherVector, t: int, mask_rng, enc_rng=None):
        masks = random_residues((t - 1, len(cv)), mask_rng, self.ell)
        neg = neg_mod(masks.sum(axis=0, dtype=np.uint64), self.ell)
        return list(masks), self.add(cv, self.encrypt(neg))

    def decrypt(self, cv: CipherVector) -> np.ndarray:
        return np.asarray(cv.items, dtype=np.uint64).copy()

    def serialize(self, cv: CipherVector) -> bytes:
        w = self.ciphertext_bytes
        return b"".join(struct.pack(">I", w) + int(v).to_bytes(w, "big") for v in np.asarray(cv.items).tolist())

    def vector_bytes(self, length: int) -> int:
        return length * (4 + self.ciphertext_bytes)


# ------------------------------------------------------------ key format


def _put_int(x: int) -> bytes:
    raw = int(x).to_bytes(max(1, (int(x).bit_length() + 7) // 8), "big")
    return struct.pack(">I", len(raw)) + raw


def _get_ints(data: bytes, offset: int, count: int):
    out = []
    for _ in range(count):
        (length,) = struct.unpack_from(">I", data, offset)
        offset += 4
        out.append(int.from_bytes(data[offset:offset + length], "big"))
        offset += length
    if offset != len(data):
        raise InputError("trailing bytes in key encoding")
    return out


def serialize_key(key) -> bytes:
    """``SDP1 | kind | l | len-prefixed big-endian ints`` (kind 1 public, 2 secret)."""
    if isinstance(key, PaillierPublicKey):
        return KEY_MAGIC + bytes([1, key.ell]) + _put_int(key.n)
    if isinstance(key, PaillierSecretKey):
        return KEY_MAGIC + bytes([2, key.public.ell]) + _put_int(key.p) + _put_int(key.q)
    raise InputError(f"cannot serialise {type(key).__name__}")


def deserialize_key(data: bytes):
    if data[:4] != KEY_MAGIC or len(data) < 6:
        raise InputError("not a key encoding (bad magic)")
    kind, ell = data[4], data[5]
    if kind == 1:
        (n,) = _get_ints(data, 6, 1)
        return PaillierPublicKey(n, ell)
    if kind == 2:
        p, q = _get_ints(data, 6, 2)
        return PaillierSecretKey(p, q, PaillierPublicKey(p * q, ell))
    raise InputError(f"unknown key kind {kind}")


# ------------------------------------------------------------ onions

_PAYLOAD, _ENVELOPE = 0, 1
_INFO = b"shuffledp onion layer"


def _derive(shared: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=16, salt=None, info=_INFO).derive(shared)


class X25519Onion:
    """Layers of X25519 key agreement + AES-128-GCM; deterministic given rng."""

    name = "x25519"
    overhead = 32 + 12 + 16 + 1

    def keygen(self, rng: np.random.Generator):
        sk = X25519PrivateKey.from_private_bytes(rng.bytes(32))
        return sk, sk.public_key()

    def _seal(self, plaintext: bytes, pk: X25519PublicKey, rng) -> bytes:
        eph = X25519PrivateKey.from_private_bytes(rng.bytes(32))
        eph_pub = eph.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        key = _derive(eph.exchange(pk))
        nonce = rng.bytes(12)
        return eph_pub + nonce + AESGCM(key).encrypt(nonce, plaintext, eph_pub)

    def encrypt(self, payload: bytes, pubkeys, rng: np.random.Generator) -> bytes:
        """``pubkeys`` are listed in peeling order."""
        if not pubkeys:
            raise InputError("onion needs at least one key")
        body, tag = bytes(payload), _PAYLOAD
        for pk in reversed(list(pubkeys)):
            body = self._seal(bytes([tag]) + body, pk, rng)
            tag = _ENVELOPE
        return body

    def peel(self, sk: X25519PrivateKey, envelope: bytes):
        """Returns ``(is_payload, content)``."""
        if len(envelope) < 60:
            raise OnionError("envelope too short")
        eph_pub, nonce, ct = envelope[:32], envelope[32:44], envelope[44:]
        try:
            key = _derive(sk.exchange(X25519PublicKey.from_public_bytes(eph_pub)))
            plain = AESGCM(key).decrypt(nonce, ct, eph_pub)
        except (InvalidTag, ValueError) as exc:
            raise OnionError("layer authentication failed") from exc
        return plain[0] == _PAYLOAD, plain[1:]


@dataclass(frozen=True)
class _Layer:
    recipient: int
    inner: object
    is_payload: bool


class TransparentOnion:
    """Cheap double with the same peel discipline; keys are party ids."""

    name = "transparent"
    overhead = 61

    def __init__(self):
        self._next = 0

    def keygen(self, rng=None):
        self._next += 1
        return self._next, self._next

    def encrypt(self, payload, pubkeys, rng=None):
        if not pubkeys:
            raise InputError("onion needs at least one key")
        body, is_payload = payload, True
        for pk in reversed(list(pubkeys)):
            body, is_payload = _Layer(pk, body, is_payload), False
        return body

    def peel(self, sk, envelope):
        if not isinstance(envelope, _Layer) or envelope.recipient != sk:
            raise OnionError("layer authentication failed")
        return envelope.is_payload, envelope.inner


_DEFAULT_ONION = X25519Onion()


def onion_keygen(rng: np.random.Generator):
    return _DEFAULT_ONION.keygen(rng)


def onion_encrypt(payload: bytes, pubkeys, rng: np.random.Generator) -> bytes:
    return _DEFAULT_ONION.encrypt(payload, pubkeys, rng)


def onion_peel(sk, envelope: bytes):
    """Remove one layer: ``(True, payload)`` at the core, else ``(False, inner)``."""
    return _DEFAULT_ONION.peel(sk, envelope)
