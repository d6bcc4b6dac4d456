"""Sequential shuffle, resharing oblivious shuffle and its encrypted variant.

Parties are numbered: shufflers 0..r-1.  All randomness comes from
``Streams``, which hands every (party, purpose) pair its own generator, so
swapping the homomorphic scheme (real or identity double) leaves every
other random draw unchanged.

A ``ShuffleState`` may hold several independent instances laid end to end
(``block``): the agreed permutations then act within each block.  This is
how Monte Carlo tests run many small shuffles in one pass.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .crypto import CipherVector, IdentityScheme, X25519Onion, random_residues, sub_mod
from .errors import InputError, OnionError, ProtocolAbort

PURPOSES = {"perm": 1, "mask": 2, "enc": 3, "fake": 4, "report": 5, "route": 6, "onion": 7, "keys": 8}
USERS = -1
SERVER = -2


def party_name(p: int) -> str:
    if p == SERVER:
        return "server"
    if p == USERS:
        return "users"
    return f"shuffler:{p}"


class Streams:
    """Independent generators per (party, purpose), derived from one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._cache: dict = {}

    def party(self, party: int, purpose: str) -> np.random.Generator:
        key = (party, purpose)
        g = self._cache.get(key)
        if g is None:
            code = {USERS: 0, SERVER: 1}.get(party, party + 2)
            ss = np.random.SeedSequence(self.seed, spawn_key=(code, PURPOSES[purpose]))
            g = self._cache[key] = np.random.Generator(np.random.PCG64(ss))
        return g

    def tape_digest(self, party: int) -> str:
        return hashlib.sha256(f"{self.seed}:{party}".encode()).hexdigest()[:16]


# ------------------------------------------------------------ transcript


@dataclass
class Message:
    round: int
    sender: str
    recipient: str
    kind: str
    byte_length: int
    payload_digest: str
    payload: bytes | None = None

    def record(self) -> dict:
        return {"round": self.round, "from": self.sender, "to": self.recipient, "kind": self.kind,
                "byte_length": self.byte_length, "payload_digest": self.payload_digest}


class Transcript:
    """Message log with byte accounting.

    With ``enabled=False`` nothing is stored (fast Monte Carlo).  Payloads of
    messages addressed to the server are always kept; others only with
    ``keep_payloads``.
    """

    def __init__(self, enabled: bool = True, keep_payloads: bool = False):
        self.enabled = enabled
        self.keep_payloads = keep_payloads
        self.messages: list[Message] = []
        self.tapes: dict[str, object] = {}
        self.output = None
        self.timings: dict[str, float] = {}

    def send(self, rnd: int, sender: str, recipient: str, kind: str, payload: bytes | None = None,
             byte_length: int | None = None, digest: str | None = None) -> None:
        if not self.enabled:
            return
        if payload is not None:
            byte_length = len(payload)
            digest = hashlib.sha256(payload).hexdigest()
        keep = payload if (self.keep_payloads or recipient == "server") else None
        self.messages.append(Message(rnd, sender, recipient, kind, int(byte_length), digest or "", keep))

    def records(self) -> list[dict]:
        return [m.record() for m in self.messages]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_jsonl())

    @staticmethod
    def load_records(path) -> list[dict]:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]

    def bytes_sent(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for m in self.messages:
            out[m.sender] = out.get(m.sender, 0) + m.byte_length
        return out

    def rounds_of_kind(self, kind: str) -> set[int]:
        return {m.round for m in self.messages if m.kind == kind}

    def filter(self, pred) -> list[Message]:
        return [m for m in self.messages if pred(m)]


def residue_bytes(arr: np.ndarray, ell: int) -> bytes:
    width = (ell + 7) // 8
    a = np.asarray(arr, dtype=np.uint64)
    if width == 8:
        return a.astype("<u8").tobytes()
    return b"".join(int(v).to_bytes(width, "little") for v in a.tolist())


# ------------------------------------------------------------ configuration


def partition_schedule(r: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All (hiders, seekers) splits with |hiders| = floor(r/2)+1, lexicographic."""
    if r < 2:
        raise InputError("need at least two shufflers")
    t = r // 2 + 1
    parties = set(range(r))
    return [(h, tuple(sorted(parties - set(h)))) for h in itertools.combinations(range(r), t)]


@dataclass(frozen=True)
class ShuffleConfig:
    r: int
    ell: int = 64

    def __post_init__(self):
        if self.r < 2:
            raise InputError("need at least two shufflers")
        if not 1 <= self.ell <= 64:
            raise InputError("bit width must be in [1, 64]")

    @property
    def t(self) -> int:
        return self.r // 2 + 1

    @property
    def rounds(self) -> int:
        return math.comb(self.r, self.t)

    @property
    def schedule(self):
        return partition_schedule(self.r)


@dataclass
class ShuffleState:
    """Per-party share columns; column ``encrypted`` (if any) is a CipherVector.

    ``label`` marks the party that holds (or, for plaintext runs, would hold)
    the encrypted column, so plaintext and encrypted runs consume identical
    randomness.
    """

    ell: int
    columns: list
    encrypted: int | None = None
    label: int | None = None
    block: int | None = None

    def __post_init__(self):
        if self.label is None:
            self.label = self.encrypted if self.encrypted is not None else len(self.columns) - 1
        lengths = {len(c) for c in self.columns}
        if len(lengths) != 1:
            raise ProtocolAbort("shuffle", f"share columns have different lengths {sorted(lengths)}")
        if self.block is not None and (self.block < 1 or self.length % self.block):
            raise InputError("block size must divide the column length")

    @property
    def r(self) -> int:
        return len(self.columns)

    @property
    def length(self) -> int:
        return len(self.columns[0])


def agreed_permutation(seed: int, length: int, block: int | None = None) -> np.ndarray:
    """Fisher-Yates permutation from a shared seed (independently per block)."""
    g = np.random.Generator(np.random.PCG64(seed))
    if block is None or block == length:
        return g.permutation(length)
    idx = np.arange(length).reshape(-1, block)
    return g.permuted(idx, axis=1).reshape(-1)


def fakes_per_shuffler(n_r: int, r: int) -> list[int]:
    """n_r split as evenly as possible; the first n_r mod r take one extra."""
    if n_r < 0:
        raise InputError("n_r must be non-negative")
    base, extra = divmod(n_r, r)
    return [base + (1 if j < extra else 0) for j in range(r)]


def _split_plain(col: np.ndarray, parts: int, rng, ell: int):
    masks = random_residues((parts - 1, col.size), rng, ell)
    last = sub_mod(col, masks.sum(axis=0, dtype=np.uint64), ell)
    return list(masks), last


def _sum_plain(arrs, ell: int) -> np.ndarray:
    mask = np.uint64((1 << ell) - 1)
    return np.sum(np.stack(arrs), axis=0, dtype=np.uint64) & mask


class _Wire:
    """Message helper that only serialises payloads when recording."""

    def __init__(self, transcript: Transcript | None, scheme, ell: int):
        self.t = transcript if transcript is not None and transcript.enabled else None
        self.scheme = scheme
        self.ell = ell

    def send(self, rnd, src, dst, value):
        if self.t is None or src == dst:
            return
        if isinstance(value, CipherVector):
            self.t.send(rnd, party_name(src) if isinstance(src, int) else src,
                        party_name(dst) if isinstance(dst, int) else dst, "ciphertext", self.scheme.serialize(value))
        else:
            self.t.send(rnd, party_name(src) if isinstance(src, int) else src,
                        party_name(dst) if isinstance(dst, int) else dst, "share", residue_bytes(value, self.ell))


def _run_rounds(state: ShuffleState, cfg: ShuffleConfig, scheme, streams: Streams,
                transcript: Transcript | None, round_offset: int) -> ShuffleState:
    if state.r != cfg.r:
        raise ProtocolAbort("shuffle", f"state has {state.r} columns, config expects {cfg.r}")
    ell, r, t, L = cfg.ell, cfg.r, cfg.t, state.length
    wire = _Wire(transcript, scheme, ell)
    cols = list(state.columns)
    label = state.label
    encrypted = scheme is not None
    for i, (hiders, seekers) in enumerate(cfg.schedule):
        rnd = round_offset + i
        leader = hiders[0]
        seed = int(streams.party(leader, "perm").integers(0, 2 ** 63))
        if wire.t is not None:
            for h in hiders[1:]:
                wire.t.send(rnd, party_name(leader), party_name(h), "perm_seed", seed.to_bytes(8, "little"))

        inbox = {h: [] for h in hiders}
        cipher_in: dict[int, CipherVector] = {}
        new_label = label
        for s in seekers:
            dest = hiders[int(streams.party(s, "route").integers(t))]
            if encrypted and s == label:
                masks, last = scheme.split(cols[s], t, streams.party(s, "mask"), streams.party(s, "enc"))
            else:
                masks, last = _split_plain(cols[s], t, streams.party(s, "mask"), ell)
            for h, m in zip([h for h in hiders if h != dest], masks):
                inbox[h].append(m)
                wire.send(rnd, s, h, m)
            if isinstance(last, CipherVector):
                cipher_in[dest] = last
            else:
                inbox[dest].append(last)
            wire.send(rnd, s, dest, last)
            if s == label:
                new_label = dest
        label = new_label

        perm = agreed_permutation(seed, L, state.block)
        acc = {}
        for h in hiders:
            if encrypted and h == label:
                ct = cipher_in.get(h, cols[h])
                plains = inbox[h] + ([cols[h]] if h in cipher_in else [])
                if plains:
                    ct = scheme.add_plain(ct, _sum_plain(plains, ell))
                acc[h] = scheme.permute(ct, perm)
            else:
                acc[h] = _sum_plain([cols[h]] + inbox[h], ell)[perm]

        received = {p: [] for p in range(r)}
        cipher_to: dict[int, CipherVector] = {}
        for h in hiders:
            dest = int(streams.party(h, "route").integers(r))
            if encrypted and h == label:
                masks, last = scheme.split(acc[h], r, streams.party(h, "mask"), streams.party(h, "enc"))
            else:
                masks, last = _split_plain(acc[h], r, streams.party(h, "mask"), ell)
            for p, m in zip([p for p in range(r) if p != dest], masks):
                received[p].append(m)
                wire.send(rnd, h, p, m)
            if isinstance(last, CipherVector):
                cipher_to[dest] = last
            else:
                received[dest].append(last)
            wire.send(rnd, h, dest, last)
            if h == label:
                new_label = dest
        label = new_label
        for p in range(r):
            plain = _sum_plain(received[p], ell)
            if p in cipher_to:
                cols[p] = scheme.add_plain(cipher_to[p], plain)
            else:
                cols[p] = plain
    return ShuffleState(ell, cols, label if encrypted else None, label, state.block)


def oblivious_shuffle(state: ShuffleState, cfg: ShuffleConfig, streams: Streams,
                      transcript: Transcript | None = None, round_offset: int = 1) -> ShuffleState:
    """C(r, t) hide-and-seek rounds over plaintext share columns."""
    if state.encrypted is not None:
        raise ProtocolAbort("oblivious_shuffle", "plaintext shares only")
    return _run_rounds(state, cfg, None, streams, transcript, round_offset)


def eos(state: ShuffleState, cfg: ShuffleConfig, scheme, streams: Streams,
        transcript: Transcript | None = None, round_offset: int = 1) -> ShuffleState:
    """Encrypted oblivious shuffle: one column stays under the AHE scheme."""
    n_ct = sum(isinstance(c, CipherVector) for c in state.columns)
    if n_ct != 1 or state.encrypted is None or not isinstance(state.columns[state.encrypted], CipherVector):
        raise ProtocolAbort("eos", f"expected exactly one ciphertext column, found {n_ct}")
    return _run_rounds(state, cfg, scheme, streams, transcript, round_offset)


def reveal(state: ShuffleState, scheme=None) -> np.ndarray:
    """Reconstruct every position (decrypting the ciphertext column if any)."""
    cols = []
    for j, c in enumerate(state.columns):
        if isinstance(c, CipherVector):
            if scheme is None:
                raise InputError("ciphertext column needs a scheme to decrypt")
            cols.append(scheme.decrypt(c))
        else:
            cols.append(np.asarray(c, dtype=np.uint64))
    return _sum_plain(cols, state.ell)


def share_state(values, cfg: ShuffleConfig, streams: Streams, scheme=None, block: int | None = None) -> ShuffleState:
    """Secret-share plaintext values into a fresh state (test helper).

    With a scheme, the last column is encrypted.
    """
    v = np.asarray(values, dtype=np.uint64)
    masks, last = _split_plain(v, cfg.r, streams.party(USERS, "mask"), cfg.ell)
    cols = masks + [last]
    if scheme is None:
        return ShuffleState(cfg.ell, cols, None, cfg.r - 1, block)
    cols[-1] = scheme.encrypt(last, streams.party(USERS, "enc"))
    return ShuffleState(cfg.ell, cols, cfg.r - 1, cfg.r - 1, block)


# ------------------------------------------------------------ sequential shuffle


def sequential_shuffle(envelopes: Sequence, keys: Sequence, n_fakes: Sequence[int] | int, streams: Streams, *,
                       onion=None, fake_payloads: Callable | None = None,
                       block: int | None = None, transcript: Transcript | None = None) -> list:
    """Layered-encryption shuffle through r shufflers and then the server.

    ``keys`` holds r+1 (secret, public) pairs: the shufflers in order, then
    the server.  Shuffler j peels one layer of every envelope, adds
    ``n_fakes[j]`` fake payloads wrapped for the remaining layers, and
    permutes.  Returns the payloads the server recovers.
    """
    onion = onion or X25519Onion()
    r = len(keys) - 1
    if r < 1:
        raise InputError("need at least one shuffler plus the server")
    if isinstance(n_fakes, int):
        n_fakes = [n_fakes] * r
    if len(n_fakes) != r:
        raise InputError("one fake count per shuffler")
    if any(n_fakes) and fake_payloads is None:
        raise InputError("fake reports need a payload sampler")
    if block is not None and any(n_fakes):
        raise InputError("blocked runs cannot add fakes")
    record = transcript is not None and transcript.enabled
    batch = list(envelopes)
    for j in range(r):
        sk = keys[j][0]
        peeled = []
        for env in batch:
            try:
                done, inner = onion.peel(sk, env)
            except OnionError as exc:
                raise ProtocolAbort(f"layer {j}", "onion layer failed to decrypt") from exc
            if done:
                raise ProtocolAbort(f"layer {j}", "payload exposed before the server layer")
            peeled.append(inner)
        if n_fakes[j]:
            rng = streams.party(j, "fake")
            rest = [k[1] for k in keys[j + 1:]]
            for payload in fake_payloads(n_fakes[j], rng):
                peeled.append(onion.encrypt(payload, rest, streams.party(j, "onion")))
        perm = agreed_permutation(int(streams.party(j, "perm").integers(0, 2 ** 63)), len(peeled), block)
        batch = [peeled[i] for i in perm.tolist()]
        if record:
            dst = party_name(j + 1) if j + 1 < r else "server"
            size = sum(len(e) if isinstance(e, (bytes, bytearray)) else onion.overhead for e in batch)
            digest = hashlib.sha256(b"".join(e for e in batch if isinstance(e, (bytes, bytearray)))).hexdigest()
            transcript.send(j + 1, party_name(j), dst, "onion_batch", byte_length=size, digest=digest)
    out = []
    for env in batch:
        try:
            done, payload = onion.peel(keys[r][0], env)
        except OnionError as exc:
            raise ProtocolAbort(f"layer {r}", "onion layer failed to decrypt") from exc
        if not done:
            raise ProtocolAbort(f"layer {r}", "extra onion layers at the server")
        out.append(payload)
    return out


def onion_keys(r: int, streams: Streams, onion=None) -> list:
    """r shuffler key pairs followed by the server's."""
    onion = onion or X25519Onion()
    return [onion.keygen(streams.party(j, "keys")) for j in range(r)] + [onion.keygen(streams.party(SERVER, "keys"))]


__all__ = [
    "Streams", "Transcript", "Message", "ShuffleConfig", "ShuffleState", "partition_schedule",
    "agreed_permutation", "fakes_per_shuffler", "oblivious_shuffle", "eos", "reveal", "share_state",
    "sequential_shuffle", "onion_keys", "IdentityScheme", "USERS", "SERVER", "party_name", "residue_bytes",
]
