"""PEOS end to end: randomize, share, inject fakes, shuffle, decode, debias.

Also hosts the analysis tools that run against a transcript or a tiny
instance: adversary views, the fake-report poisoning check, and an exact
privacy-loss oracle by enumeration.
"""

from __future__ import annotations

import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats

from . import mechanisms as mech
from .amplification import AdversaryModel
from .crypto import CipherVector, IdentityScheme, X25519Onion, random_residues, sub_mod
from .errors import ConfigurationError, InputError, ProtocolAbort, ResourceError
from .shuffle import (SERVER, USERS, ShuffleConfig, ShuffleState, Streams, Transcript, eos, onion_keys,
                      oblivious_shuffle, party_name, residue_bytes, reveal, sequential_shuffle)


@dataclass(frozen=True)
class PeosConfig:
    """Protocol parameters.

    ``scheme`` is the homomorphic scheme (default: identity double whose
    byte accounting mimics a 512-bit Paillier modulus).  ``encrypt=False``
    runs the plain oblivious shuffle instead of EOS.
    """

    mechanism: object
    r: int = 3
    n_r: int = 0
    ell: int = 64
    scheme: object = None
    encrypt: bool = True
    seed: int = 0
    record: bool = True
    keep_payloads: bool = False

    def __post_init__(self):
        if not isinstance(self.mechanism, (mech.GrrConfig, mech.SolhConfig)):
            raise ConfigurationError("PEOS carries GRR or SOLH reports")
        if self.n_r < 0:
            raise ConfigurationError("n_r must be non-negative")
        ShuffleConfig(self.r, self.ell)
        if self.report_space > 1 << self.ell:
            raise ConfigurationError(
                f"report space {self.report_space} does not fit in {self.ell}-bit residues")
        if self.scheme is None:
            object.__setattr__(self, "scheme", IdentityScheme(self.ell))
        if self.scheme.ell != self.ell:
            raise ConfigurationError("scheme plaintext width differs from ell")

    @property
    def report_space(self) -> int:
        return mech.report_space(self.mechanism)

    @property
    def shuffle(self) -> ShuffleConfig:
        return ShuffleConfig(self.r, self.ell)

    @property
    def debias_d(self) -> float:
        """Estimator contribution of one uniform fake is 1/d for GRR, 0 for SOLH."""
        return self.mechanism.d if isinstance(self.mechanism, mech.GrrConfig) else math.inf


class PeosResult(NamedTuple):
    frequencies: np.ndarray
    transcript: Transcript


def debias(f, n: int, n_r: int, d: float) -> np.ndarray:
    """Remove the fake reports' expected contribution from an estimate over n+n_r reports.

    ``d`` is the per-value mass one uniform fake adds to the raw estimate's
    denominator domain; pass ``math.inf`` when fakes add nothing in expectation.
    """
    if n < 1:
        raise InputError("need at least one real user")
    f = np.asarray(f, dtype=float)
    return (n + n_r) / n * f - (n_r / n) * (0.0 if math.isinf(d) else 1.0 / d)


def _lift(idx: np.ndarray, x: int, ell: int, rng) -> np.ndarray:
    """Spread report indices over all 2^l residues: idx + k*x with random k."""
    cosets = (1 << ell) // x
    if cosets <= 1:
        return idx.astype(np.uint64)
    k = rng.integers(0, cosets, size=idx.size, dtype=np.uint64)
    return idx.astype(np.uint64) + k * np.uint64(x)


def _decode(residues: np.ndarray, x: int) -> np.ndarray:
    return residues % np.uint64(x)


def _fake_columns(cfg: PeosConfig, streams: Streams, n_r: int, hooks: dict | None):
    cols = []
    for j in range(cfg.r):
        rng = streams.party(j, "fake")
        if hooks and j in hooks:
            col = np.asarray(hooks[j](n_r, rng), dtype=np.uint64)
            if col.shape != (n_r,):
                raise ProtocolAbort(f"fakes from shuffler {j}", "wrong number of fake shares")
        else:
            col = random_residues(n_r, rng, cfg.ell)
        cols.append(col)
    return cols


def _upload(residues: np.ndarray, cfg: PeosConfig, streams: Streams, transcript: Transcript):
    """Users split their residues into r shares; the last one is encrypted."""
    r, ell, scheme = cfg.r, cfg.ell, cfg.scheme
    n = residues.size
    masks = random_residues((r - 1, n), streams.party(USERS, "mask"), ell)
    last = sub_mod(residues, masks.sum(axis=0, dtype=np.uint64), ell)
    cols = list(masks) + [last]
    if cfg.encrypt:
        cols[-1] = scheme.encrypt(last, streams.party(USERS, "enc"))
    if transcript.enabled and n:
        width = (ell + 7) // 8
        for j in range(r):
            if cfg.encrypt and j == r - 1:
                blob, w, kind = scheme.serialize(cols[j]), 4 + scheme.ciphertext_bytes, "ciphertext"
            else:
                blob, w, kind = residue_bytes(cols[j], ell), width, "share"
            for i in range(n):
                transcript.send(0, f"user:{i}", party_name(j), kind, blob[i * w:(i + 1) * w])
    return cols


def _concat(a, b, scheme):
    if isinstance(a, CipherVector):
        if isinstance(a.items, np.ndarray):
            return CipherVector(np.concatenate([a.items, b.items]), max(a.terms, b.terms))
        return CipherVector(list(a.items) + list(b.items), max(a.terms, b.terms))
    return np.concatenate([a, b])


def _pipeline(values, cfg: PeosConfig, *, fake_hooks: dict | None = None, n_r: int | None = None):
    """Run the protocol up to the server's decoded report indices."""
    n_r = cfg.n_r if n_r is None else n_r
    m = cfg.mechanism
    streams = Streams(cfg.seed)
    transcript = Transcript(cfg.record, cfg.keep_payloads)
    t0 = time.perf_counter()
    values = np.asarray(values, dtype=np.int64)
    x = cfg.report_space
    if values.size:
        reports = mech.perturb_batch(values, m, streams.party(USERS, "report"))
        idx = mech.report_index(reports, m)
    else:
        idx = np.zeros(0, dtype=np.uint64)
    residues = _lift(idx, x, cfg.ell, streams.party(USERS, "report"))
    user_cols = _upload(residues, cfg, streams, transcript)
    fakes = _fake_columns(cfg, streams, n_r, fake_hooks)
    if cfg.encrypt:
        fakes[-1] = cfg.scheme.encrypt(fakes[-1], streams.party(cfg.r - 1, "enc"))
    cols = [_concat(u, f, cfg.scheme) for u, f in zip(user_cols, fakes)]
    t1 = time.perf_counter()
    if cfg.encrypt:
        state = ShuffleState(cfg.ell, cols, cfg.r - 1, cfg.r - 1)
        out = eos(state, cfg.shuffle, cfg.scheme, streams, transcript, round_offset=1)
    else:
        state = ShuffleState(cfg.ell, cols, None, cfg.r - 1)
        out = oblivious_shuffle(state, cfg.shuffle, streams, transcript, round_offset=1)
    t2 = time.perf_counter()
    final_round = cfg.shuffle.rounds + 1
    if transcript.enabled:
        for j, col in enumerate(out.columns):
            if isinstance(col, CipherVector):
                transcript.send(final_round, party_name(j), "server", "ciphertext", cfg.scheme.serialize(col))
            else:
                transcript.send(final_round, party_name(j), "server", "share", residue_bytes(col, cfg.ell))
    revealed = reveal(out, cfg.scheme)
    if revealed.size != values.size + n_r:
        raise ProtocolAbort("server", f"expected {values.size + n_r} reports, got {revealed.size}")
    decoded = _decode(revealed, x)
    t3 = time.perf_counter()
    transcript.timings.update(users_and_fakes=t1 - t0, shuffle=t2 - t1, server=t3 - t2)
    if transcript.enabled:
        transcript.tapes["users"] = {"values": values, "report_index": idx, "residues": residues}
        for j in range(cfg.r):
            transcript.tapes[party_name(j)] = {"seed_digest": streams.tape_digest(j), "fake_shares": fakes[j]
                                               if not isinstance(fakes[j], CipherVector) else None}
        transcript.tapes["server"] = {"seed_digest": streams.tape_digest(SERVER), "residues": revealed,
                                      "report_index": decoded}
        transcript.tapes["meta"] = {"n": int(values.size), "n_r": int(n_r), "r": cfg.r, "ell": cfg.ell,
                                    "report_space": x, "mechanism": m.name}
    return decoded, transcript


def peos_run(values, cfg: PeosConfig, *, clip: bool = False) -> PeosResult:
    """Full protocol; returns debiased frequencies and the transcript."""
    values = np.asarray(values)
    if values.size == 0:
        raise InputError("no user values")
    mech._check_values(values, cfg.mechanism.d)
    decoded, transcript = _pipeline(values, cfg)
    reports = mech.index_report(decoded, cfg.mechanism)
    raw = mech.aggregate(reports, cfg.mechanism)
    f = debias(raw, values.size, cfg.n_r, cfg.debias_d)
    if clip:
        f = mech.clip_and_normalize(f)
    transcript.output = f
    return PeosResult(f, transcript)


# ------------------------------------------------------------ sequential baseline


def ss_run(values, mechanism, r: int, n_r: int, seed: int = 0, *, onion=None,
           transcript: Transcript | None = None) -> np.ndarray:
    """Onion-routed sequential shuffle with fakes, then debiased estimation."""
    values = np.asarray(values)
    if values.size == 0:
        raise InputError("no user values")
    onion = onion or X25519Onion()
    streams = Streams(seed)
    keys = onion_keys(r, streams, onion)
    reports = mech.perturb_batch(values, mechanism, streams.party(USERS, "report"))
    idx = mech.report_index(reports, mechanism)
    pub = [k[1] for k in keys]
    orng = streams.party(USERS, "onion")
    envs = [onion.encrypt(int(i).to_bytes(8, "little"), pub, orng) for i in idx.tolist()]

    def fake_payloads(count, rng):
        fake = mech.report_index(mech.sample_uniform(mechanism, count, rng), mechanism)
        return [int(i).to_bytes(8, "little") for i in fake.tolist()]

    from .shuffle import fakes_per_shuffler

    payloads = sequential_shuffle(envs, keys, fakes_per_shuffler(n_r, r), streams, onion=onion,
                                  fake_payloads=fake_payloads, transcript=transcript)
    out_idx = np.array([int.from_bytes(p, "little") for p in payloads], dtype=np.uint64)
    raw = mech.aggregate(mech.index_report(out_idx, mechanism), mechanism)
    d = mechanism.d if isinstance(mechanism, mech.GrrConfig) else math.inf
    return debias(raw, values.size, n_r, d)


# ------------------------------------------------------------ adversary views


@dataclass
class AdversaryView:
    model: AdversaryModel
    corrupted: tuple
    messages: list
    tapes: dict
    victim: int | None = None
    degraded: bool = False
    notes: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        import json

        header = {"model": self.model.value, "corrupted": list(self.corrupted), "degraded": self.degraded,
                  "victim": self.victim}
        return json.dumps(header) + "\n" + "".join(json.dumps(m.record(), sort_keys=True) + "\n" for m in self.messages)


def _model(m) -> AdversaryModel:
    return m if isinstance(m, AdversaryModel) else AdversaryModel(str(m).lower())


def extract_view(transcript: Transcript, model, corrupted=()) -> AdversaryView:
    """Filter a transcript down to what one adversary sees.

    The victim is the last user.  ``corrupted`` lists shuffler indices for
    the server-plus-shufflers model.
    """
    model = _model(model)
    meta = transcript.tapes.get("meta")
    if meta is None:
        raise InputError("transcript carries no party tapes (run with record=True)")
    r, n = meta["r"], meta["n"]
    corrupted = tuple(sorted(set(corrupted)))
    for c in corrupted:
        if not (isinstance(c, (int, np.integer)) and 0 <= c < r):
            raise InputError(f"unknown party id {c!r}")
    if model is not AdversaryModel.SERVER_PLUS_AUX and corrupted:
        raise InputError("only the shuffler-collusion model takes corrupted shufflers")
    msgs = [m for m in transcript.messages if m.recipient == "server"]
    tapes = {"server": transcript.tapes["server"], "meta": meta}
    view = AdversaryView(model, corrupted, msgs, tapes, victim=n - 1 if n else None)
    if model is AdversaryModel.SERVER_PLUS_USERS:
        users = transcript.tapes["users"]
        keep = slice(0, max(n - 1, 0))
        tapes["users"] = {k: v[keep] for k, v in users.items()}
        names = {f"user:{i}" for i in range(n - 1)}
        view.messages = [m for m in transcript.messages if m.recipient == "server" or m.sender in names]
    elif model is AdversaryModel.SERVER_PLUS_AUX:
        names = {party_name(c) for c in corrupted}
        view.messages = [m for m in transcript.messages
                         if m.recipient == "server" or m.sender in names or m.recipient in names]
        for c in corrupted:
            tapes[party_name(c)] = transcript.tapes[party_name(c)]
        if len(corrupted) > r // 2:
            view.degraded = True
            view.notes.append("more than floor(r/2) shufflers corrupted: fakes are known, guarantee falls to eps_l")
    return view


# ------------------------------------------------------------ poisoning


@dataclass(frozen=True)
class PoisoningReport:
    uniform: bool
    p_value: float
    statistic: float
    counts: np.ndarray
    honest: int
    vacuous: bool
    trials: int


def constant_shares(value: int = 0) -> Callable:
    """Adversarial strategy: every fake share equals ``value``."""
    return lambda n_r, rng: np.full(n_r, value, dtype=np.uint64)


def _fake_bins(decoded: np.ndarray, m) -> tuple[np.ndarray, int]:
    if isinstance(m, mech.GrrConfig):
        return decoded.astype(np.int64), m.d
    b = mech.index_report(decoded, m)
    return b.y * 8 + (b.seeds % np.uint64(8)).astype(np.int64), m.d_prime * 8


def poisoning_resistance_check(cfg: PeosConfig, adversarial=(), strategy: Callable | None = None,
                               trials: int = 100_000, alpha: float = 0.01) -> PoisoningReport:
    """Inject ``trials`` fakes with some shufflers adversarial; test uniformity.

    GRR fakes are binned by value, SOLH fakes by (y, seed mod 8).
    """
    strategy = strategy or constant_shares(0)
    adversarial = set(adversarial)
    for a in adversarial:
        if not 0 <= a < cfg.r:
            raise InputError(f"unknown shuffler {a}")
    hooks = {a: strategy for a in adversarial}
    decoded, _ = _pipeline(np.zeros(0, dtype=np.int64), PeosConfig(
        cfg.mechanism, cfg.r, trials, cfg.ell, cfg.scheme, cfg.encrypt, cfg.seed, record=False),
        fake_hooks=hooks)
    bins, k = _fake_bins(decoded, cfg.mechanism)
    counts = np.bincount(bins, minlength=k)
    stat, p = stats.chisquare(counts)
    honest = cfg.r - len(adversarial)
    return PoisoningReport(bool(p > alpha), float(p), float(stat), counts, honest, honest == 0, trials)


# ------------------------------------------------------------ privacy-loss oracle


def _report_dist(cfg, v: int) -> dict:
    return {k if len(k) > 1 else k: p for k, p in mech.exact_output_distribution(cfg, v).items() if p > 0}


def _uniform_dist(cfg) -> dict:
    if isinstance(cfg, mech.GrrConfig):
        return {(y,): 1.0 / cfg.d for y in range(cfg.d)}
    if isinstance(cfg, mech.SolhConfig):
        w = 1.0 / cfg.report_space
        return {(s, y): w for s in range(cfg.n_seeds) for y in range(cfg.d_prime)}
    raise InputError("fakes exist for GRR and SOLH only")


def _convolve_multisets(dists) -> dict:
    out = {(): 1.0}
    for dist in dists:
        nxt: dict = {}
        for key, p in out.items():
            for rep, q in dist.items():
                k = tuple(sorted(key + (rep,)))
                nxt[k] = nxt.get(k, 0.0) + p * q
        out = nxt
    return out


def _convolve_ordered(dists) -> dict:
    out = {(): 1.0}
    for dist in dists:
        out = {key + (rep,): p * q for key, p in out.items() for rep, q in dist.items()}
    return out


def _shuffle_literal(ordered: dict) -> dict:
    """Apply a uniformly random permutation explicitly to every outcome."""
    out: dict = {}
    for key, p in ordered.items():
        perms = list(itertools.permutations(range(len(key))))
        w = p / len(perms)
        for perm in perms:
            k = tuple(key[i] for i in perm)
            out[k] = out.get(k, 0.0) + w
    return out


def hockey_stick(P: dict, Q: dict, eps: float) -> float:
    """sum_R max(0, P(R) - e^eps Q(R))."""
    scale = math.exp(eps) if eps < 700 else math.inf
    total = 0.0
    for k, p in P.items():
        q = Q.get(k, 0.0)
        if q == 0.0:
            total += p
        elif scale < math.inf:
            total += max(0.0, p - scale * q)
    return total


def output_distribution(cfg, values, n_r: int = 0, *, collude: bool = False, literal: bool = False,
                        max_outcomes: int = 2_000_000) -> dict:
    """Exact distribution of what the server sees (multiset of reports).

    With ``collude`` the other users' reports are known and removed, leaving
    the last user's report plus the fakes.
    """
    values = list(values)
    if not values:
        raise InputError("need at least one user")
    if collude:
        values = values[-1:]
    dists = [_report_dist(cfg, v) for v in values] + [_uniform_dist(cfg)] * n_r
    size = 1
    for d in dists:
        size *= len(d)
    if literal:
        size *= math.factorial(len(dists))
    if size > max_outcomes:
        raise ResourceError(f"randomness space of about {size} outcomes exceeds limit {max_outcomes}")
    if literal:
        return _shuffle_literal(_convolve_ordered(dists))
    return _convolve_multisets(dists)


def privacy_loss_oracle(cfg, D, D_prime, eps: float, *, n_r: int = 0, collude: bool = False,
                        literal: bool = False, max_outcomes: int = 2_000_000) -> float:
    """Exact hockey-stick divergence between the shuffled outputs on D and D'."""
    if len(D) != len(D_prime):
        raise InputError("neighbouring datasets must have the same size")
    P = output_distribution(cfg, D, n_r, collude=collude, literal=literal, max_outcomes=max_outcomes)
    Q = output_distribution(cfg, D_prime, n_r, collude=collude, literal=literal, max_outcomes=max_outcomes)
    return max(hockey_stick(P, Q, eps), hockey_stick(Q, P, eps))


def exact_epsilon(cfg, D, D_prime, delta: float, *, n_r: int = 0, collude: bool = False,
                  hi: float = 50.0, tol: float = 1e-9) -> float:
    """Smallest eps with divergence <= delta, by bisection on the exact curve."""
    P = output_distribution(cfg, D, n_r, collude=collude)
    Q = output_distribution(cfg, D_prime, n_r, collude=collude)

    def div(e):
        return max(hockey_stick(P, Q, e), hockey_stick(Q, P, e))

    if div(0.0) <= delta:
        return 0.0
    lo = 0.0
    if div(hi) > delta:
        return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if div(mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi
