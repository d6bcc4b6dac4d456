"""Local randomizers and calibrated frequency estimators.

Each oracle has a frozen config, a scalar ``*_perturb`` returning a report
object, and batch variants working on numpy arrays.  Aggregators accept
either a list of report objects or the batch array form.

Randomness only ever comes from the ``numpy.random.Generator`` passed in.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from . import amplification as amp
from .errors import ConfigurationError, InfeasibleError, InputError, ResourceError
from .hashing import AvalancheHash, fmix64_inplace

DEFAULT_MEMORY_CAP = 1 << 30  # bytes of report bits held at once


def _exp_neg(eps: float) -> float:
    return math.exp(-eps) if eps < math.inf else 0.0


def _check_eps(eps: float) -> None:
    if not eps >= 0:
        raise ConfigurationError("epsilon must be non-negative")


def _check_values(values, d: int) -> np.ndarray:
    v = np.asarray(values)
    if v.size and (not np.issubdtype(v.dtype, np.integer)):
        if not np.all(np.mod(v, 1) == 0):
            raise InputError("value indices must be integers")
        v = v.astype(np.int64)
    v = v.astype(np.int64, copy=False)
    if v.size and (v.min() < 0 or v.max() >= d):
        raise InputError(f"value index outside domain [0, {d})")
    return v


@dataclass(frozen=True)
class GrrConfig:
    epsilon_l: float
    d: int
    name = "grr"

    def __post_init__(self):
        _check_eps(self.epsilon_l)
        if self.d < 2:
            raise ConfigurationError("domain size must be at least 2")

    @property
    def p(self) -> float:
        return 1.0 / (1.0 + (self.d - 1) * _exp_neg(self.epsilon_l))

    @property
    def q(self) -> float:
        y = _exp_neg(self.epsilon_l)
        return y / (1.0 + (self.d - 1) * y)

    @property
    def gamma(self) -> float:
        y = _exp_neg(self.epsilon_l)
        return self.d * y / (1.0 + (self.d - 1) * y)

    @property
    def report_space(self) -> int:
        return self.d


@dataclass(frozen=True)
class SolhConfig:
    """Local hashing into ``d_prime`` buckets followed by d'-ary GRR."""

    epsilon_l: float
    d: int
    d_prime: int
    seed_bits: int = 32
    hash_family: object = field(default=None, compare=False)
    name = "solh"

    def __post_init__(self):
        _check_eps(self.epsilon_l)
        if self.d < 2:
            raise ConfigurationError("domain size must be at least 2")
        if self.d_prime < 2:
            raise ConfigurationError("hash range must be at least 2")
        if self.d_prime > self.d:
            raise ConfigurationError(f"hash range {self.d_prime} exceeds domain size {self.d}")
        if self.hash_family is None:
            object.__setattr__(self, "hash_family", AvalancheHash(self.seed_bits))
        else:
            object.__setattr__(self, "seed_bits", self.hash_family.seed_bits)

    @property
    def family(self):
        return self.hash_family

    @property
    def n_seeds(self) -> int:
        return self.hash_family.n_seeds

    @property
    def p(self) -> float:
        return 1.0 / (1.0 + (self.d_prime - 1) * _exp_neg(self.epsilon_l))

    @property
    def q(self) -> float:
        y = _exp_neg(self.epsilon_l)
        return y / (1.0 + (self.d_prime - 1) * y)

    @property
    def gamma(self) -> float:
        y = _exp_neg(self.epsilon_l)
        return self.d_prime * y / (1.0 + (self.d_prime - 1) * y)

    @property
    def report_space(self) -> int:
        return self.n_seeds * self.d_prime

    def grr(self) -> GrrConfig:
        return GrrConfig(self.epsilon_l, self.d_prime)


def hadamard_config(epsilon_l: float, d: int, **kw) -> SolhConfig:
    """Binary local hashing (d' = 2)."""
    return SolhConfig(epsilon_l, d, 2, **kw)


@dataclass(frozen=True)
class UeConfig:
    """Symmetric unary encoding; each bit flips with f = 1/(e^{eps/2}+1)."""

    epsilon_l: float
    d: int
    memory_cap: int = DEFAULT_MEMORY_CAP
    name = "ue"

    def __post_init__(self):
        _check_eps(self.epsilon_l)
        if self.d < 2:
            raise ConfigurationError("domain size must be at least 2")

    @property
    def f(self) -> float:
        y = _exp_neg(self.epsilon_l / 2.0)
        return y / (1.0 + y)

    @property
    def p(self) -> float:
        return 1.0 - self.f

    @property
    def q(self) -> float:
        return self.f

    @property
    def gamma(self) -> float:
        return 2.0 * self.f


def removal_ue_config(epsilon_l: float, d: int, **kw) -> UeConfig:
    """Unary encoding run at 2*eps, as used for the removal-LDP comparison."""
    return UeConfig(2.0 * epsilon_l, d, **kw)


@dataclass(frozen=True)
class AueConfig:
    """One-hot vector plus independent Bernoulli(p_aue) increments."""

    epsilon_c: float
    n: int
    delta: float
    d: int
    memory_cap: int = DEFAULT_MEMORY_CAP
    name = "aue"

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.epsilon_c <= 0 or self.n < 1:
            raise ConfigurationError("need epsilon_c > 0 and n >= 1")
        if self.d < 2:
            raise ConfigurationError("domain size must be at least 2")
        if self.shortfall > 1.0:
            need = math.ceil(200.0 * math.log(4.0 / self.delta) / self.epsilon_c ** 2)
            raise InfeasibleError(f"eps_c^2 n = {self.epsilon_c ** 2 * self.n:.4g} below 200 ln(4/delta)", need)

    @property
    def shortfall(self) -> float:
        return 200.0 * math.log(4.0 / self.delta) / (self.epsilon_c ** 2 * self.n)

    @property
    def p_aue(self) -> float:
        return 1.0 - self.shortfall


MechanismConfig = Union[GrrConfig, SolhConfig, UeConfig, AueConfig]


@dataclass(frozen=True)
class GrrReport:
    value: int


@dataclass(frozen=True)
class SolhReport:
    seed: int
    y: int


@dataclass(frozen=True, eq=False)
class BitVectorReport:
    """Length-d vector; entries are bits for UE and counts in {0,1,2} for AUE."""

    bits: np.ndarray

    def __eq__(self, other):
        return isinstance(other, BitVectorReport) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())


Report = Union[GrrReport, SolhReport, BitVectorReport]


class SolhBatch(NamedTuple):
    seeds: np.ndarray  # uint64
    y: np.ndarray  # int64


@dataclass(frozen=True)
class BlanketDecomposition:
    gamma: float

    @property
    def value_mass(self) -> float:
        return 1.0 - self.gamma


# ---------------------------------------------------------------- GRR


def grr_perturb_batch(values, cfg: GrrConfig, rng: np.random.Generator) -> np.ndarray:
    v = _check_values(values, cfg.d)
    keep = rng.random(v.shape) < cfg.p
    other = rng.integers(0, cfg.d - 1, size=v.shape)
    other = other + (other >= v)
    return np.where(keep, v, other)


def grr_perturb(v: int, cfg: GrrConfig, rng: np.random.Generator) -> GrrReport:
    return GrrReport(int(grr_perturb_batch(np.array([v]), cfg, rng)[0]))


def _grr_values(reports, d: int) -> np.ndarray:
    if isinstance(reports, np.ndarray):
        vals = reports
    else:
        reports = list(reports)
        if not all(isinstance(r, GrrReport) for r in reports):
            raise InputError("expected only GRR reports")
        vals = np.fromiter((r.value for r in reports), dtype=np.int64, count=len(reports))
    if vals.size == 0:
        raise InputError("no reports to aggregate")
    return _check_values(vals, d)


def grr_estimate_counts(counts, n: int, p: float, q: float) -> np.ndarray:
    """Debias per-value support counts: (C_v / n - q) / (p - q)."""
    if not p > q:
        raise ConfigurationError("p == q: estimator undefined at eps = 0")
    return (np.asarray(counts, dtype=float) / n - q) / (p - q)


def clip_and_normalize(est) -> np.ndarray:
    """Optional post-processing: clip to [0, 1] and rescale to sum 1."""
    e = np.clip(np.asarray(est, dtype=float), 0.0, 1.0)
    s = e.sum()
    return e / s if s > 0 else e


def grr_aggregate(reports, cfg: GrrConfig, *, clip: bool = False) -> np.ndarray:
    vals = _grr_values(reports, cfg.d)
    est = grr_estimate_counts(np.bincount(vals, minlength=cfg.d), vals.size, cfg.p, cfg.q)
    return clip_and_normalize(est) if clip else est


def grr_variance(cfg: GrrConfig, n: int, f=0.0):
    """Exact per-value variance of the GRR estimate given true frequency f."""
    p, q = cfg.p, cfg.q
    f = np.asarray(f, dtype=float)
    return (f * p * (1 - p) + (1 - f) * q * (1 - q)) / (n * (p - q) ** 2)


# ---------------------------------------------------------------- SOLH


def solh_perturb_batch(values, cfg: SolhConfig, rng: np.random.Generator) -> SolhBatch:
    v = _check_values(values, cfg.d)
    seeds = cfg.family.sample_seeds(v.shape, rng)
    hashed = cfg.family(seeds, v, cfg.d_prime)
    return SolhBatch(seeds, grr_perturb_batch(hashed, cfg.grr(), rng))


def solh_perturb(v: int, cfg: SolhConfig, rng: np.random.Generator) -> SolhReport:
    b = solh_perturb_batch(np.array([v]), cfg, rng)
    return SolhReport(int(b.seeds[0]), int(b.y[0]))


def _solh_batch(reports, cfg: SolhConfig) -> SolhBatch:
    if isinstance(reports, SolhBatch):
        batch = reports
    elif isinstance(reports, tuple) and len(reports) == 2 and isinstance(reports[0], np.ndarray):
        batch = SolhBatch(*reports)
    else:
        reports = list(reports)
        if not all(isinstance(r, SolhReport) for r in reports):
            raise InputError("expected only SOLH reports")
        batch = SolhBatch(np.fromiter((r.seed for r in reports), dtype=np.uint64, count=len(reports)),
                          np.fromiter((r.y for r in reports), dtype=np.int64, count=len(reports)))
    if batch.y.size == 0:
        raise InputError("no reports to aggregate")
    seeds = np.asarray(batch.seeds, dtype=np.uint64)
    y = np.asarray(batch.y, dtype=np.int64)
    if y.min() < 0 or y.max() >= cfg.d_prime:
        raise InputError("hashed value outside hash range")
    if int(seeds.max()) >= cfg.n_seeds:
        raise InputError("seed outside the hash family")
    return SolhBatch(seeds, y)


def solh_support_counts(reports, cfg: SolhConfig, values=None, *, chunk_elems: int = 1 << 22) -> np.ndarray:
    """#{i : h(seed_i, v) = y_i} for each v (default: the whole domain)."""
    batch = _solh_batch(reports, cfg)
    vals = np.arange(cfg.d) if values is None else _check_values(values, cfg.d)
    fam = cfg.family
    out = np.zeros(vals.size, dtype=np.int64)
    if isinstance(fam, AvalancheHash):
        keys = fam.keys(batch.seeds)[:, None]
        codes = fam.value_codes(vals)
        y = batch.y.astype(np.uint64)[:, None]
        step = max(1, chunk_elems // max(1, keys.size))
        for lo in range(0, vals.size, step):
            h = fmix64_inplace(np.bitwise_xor(keys, codes[None, lo:lo + step]))
            np.remainder(h, np.uint64(cfg.d_prime), out=h)
            out[lo:lo + step] = np.count_nonzero(h == y, axis=0)
    else:
        step = max(1, chunk_elems // max(1, batch.y.size))
        for lo in range(0, vals.size, step):
            hit = fam(batch.seeds[:, None], vals[None, lo:lo + step], cfg.d_prime)
            out[lo:lo + step] = (hit == batch.y[:, None]).sum(axis=0)
    return out


def solh_aggregate(reports, cfg: SolhConfig, *, clip: bool = False) -> np.ndarray:
    batch = _solh_batch(reports, cfg)
    counts = solh_support_counts(batch, cfg)
    q_star = 1.0 / cfg.d_prime
    if not cfg.p > q_star:
        raise ConfigurationError("p == 1/d': estimator undefined at eps = 0")
    est = grr_estimate_counts(counts, batch.y.size, cfg.p, q_star)
    return clip_and_normalize(est) if clip else est


def solh_variance(cfg: SolhConfig, n: int, f=0.0):
    """Per-value variance assuming an ideal (1/d'-collision) hash family."""
    p, q = cfg.p, 1.0 / cfg.d_prime
    f = np.asarray(f, dtype=float)
    return (f * p * (1 - p) + (1 - f) * q * (1 - q)) / (n * (p - q) ** 2)


# ---------------------------------------------------------------- UE / AUE


def _check_cap(rows: int, d: int, cap: int) -> None:
    if rows * d > cap:
        raise ResourceError(f"{rows} x {d} report matrix exceeds memory cap of {cap} bytes")


def ue_perturb_batch(values, cfg: UeConfig, rng: np.random.Generator) -> np.ndarray:
    v = _check_values(values, cfg.d)
    _check_cap(v.size, cfg.d, cfg.memory_cap)
    flips = rng.random((v.size, cfg.d)) < cfg.f
    onehot = np.zeros((v.size, cfg.d), dtype=bool)
    onehot[np.arange(v.size), v] = True
    return (onehot ^ flips).astype(np.uint8)


def ue_perturb(v: int, cfg: UeConfig, rng: np.random.Generator) -> BitVectorReport:
    return BitVectorReport(ue_perturb_batch(np.array([v]), cfg, rng)[0])


def _vector_matrix(reports, d: int) -> np.ndarray:
    if isinstance(reports, np.ndarray):
        mat = reports
    else:
        reports = list(reports)
        if not all(isinstance(r, BitVectorReport) for r in reports):
            raise InputError("expected only bit-vector reports")
        mat = np.stack([r.bits for r in reports]) if reports else np.zeros((0, d))
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise InputError("no reports to aggregate")
    if mat.shape[1] != d:
        raise InputError(f"report length {mat.shape[1]} != domain size {d}")
    return mat


def ue_aggregate(reports, cfg: UeConfig, *, clip: bool = False) -> np.ndarray:
    mat = _vector_matrix(reports, cfg.d)
    est = grr_estimate_counts(mat.sum(axis=0), mat.shape[0], cfg.p, cfg.q)
    return clip_and_normalize(est) if clip else est


def ue_sample_counts(hist, cfg: UeConfig, rng: np.random.Generator) -> np.ndarray:
    """Column sums of n UE reports drawn directly (same law as summing rows)."""
    hist = np.asarray(hist, dtype=np.int64)
    n = int(hist.sum())
    return rng.binomial(hist, cfg.p) + rng.binomial(n - hist, cfg.q)


def ue_variance(cfg: UeConfig, n: int, f=0.0):
    p, q = cfg.p, cfg.q
    f = np.asarray(f, dtype=float)
    return (f * p * (1 - p) + (1 - f) * q * (1 - q)) / (n * (p - q) ** 2)


def aue_encode_batch(values, cfg: AueConfig, rng: np.random.Generator) -> np.ndarray:
    v = _check_values(values, cfg.d)
    _check_cap(v.size, cfg.d, cfg.memory_cap)
    out = (rng.random((v.size, cfg.d)) < cfg.p_aue).astype(np.uint8)
    out[np.arange(v.size), v] += 1
    return out


def aue_encode(v: int, cfg: AueConfig, rng: np.random.Generator) -> BitVectorReport:
    return BitVectorReport(aue_encode_batch(np.array([v]), cfg, rng)[0])


def aue_aggregate(reports, cfg: AueConfig, *, clip: bool = False) -> np.ndarray:
    mat = _vector_matrix(reports, cfg.d)
    est = mat.sum(axis=0) / mat.shape[0] - cfg.p_aue
    return clip_and_normalize(est) if clip else est


def aue_sample_counts(hist, cfg: AueConfig, rng: np.random.Generator) -> np.ndarray:
    hist = np.asarray(hist, dtype=np.int64)
    return hist + rng.binomial(int(hist.sum()), cfg.p_aue, size=hist.size)


def aue_variance(cfg: AueConfig, n: int) -> float:
    p = cfg.p_aue
    return p * (1.0 - p) / n


# ---------------------------------------------------------------- shared helpers


def blanket_decompose(cfg) -> BlanketDecomposition:
    if isinstance(cfg, (GrrConfig, SolhConfig, UeConfig)):
        return BlanketDecomposition(cfg.gamma)
    raise InputError(f"no blanket decomposition for {type(cfg).__name__}")


def choose_mechanism(params: amp.AmplificationParams) -> str:
    """'grr' or 'solh', whichever has the smaller shuffled variance."""
    if params.epsilon_c is None:
        raise ConfigurationError("choose_mechanism needs epsilon_c")
    m = params.m
    n, d = params.n, params.d
    v_grr = (m - 1.0) / (n * (m - d) ** 2) if m > d else math.inf
    v_solh = math.inf
    if m >= 4:
        k = min(amp.optimal_dprime(params.epsilon_c, n, params.delta), d)
        v_solh = amp.solh_variance_m(m, n, k)
    if math.isinf(v_grr) and math.isinf(v_solh):
        raise ConfigurationError(f"m = {m:.4g}: neither GRR nor SOLH is amplifiable")
    return "solh" if v_solh <= v_grr else "grr"


def perturb_batch(values, cfg, rng):
    if isinstance(cfg, GrrConfig):
        return grr_perturb_batch(values, cfg, rng)
    if isinstance(cfg, SolhConfig):
        return solh_perturb_batch(values, cfg, rng)
    if isinstance(cfg, UeConfig):
        return ue_perturb_batch(values, cfg, rng)
    if isinstance(cfg, AueConfig):
        return aue_encode_batch(values, cfg, rng)
    raise InputError(f"unsupported config {type(cfg).__name__}")


def aggregate(reports, cfg, *, clip: bool = False) -> np.ndarray:
    if isinstance(cfg, GrrConfig):
        return grr_aggregate(reports, cfg, clip=clip)
    if isinstance(cfg, SolhConfig):
        return solh_aggregate(reports, cfg, clip=clip)
    if isinstance(cfg, UeConfig):
        return ue_aggregate(reports, cfg, clip=clip)
    if isinstance(cfg, AueConfig):
        return aue_aggregate(reports, cfg, clip=clip)
    raise InputError(f"unsupported config {type(cfg).__name__}")


# ------------------------------------------------- report <-> residue index


def report_space(cfg) -> int:
    """Number of distinct reports; the protocol shares indices mod this."""
    if isinstance(cfg, (GrrConfig, SolhConfig)):
        return cfg.report_space
    raise InputError("only GRR and SOLH reports have an index form")


def report_index(reports, cfg) -> np.ndarray:
    """Map reports to integers in [0, report_space)."""
    if isinstance(cfg, GrrConfig):
        return _grr_values(reports, cfg.d).astype(np.uint64)
    if isinstance(cfg, SolhConfig):
        b = _solh_batch(reports, cfg)
        return b.seeds * np.uint64(cfg.d_prime) + b.y.astype(np.uint64)
    raise InputError("only GRR and SOLH reports have an index form")


def index_report(idx, cfg):
    """Inverse of ``report_index`` (array form)."""
    idx = np.asarray(idx, dtype=np.uint64)
    if idx.size and int(idx.max()) >= report_space(cfg):
        raise InputError("report index outside the report space")
    if isinstance(cfg, GrrConfig):
        return idx.astype(np.int64)
    dp = np.uint64(cfg.d_prime)
    return SolhBatch(idx // dp, (idx % dp).astype(np.int64))


def sample_uniform(cfg, size: int, rng: np.random.Generator):
    """Reports drawn uniformly from the whole report space (fake reports)."""
    if isinstance(cfg, GrrConfig):
        return rng.integers(0, cfg.d, size=size)
    if isinstance(cfg, SolhConfig):
        return SolhBatch(cfg.family.sample_seeds(size, rng), rng.integers(0, cfg.d_prime, size=size))
    raise InputError("uniform fake reports exist for GRR and SOLH only")


# ---------------------------------------------------------------- wire format


def encode_report(report: Report) -> bytes:
    if isinstance(report, GrrReport):
        return struct.pack("<Q", report.value)
    if isinstance(report, SolhReport):
        if report.seed >= 1 << 32 or report.y >= 1 << 32:
            raise InputError("SOLH wire form needs 32-bit seed and hashed value")
        return struct.pack("<II", report.seed, report.y)
    if isinstance(report, BitVectorReport):
        bits = np.asarray(report.bits, dtype=np.uint8)
        if bits.max(initial=0) > 1:
            # AUE counts: low plane then high plane
            planes = np.concatenate([bits >= 1, bits >= 2])
            return struct.pack("<IB", bits.size, 2) + np.packbits(planes, bitorder="little").tobytes()
        return struct.pack("<IB", bits.size, 1) + np.packbits(bits, bitorder="little").tobytes()
    raise InputError(f"cannot encode {type(report).__name__}")


def decode_report(data: bytes, kind: str) -> Report:
    if kind == "grr":
        (v,) = struct.unpack("<Q", data)
        return GrrReport(v)
    if kind == "solh":
        s, y = struct.unpack("<II", data)
        return SolhReport(s, y)
    if kind in ("ue", "aue", "vector"):
        length, planes = struct.unpack_from("<IB", data)
        raw = np.unpackbits(np.frombuffer(data[5:], dtype=np.uint8), bitorder="little")
        raw = raw[: length * planes].reshape(planes, length)
        return BitVectorReport(raw.sum(axis=0).astype(np.uint8))
    raise InputError(f"unknown report kind {kind!r}")


def exact_output_distribution(cfg, v: int) -> dict:
    """Pr[report | v] over the full report space (small configs only)."""
    if isinstance(cfg, GrrConfig):
        return {(y,): (cfg.p if y == v else cfg.q) for y in range(cfg.d)}
    if isinstance(cfg, SolhConfig):
        if cfg.report_space > 1 << 16:
            raise ResourceError("report space too large to enumerate")
        seeds = np.arange(cfg.n_seeds, dtype=np.uint64)
        h = cfg.family(seeds, np.full(seeds.size, v), cfg.d_prime)
        out = {}
        for s, hv in zip(seeds.tolist(), h.tolist()):
            for y in range(cfg.d_prime):
                out[(s, y)] = (cfg.p if y == hv else cfg.q) / cfg.n_seeds
        return out
    if isinstance(cfg, UeConfig):
        if cfg.d > 16:
            raise ResourceError("report space too large to enumerate")
        out = {}
        for code in range(1 << cfg.d):
            bits = [(code >> i) & 1 for i in range(cfg.d)]
            prob = 1.0
            for i, b in enumerate(bits):
                truth = 1 if i == v else 0
                prob *= cfg.p if b == truth else cfg.q
            out[tuple(bits)] = prob
        return out
    raise InputError("enumeration defined for GRR, SOLH and UE")
