"""Heavy-hitter search over L-bit strings by growing prefixes g bits at a time.

Each round the candidate domain is every g-bit extension of the retained
prefixes plus one dummy index for users whose prefix was dropped.  Users
report their candidate index through a frequency oracle and the top-k
candidates survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import amplification as amp
from . import mechanisms as mech
from .errors import ConfigurationError, InputError


@dataclass(frozen=True)
class TreeHistConfig:
    """``mode`` is 'shuffler' (budget split over rounds, all users every
    round) or 'ldp' (users split into one group per round).

    ``estimator`` is 'solh' or 'grr'.  ``interactive=False`` selects the
    variant where users hash all their prefixes up front (SOLH only).
    """

    L: int = 48
    g: int = 8
    k: int = 32
    eps_c: float = 1.0
    delta: float = 1e-9
    mode: str = "shuffler"
    estimator: str = "solh"
    eps_l: float | None = None
    k_intermediate: int | None = None
    interactive: bool = True

    def __post_init__(self):
        if self.g < 1 or self.L < self.g or self.L % self.g:
            raise ConfigurationError("g must divide L")
        if self.L > 62:
            raise ConfigurationError("strings longer than 62 bits are not supported")
        if self.mode not in ("shuffler", "ldp"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.estimator not in ("solh", "grr"):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if not self.interactive and self.estimator != "solh":
            raise ConfigurationError("the non-interactive variant needs SOLH")
        if self.k < 1:
            raise ConfigurationError("k must be positive")

    @property
    def rounds(self) -> int:
        return self.L // self.g

    @property
    def round_budget(self) -> tuple[float, float]:
        return self.eps_c / self.rounds, self.delta / self.rounds

    @property
    def keep(self) -> int:
        return self.k_intermediate or self.k


@dataclass(frozen=True)
class PrefixCandidate:
    prefix: int
    level: int
    estimate: float


@dataclass
class CandidateDomain:
    retained: np.ndarray  # sorted parent prefixes
    g: int

    @property
    def size(self) -> int:
        return self.retained.size * (1 << self.g) + 1

    @property
    def dummy(self) -> int:
        return self.size - 1

    def index_of(self, prefixes) -> np.ndarray:
        """Candidate index of each full prefix, or the dummy index."""
        p = np.asarray(prefixes, dtype=np.int64)
        parent = p >> self.g
        pos = np.searchsorted(self.retained, parent)
        pos_c = np.minimum(pos, self.retained.size - 1)
        hit = self.retained[pos_c] == parent
        return np.where(hit, pos_c * (1 << self.g) + (p & ((1 << self.g) - 1)), self.dummy)

    def prefix_of(self, idx) -> np.ndarray:
        i = np.asarray(idx, dtype=np.int64)
        if np.any((i < 0) | (i >= self.dummy)):
            raise InputError("index outside the candidate range")
        return (self.retained[i >> self.g] << self.g) | (i & ((1 << self.g) - 1))


def candidate_domain(retained, g: int) -> CandidateDomain:
    r = np.unique(np.asarray(retained, dtype=np.int64))
    if r.size == 0:
        raise InputError("no retained prefixes")
    return CandidateDomain(r, g)


@dataclass
class TreeHistResult:
    items: list  # (value, estimate) pairs, best first
    levels: list = field(default_factory=list)  # PrefixCandidate lists per round
    truncated: bool = False
    budgets: list = field(default_factory=list)  # (eps_l, d_prime) per round

    def hex_items(self, L: int) -> list:
        width = (L + 3) // 4
        return [(format(v, f"0{width}x"), e) for v, e in self.items]


def _as_values(values, L: int) -> np.ndarray:
    if len(values) and isinstance(values[0], str):
        v = np.array([int(s, 16) for s in values], dtype=np.int64)
    else:
        v = np.asarray(values, dtype=np.int64)
    if v.size == 0:
        raise InputError("no values")
    if v.min() < 0 or v.max() >> L:
        raise InputError(f"values must be {L}-bit")
    return v


def _shuffler_mechanism(cfg: TreeHistConfig, n: int, D: int):
    eps_r, delta_r = cfg.round_budget
    if cfg.estimator == "grr":
        eps_l = amp.invert_amplification("grr", eps_r, n, delta_r, d=D)
        return mech.GrrConfig(eps_l, D)
    d_prime = min(amp.optimal_dprime(eps_r, n, delta_r), D)
    eps_l = amp.invert_amplification("solh", eps_r, n, delta_r, d_prime=d_prime)
    return mech.SolhConfig(eps_l, D, d_prime)


def _ldp_mechanism(cfg: TreeHistConfig, D: int):
    eps = cfg.eps_l if cfg.eps_l is not None else cfg.eps_c
    if cfg.estimator == "grr":
        return mech.GrrConfig(eps, D)
    d_prime = int(min(D, max(2, round(math.exp(min(eps, 30.0)) + 1))))
    return mech.SolhConfig(eps, D, d_prime)


def _top(cands: np.ndarray, est: np.ndarray, k: int):
    order = np.lexsort((cands, -est))
    return order[:k]


def treehist_run(values, cfg: TreeHistConfig, rng: np.random.Generator) -> TreeHistResult:
    v = _as_values(values, cfg.L)
    n = v.size
    R, g = cfg.rounds, cfg.g
    if cfg.mode == "ldp":
        if n < R:
            raise InputError("fewer users than rounds")
        size = n // R
        order = rng.permutation(n)
        groups = [order[j * size:(j + 1) * size] for j in range(R)]
    else:
        groups = [np.arange(n)] * R
    pre = _prehash(v, cfg, rng) if not cfg.interactive else None

    retained = np.array([0], dtype=np.int64)
    result = TreeHistResult([])
    for j in range(1, R + 1):
        dom = candidate_domain(retained, g)
        users = v[groups[j - 1]]
        prefixes = users >> (cfg.L - j * g)
        cand_prefixes = dom.prefix_of(np.arange(dom.dummy))
        if pre is not None:
            m_cfg, batch = pre[j - 1]
            counts = mech.solh_support_counts(batch, m_cfg, cand_prefixes)
            est = mech.grr_estimate_counts(counts, batch.y.size, m_cfg.p, 1.0 / m_cfg.d_prime)
            result.budgets.append((m_cfg.epsilon_l, m_cfg.d_prime))
        else:
            m_cfg = _ldp_mechanism(cfg, dom.size) if cfg.mode == "ldp" else _shuffler_mechanism(cfg, users.size, dom.size)
            idx = dom.index_of(prefixes)
            reports = mech.perturb_batch(idx, m_cfg, rng)
            est = mech.aggregate(reports, m_cfg)[: dom.dummy]
            result.budgets.append((m_cfg.epsilon_l, getattr(m_cfg, "d_prime", m_cfg.d)))
        k = cfg.k if j == R else cfg.keep
        if k > cand_prefixes.size:
            result.truncated = True
        top = _top(cand_prefixes, est, k)
        result.levels.append([PrefixCandidate(int(cand_prefixes[i]), j, float(est[i])) for i in top])
        retained = np.sort(cand_prefixes[top])
        if j == R:
            result.items = [(int(cand_prefixes[i]), float(est[i])) for i in top]
    return result


def _prehash(v: np.ndarray, cfg: TreeHistConfig, rng):
    """Non-interactive variant: every user reports every prefix level at once."""
    R, g, n = cfg.rounds, cfg.g, v.size
    out = []
    for j in range(1, R + 1):
        d = 1 << (j * g)
        if cfg.mode == "ldp":
            m_cfg = _ldp_mechanism(cfg, d)
        else:
            m_cfg = _shuffler_mechanism(cfg, n, d)
        out.append((m_cfg, mech.solh_perturb_batch(v >> (cfg.L - j * g), m_cfg, rng)))
    return out


def f1_score(found, truth) -> float:
    found, truth = set(found), set(truth)
    if not found or not truth:
        return 0.0
    tp = len(found & truth)
    if tp == 0:
        return 0.0
    precision, recall = tp / len(found), tp / len(truth)
    return 2 * precision * recall / (precision + recall)


def planted_dataset(n: int, L: int, n_planted: int, mass: float, rng: np.random.Generator,
                    exponent: float = 1.1) -> tuple[np.ndarray, np.ndarray]:
    """Users holding ``n_planted`` Zipf-weighted heavy values with total ``mass``.

    The rest hold fresh uniform L-bit values (almost surely all distinct).
    Returns ``(values, planted)``.
    """
    planted = rng.choice(1 << L, size=n_planted, replace=False).astype(np.int64)
    w = 1.0 / np.arange(1, n_planted + 1) ** exponent
    w = w / w.sum() * mass
    counts = np.floor(w * n).astype(np.int64)
    heavy = np.repeat(planted, counts)
    light = rng.integers(0, 1 << L, size=n - heavy.size, dtype=np.int64)
    values = np.concatenate([heavy, light])
    return rng.permutation(values), planted
