"""Privacy amplification, estimator variance and parameter planning.

Everything here is a pure function of its arguments.  Budgets are in nats.
The "blanket quantity" ``m = eps_c^2 (n - 1) / (14 ln(2/delta))`` is the
value of ``e^eps_l + k - 1`` at which a k-ary randomizer is amplified to
exactly ``eps_c`` by shuffling ``n`` reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError, InfeasibleError, InputError


class Method(str, Enum):
    GRR = "grr"
    UE = "ue"
    SOLH = "solh"


class Table1Row(str, Enum):
    """Earlier amplification bounds, keyed by author initials."""

    EFMRTT = "efmrtt"
    CSUZZ = "csuzz"
    BBGN = "bbgn"


class AdversaryModel(str, Enum):
    SERVER = "server"
    SERVER_PLUS_USERS = "server+users"
    SERVER_PLUS_AUX = "server+aux"


def _method(m) -> Method:
    try:
        return Method(m.value if isinstance(m, Enum) else str(m).lower())
    except ValueError:
        raise InputError(f"unknown mechanism {m!r}") from None


def _check_delta(delta: float) -> None:
    if not 0.0 < delta < 1.0:
        raise InputError("delta must lie in (0, 1)")


def _check_n(n: int) -> None:
    if n < 2:
        raise InputError("need at least two users")


def _exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def blanket_m(eps_c: float, n: int, delta: float) -> float:
    _check_delta(delta)
    return eps_c ** 2 * (n - 1) / (14.0 * math.log(2.0 / delta))


def blanket_m_ue(eps_c: float, n: int, delta: float) -> float:
    """Unary-encoding analogue of ``blanket_m`` (two locations, ln(4/delta))."""
    _check_delta(delta)
    return eps_c ** 2 * (n - 1) / (56.0 * math.log(4.0 / delta))


@dataclass(frozen=True)
class AmplificationParams:
    n: int
    delta: float
    epsilon_l: float | None = None
    epsilon_c: float | None = None
    epsilon_s: float | None = None
    d: int = 2
    d_prime: int | None = None
    n_r: int = 0

    def __post_init__(self):
        _check_n(self.n)
        _check_delta(self.delta)
        if self.n_r < 0:
            raise InputError("n_r must be non-negative")
        if self.d < 2:
            raise InputError("domain size must be at least 2")

    @property
    def m(self) -> float:
        if self.epsilon_c is None:
            raise ConfigurationError("m needs epsilon_c")
        return blanket_m(self.epsilon_c, self.n, self.delta)


def binomial_mechanism_eps(n: float, p: float, delta: float) -> float:
    """Central epsilon of adding Bin(n, p) noise to every histogram cell."""
    _check_delta(delta)
    if n * p <= 0:
        raise InfeasibleError("binomial noise with n*p = 0 gives no privacy")
    return math.sqrt(14.0 * math.log(2.0 / delta) / (n * p))


@dataclass(frozen=True)
class AmplificationResult:
    """``epsilon_c`` is the effective guarantee; ``bound`` the raw formula."""

    epsilon_c: float
    amplified: bool
    bound: float


def _range_size(method: Method, d, d_prime) -> int:
    k = d_prime if method is Method.SOLH else d
    if method is Method.UE:
        return 2
    if k is None:
        raise InputError(f"{method.value} needs {'d_prime' if method is Method.SOLH else 'd'}")
    if k < 2:
        raise InputError("range size must be at least 2")
    return int(k)


def amplification_bound(method, eps_l: float, n: int, delta: float, *, d=None, d_prime=None) -> float:
    method = _method(method)
    _check_n(n)
    _check_delta(delta)
    if method is Method.UE:
        return 2.0 * math.sqrt(14.0 * math.log(4.0 / delta) * (_exp(eps_l / 2) + 1.0) / (n - 1))
    k = _range_size(method, d, d_prime)
    return math.sqrt(14.0 * math.log(2.0 / delta) * (_exp(eps_l) + k - 1.0) / (n - 1))


def amplify(method, eps_l: float, n: int, delta: float, *, d=None, d_prime=None) -> AmplificationResult:
    """Central epsilon after shuffling ``n`` eps_l-LDP reports.

    GRR uses the domain size ``d``, SOLH the hash range ``d_prime``, UE
    neither.  If the bound is not below ``eps_l`` the reports are simply
    eps_l-LDP and that is returned with ``amplified=False``.
    """
    if eps_l <= 0:
        raise InputError("eps_l must be positive")
    bound = amplification_bound(method, eps_l, n, delta, d=d, d_prime=d_prime)
    if bound < eps_l:
        return AmplificationResult(bound, True, bound)
    return AmplificationResult(eps_l, False, bound)


def amplify_table1(row, eps_l: float, n: int, delta: float, d: int = 2) -> tuple[float, bool]:
    """Epsilon of one earlier bound and whether its side condition holds."""
    row = Table1Row(row.value if isinstance(row, Enum) else str(row).lower())
    _check_delta(delta)
    if row is Table1Row.EFMRTT:
        eps = math.sqrt(144.0 * math.log(1.0 / delta) * eps_l ** 2 / n)
        return eps, eps_l < 0.5
    if row is Table1Row.CSUZZ:
        eps = math.sqrt(32.0 * math.log(4.0 / delta) * (_exp(eps_l) + 1.0) / n)
        ok = d == 2 and math.sqrt(192.0 / n * math.log(4.0 / delta)) < eps < 1.0
        return eps, ok
    eps = amplification_bound(Method.GRR, eps_l, n, delta, d=d)
    ok = math.sqrt(14.0 * math.log(2.0 / delta) * d / (n - 1)) < eps <= 1.0
    return eps, ok


def _min_n_for(threshold: float, eps_c: float, scale: float) -> int:
    # smallest n with eps_c^2 (n-1) / scale > threshold
    return int(math.floor(threshold * scale / eps_c ** 2)) + 2


def invert_amplification(method, eps_c: float, n: int, delta: float, *, d=None, d_prime=None) -> float:
    """Largest eps_l whose shuffled bound equals ``eps_c``."""
    method = _method(method)
    _check_n(n)
    if eps_c <= 0:
        raise InputError("eps_c must be positive")
    if method is Method.UE:
        m = blanket_m_ue(eps_c, n, delta)
        if m - 1.0 <= 1.0:
            raise InfeasibleError(f"m_ue = {m:.4g} <= 2", _min_n_for(2.0, eps_c, 56 * math.log(4 / delta)))
        return 2.0 * math.log(m - 1.0)
    k = _range_size(method, d, d_prime)
    m = blanket_m(eps_c, n, delta)
    if m - k + 1.0 <= 1.0:
        raise InfeasibleError(f"m = {m:.4g} <= range size {k}", _min_n_for(k, eps_c, 14 * math.log(2 / delta)))
    return math.log(m - k + 1.0)


@dataclass(frozen=True)
class VarianceEstimate:
    value: float
    mechanism: str
    feasible: bool = True
    reason: str = ""

    def __float__(self):
        return self.value


def _infeasible(mech: str, reason: str, strict: bool, min_n=None) -> VarianceEstimate:
    if strict:
        raise InfeasibleError(reason, min_n)
    return VarianceEstimate(math.inf, mech, False, reason)


def var_grr(eps_c: float, n: int, d: int, delta: float, strict: bool = True) -> VarianceEstimate:
    m = blanket_m(eps_c, n, delta)
    if m <= d:
        return _infeasible("grr", f"m = {m:.4g} <= d = {d}", strict,
                           _min_n_for(d, eps_c, 14 * math.log(2 / delta)))
    return VarianceEstimate((m - 1.0) / (n * (m - d) ** 2), "grr")


def var_ue(eps_c: float, n: int, delta: float, strict: bool = True) -> VarianceEstimate:
    m = blanket_m_ue(eps_c, n, delta)
    if m <= 2.0:
        return _infeasible("ue", f"m_ue = {m:.4g} <= 2", strict)
    return VarianceEstimate((m - 1.0) / (n * (m - 2.0) ** 2), "ue")


def solh_variance_m(m, n: int, d_prime):
    """Var(m, d') = m^2 / (n (m - d')^2 (d' - 1)); broadcasts over d'."""
    d_prime = np.asarray(d_prime, dtype=float)
    with np.errstate(divide="ignore"):
        v = m * m / (n * (m - d_prime) ** 2 * (d_prime - 1.0))
    v = np.where((d_prime >= 2) & (d_prime < m), v, np.inf)
    return float(v) if v.ndim == 0 else v


def var_solh(eps_c: float, n: int, d_prime: int, delta: float, strict: bool = True) -> VarianceEstimate:
    m = blanket_m(eps_c, n, delta)
    if d_prime < 2 or m <= d_prime:
        return _infeasible("solh", f"need 2 <= d' < m (d' = {d_prime}, m = {m:.4g})", strict)
    return VarianceEstimate(solh_variance_m(m, n, d_prime), "solh")


def optimal_dprime(eps_c: float, n: int, delta: float) -> int:
    """Integer hash range minimising Var(m, d').

    The real optimum is (m + 2) / 3; it is rounded to the nearest integer
    and then moved while a neighbour has strictly lower variance.
    """
    m = blanket_m(eps_c, n, delta)
    if m < 4:
        raise InfeasibleError(f"m = {m:.4g} < 4 leaves no hash range", _min_n_for(4, eps_c, 14 * math.log(2 / delta)))
    k = max(2, int(math.floor((m + 2.0) / 3.0 + 0.5)))
    while k + 1 < m and solh_variance_m(m, n, k + 1) < solh_variance_m(m, n, k):
        k += 1
    while k > 2 and solh_variance_m(m, n, k - 1) < solh_variance_m(m, n, k):
        k -= 1
    return k


def _ldp_factor(method: Method, y, k):
    """Per-report variance factor as a function of y = e^-eps (y=0 is eps=inf)."""
    y = np.asarray(y, dtype=float)
    k = np.asarray(k, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if method is Method.SOLH:
            return (1.0 + (k - 1.0) * y) ** 2 / ((1.0 - y) ** 2 * (k - 1.0))
        if method is Method.GRR:
            return y * (1.0 + (k - 2.0) * y) / (1.0 - y) ** 2
        # UE with half budget per bit: e^{e/2} / (e^{e/2} - 1)^2
        h = np.sqrt(y)
        return h / (1.0 - h) ** 2


def ldp_variance(method, eps_l: float, n: int, *, d=None, d_prime=None) -> float:
    """Estimator variance of a plain eps_l-LDP oracle (small-f_v bound)."""
    method = _method(method)
    if eps_l <= 0:
        return math.inf
    k = 2 if method is Method.UE else _range_size(method, d, d_prime)
    return float(_ldp_factor(method, _exp(-eps_l), k)) / n


@dataclass(frozen=True)
class PeosEpsilon:
    eps_c: float
    eps_s: float

    def __iter__(self):
        return iter((self.eps_c, self.eps_s))


def peos_eps(mechanism, eps_l: float, n: int, n_r: int, k: int, delta: float) -> PeosEpsilon:
    """Budgets against the server alone and against server plus users.

    ``k`` is d' for SOLH or d for GRR.  With no fake reports ``eps_s`` is
    infinite.  ``eps_c`` is never reported above ``eps_l`` (the shuffled
    reports remain eps_l-LDP whatever the bound says); ``eps_s`` is the
    fake-report bound alone.
    """
    method = _method(mechanism)
    if method is Method.UE:
        raise InputError("fake-report budgets are defined for GRR and SOLH only")
    _check_n(n)
    _check_delta(delta)
    if n_r < 0:
        raise InputError("n_r must be non-negative")
    log_term = 14.0 * math.log(2.0 / delta)
    eps_s = math.sqrt(log_term * k / n_r) if n_r > 0 else math.inf
    denom = (n - 1) / (_exp(eps_l) + k - 1.0) + n_r / k
    bound = math.sqrt(log_term / denom) if denom > 0 else math.inf
    return PeosEpsilon(min(bound, eps_l), eps_s)


def peos_eps_l_for(mechanism, eps_c: float, n: int, n_r: int, k: int, delta: float) -> float:
    """Local budget at which the PEOS bound equals ``eps_c`` (may be inf)."""
    a = 14.0 * math.log(2.0 / delta) / eps_c ** 2
    u = a - n_r / k
    if u <= 0:
        return math.inf
    x = (n - 1) / u - k + 1.0
    if x <= 1.0:
        raise InfeasibleError(f"eps_c = {eps_c} unreachable with n_r = {n_r} and range {k}")
    return math.log(x)


def peos_var(mechanism, n: int, n_r: int, *, d: int, d_prime: int | None = None,
             eps_l: float | None = None, eps_c: float | None = None,
             delta: float | None = None) -> VarianceEstimate:
    """Variance of the debiased PEOS estimate.

    Base-oracle variance with n + n_r reports, inflated by ((n+n_r)/n)^2.
    Give either ``eps_l`` directly or ``eps_c`` (plus ``delta``), in which
    case eps_l is recovered from the fake-report bound.
    """
    method = _method(mechanism)
    if (eps_l is None) == (eps_c is None):
        raise InputError("give exactly one of eps_l, eps_c")
    k = d_prime if method is Method.SOLH else d
    if eps_l is None:
        if delta is None:
            raise InputError("eps_c needs delta")
        eps_l = peos_eps_l_for(method, eps_c, n, n_r, k, delta)
    total = n + n_r
    base = float(_ldp_factor(method, _exp(-eps_l), k)) / total
    return VarianceEstimate(base * (total / n) ** 2, method.value)


def _peos_dprime_variance(ks, a: float, b: float, n: int, n_r: int):
    ks = np.asarray(ks, dtype=float)
    total = n + n_r
    with np.errstate(divide="ignore", invalid="ignore"):
        v = total * b * b / (n * n * (b + n_r - a * ks) ** 2 * (ks - 1.0))
        # where fakes alone meet eps_c the local budget saturates at infinity
        v = np.where(a * ks <= n_r, total / (n * n * (ks - 1.0)), v)
    return np.where(ks * a < b + n_r, v, np.inf)


def peos_closed_form_dprime(eps_c: float, n: int, n_r: int, delta: float) -> float:
    """Stationary point ((b + n_r)/a + 2) / 3 of the PEOS variance in d'."""
    a = 14.0 * math.log(2.0 / delta) / eps_c ** 2
    return ((n - 1 + n_r) / a + 2.0) / 3.0


def peos_optimal_dprime(eps_c: float, n: int, n_r: int, delta: float) -> int:
    """Integer d' minimising the PEOS variance at fixed eps_c (exhaustive)."""
    _check_delta(delta)
    a = 14.0 * math.log(2.0 / delta) / eps_c ** 2
    b = n - 1.0
    upper = (b + n_r) / a
    if upper < 4:
        raise InfeasibleError(f"(n - 1 + n_r)/a = {upper:.4g} < 4")
    ks = np.arange(2, int(math.ceil(upper)) + 1)
    v = _peos_dprime_variance(ks, a, b, n, n_r)
    return int(ks[int(np.argmin(v))])


@dataclass(frozen=True)
class PlanResult:
    mechanism: str
    epsilon_l: float
    n_r: int
    d_prime: int
    variance: float
    achieved: tuple[float, float, float]
    requested: tuple[float, float, float]
    amplified: bool = True
    notes: tuple[str, ...] = field(default=())


_GRID = 257


def _plan_ranges(method: Method, ks: np.ndarray, n: int, delta: float, eps_1: float,
                 eps_2: float, eps_3: float, n_r_max) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best (variance, y = e^-eps_l, n_r) for every range size in ``ks``."""
    log_term = 14.0 * math.log(2.0 / delta)
    a1 = log_term / eps_1 ** 2
    b = n - 1.0
    y3 = _exp(-eps_3)
    kf = ks.astype(float)
    cap = math.inf if n_r_max is None else float(n_r_max)

    n_lo = np.zeros_like(kf) if math.isinf(eps_2) else np.ceil(log_term * kf / eps_2 ** 2)

    def y_on_curve(nr):
        # local budget making the amplified bound exactly eps_1, capped at eps_3
        u = a1 - nr / kf[:, None] if np.ndim(nr) == 2 else a1 - nr / kf
        with np.errstate(divide="ignore", invalid="ignore"):
            x = b / u - kf[:, None] + 1.0 if np.ndim(nr) == 2 else b / u - kf + 1.0
            y = np.where(u <= 0, 0.0, 1.0 / x)
        y = np.where((u > 0) & (x <= 1.0), np.nan, y)
        y = y * (1.0 + 1e-12)  # stay on the safe side of eps_1
        y3b = y3 if np.ndim(nr) < 2 else y3
        return np.where(np.isnan(y), np.nan, np.maximum(y, y3b))

    def variance(y, nr):
        kk = kf[:, None] if np.ndim(nr) == 2 else kf
        v = (n + nr) / (n * n) * _ldp_factor(method, y, kk)
        return np.where(np.isnan(y) | (y >= 1.0) | (nr > cap), np.inf, v)

    # amplified region: eps_l = eps_3 with just enough fakes
    with np.errstate(divide="ignore", invalid="ignore"):
        need = kf * (a1 - b / (1.0 / y3 + kf - 1.0)) if y3 > 0 else kf * a1
    n_hi = np.maximum(n_lo, np.ceil(np.maximum(need, 0.0)))
    best_y = y_on_curve(n_hi)
    best_n = n_hi.copy()
    best_v = variance(best_y, n_hi)

    # binding curve between n_lo and n_hi (eps_l below eps_3)
    top = np.minimum(n_hi, cap)
    span = np.maximum(top - n_lo, 0.0)
    grid = np.rint(n_lo[:, None] + span[:, None] * np.linspace(0.0, 1.0, _GRID)[None, :])
    gv = variance(y_on_curve(grid), grid)
    j = np.argmin(gv, axis=1)
    rows = np.arange(len(kf))
    lo = np.maximum(grid[rows, np.maximum(j - 1, 0)], n_lo)
    hi = np.minimum(grid[rows, np.minimum(j + 1, _GRID - 1)], top)
    for _ in range(64):
        if np.all(hi - lo <= 2):
            break
        m1 = np.floor(lo + (hi - lo) / 3.0)
        m2 = np.ceil(hi - (hi - lo) / 3.0)
        v1 = variance(y_on_curve(m1), m1)
        v2 = variance(y_on_curve(m2), m2)
        shrink = hi - lo > 2
        hi = np.where(shrink & (v1 <= v2), m2, hi)
        lo = np.where(shrink & (v1 > v2), m1, lo)
    for off in range(3):
        cand = np.minimum(lo + off, top)
        cy = y_on_curve(cand)
        cv = variance(cy, cand)
        better = cv < best_v
        best_v = np.where(better, cv, best_v)
        best_y = np.where(better, cy, best_y)
        best_n = np.where(better, cand, best_n)
    gbest = gv[rows, j]
    better = gbest < best_v
    best_v = np.where(better, gbest, best_v)
    best_y = np.where(better, y_on_curve(grid)[rows, j], best_y)
    best_n = np.where(better, grid[rows, j], best_n)

    # unamplified region: plain eps_l-LDP already meets eps_1
    y1 = np.full_like(kf, _exp(-min(eps_1, eps_3)))
    v_ldp = variance(y1, n_lo)
    better = v_ldp < best_v
    best_v = np.where(better, v_ldp, best_v)
    best_y = np.where(better, y1, best_y)
    best_n = np.where(better, n_lo, best_n)
    return best_v, best_y, best_n


def plan_parameters(eps_1: float, eps_2: float, eps_3: float, n: int, d: int, delta: float,
                    *, n_r_max: int | None = None) -> PlanResult:
    """Pick mechanism, eps_l, n_r and d' minimising the PEOS variance.

    Targets: eps_c <= eps_1 against the server, eps_s <= eps_2 against the
    server with colluding users, eps_l <= eps_3 against the server with
    shufflers.  ``n_r_max`` caps the number of fake reports (0 forces plain
    shuffling).  Deterministic for fixed inputs.
    """
    _check_n(n)
    _check_delta(delta)
    if d < 2:
        raise InputError("domain size must be at least 2")
    if not (eps_1 > 0 and eps_2 > 0 and eps_3 > 0):
        raise InputError("targets must be positive")
    if eps_1 > eps_3:
        raise InputError("eps_1 > eps_3: the local budget already bounds the server's view")

    candidates = []
    for method, ks in ((Method.GRR, np.array([d])), (Method.SOLH, np.arange(2, d + 1))):
        v, y, nr = _plan_ranges(method, ks, n, delta, eps_1, eps_2, eps_3, n_r_max)
        i = int(np.argmin(v))
        candidates.append((float(v[i]), method, int(ks[i]), float(y[i]), int(nr[i])))
    # ties go to SOLH (smaller reports)
    candidates.sort(key=lambda c: (c[0], c[1] is Method.GRR))
    v, method, k, y, n_r = candidates[0]
    if not math.isfinite(v):
        binding = "n_r_max" if n_r_max is not None else "eps_1"
        raise InfeasibleError(f"no configuration meets the targets; binding constraint: {binding}")
    eps_l = math.inf if y == 0 else -math.log(y)
    eps_l = min(eps_l, eps_3)
    achieved = peos_eps(method, eps_l, n, n_r, k, delta)
    while achieved.eps_s > eps_2 or (achieved.eps_c > eps_1 and eps_l > eps_1):
        n_r += 1
        achieved = peos_eps(method, eps_l, n, n_r, k, delta)
    variance = peos_var(method, n, n_r, d=d, d_prime=k, eps_l=eps_l).value
    bound = peos_eps(method, eps_l, n, n_r, k, delta)
    return PlanResult(
        mechanism=method.value,
        epsilon_l=eps_l,
        n_r=n_r,
        d_prime=k,
        variance=variance,
        achieved=(achieved.eps_c, achieved.eps_s, eps_l),
        requested=(eps_1, eps_2, eps_3),
        amplified=bound.eps_c < eps_l,
    )
