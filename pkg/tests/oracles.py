"""Independent high-precision reference formulas (mpmath), written from the
math rather than from the package, used to cross-check and freeze values."""

import mpmath as mp

mp.mp.dps = 40


def m_blanket(eps_c, n, delta):
    eps_c, n, delta = mp.mpf(eps_c), mp.mpf(n), mp.mpf(delta)
    return eps_c ** 2 * (n - 1) / (14 * mp.log(2 / delta))


def m_blanket_ue(eps_c, n, delta):
    eps_c, n, delta = mp.mpf(eps_c), mp.mpf(n), mp.mpf(delta)
    return eps_c ** 2 * (n - 1) / (56 * mp.log(4 / delta))


def solh_var(eps_c, n, k, delta):
    m = m_blanket(eps_c, n, delta)
    k = mp.mpf(k)
    return m ** 2 / (mp.mpf(n) * (m - k) ** 2 * (k - 1))


def grr_var(eps_c, n, d, delta):
    m = m_blanket(eps_c, n, delta)
    return (m - 1) / (mp.mpf(n) * (m - d) ** 2)


def ue_var(eps_c, n, delta):
    m = m_blanket_ue(eps_c, n, delta)
    return (m - 1) / (mp.mpf(n) * (m - 2) ** 2)


def best_dprime(eps_c, n, delta):
    """Integer argmin of the SOLH variance by scanning up from 2.

    The variance in d' is unimodal on [2, m), so the scan stops at the
    first increase.
    """
    m = m_blanket(eps_c, n, delta)
    best, arg = mp.inf, None
    for k in range(2, int(mp.ceil(m))):
        v = solh_var(eps_c, n, k, delta)
        if v >= best:
            break
        best, arg = v, k
    return arg


def shuffled_eps(eps_l, n, k, delta):
    """sqrt(14 ln(2/delta) (e^eps_l + k - 1) / (n - 1))."""
    return mp.sqrt(14 * mp.log(2 / mp.mpf(delta)) * (mp.e ** mp.mpf(eps_l) + k - 1) / (mp.mpf(n) - 1))


def peos_eps_pair(eps_l, n, n_r, k, delta):
    c = 14 * mp.log(2 / mp.mpf(delta))
    eps_c = mp.sqrt(c / ((mp.mpf(n) - 1) / (mp.e ** mp.mpf(eps_l) + k - 1) + mp.mpf(n_r) / k))
    eps_s = mp.sqrt(c * k / n_r) if n_r else mp.inf
    return eps_c, eps_s


def grr_probs(eps, d):
    e = mp.e ** mp.mpf(eps)
    return e / (e + d - 1), 1 / (e + d - 1)
