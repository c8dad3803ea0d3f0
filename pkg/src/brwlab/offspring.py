"""Critical stable offspring law and site-dependent branching mechanisms.

The base generating function is g(s) = (1-s)^{1+beta}/(1+beta) + s, giving
p_0 = 1/(1+beta), p_1 = 0 and p_k = |binom(1+beta, k)|/(1+beta) for k >= 2,
a critical law (mean one) with tail index 1+beta.  A site reweights the
coefficients by q_0 = ((1-beta) xi_+ + (1+beta) xi_-)/|xi| at k = 0 and by
the common factor q = 2 xi_+/|xi| at k >= 2; the weight at k = 1 is
irrelevant because p_1 = 0.

Closed forms used throughout (both provable by telescoping the alternating
binomial partial sums):

    sum_{k>m} p_k   = |binom(beta, m)| / (1+beta)
                    = beta Gamma(m-beta) / ((1+beta) Gamma(1-beta) Gamma(m+1))
    sum_{k>m} k p_k = Gamma(m-beta) / (Gamma(1-beta) Gamma(m))

so the sampler can invert the exact tail CCDF beyond the table cutoff with
a few lgamma evaluations instead of an asymptotic Pareto approximation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln


def _require_beta(beta: float) -> None:
    if not (0.0 < beta < 1.0):
        raise ValueError(f"beta must lie in (0, 1), got {beta}")


@dataclass(eq=False)
class OffspringLaw:
    beta: float
    p: np.ndarray          # p[0..K]
    K: int
    tail_mass: float       # sum_{k > K} p_k, exact
    cdf_ge2: np.ndarray    # partial sums of p_k for k = 2..K (inversion table)
    mass_ge2: float        # beta / (1+beta), total mass at k >= 2

    @property
    def tail_exponent(self) -> float:
        return 2.0 + self.beta


def tail_ccdf(beta: float, m) -> np.ndarray | float:
    """Exact P[K_offspring > m] under g, for integer m >= 1."""
    m = np.asarray(m, dtype=np.float64)
    lg = (math.log(beta) - math.log1p(beta)
          + gammaln(m - beta) - math.lgamma(1.0 - beta) - gammaln(m + 1.0))
    out = np.exp(lg)
    return float(out) if out.ndim == 0 else out


def tail_mean(beta: float, m: int) -> float:
    """Exact sum_{k > m} k p_k under g, for integer m >= 1."""
    return math.exp(math.lgamma(m - beta) - math.lgamma(1.0 - beta) - math.lgamma(float(m)))


def pgf_coefficients(beta: float, K: int = 10_000) -> OffspringLaw:
    """Coefficient table p_0..p_K via the stable ratio recurrence."""
    _require_beta(beta)
    if K < 2:
        raise ValueError("table cutoff K must be >= 2")
    p = np.zeros(K + 1)
    p[0] = 1.0 / (1.0 + beta)
    p[2] = beta / 2.0
    k = np.arange(2, K)
    # p_{k+1} = p_k (k - 1 - beta) / (k + 1)
    p[3:] = p[2] * np.cumprod((k - 1.0 - beta) / (k + 1.0))
    tail = tail_ccdf(beta, K)
    total = p.sum() + tail
    if abs(total - 1.0) > 1e-12:
        raise AssertionError(f"offspring table + tail mass = {total}, expected 1")
    return OffspringLaw(
        beta=float(beta), p=p, K=int(K), tail_mass=float(tail),
        cdf_ge2=np.cumsum(p[2:]), mass_ge2=beta / (1.0 + beta),
    )


def law_to_csv(law: OffspringLaw, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "p_k"])
        for k, pk in enumerate(law.p):
            writer.writerow([k, repr(float(pk))])


# ---------------------------------------------------------------------------
# Site mechanisms: all supported mechanisms reduce to a pair (q0, q_ge2).
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SiteMechanism:
    q0: float
    q_ge2: float
    x: tuple[int, int] | None = None

    def mean_offspring(self) -> float:
        # sum_k k p_k q_k = q_ge2 * sum_{k>=2} k p_k = q_ge2
        return self.q_ge2


def _check_normalized(law: OffspringLaw, q0: float, q_ge2: float) -> None:
    total = law.p[0] * q0 + q_ge2 * law.mass_ge2
    if abs(total - 1.0) > 1e-12:
        raise AssertionError(f"mechanism weights not normalized: {total}")


def site_mechanism(env, x: tuple[int, int], law: OffspringLaw) -> SiteMechanism:
    """Mechanism at a site of the environment; requires xi(x) != 0."""
    xi = float(env.xi.values[x])
    if xi == 0.0:
        raise ValueError(f"xi vanishes at site {x}; the branching mechanism is undefined there")
    beta = law.beta
    xp, xm = max(xi, 0.0), max(-xi, 0.0)
    ax = abs(xi)
    q0 = ((1.0 - beta) * xp + (1.0 + beta) * xm) / ax
    q_ge2 = 2.0 * xp / ax
    _check_normalized(law, q0, q_ge2)
    return SiteMechanism(q0=q0, q_ge2=q_ge2, x=tuple(x))


def auxiliary_mechanism(law: OffspringLaw) -> SiteMechanism:
    """Position-independent mechanism with the plain law g."""
    _check_normalized(law, 1.0, 1.0)
    return SiteMechanism(q0=1.0, q_ge2=1.0, x=None)


def mixed_mechanism(env, x: tuple[int, int], c: float, law: OffspringLaw) -> SiteMechanism:
    """Convex mix (site mechanism + c * plain law) / (1 + c).

    The matching branching rate is (1+c)|xi(x)|; the mechanism only carries
    the reweighted coefficients (q_k + c)/(1 + c).
    """
    if c < 0:
        raise ValueError("mixing coefficient c must be >= 0")
    base = site_mechanism(env, x, law)
    q0 = (base.q0 + c) / (1.0 + c)
    q_ge2 = (base.q_ge2 + c) / (1.0 + c)
    _check_normalized(law, q0, q_ge2)
    return SiteMechanism(q0=q0, q_ge2=q_ge2, x=tuple(x))


def pgf_eval(law: OffspringLaw, mech: SiteMechanism, s: float) -> float:
    """Generating function sum_k p_k q_k s^k in closed form."""
    if not (0.0 <= s <= 1.0):
        raise ValueError("s must lie in [0, 1]")
    beta = law.beta
    g = (1.0 - s) ** (1.0 + beta) / (1.0 + beta) + s
    return law.p[0] * mech.q0 + mech.q_ge2 * (g - law.p[0])


def pgf_eval_table(law: OffspringLaw, mech: SiteMechanism, s: float) -> float:
    """Same generating function summed from the coefficient table (testing aid)."""
    k = np.arange(law.K + 1)
    q = np.full(law.K + 1, mech.q_ge2)
    q[0] = mech.q0
    q[1] = 0.0
    return float(np.sum(law.p * q * s**k))


# ---------------------------------------------------------------------------
# Sampling.  Inversion on the table for k <= K, exact CCDF inversion via
# lgamma beyond it.  These kernels are shared with the particle simulator.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _log_tail_ccdf(beta, m):
    return (math.log(beta) - math.log(1.0 + beta) + math.lgamma(m - beta)
            - math.lgamma(1.0 - beta) - math.lgamma(m + 1.0))


@njit(cache=True)
def _tail_invert(beta, K, target):
    """Smallest m > K with P[k > m] < target (exact discrete inversion)."""
    lo = K
    hi = 2 * K
    while math.exp(_log_tail_ccdf(beta, hi)) >= target:
        lo = hi
        hi *= 2
        if hi > (1 << 60):
            break
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if math.exp(_log_tail_ccdf(beta, mid)) < target:
            hi = mid
        else:
            lo = mid
    return hi


@njit(cache=True)
def _sample_k(u, p0q0, q_ge2, cdf_ge2, mass_ge2, beta, K):
    if q_ge2 <= 0.0 or u < p0q0:
        return 0
    v = (u - p0q0) / q_ge2
    if v < cdf_ge2[cdf_ge2.shape[0] - 1]:
        return 2 + np.searchsorted(cdf_ge2, v, side="right")
    target = mass_ge2 - v
    if target <= 0.0:
        target = 1e-300
    return _tail_invert(beta, K, target)


@njit(cache=True)
def _sample_k_batch(us, p0q0, q_ge2, cdf_ge2, mass_ge2, beta, K):
    out = np.empty(us.shape[0], dtype=np.int64)
    for i in range(us.shape[0]):
        out[i] = _sample_k(us[i], p0q0, q_ge2, cdf_ge2, mass_ge2, beta, K)
    return out


def sample_offspring(law: OffspringLaw, mech: SiteMechanism, rng: np.random.Generator) -> int:
    """One offspring count k (k = 0 is death) under the mechanism weights."""
    u = rng.random()
    return int(_sample_k(u, law.p[0] * mech.q0, mech.q_ge2,
                         law.cdf_ge2, law.mass_ge2, law.beta, law.K))


def sample_offspring_many(law: OffspringLaw, mech: SiteMechanism, size: int,
                          rng: np.random.Generator) -> np.ndarray:
    us = rng.random(size)
    return _sample_k_batch(us, law.p[0] * mech.q0, mech.q_ge2,
                           law.cdf_ge2, law.mass_ge2, law.beta, law.K)
