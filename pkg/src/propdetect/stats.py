"""Sufficient-statistic machinery shared by every stopping rule.

State is the (L+1)-vector p of posterior odds ratios: p[0] is pinned at
1/rho and p[n] tracks the odds that exactly n sensors have changed.  All
values live in the log domain (-inf is a first-class value) because p grows
geometrically after the change.  One step multiplies each coordinate by a
per-step evidence factor delta[n] and mixes in the change-count transition
weights built from rho and lam.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, log

import numpy as np

from .model import ChangePattern, DensityPair, likelihood_ratio
from .quantizer import MessagePmfPair, q_tail


def safe_log(x) -> np.ndarray:
    """Elementwise log with log(0) = -inf and no warning."""
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=float))


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(a))) along an axis; rows of all -inf give -inf."""
    a = np.asarray(a, dtype=float)
    m = a.max(axis=axis, keepdims=True)
    # rows of all -inf would turn a - m into nan; shift those by 0 instead
    shift = np.where(m == -np.inf, 0.0, m)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(a - shift).sum(axis=axis))
    out += shift.reshape(out.shape)
    return out


@dataclass(frozen=True)
class ChainCoeffs:
    """Transition coefficients of the change-count chain.

    rho_chain[ell] is the per-step probability that the change advances past
    position ell (rho at 0, lam in between, 0 past the last sensor), and
    e[m][n] the product of rho_chain over positions m..n-1 (e[m][m] = 1).
    log_coef[n] caches log((1 - rho_chain[n]) / (1 - rho)).
    """

    L: int
    rho: float
    lam: float
    rho_chain: np.ndarray
    e: np.ndarray
    log_e: np.ndarray
    log_coef: np.ndarray


def chain_coeffs(L: int, rho: float, lam: float) -> ChainCoeffs:
    if L < 1:
        raise ValueError("L must be >= 1")
    if not 0.0 < rho < 1.0:
        raise ValueError("recursion needs rho in (0, 1); rho = 1 divides by zero")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    rho_chain = np.zeros(L + 1)
    rho_chain[0] = rho
    rho_chain[1:L] = lam
    e = np.zeros((L + 1, L + 1))
    for m in range(L + 1):
        e[m, m] = 1.0
        for n in range(m + 1, L + 1):
            e[m, n] = e[m, n - 1] * rho_chain[n - 1]
    log_coef = np.zeros(L + 1)
    log_coef[1:] = safe_log(1.0 - rho_chain[1:]) - log(1.0 - rho)
    return ChainCoeffs(L=L, rho=rho, lam=lam, rho_chain=rho_chain,
                       e=e, log_e=safe_log(e), log_coef=log_coef)


@dataclass
class SuffStats:
    """Log-domain odds vector; logp[0] stays at -log(rho) forever."""

    logp: np.ndarray

    @classmethod
    def initial(cls, L: int, rho: float) -> "SuffStats":
        logp = np.full(L + 1, -np.inf)
        logp[0] = -log(rho)
        return cls(logp)


def ratio_vector_centralized(z_row, densities: DensityPair) -> np.ndarray:
    """Per-sensor likelihood ratios of raw measurements."""
    return likelihood_ratio(np.asarray(z_row, dtype=float), densities)


def ratio_vector_us(u_row, pmfs: MessagePmfPair) -> np.ndarray:
    """Per-sensor message-probability ratios p1(u)/p0(u)."""
    u = np.asarray(u_row)
    return pmfs.ratios()[u]


def ratio_vector_lcsh(
    etas,
    delta: float,
    eps: float = 0.0,
    mode: str = "lr-identity",
    densities: DensityPair | None = None,
) -> np.ndarray:
    """Per-sensor ratios from the reported level indices.

    "lr-identity" reads the reported level eta*delta as the ratio itself
    (the density ratio of the LR statistic at value x is x), floored at eps.
    "band-probability" instead uses the probability ratio of the +-delta
    band around the reported level, computed from the Gaussian closed form.
    """
    etas = np.asarray(etas, dtype=np.int64)
    if np.any(etas < 0) or delta <= 0.0 or eps < 0.0:
        raise ValueError("need etas >= 0, delta > 0, eps >= 0")
    if mode == "lr-identity":
        return np.maximum(etas * delta, eps)
    if mode != "band-probability":
        raise ValueError(f"unknown lcsh ratio mode: {mode!r}")
    if densities is None:
        raise ValueError("band-probability mode needs the density pair")
    mu = densities.mu
    if mu <= 0.0:
        raise ValueError("band-probability mode needs mu > 0")
    lo = np.maximum((etas - 1) * delta, 0.0)
    hi = (etas + 1) * delta
    # Preimages of the LR band on the observation axis; LR <= 0 maps to -inf.
    with np.errstate(divide="ignore"):
        z_lo = np.where(lo > 0.0, np.log(lo) / mu + 0.5 * mu, -np.inf)
        z_hi = np.log(hi) / mu + 0.5 * mu
    p0 = q_tail(z_lo) - q_tail(z_hi)
    p1 = q_tail(z_lo - mu) - q_tail(z_hi - mu)
    return np.maximum(p1, 0.0) / np.maximum(p0, np.finfo(float).tiny)


def elementary_symmetric(r: np.ndarray) -> np.ndarray:
    """Elementary symmetric polynomials e_0..e_L of the last axis of r.

    Stable iterative recurrence; O(L^2) per row.  Output shape is
    r.shape[:-1] + (L+1,).
    """
    r = np.asarray(r, dtype=float)
    L = r.shape[-1]
    out = np.zeros(r.shape[:-1] + (L + 1,))
    out[..., 0] = 1.0
    for j in range(L):
        for k in range(min(j + 1, L), 0, -1):
            out[..., k] += r[..., j] * out[..., k - 1]
    return out


def delta_uniform(r: np.ndarray) -> np.ndarray:
    """Evidence factors averaged over every propagation order.

    delta[n] = e_n(r) / C(L, n), algebraically equal to the ratio of
    order-summed likelihood products to the all-pre-change product.
    """
    r = np.asarray(r, dtype=float)
    L = r.shape[-1]
    binom = np.array([comb(L, n) for n in range(L + 1)], dtype=float)
    return elementary_symmetric(r) / binom


def delta_pattern(r: np.ndarray, pattern: ChangePattern) -> np.ndarray:
    """Evidence factors for one assumed order: delta[n] = prod of the first n ratios."""
    r = np.asarray(r, dtype=float)
    out = np.ones(r.shape[-1] + 1)
    out[1:] = np.cumprod(r[pattern.order])
    return out


def recursion_update(logp: np.ndarray, logdelta: np.ndarray, coeffs: ChainCoeffs) -> np.ndarray:
    """One log-domain step of the odds recursion; broadcasts over leading axes.

    new[n] = logdelta[n] + log_coef[n] + LSE_m(logp[m] + log_e[m][n]) for
    n >= 1; coordinate 0 is carried over unchanged.
    """
    acc = logsumexp(logp[..., :, None] + coeffs.log_e, axis=-2)
    new = logdelta + coeffs.log_coef + acc
    new[..., 0] = logp[..., 0]
    return new


def recursion_step(p: SuffStats, delta: np.ndarray, coeffs: ChainCoeffs) -> SuffStats:
    """Advance one chart by one step given its evidence factors."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0.0):
        raise ValueError("evidence factors must be nonnegative")
    return SuffStats(recursion_update(p.logp, safe_log(delta), coeffs))


def stat_from_logp(logp: np.ndarray) -> np.ndarray:
    """Stopping statistic log(sum of p[1..L]); -inf when all are zero."""
    return logsumexp(logp[..., 1:], axis=-1)


def stopping_stat(p: SuffStats) -> float:
    return float(stat_from_logp(p.logp))


def beta_for_alpha(rho: float, alpha: float) -> float:
    """Threshold log(1/(rho*alpha)) that caps the false-alarm probability at alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    return -log(rho * alpha)
