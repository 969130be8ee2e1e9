"""Monotone likelihood-ratio quantizers and closed-form performance numbers.

A quantizer maps a measurement's likelihood ratio into a small alphabet via
nondecreasing thresholds.  Thresholds are chosen to maximize the K-L
distance between the message distributions induced under the post- and
pre-change densities; that choice also yields the closed-form slope of the
delay-vs-log-false-alarm asymptote.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import exp, log, log1p

import numpy as np
from scipy.special import erfc, ndtri

from .model import DensityPair


class InfiniteDivergenceError(ValueError):
    """A message symbol has positive post-change mass but zero pre-change mass."""


_SQRT2 = np.sqrt(2.0)


def q_tail(x):
    """Standard normal upper-tail probability via the complementary error function."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / _SQRT2)


@dataclass(frozen=True)
class QuantizerSpec:
    """Monotone LR quantizer described by its interior thresholds.

    lr_thresholds holds phi_1 <= ... <= phi_{U-1} on the likelihood-ratio
    axis; the implicit outer thresholds are 0 and +inf.  Symbol i is emitted
    when the LR falls in (phi_i, phi_{i+1}].
    """

    lr_thresholds: tuple

    def __post_init__(self) -> None:
        phi = tuple(float(t) for t in self.lr_thresholds)
        object.__setattr__(self, "lr_thresholds", phi)
        if len(phi) < 1:
            raise ValueError("need at least one interior threshold (alphabet size >= 2)")
        if any(t < 0.0 for t in phi):
            raise ValueError("LR thresholds must be nonnegative")
        if any(b < a for a, b in zip(phi, phi[1:])):
            raise ValueError("LR thresholds must be nondecreasing")

    @property
    def alphabet_size(self) -> int:
        return len(self.lr_thresholds) + 1

    def obs_thresholds(self, densities: DensityPair) -> np.ndarray:
        """Equivalent cut points on the observation axis (needs mu > 0)."""
        mu = densities.mu
        if mu <= 0.0:
            raise ValueError("observation-domain thresholds need mu > 0")
        phi = np.asarray(self.lr_thresholds, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(phi) / mu + 0.5 * mu

    @classmethod
    def from_obs_thresholds(cls, obs, densities: DensityPair) -> "QuantizerSpec":
        mu = densities.mu
        if mu <= 0.0:
            raise ValueError("observation-domain thresholds need mu > 0")
        obs = np.sort(np.asarray(obs, dtype=float))
        return cls(tuple(np.exp(mu * obs - 0.5 * mu * mu)))

    @classmethod
    def binary(cls, obs_threshold: float, densities: DensityPair) -> "QuantizerSpec":
        """One-bit quantizer cut at the given observation-domain threshold."""
        return cls.from_obs_thresholds([obs_threshold], densities)


@dataclass(frozen=True)
class MessagePmfPair:
    """Message pmfs induced by a quantizer under f0 (p0) and f1 (p1)."""

    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self) -> None:
        p0 = np.asarray(self.p0, dtype=float)
        p1 = np.asarray(self.p1, dtype=float)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        if p0.shape != p1.shape or p0.ndim != 1:
            raise ValueError("pmfs must be 1-D and equally sized")
        for p in (p0, p1):
            if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("pmf entries must be nonnegative and sum to 1")

    def ratios(self) -> np.ndarray:
        """Per-symbol p1/p0; symbols that are empty under both pmfs get 1."""
        if np.any((self.p0 == 0.0) & (self.p1 > 0.0)):
            raise InfiniteDivergenceError("symbol with p1 > 0 but p0 = 0")
        out = np.ones_like(self.p0)
        live = self.p0 > 0.0
        out[live] = self.p1[live] / self.p0[live]
        return out


def quantize(z, spec: QuantizerSpec, densities: DensityPair):
    """Message symbol(s) for measurement(s) z; monotone in z for mu > 0."""
    obs = spec.obs_thresholds(densities)
    return np.searchsorted(obs, np.asarray(z, dtype=float), side="left")


def induced_pmfs(spec: QuantizerSpec, densities: DensityPair) -> MessagePmfPair:
    """Bin probabilities of the quantizer under the pre/post-change densities."""
    obs = spec.obs_thresholds(densities)
    edges = np.concatenate(([-np.inf], obs, [np.inf]))
    upper = q_tail(edges)
    p0 = upper[:-1] - upper[1:]
    upper1 = q_tail(edges - densities.mu)
    p1 = upper1[:-1] - upper1[1:]
    return MessagePmfPair(np.maximum(p0, 0.0), np.maximum(p1, 0.0))


def kl_pmf(pair: MessagePmfPair) -> float:
    """K-L distance sum_i p1(i) log(p1(i)/p0(i)) with 0 log 0 = 0."""
    live = pair.p1 > 0.0
    if np.any(pair.p0[live] == 0.0):
        raise InfiniteDivergenceError("symbol with p1 > 0 but p0 = 0")
    p1 = pair.p1[live]
    p0 = pair.p0[live]
    return float(np.sum(p1 * np.log(p1 / p0)))


def _golden_max(fn, lo: float, hi: float, tol: float = 1e-9, max_iter: int = 300) -> float:
    """Golden-section maximizer of a unimodal function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = fn(x2)
    return 0.5 * (a + b)


def _kl_of_obs(obs: np.ndarray, densities: DensityPair) -> float:
    return kl_pmf(induced_pmfs(QuantizerSpec.from_obs_thresholds(obs, densities), densities))


def optimize_thresholds(U: int, densities: DensityPair) -> QuantizerSpec:
    """Thresholds maximizing the induced-pmf K-L distance for alphabet size U.

    U = 2 is a one-dimensional golden-section search on the observation
    threshold; larger U uses cyclic coordinate descent with a golden-section
    inner search, starting from equal-probability bins under f0.  The same
    spec is meant to be used at every sensor.
    """
    if U < 2:
        raise ValueError("alphabet size must be >= 2")
    mu = densities.mu
    if mu <= 0.0:
        raise ValueError("threshold optimization needs mu > 0 (objective is 0 at mu = 0)")
    lo, hi = -8.0, 8.0 + mu
    if U == 2:
        best = _golden_max(lambda r: _kl_of_obs(np.array([r]), densities), lo, hi)
        return QuantizerSpec.binary(best, densities)

    obs = ndtri(np.arange(1, U) / U)
    prev = _kl_of_obs(obs, densities)
    for _ in range(200):
        for i in range(U - 1):
            left = obs[i - 1] if i > 0 else lo
            right = obs[i + 1] if i < U - 2 else hi
            obs[i] = _golden_max(
                lambda r, i=i: _kl_of_obs(np.concatenate((obs[:i], [r], obs[i + 1:])), densities),
                left,
                right,
            )
        cur = _kl_of_obs(obs, densities)
        if cur - prev < 1e-6:
            break
        prev = cur
    return QuantizerSpec.from_obs_thresholds(obs, densities)


def asymptotic_slope(L: int, D: float, rho: float) -> float:
    """First-order slope of detection delay against |log alpha|.

    Equals 1 / (L * D + |log(1 - rho)|) where D is the per-sensor K-L
    distance of whatever the fusion center observes.
    """
    if D <= 0.0:
        raise ValueError("D must be positive")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must be in [0, 1); rho = 1 makes |log(1-rho)| infinite")
    return 1.0 / (L * D + abs(log1p(-rho)))


def check_order1_condition(rho: float, lam: float, L: int, D: float) -> bool:
    """Whether the bank-of-charts test is first-order optimal at these parameters.

    True iff log(1 - rho + (L-1)(1-lam)) < D < inf.
    """
    if not np.isfinite(D):
        return False
    return log(1.0 - rho + (L - 1) * (1.0 - lam)) < D


def order1_boundary_lambda(rho: float, L: int, D: float) -> float:
    """Smallest lam satisfying the first-order optimality condition at fixed D.

    Solves log(1 - rho + (L-1)(1-lam)) = D for lam.  The value may fall
    outside [0, 1], meaning the condition holds never or always.
    """
    if L < 2:
        raise ValueError("boundary needs L >= 2")
    return 1.0 - (exp(D) - (1.0 - rho)) / (L - 1)
