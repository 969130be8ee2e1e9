"""Sensing model: a change that spreads across sensors in a random order.

One sensor picks up the change at a geometric time, then the change hops to
the remaining sensors one by one with geometric inter-sensor delays.  Each
sensor's measurements are i.i.d. standard normal before its own change time
and mean-shifted normal afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Change-time sentinel meaning "beyond any finite horizon".  Used for the
# lam == 0 corner where the change never leaves the first sensor.
NEVER = 1 << 62


@dataclass(frozen=True)
class GaussianShift:
    """Unit-variance Gaussian pair: N(0,1) pre-change, N(mu,1) post-change."""

    mu: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.mu):
            raise ValueError("mu must be finite")


# Measurement-model enumeration; GaussianShift is the only member for now.
DensityPair = GaussianShift


@dataclass(frozen=True)
class ModelParams:
    """Network size and change-process parameters.

    rho is the success probability of the first change time (support 1,2,...)
    and lam the success probability of each inter-sensor delay (support
    0,1,...).  lam = 1 means instantaneous propagation, lam = 0 means the
    change never propagates past the first sensor.
    """

    L: int
    rho: float
    lam: float
    densities: DensityPair

    def __post_init__(self) -> None:
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")


@dataclass(frozen=True)
class ChangePattern:
    """Order in which sensors pick up the change (0-based sensor ids).

    order[0] is the first sensor to change, order[1] the second, and so on.
    """

    order: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.order, dtype=np.int64)
        object.__setattr__(self, "order", arr)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("pattern must be a nonempty 1-D index array")
        if not np.array_equal(np.sort(arr), np.arange(arr.size)):
            raise ValueError("pattern must be a permutation of 0..L-1")

    @property
    def L(self) -> int:
        return int(self.order.size)


@dataclass(frozen=True)
class ChangeScenario:
    """One sampled trial: pattern, per-sensor change steps, measurements.

    measurements has shape (horizon, L); row i holds the readings of
    discrete step k = i + 1.  times is indexed by sensor id and is
    nondecreasing along the pattern order.
    """

    pattern: ChangePattern
    times: np.ndarray
    measurements: np.ndarray
    horizon: int


def kl_continuous(densities: DensityPair) -> float:
    """Kullback-Leibler distance from the post- to the pre-change density."""
    return 0.5 * densities.mu**2


def log_likelihood_ratio(z, densities: DensityPair):
    """Per-measurement log likelihood ratio; vectorized over z."""
    mu = densities.mu
    return np.asarray(z, dtype=float) * mu - 0.5 * mu * mu


def likelihood_ratio(z, densities: DensityPair):
    """Per-measurement likelihood ratio f1(z)/f0(z); always >= 0."""
    return np.exp(log_likelihood_ratio(z, densities))


def sample_pattern(L: int, rng: np.random.Generator) -> ChangePattern:
    """Uniformly random propagation order over L sensors."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return ChangePattern(rng.permutation(L))


def sample_change_times(
    params: ModelParams, pattern: ChangePattern, rng: np.random.Generator
) -> np.ndarray:
    """Sample per-sensor change steps for one trial.

    Returns an int64 array indexed by sensor id.  The first sensor in the
    pattern changes at a geometric(rho) step >= 1; each later sensor lags its
    predecessor by an independent geometric(lam) delay >= 0.  With lam = 0
    the later sensors get the NEVER sentinel.
    """
    order = pattern.order
    L = params.L
    if order.size != L:
        raise ValueError("pattern size does not match params.L")
    times = np.empty(L, dtype=np.int64)
    first = int(rng.geometric(params.rho))
    times[order[0]] = first
    if L > 1:
        if params.lam == 0.0:
            times[order[1:]] = NEVER
        else:
            delays = rng.geometric(params.lam, size=L - 1) - 1
            times[order[1:]] = first + np.cumsum(delays)
    return times


def sample_measurements(
    params: ModelParams,
    times: np.ndarray,
    first_step: int,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Measurement rows for steps first_step .. first_step+count-1 (1-based).

    Sensor ell's reading at step k is N(0,1) when k < times[ell] and
    N(mu,1) otherwise; all entries independent.
    """
    steps = np.arange(first_step, first_step + count, dtype=np.int64)
    z = rng.standard_normal((count, params.L))
    mu = params.densities.mu
    if mu != 0.0:
        z += mu * (steps[:, None] >= times[None, :])
    return z


def generate_trajectory(
    params: ModelParams,
    times: np.ndarray,
    pattern: ChangePattern,
    horizon: int,
    rng: np.random.Generator,
) -> ChangeScenario:
    """Materialize a full measurement matrix for a fixed-horizon scenario."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    z = sample_measurements(params, times, 1, horizon, rng)
    return ChangeScenario(pattern=pattern, times=np.asarray(times, dtype=np.int64),
                          measurements=z, horizon=int(horizon))
