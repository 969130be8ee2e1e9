"""Stopping rules: order-averaged, per-order chart bank, estimation-driven,
and the three reference baselines, under raw, quantized, or level-crossing
fusion input.

A Detector owns one trial's state (charts, per-sensor CUSUMs, level
mirrors) and consumes one fusion input per step.  Given a seeded random
stream, the step sequence is bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import permutations
from math import log

import numpy as np

from .lcsh import LcshChannelState, apply_burst
from .model import ChangePattern, DensityPair, ModelParams, log_likelihood_ratio
from .quantizer import MessagePmfPair, QuantizerSpec, induced_pmfs
from . import stats
from .stats import ChainCoeffs, chain_coeffs, safe_log

SCHEMES = (
    "uniform-prior",
    "multichart",
    "estimation-based",
    "known-pattern",
    "mismatched",
    "single-sensor",
)
SETTINGS = ("centralized", "us", "lcsh")

# The order-averaged and chart-bank schemes enumerate L! orders.
MAX_CHART_SENSORS = 8


@dataclass(frozen=True)
class DetectorConfig:
    """Which test to run, over which channel, and its thresholds.

    beta is the stopping threshold on the log odds statistic; xi the CUSUM
    level that splits sensors into "changed" and "undecided" groups for the
    estimation-based scheme; quantizer/delta/eps configure the us and lcsh
    channels.  known_pattern carries the true order for the oracle
    baselines and is normally injected per trial by the harness.
    """

    scheme: str
    setting: str
    beta: float
    xi: float = 3.0
    quantizer: QuantizerSpec | None = None
    delta: float | None = None
    eps: float = 0.0
    lcsh_mode: str = "lr-identity"
    known_pattern: ChangePattern | None = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if np.isnan(self.beta):
            raise ValueError("beta must be a number or -inf")
        if self.xi <= 0.0:
            raise ValueError("xi must be positive")
        if self.setting == "us" and self.quantizer is None:
            raise ValueError("us setting needs a quantizer")
        if self.setting == "lcsh":
            if self.delta is None or self.delta <= 0.0:
                raise ValueError("lcsh setting needs delta > 0")
            if self.eps < 0.0:
                raise ValueError("eps must be nonnegative")


def cusum_update(c, llr):
    """One CUSUM step max(0, c + llr); elementwise on arrays."""
    return np.maximum(0.0, c + llr)


def step_llr(
    setting: str,
    value,
    *,
    densities: DensityPair | None = None,
    pmfs: MessagePmfPair | None = None,
    delta: float | None = None,
    eps: float | None = None,
):
    """Per-sensor log likelihood ratio of one step's fusion-center information.

    centralized: log LR of the raw measurement; us: log of the message
    probability ratio; lcsh: log of max(eta*delta, eps), the reported level
    floored away from zero.
    """
    if setting == "centralized":
        return log_likelihood_ratio(value, densities)
    if setting == "us":
        return safe_log(pmfs.ratios()[np.asarray(value)])
    if setting == "lcsh":
        return safe_log(np.maximum(np.asarray(value) * delta, eps))
    raise ValueError(f"unknown setting {setting!r}")


def estimate_pattern(cusum, xi: float, rng: np.random.Generator) -> ChangePattern:
    """Order estimate from per-sensor CUSUM values.

    Sensors at or above xi come first, sorted by CUSUM descending; the rest
    follow in a uniformly random order.  Ties inside the confident group are
    broken by an independent random draw, so equal values (common while all
    CUSUMs sit at zero) do not bias the estimate toward low sensor ids.
    """
    c = np.asarray(cusum, dtype=float)
    tie = rng.random(c.size)
    above = c >= xi
    s1 = np.flatnonzero(above)
    s1 = s1[np.lexsort((tie[s1], -c[s1]))]
    s2 = rng.permutation(np.flatnonzero(~above))
    return ChangePattern(np.concatenate((s1, s2)))


@dataclass
class TraceRecord:
    """One per-step trace row for diagnostics output."""

    k: int
    stat: float
    top_chart: int
    cusum: np.ndarray | None
    pi_hat: np.ndarray | None
    burst_bits: str = ""


class Detector:
    """Sequential change detector for one trial.

    Feed one fusion input per step to process(); it returns the current
    stopping statistic.  step() additionally compares against beta and
    returns the stopping step once crossed.
    """

    def __init__(self, config: DetectorConfig, params: ModelParams):
        self.config = config
        self.params = params
        L = params.L
        scheme = config.scheme

        if scheme in ("uniform-prior", "multichart") and L > MAX_CHART_SENSORS:
            raise ValueError(
                f"{scheme} enumerates L! orders and is capped at L <= {MAX_CHART_SENSORS}; "
                "use the estimation-based scheme for larger networks"
            )
        if scheme in ("known-pattern", "single-sensor") and config.known_pattern is None:
            raise ValueError(f"{scheme} needs known_pattern")

        lam = 1.0 if scheme == "mismatched" else params.lam
        chart_L = 1 if scheme == "single-sensor" else L
        self.coeffs: ChainCoeffs = chain_coeffs(chart_L, params.rho, lam)

        self._perms: np.ndarray | None = None
        if scheme == "multichart":
            self._perms = np.array(list(permutations(range(L))), dtype=np.int64)
            n_charts = self._perms.shape[0]
        else:
            n_charts = 1
        self.logp = np.full((n_charts, chart_L + 1), -np.inf)
        self.logp[:, 0] = -log(params.rho)

        self.cusum = np.zeros(L)
        self.k = 0
        self.last_stat = -np.inf
        self.top_chart = 0
        self.last_pattern: ChangePattern | None = None

        self._mu = params.densities.mu
        if config.setting == "us":
            self._pmfs = induced_pmfs(config.quantizer, params.densities)
            self._log_ratio_table = safe_log(self._pmfs.ratios())
        if config.setting == "lcsh":
            self.mirrors = [LcshChannelState(delta=config.delta) for _ in range(L)]
            self._etas = np.zeros(L, dtype=np.int64)
            # CUSUM log term is clamped at delta/2 so the zero level stays finite.
            self._eps_cusum = 0.5 * config.delta

    # -- per-step pipeline -------------------------------------------------

    def _ingest(self, fusion_input) -> tuple[np.ndarray, np.ndarray]:
        """Turn one step's fusion input into (log ratio vector, ratio vector)."""
        setting = self.config.setting
        if setting == "centralized":
            z = np.asarray(fusion_input, dtype=float)
            if z.shape != (self.params.L,):
                raise ValueError(f"expected a row of {self.params.L} measurements")
            logr = z * self._mu - 0.5 * self._mu * self._mu
            return logr, np.exp(logr)
        if setting == "us":
            u = np.asarray(fusion_input)
            if u.shape != (self.params.L,):
                raise ValueError(f"expected a row of {self.params.L} symbols")
            logr = self._log_ratio_table[u]
            return logr, np.exp(logr)
        bursts = fusion_input
        if len(bursts) != self.params.L:
            raise ValueError(f"expected one optional burst per sensor ({self.params.L})")
        for sensor, burst in enumerate(bursts):
            if burst is not None:
                apply_burst(self.mirrors[sensor], burst)
                self._etas[sensor] = self.mirrors[sensor].eta
        r = stats.ratio_vector_lcsh(
            self._etas,
            self.config.delta,
            self.config.eps,
            mode=self.config.lcsh_mode,
            densities=self.params.densities,
        )
        return safe_log(r), r

    def _log_delta(self, logr: np.ndarray, r: np.ndarray, rng) -> np.ndarray:
        """(n_charts, chart_L+1) log evidence factors for this step."""
        scheme = self.config.scheme
        if scheme == "multichart":
            out = np.zeros((self._perms.shape[0], self.params.L + 1))
            np.cumsum(logr[self._perms], axis=1, out=out[:, 1:])
            return out
        if scheme in ("uniform-prior", "mismatched"):
            # mismatched keeps only the all-changed coordinate alive; the
            # order-averaged factor matches the plain product there.
            return safe_log(stats.delta_uniform(r))[None, :]
        if scheme == "estimation-based":
            llr = logr if self.config.setting != "lcsh" else safe_log(
                np.maximum(self._etas * self.config.delta, self._eps_cusum)
            )
            self.cusum = cusum_update(self.cusum, llr)
            pat = estimate_pattern(self.cusum, self.config.xi, rng)
            self.last_pattern = pat
            out = np.zeros(self.params.L + 1)
            np.cumsum(logr[pat.order], out=out[1:])
            return out[None, :]
        if scheme == "known-pattern":
            out = np.zeros(self.params.L + 1)
            np.cumsum(logr[self.config.known_pattern.order], out=out[1:])
            return out[None, :]
        # single-sensor: a one-sensor chart on the first-changing sensor.
        first = self.config.known_pattern.order[0]
        return np.array([[0.0, logr[first]]])

    def process(self, fusion_input, rng: np.random.Generator | None = None) -> float:
        """Advance one step; returns the stopping statistic (max over charts)."""
        self.k += 1
        logr, r = self._ingest(fusion_input)
        logdelta = self._log_delta(logr, r, rng)
        self.logp = stats.recursion_update(self.logp, logdelta, self.coeffs)
        chart_stats = stats.stat_from_logp(self.logp)
        self.top_chart = int(np.argmax(chart_stats))
        self.last_stat = float(chart_stats[self.top_chart])
        return self.last_stat

    def step(self, fusion_input, rng: np.random.Generator | None = None) -> int | None:
        """process() plus the threshold check; returns the stop step or None."""
        stat = self.process(fusion_input, rng)
        return self.k if stat >= self.config.beta else None
