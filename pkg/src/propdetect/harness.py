"""Monte Carlo engine: trials, operating-point estimates, tradeoff sweeps.

Each trial derives two private random streams from (seed, trial_index): one
for the scenario (pattern, change times, measurements) and one for the
detector's internal draws.  The split keeps measurement paths identical
across schemes and thresholds, which makes paired comparisons and
common-random-number sweeps exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from math import ceil, exp, log, log2, sqrt
from multiprocessing import get_context

import numpy as np

from .detectors import Detector, DetectorConfig, TraceRecord
from .lcsh import LcshChannelState, encode_burst, lcsh_step
from .model import ModelParams, sample_change_times, sample_measurements, sample_pattern
from .stats import beta_for_alpha

# Measurement rows are drawn in fixed-size blocks so the per-trial stream
# layout does not depend on where the detector stops.
_CHUNK = 64

_Z95 = 1.959963984540054


def default_horizon_cap(params: ModelParams) -> int:
    """Trial length cap; 50 mean pre-change periods makes censoring negligible."""
    return max(1, int(round(50.0 / params.rho)))


@dataclass(frozen=True)
class TrialResult:
    """Outcome of one trial at a single threshold.

    tau is None when the trial hit the horizon cap before crossing; delay
    then measures against the cap and the trial is excluded from delay
    averages.
    """

    tau: int | None
    censored: bool
    gamma1: int
    false_alarm: bool
    delay: int
    bits_sent: int
    slots: int


@dataclass(frozen=True)
class TradeoffPoint:
    """One (alpha, beta) operating point with 95% confidence half-widths."""

    alpha: float
    beta: float
    trials: int
    censored: int
    pfa: float
    pfa_ci: float
    add: float
    add_ci: float
    cond_delay: float
    cond_delay_ci: float
    comm_rate: float


def _trial_rngs(seed: int, trial_index: int):
    ss = np.random.SeedSequence((int(seed), int(trial_index)))
    scen, det = ss.spawn(2)
    return np.random.default_rng(scen), np.random.default_rng(det)


def _make_frontend(config: DetectorConfig, params: ModelParams):
    """Sensor-side channel: measurement row -> (fusion input, bits sent)."""
    setting = config.setting
    if setting == "centralized":
        return lambda row: (row, 0)
    if setting == "us":
        obs = config.quantizer.obs_thresholds(params.densities)
        bits_per_slot = params.L * ceil(log2(config.quantizer.alphabet_size))
        return lambda row: (np.searchsorted(obs, row, side="left"), bits_per_slot)
    encoders = [LcshChannelState(delta=config.delta) for _ in range(params.L)]
    mu = params.densities.mu

    def lcsh_frontend(row):
        lr = np.exp(row * mu - 0.5 * mu * mu)
        bursts = []
        bits = 0
        for enc, value in zip(encoders, lr):
            burst = lcsh_step(enc, float(value))
            bursts.append(burst)
            if burst is not None:
                bits += burst.bit_count
        return bursts, bits

    return lcsh_frontend


def _run_trial_curve(config, params, betas, seed, trial_index, cap, trace=None):
    """One trial streamed once, recording the first crossing of each threshold.

    betas must be ascending; the first crossing step of a level is
    nondecreasing in the level, so a single pass serves a whole alpha grid.
    Returns (gamma1, taus, bits, slots) where taus[j] = -1 marks a censored
    threshold.
    """
    rng_scen, rng_det = _trial_rngs(seed, trial_index)
    pattern = sample_pattern(params.L, rng_scen)
    times = sample_change_times(params, pattern, rng_scen)
    gamma1 = int(times[pattern.order[0]])

    cfg = config
    if config.scheme in ("known-pattern", "single-sensor"):
        cfg = replace(config, known_pattern=pattern)
    detector = Detector(cfg, params)
    frontend = _make_frontend(cfg, params)
    is_lcsh = cfg.setting == "lcsh"

    nb = len(betas)
    taus = np.full(nb, -1, dtype=np.int64)
    bits_at = np.zeros(nb, dtype=np.int64)
    bits = 0
    idx = 0
    k = 0
    while k < cap and idx < nb:
        n = min(_CHUNK, cap - k)
        block = sample_measurements(params, times, k + 1, n, rng_scen)
        for row in block:
            k += 1
            fusion, step_bits = frontend(row)
            bits += step_bits
            stat = detector.process(fusion, rng_det)
            if trace is not None:
                burst_bits = ""
                if is_lcsh:
                    burst_bits = "|".join(encode_burst(b) if b else "" for b in fusion)
                trace.append(
                    TraceRecord(
                        k=k,
                        stat=stat,
                        top_chart=detector.top_chart,
                        cusum=detector.cusum.copy()
                        if cfg.scheme == "estimation-based"
                        else None,
                        pi_hat=detector.last_pattern.order.copy()
                        if detector.last_pattern is not None
                        else None,
                        burst_bits=burst_bits,
                    )
                )
            while idx < nb and stat >= betas[idx]:
                taus[idx] = k
                bits_at[idx] = bits
                idx += 1
            if idx == nb:
                break
    bits_at[idx:] = bits
    slots = np.where(taus > 0, taus, cap)
    return gamma1, taus, bits_at, slots


def run_trial(
    config: DetectorConfig,
    params: ModelParams,
    seed: int,
    trial_index: int,
    horizon_cap: int | None = None,
    trace: list | None = None,
) -> TrialResult:
    """Run one seeded trial to the config's threshold (or the horizon cap)."""
    cap = horizon_cap if horizon_cap is not None else default_horizon_cap(params)
    gamma1, taus, bits, slots = _run_trial_curve(
        config, params, np.array([config.beta]), seed, trial_index, cap, trace=trace
    )
    censored = taus[0] < 0
    tau = None if censored else int(taus[0])
    end = int(slots[0])
    return TrialResult(
        tau=tau,
        censored=bool(censored),
        gamma1=gamma1,
        false_alarm=bool(not censored and tau < gamma1),
        delay=max(0, end - gamma1),
        bits_sent=int(bits[0]),
        slots=end,
    )


def _run_batch(config, params, betas, seed, lo, hi, cap):
    n = hi - lo
    nb = len(betas)
    gamma1 = np.empty(n, dtype=np.int64)
    taus = np.empty((n, nb), dtype=np.int64)
    bits = np.empty((n, nb), dtype=np.int64)
    slots = np.empty((n, nb), dtype=np.int64)
    for i, t in enumerate(range(lo, hi)):
        gamma1[i], taus[i], bits[i], slots[i] = _run_trial_curve(
            config, params, betas, seed, t, cap
        )
    return gamma1, taus, bits, slots


def _run_trials(config, params, betas, trials, seed, cap, workers):
    """Trials 0..trials-1; results are index-ordered, so worker count is moot."""
    if trials < 1:
        raise ValueError("need at least one trial")
    betas = np.asarray(betas, dtype=float)
    if workers <= 1:
        return _run_batch(config, params, betas, seed, 0, trials, cap)
    bounds = np.linspace(0, trials, 4 * workers + 1).astype(int)
    jobs = [
        (config, params, betas, seed, int(lo), int(hi), cap)
        for lo, hi in zip(bounds[:-1], bounds[1:])
        if hi > lo
    ]
    with get_context("fork").Pool(processes=workers) as pool:
        parts = pool.starmap(_run_batch, jobs)
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(4))


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return float("nan"), float("nan")
    mean = float(values.mean())
    if values.size < 2:
        return mean, float("nan")
    return mean, float(_Z95 * values.std(ddof=1) / sqrt(values.size))


def _point_from_arrays(alpha, beta, L, gamma1, taus, bits, slots) -> TradeoffPoint:
    trials = gamma1.size
    stopped = taus >= 0
    censored = int(trials - stopped.sum())
    fa = stopped & (taus < gamma1)
    pfa = float(fa.mean())
    pfa_ci = float(_Z95 * sqrt(max(pfa * (1.0 - pfa), 0.0) / trials))
    delay = np.maximum(taus[stopped] - gamma1[stopped], 0)
    add, add_ci = _mean_ci(delay.astype(float))
    detected = stopped & (taus >= gamma1)
    cond, cond_ci = _mean_ci((taus[detected] - gamma1[detected]).astype(float))
    total_slots = int(slots.sum())
    comm_rate = float(bits.sum()) / (L * total_slots) if total_slots else float("nan")
    return TradeoffPoint(
        alpha=float(alpha),
        beta=float(beta),
        trials=int(trials),
        censored=censored,
        pfa=pfa,
        pfa_ci=pfa_ci,
        add=add,
        add_ci=add_ci,
        cond_delay=cond,
        cond_delay_ci=cond_ci,
        comm_rate=comm_rate,
    )


def estimate_operating_point(
    config: DetectorConfig,
    params: ModelParams,
    beta: float,
    trials: int,
    seed: int,
    horizon_cap: int | None = None,
    workers: int = 1,
) -> TradeoffPoint:
    """PFA/ADD/rate estimates with 95% CIs at a single threshold."""
    cap = horizon_cap if horizon_cap is not None else default_horizon_cap(params)
    cfg = replace(config, beta=beta)
    gamma1, taus, bits, slots = _run_trials(
        cfg, params, np.array([beta]), trials, seed, cap, workers
    )
    point = _point_from_arrays(
        exp(-beta) / params.rho, beta, params.L,
        gamma1, taus[:, 0], bits[:, 0], slots[:, 0],
    )
    if point.censored == trials:
        raise RuntimeError("every trial hit the horizon cap; raise the cap or lower beta")
    return point


def sweep_alpha(
    config: DetectorConfig,
    params: ModelParams,
    alpha_grid,
    trials: int,
    seed: int,
    horizon_cap: int | None = None,
    workers: int = 1,
) -> list[TradeoffPoint]:
    """One operating point per alpha, all alphas sharing every trial's path."""
    alphas = [float(a) for a in alpha_grid]
    if not alphas:
        raise ValueError("alpha grid is empty")
    if any(not 0.0 < a < 1.0 for a in alphas):
        raise ValueError("alpha values must lie in (0, 1)")
    if any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha grid must be strictly descending")
    betas = np.array([beta_for_alpha(params.rho, a) for a in alphas])
    cap = horizon_cap if horizon_cap is not None else default_horizon_cap(params)
    cfg = replace(config, beta=float(betas[-1]))
    gamma1, taus, bits, slots = _run_trials(cfg, params, betas, trials, seed, cap, workers)
    return [
        _point_from_arrays(alphas[j], betas[j], params.L,
                           gamma1, taus[:, j], bits[:, j], slots[:, j])
        for j in range(len(alphas))
    ]


def fit_slope(points) -> float:
    """Least-squares slope of the delay estimates against |log alpha|."""
    pts = list(points)
    if sum(1 for p in pts if p.pfa > 0.0) < 3:
        raise ValueError("need at least 3 points with positive estimated PFA")
    x = np.array([abs(log(p.alpha)) for p in pts])
    y = np.array([p.add for p in pts])
    if np.ptp(x) <= 0.0:
        raise ValueError("degenerate abscissas: alphas must differ")
    return float(np.polyfit(x, y, 1)[0])


def calibrate_delta(
    config: DetectorConfig,
    params: ModelParams,
    target_rate: float,
    tol: float,
    trials: int,
    seed: int,
    horizon_cap: int | None = None,
    workers: int = 1,
    bracket: tuple[float, float] = (0.05, 6.0),
    max_iter: int = 40,
) -> float:
    """Level spacing whose measured bit rate matches target_rate within tol.

    Bisection (geometric midpoints) on the seeded, hence deterministic,
    rate curve, which is nonincreasing in the spacing.  Raises if the
    measured rates at the bracket endpoints do not straddle the target.
    """
    if target_rate <= 0.0:
        raise ValueError("target_rate must be positive")
    if config.setting != "lcsh":
        raise ValueError("delta calibration only applies to the lcsh setting")

    def rate_at(d: float) -> float:
        cfg = replace(config, delta=float(d))
        pt = estimate_operating_point(
            cfg, params, config.beta, trials, seed, horizon_cap=horizon_cap, workers=workers
        )
        return pt.comm_rate

    lo, hi = bracket
    rate_lo = rate_at(lo)
    rate_hi = rate_at(hi)
    if not rate_lo >= target_rate >= rate_hi:
        raise RuntimeError(
            f"calibration bracket failure: rate({lo:g}) = {rate_lo:g}, "
            f"rate({hi:g}) = {rate_hi:g} do not straddle {target_rate:g}"
        )
    mid, rate_mid = hi, rate_hi
    for _ in range(max_iter):
        mid = sqrt(lo * hi)
        rate_mid = rate_at(mid)
        if abs(rate_mid - target_rate) <= tol:
            return float(mid)
        if rate_mid > target_rate:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(
        f"calibration stalled: last rate {rate_mid:g} at delta {mid:g} misses "
        f"{target_rate:g} by more than {tol:g}"
    )


CSV_COLUMNS = [
    "scheme", "setting", "L", "rho", "lambda", "mu", "alpha", "beta",
    "trials", "censored", "pfa", "pfa_ci", "add", "add_ci",
    "cond_delay", "cond_delay_ci", "comm_rate", "delta", "seed",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_tradeoff_csv(path, points, config: DetectorConfig, params: ModelParams, seed: int) -> None:
    """One row per operating point; float fields use shortest round-trip repr,
    so identical inputs give byte-identical files."""
    delta = float(config.delta) if config.delta is not None else float("nan")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for p in points:
            writer.writerow(
                [
                    config.scheme, config.setting, params.L,
                    _fmt(float(params.rho)), _fmt(float(params.lam)),
                    _fmt(float(params.densities.mu)),
                    _fmt(p.alpha), _fmt(p.beta), p.trials, p.censored,
                    _fmt(p.pfa), _fmt(p.pfa_ci), _fmt(p.add), _fmt(p.add_ci),
                    _fmt(p.cond_delay), _fmt(p.cond_delay_ci),
                    _fmt(p.comm_rate), _fmt(delta), seed,
                ]
            )
