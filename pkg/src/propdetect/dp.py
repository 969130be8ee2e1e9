"""Offline value iteration on a simplex grid and the resulting stopping rule.

The posterior over "how many sensors have changed" lives on the
(L+1)-simplex.  Value iteration contracts the map

    B(q) -> min(q0, c (1 - q0) + min_phi sum_u B(next(q, u)) P(u | q))

to the optimal cost-to-go J; the continuation value A and the minimizing
quantizers define the stopping rule on the odds vector.  Small networks and
binary alphabets only: this is a validation reference, not the production
detector.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import product
from math import comb, log, sqrt

import numpy as np

from .model import DensityPair, ModelParams, sample_change_times, sample_measurements, sample_pattern
from .quantizer import QuantizerSpec, induced_pmfs
from .stats import SuffStats, chain_coeffs, elementary_symmetric, recursion_update, safe_log

_Z95 = 1.959963984540054


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _compositions(total - head, parts - 1):
            yield (head,) + rest


@dataclass(frozen=True)
class SimplexGrid:
    """Rational lattice {i/m} on the L-dimensional probability simplex."""

    L: int
    resolution: int
    coords: np.ndarray
    points: np.ndarray
    _lookup: np.ndarray

    @classmethod
    def build(cls, L: int, resolution: int) -> "SimplexGrid":
        if L < 1 or resolution < 2:
            raise ValueError("need L >= 1 and resolution >= 2")
        m = resolution
        coords = np.array(list(_compositions(m, L + 1)), dtype=np.int64)
        radix = (m + 1) ** np.arange(L + 1, dtype=np.int64)
        lookup = np.full((m + 1) ** (L + 1), -1, dtype=np.int64)
        lookup[coords @ radix] = np.arange(coords.shape[0])
        return cls(L=L, resolution=m, coords=coords,
                   points=coords / float(m), _lookup=lookup)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def nearest_index(self, q):
        """Closest lattice point(s) to q; accepts any leading batch shape.

        Rounds m*q down, then hands the remaining mass to the coordinates
        with the largest fractional parts.  Coordinates that are exactly
        zero stay zero, so the q0 = 0 face maps into itself.
        """
        m = self.resolution
        scaled = np.clip(np.asarray(q, dtype=float), 0.0, 1.0) * m
        base = np.floor(scaled).astype(np.int64)
        frac = scaled - base
        deficit = np.asarray(m - base.sum(axis=-1))
        order = np.argsort(-frac, axis=-1, kind="stable")
        rank = np.empty_like(order)
        np.put_along_axis(rank, order, np.arange(scaled.shape[-1]), axis=-1)
        base += rank < deficit[..., None]
        radix = (m + 1) ** np.arange(self.L + 1, dtype=np.int64)
        idx = self._lookup[base @ radix]
        if np.any(idx < 0):
            raise ValueError("rounded point fell off the simplex lattice")
        return idx if idx.ndim else int(idx)

    def interp_weights(self, q):
        """Simplicial interpolation: lattice vertex ids and barycentric weights.

        Works in cumulative-sum coordinates, where the lattice becomes the
        nondecreasing-integer staircase and the Kuhn triangulation of each
        unit cube (descending-fraction order, later coordinates first on
        ties) stays inside the staircase.  Returns (ids, weights) with L+1
        vertices per query point; weights are nonnegative, sum to 1, and
        interpolation is exact for affine functions of q.
        """
        m = self.resolution
        L = self.L
        q = np.asarray(q, dtype=float)
        cum = np.maximum.accumulate(np.clip(np.cumsum(q[..., :-1], axis=-1), 0.0, 1.0), axis=-1) * m
        base = np.floor(cum).astype(np.int64)
        np.minimum(base, m, out=base)
        frac = cum - base
        # descending fractions; equal fractions keep the later coordinate
        # first so every vertex stays nondecreasing
        rev = frac[..., ::-1]
        order = (L - 1) - np.argsort(-rev, axis=-1, kind="stable")
        f_sorted = np.take_along_axis(frac, order, axis=-1)
        weights = np.empty(q.shape[:-1] + (L + 1,))
        weights[..., 0] = 1.0 - f_sorted[..., 0]
        weights[..., 1:-1] = f_sorted[..., :-1] - f_sorted[..., 1:]
        weights[..., -1] = f_sorted[..., -1]
        # vertex j adds 1 to the first j coordinates in sort order
        steps = np.zeros(q.shape[:-1] + (L + 1, L), dtype=np.int64)
        lift = np.cumsum(np.eye(L, dtype=np.int64), axis=0)  # row j-1: first j sorted coords
        np.put_along_axis(
            steps[..., 1:, :], np.broadcast_to(order[..., None, :], steps[..., 1:, :].shape),
            np.broadcast_to(lift, steps[..., 1:, :].shape), axis=-1,
        )
        verts = base[..., None, :] + steps
        counts = np.empty(q.shape[:-1] + (L + 1, L + 1), dtype=np.int64)
        counts[..., 0] = verts[..., 0]
        counts[..., 1:L] = verts[..., 1:] - verts[..., :-1]
        counts[..., L] = m - verts[..., -1]
        radix = (m + 1) ** np.arange(L + 1, dtype=np.int64)
        ids = self._lookup[np.clip(counts, 0, None) @ radix]
        bad = (ids < 0) | np.any(counts < 0, axis=-1)
        if np.any(bad & (weights > 1e-14)):
            raise ValueError("interpolation vertex fell off the lattice")
        ids = np.where(bad, 0, ids)
        weights = np.where(bad, 0.0, weights)
        return ids, weights

    def interpolate(self, values, q):
        """Piecewise-linear evaluation of grid values at arbitrary points."""
        ids, weights = self.interp_weights(q)
        return (np.asarray(values, dtype=float)[ids] * weights).sum(axis=-1)


@dataclass
class ValueTable:
    """Converged cost-to-go J, continuation value A, and per-point quantizers.

    phi_opt is an object array of QuantizerSpec (None entries in the
    centralized variant, where messages are the raw measurements).
    """

    grid: SimplexGrid
    J: np.ndarray
    A: np.ndarray
    phi_opt: np.ndarray
    iterations: int
    gap: float


def q_from_p(p, rho: float) -> np.ndarray:
    """Posterior vector from the odds vector; inverse of p_from_q."""
    pv = np.exp(p.logp) if isinstance(p, SuffStats) else np.asarray(p, dtype=float)
    denom = 1.0 + rho * pv[1:].sum()
    q = np.empty_like(pv)
    q[0] = 1.0 / denom
    q[1:] = rho * pv[1:] / denom
    return q


def p_from_q(q, rho: float) -> SuffStats:
    q = np.asarray(q, dtype=float)
    if q[0] <= 0.0:
        raise ValueError("q0 = 0 has no finite odds image")
    return SuffStats(safe_log(q / (rho * q[0])))


def _transition_weights(points: np.ndarray, params: ModelParams) -> np.ndarray:
    """P(change count = n | q) rows for every grid point (or a single q)."""
    coeffs = chain_coeffs(params.L, params.rho, params.lam)
    return (points @ coeffs.e) * (1.0 - coeffs.rho_chain)


def _binoms(L: int) -> np.ndarray:
    return np.array([comb(L, n) for n in range(L + 1)], dtype=float)


def k_b(B_values, phi: QuantizerSpec, q, params: ModelParams, grid: SimplexGrid) -> float:
    """Continuation integrand sum_u B(next(q, u)) P(u | q) for one quantizer.

    B_values holds B at the grid points; off-grid arguments use the nearest
    lattice point.  Finite alphabets only.
    """
    B_values = np.asarray(B_values, dtype=float)
    q = np.asarray(q, dtype=float)
    pmfs = induced_pmfs(phi, params.densities)
    ratios = pmfs.ratios()
    w = _transition_weights(q, params)
    binom = _binoms(params.L)
    total = 0.0
    for tup in product(range(phi.alphabet_size), repeat=params.L):
        tup = np.array(tup)
        p0 = float(np.prod(pmfs.p0[tup]))
        g = (elementary_symmetric(ratios[tup]) / binom) * p0 * w
        h = float(g.sum())
        if h <= 0.0:
            raise ValueError("degenerate quantizer: zero-probability message tuple")
        total += grid.interpolate(B_values, g / h) * h
    return float(total)


class _OmegaOperator:
    """One application of the value-iteration map, with the B-independent
    pieces (posterior updates, nearest-grid indices, message weights)
    computed once."""

    def __init__(self, params, c, grid, phi_candidates=None, mc_samples=2000, mc_seed=0):
        self.c = float(c)
        self.grid = grid
        self.q0 = grid.points[:, 0]
        self.phi_candidates = list(phi_candidates) if phi_candidates is not None else None
        w = _transition_weights(grid.points, params)
        binom = _binoms(params.L)
        L = params.L
        nq = len(grid)

        if self.phi_candidates is not None:
            P = len(self.phi_candidates)
            U = self.phi_candidates[0].alphabet_size
            tuples = np.array(list(product(range(U), repeat=L)), dtype=np.int64)
            nu = tuples.shape[0]
            Wn = np.empty((P, nu, L + 1))
            for pi, phi in enumerate(self.phi_candidates):
                if phi.alphabet_size != U:
                    raise ValueError("candidate quantizers must share one alphabet size")
                pmfs = induced_pmfs(phi, params.densities)
                ratios = pmfs.ratios()
                p0prod = np.prod(pmfs.p0[tuples], axis=1)
                Wn[pi] = (elementary_symmetric(ratios[tuples]) / binom) * p0prod[:, None]
            g = Wn[None, :, :, :] * w[:, None, None, :]
            h = g.sum(axis=-1)
            if np.any(h <= 0.0):
                raise ValueError("degenerate quantizer: zero-probability message tuple")
            self.h = h
            self.idx, self.wts = grid.interp_weights(g / h[..., None])
        else:
            mu = params.densities.mu
            rng = np.random.default_rng(mc_seed)
            ids = np.empty((nq, mc_samples, L + 1), dtype=np.int64)
            wts = np.empty((nq, mc_samples, L + 1))
            for qi in range(nq):
                row = w[qi] / w[qi].sum()
                counts = rng.multinomial(mc_samples, row)
                pos = 0
                for n, cnt in enumerate(counts):
                    if cnt == 0:
                        continue
                    z = rng.standard_normal((cnt, L))
                    if n > 0:
                        # a uniformly random n-subset of sensors is post-change
                        sel = np.argsort(rng.random((cnt, L)), axis=1)[:, :n]
                        shift = np.zeros((cnt, L))
                        np.put_along_axis(shift, sel, mu, axis=1)
                        z += shift
                    r = np.exp(mu * z - 0.5 * mu * mu)
                    g = (elementary_symmetric(r) / binom) * w[qi]
                    qnext = g / g.sum(axis=-1, keepdims=True)
                    ids[qi, pos:pos + cnt], wts[qi, pos:pos + cnt] = grid.interp_weights(qnext)
                    pos += cnt
            self.idx = ids
            self.wts = wts
            self.h = None

    def kvals(self, B: np.ndarray) -> np.ndarray:
        """Continuation values per (grid point, candidate); one column when
        the channel is the identity."""
        Bq = (B[self.idx] * self.wts).sum(axis=-1)
        if self.h is not None:
            return (Bq * self.h).sum(axis=2)
        return Bq.mean(axis=1)[:, None]

    def apply(self, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        K = self.kvals(B)
        newB = np.minimum(self.q0, self.c * (1.0 - self.q0) + K.min(axis=1))
        return newB, K


def omega_map(B, grid, phi_candidates, params, c, mc_samples=2000, mc_seed=0):
    """Single sweep of the value map over the grid.

    Returns (updated values, index of the minimizing candidate per point);
    the index column is all zeros in the centralized (identity) variant.
    """
    op = _OmegaOperator(params, c, grid, phi_candidates, mc_samples, mc_seed)
    newB, K = op.apply(np.asarray(B, dtype=float))
    return newB, K.argmin(axis=1)


def default_phi_candidates(densities: DensityPair, count: int = 17,
                           lo: float = -2.0, hi: float = 3.0) -> list[QuantizerSpec]:
    """Binary observation-domain threshold ladder used as the search set."""
    return [QuantizerSpec.binary(t, densities) for t in np.linspace(lo, hi, count)]


def value_iterate(
    params: ModelParams,
    c: float,
    grid: SimplexGrid,
    epsilon: float,
    phi_candidates: list[QuantizerSpec] | None = None,
    max_iter: int = 10000,
    mc_samples: int = 2000,
    mc_seed: int = 0,
) -> ValueTable:
    """Iterate the value map from B(q) = q0 until the sup-norm gap <= epsilon.

    phi_candidates = None selects the centralized variant, where the
    continuation expectation over raw measurements is Monte Carlo with a
    dedicated seeded stream; finite candidate sets are summed exactly.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    op = _OmegaOperator(params, c, grid, phi_candidates, mc_samples, mc_seed)
    B = grid.points[:, 0].copy()
    gap = np.inf
    iterations = 0
    while gap > epsilon:
        if iterations >= max_iter:
            raise RuntimeError(
                f"value iteration stopped after {iterations} sweeps with gap {gap:g} > {epsilon:g}"
            )
        iterations += 1
        newB, _ = op.apply(B)
        gap = float(np.abs(newB - B).max())
        B = newB
    K = op.kvals(B)
    A = K.min(axis=1)
    phi_opt = np.empty(len(grid), dtype=object)
    if phi_candidates is not None:
        best = K.argmin(axis=1)
        for i, b in enumerate(best):
            phi_opt[i] = op.phi_candidates[b]
    return ValueTable(grid=grid, J=B, A=A, phi_opt=phi_opt,
                      iterations=iterations, gap=gap)


def dp_stop_check(p: SuffStats, table: ValueTable, c: float, rho: float) -> bool:
    """Stop as soon as the odds tail reaches (1 - A) / (rho (c + A))."""
    tail = float(np.exp(p.logp[1:]).sum())
    a_hat = float(table.grid.interpolate(table.A, q_from_p(p, rho)))
    return tail >= (1.0 - a_hat) / (rho * (c + a_hat))


def simulate_dp_policy(
    table: ValueTable,
    params: ModelParams,
    c: float,
    trials: int,
    seed: int,
    horizon_cap: int | None = None,
) -> dict:
    """Monte Carlo Bayes risk of the table's stopping rule from a cold start.

    Per trial the risk contribution is 1{tau < first change} + c * delay;
    the mean and its 95% CI cross-validate J at the initial vertex.
    """
    cap = horizon_cap if horizon_cap is not None else max(1, int(round(50.0 / params.rho)))
    coeffs = chain_coeffs(params.L, params.rho, params.lam)
    mu = params.densities.mu
    decentralized = table.phi_opt[0] is not None
    pmf_cache: dict[tuple, tuple] = {}
    if decentralized:
        for spec in table.phi_opt:
            key = spec.lr_thresholds
            if key not in pmf_cache:
                pmf_cache[key] = (
                    spec.obs_thresholds(params.densities),
                    induced_pmfs(spec, params.densities).ratios(),
                )
    binom = _binoms(params.L)

    risks = np.empty(trials)
    fa = 0
    delays = np.empty(trials)
    censored = 0
    for t in range(trials):
        ss = np.random.SeedSequence((int(seed), int(t)))
        rng = np.random.default_rng(ss)
        pattern = sample_pattern(params.L, rng)
        times = sample_change_times(params, pattern, rng)
        gamma1 = int(times[pattern.order[0]])
        logp = SuffStats.initial(params.L, params.rho).logp
        tau = cap
        for k in range(1, cap + 1):
            gi = table.grid.nearest_index(q_from_p(np.exp(logp), params.rho))
            z = sample_measurements(params, times, k, 1, rng)[0]
            if decentralized:
                obs, ratios = pmf_cache[table.phi_opt[gi].lr_thresholds]
                r = ratios[np.searchsorted(obs, z, side="left")]
            else:
                r = np.exp(mu * z - 0.5 * mu * mu)
            delta = elementary_symmetric(r) / binom
            logp = recursion_update(logp, safe_log(delta), coeffs)
            if dp_stop_check(SuffStats(logp), table, c, params.rho):
                tau = k
                break
        else:
            censored += 1
        alarm = tau < gamma1
        fa += alarm
        delays[t] = max(0, tau - gamma1)
        risks[t] = float(alarm) + c * delays[t]
    mean = float(risks.mean())
    ci = float(_Z95 * risks.std(ddof=1) / sqrt(trials)) if trials > 1 else float("nan")
    return {
        "risk": mean,
        "risk_ci": ci,
        "pfa": fa / trials,
        "add": float(delays.mean()),
        "trials": trials,
        "censored": censored,
    }


def table_to_csv(table: ValueTable, path) -> None:
    """Columns: lattice indices, J, A, and the quantizer's observation cuts."""
    L = table.grid.L
    header = [f"i{n}" for n in range(L + 1)] + ["J", "A", "phi_opt"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, j, a, spec in zip(table.grid.coords, table.J, table.A, table.phi_opt):
            phi = ""
            if spec is not None:
                phi = "|".join(repr(float(t)) for t in spec.lr_thresholds)
            writer.writerow([*map(int, row), repr(float(j)), repr(float(a)), phi])


def table_from_csv(path) -> ValueTable:
    """Rebuild a table written by table_to_csv (iterations/gap are not stored)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    L = sum(1 for h in header if h.startswith("i")) - 1
    coords = np.array([[int(v) for v in row[: L + 1]] for row in body], dtype=np.int64)
    grid = SimplexGrid.build(L, int(coords[0].sum()))
    J = np.empty(len(grid))
    A = np.empty(len(grid))
    phi_opt = np.empty(len(grid), dtype=object)
    radix = (grid.resolution + 1) ** np.arange(L + 1, dtype=np.int64)
    for row in body:
        idx = int(grid._lookup[np.array([int(v) for v in row[: L + 1]]) @ radix])
        J[idx] = float(row[L + 1])
        A[idx] = float(row[L + 2])
        phi_opt[idx] = (
            QuantizerSpec(tuple(float(t) for t in row[L + 3].split("|")))
            if row[L + 3]
            else None
        )
    return ValueTable(grid=grid, J=J, A=A, phi_opt=phi_opt, iterations=0, gap=float("nan"))
