import numpy as np
import pytest

from propdetect.detectors import DetectorConfig
from propdetect.harness import (
    CSV_COLUMNS,
    TradeoffPoint,
    calibrate_delta,
    default_horizon_cap,
    estimate_operating_point,
    fit_slope,
    run_trial,
    sweep_alpha,
    write_tradeoff_csv,
)
from propdetect.model import GaussianShift, ModelParams
from propdetect.quantizer import QuantizerSpec
from propdetect.stats import beta_for_alpha

D1 = GaussianShift(1.0)
SPEC = QuantizerSpec.binary(0.7942, D1)


def params(L=3, rho=0.05, lam=0.3, mu=1.0):
    return ModelParams(L=L, rho=rho, lam=lam, densities=GaussianShift(mu))


def config(scheme="multichart", setting="us", beta=5.0, **kw):
    if setting == "us":
        kw.setdefault("quantizer", SPEC)
    if setting == "lcsh":
        kw.setdefault("delta", 0.5)
    return DetectorConfig(scheme=scheme, setting=setting, beta=beta, **kw)


class TestRunTrial:
    def test_deterministic(self):
        cfg = config(beta=beta_for_alpha(0.05, 0.1))
        a = run_trial(cfg, params(), 3, 17)
        b = run_trial(cfg, params(), 3, 17)
        assert a == b

    def test_immediate_stop_at_minus_infinity(self):
        # beta = -inf stops at the first step; a false alarm iff the first
        # change lands after step 1, which has probability 1 - rho
        cfg = config(beta=-np.inf)
        p = params(rho=0.3)
        hits = 0
        n = 400
        for i in range(n):
            res = run_trial(cfg, p, 9, i)
            assert res.tau == 1
            assert res.false_alarm == (res.gamma1 > 1)
            hits += res.false_alarm
        se = np.sqrt(0.3 * 0.7 / n)
        assert abs(hits / n - 0.7) < 3 * se

    def test_censoring(self):
        cfg = config(beta=1e9)
        res = run_trial(cfg, params(), 1, 0, horizon_cap=50)
        assert res.censored and res.tau is None and res.slots == 50

    def test_default_cap(self):
        assert default_horizon_cap(params(rho=0.05)) == 1000


class TestOperatingPoint:
    def test_us_rate_is_exactly_one_bit(self):
        pt = estimate_operating_point(config(), params(), beta_for_alpha(0.05, 0.1),
                                      trials=120, seed=4)
        assert pt.comm_rate == 1.0

    def test_all_censored_rejected(self):
        with pytest.raises(RuntimeError):
            estimate_operating_point(config(), params(), 1e9, trials=20, seed=4,
                                     horizon_cap=30)

    def test_pfa_bounded(self):
        beta = beta_for_alpha(0.05, 0.1)
        pt = estimate_operating_point(config(), params(), beta, trials=1500, seed=5)
        assert pt.pfa <= 0.1 + 3 * pt.pfa_ci / 1.96


class TestSweep:
    def test_paired_monotonicity(self):
        pts = sweep_alpha(config(), params(), [0.2, 0.05, 0.01], trials=400, seed=6)
        adds = [p.add for p in pts]
        pfas = [p.pfa for p in pts]
        assert adds[0] <= adds[1] <= adds[2]
        assert pfas[0] >= pfas[1] >= pfas[2]

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            sweep_alpha(config(), params(), [0.01, 0.1], trials=10, seed=0)
        with pytest.raises(ValueError):
            sweep_alpha(config(), params(), [1.2], trials=10, seed=0)
        with pytest.raises(ValueError):
            sweep_alpha(config(), params(), [], trials=10, seed=0)

    def test_csv_contract(self, tmp_path):
        pts = sweep_alpha(config(), params(), [0.2, 0.05], trials=150, seed=7)
        path = tmp_path / "curve.csv"
        write_tradeoff_csv(path, pts, config(), params(), seed=7)
        lines = path.read_text().splitlines()
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert len(lines) == 3
        first = dict(zip(CSV_COLUMNS, lines[1].split(",")))
        assert first["scheme"] == "multichart"
        assert float(first["alpha"]) == 0.2
        assert first["trials"] == "150"

    def test_workers_do_not_change_results(self, tmp_path):
        pts1 = sweep_alpha(config(), params(), [0.2, 0.05], trials=200, seed=8, workers=1)
        pts2 = sweep_alpha(config(), params(), [0.2, 0.05], trials=200, seed=8, workers=2)
        assert pts1 == pts2
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_tradeoff_csv(a, pts1, config(), params(), seed=8)
        write_tradeoff_csv(b, pts2, config(), params(), seed=8)
        assert a.read_bytes() == b.read_bytes()


class TestFitSlope:
    def _point(self, alpha, add):
        return TradeoffPoint(alpha=alpha, beta=0.0, trials=100, censored=0,
                             pfa=0.5, pfa_ci=0.0, add=add, add_ci=0.0,
                             cond_delay=add, cond_delay_ci=0.0, comm_rate=1.0)

    def test_exact_line(self):
        slope = 1.0354
        pts = [self._point(a, slope * abs(np.log(a))) for a in (1e-2, 1e-3, 1e-4)]
        assert fit_slope(pts) == pytest.approx(slope, abs=1e-9)

    def test_needs_positive_pfa_points(self):
        pts = [self._point(a, 1.0) for a in (1e-2, 1e-3, 1e-4)]
        broke = [p.__class__(**{**p.__dict__, "pfa": 0.0}) for p in pts]
        with pytest.raises(ValueError):
            fit_slope(broke)

    def test_degenerate_abscissas(self):
        pts = [self._point(1e-2, 1.0) for _ in range(3)]
        with pytest.raises(ValueError):
            fit_slope(pts)


class TestCalibrateDelta:
    def test_rate_decreases_in_delta(self):
        p = params(rho=0.05)
        beta = beta_for_alpha(0.05, 0.1)
        rates = []
        for d in (0.2, 1.0, 4.0):
            cfg = config(setting="lcsh", beta=beta, delta=d)
            rates.append(estimate_operating_point(cfg, p, beta, 150, 9).comm_rate)
        assert rates[0] > rates[1] > rates[2]

    def test_calibration_and_holdout(self):
        p = params(rho=0.05)
        beta = beta_for_alpha(0.05, 0.1)
        cfg = config(setting="lcsh", beta=beta, delta=1.0)
        tol = 0.08
        delta = calibrate_delta(cfg, p, target_rate=1.0, tol=tol, trials=300, seed=10)
        fresh = estimate_operating_point(
            DetectorConfig(**{**cfg.__dict__, "delta": delta}), p, beta, 300, seed=77
        )
        assert abs(fresh.comm_rate - 1.0) <= 2 * tol

    def test_bracket_failure_reported(self):
        p = params(rho=0.05)
        cfg = config(setting="lcsh", beta=beta_for_alpha(0.05, 0.1), delta=1.0)
        with pytest.raises(RuntimeError, match="bracket"):
            calibrate_delta(cfg, p, target_rate=500.0, tol=0.05, trials=60, seed=11,
                            bracket=(0.5, 1.0))

    def test_wrong_setting_rejected(self):
        with pytest.raises(ValueError):
            calibrate_delta(config(), params(), 1.0, 0.05, 10, 0)
