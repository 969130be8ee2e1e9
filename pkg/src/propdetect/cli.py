"""Command-line front end.

Experiments are described by a flat key = value config file (a TOML-subset:
comments, quoted strings, booleans, numbers, and one-line number arrays),
with per-key overrides via repeated --set key=value flags and a few
convenience flags.  Every command is deterministic given config plus seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import harness, stats
from .detectors import SCHEMES, SETTINGS, DetectorConfig
from .model import GaussianShift, ModelParams, kl_continuous
from .quantizer import QuantizerSpec, induced_pmfs, kl_pmf, optimize_thresholds


class ConfigError(Exception):
    """Bad configuration; reported on stderr with exit code 2."""


@dataclass
class ExperimentConfig:
    scheme: str = "multichart"
    setting: str = "us"
    L: int = 3
    rho: float = 0.01
    lam: float = 0.3
    mu: float = 1.0
    xi: float = 3.0
    quantizer_u: int = 2
    obs_thresholds: list = None
    delta: float = 0.0
    eps: float = 0.0
    lcsh_mode: str = "lr-identity"
    alpha: list = None
    trials: int = 1000
    seed: int = 1
    horizon_cap: int = 0
    workers: int = 1
    out: str = ""
    target_rate: float = 1.0
    rate_tol: float = 0.05
    dp_setting: str = "us"
    dp_c: float = 0.05
    dp_resolution: int = 20
    dp_epsilon: float = 1e-4
    dp_phi_count: int = 17
    dp_phi_lo: float = -2.0
    dp_phi_hi: float = 3.0
    dp_mc_samples: int = 2000

    def __post_init__(self):
        if self.obs_thresholds is None:
            self.obs_thresholds = []
        if self.alpha is None:
            self.alpha = [0.1, 0.01]


# config-file key -> dataclass field (only "lambda" differs; it is a Python keyword)
_KEY_TO_FIELD = {f.name: f.name for f in fields(ExperimentConfig)}
_KEY_TO_FIELD["lambda"] = "lam"
del _KEY_TO_FIELD["lam"]

_HELP = {
    "scheme": "stopping rule: " + ", ".join(SCHEMES),
    "setting": "fusion input: " + ", ".join(SETTINGS),
    "L": "number of sensors",
    "rho": "geometric parameter of the first change time",
    "lambda": "geometric parameter of the sensor-to-sensor delay",
    "mu": "post-change mean shift (unit-variance Gaussian)",
    "xi": "CUSUM grouping threshold of the estimation-based scheme",
    "quantizer_u": "message alphabet size for the us setting",
    "obs_thresholds": "explicit quantizer cuts; empty means optimize",
    "delta": "lcsh level spacing (0 = unset; run calibrate-delta)",
    "eps": "lcsh ratio floor used in the chart recursion",
    "lcsh_mode": "lcsh ratio semantics: lr-identity or band-probability",
    "alpha": "false-alarm targets, strictly descending",
    "trials": "Monte Carlo trials",
    "seed": "master seed; trial i draws from (seed, i)",
    "horizon_cap": "per-trial step cap (0 = 50/rho)",
    "workers": "parallel trial workers",
    "out": "output path (default depends on the command)",
    "target_rate": "calibrate-delta: bits/sensor/slot to match",
    "rate_tol": "calibrate-delta: acceptable rate mismatch",
    "dp_setting": "dp-offline: us (exact sums) or centralized (Monte Carlo)",
    "dp_c": "dp-offline: delay cost weight",
    "dp_resolution": "dp-offline: simplex lattice resolution",
    "dp_epsilon": "dp-offline: sup-norm convergence threshold",
    "dp_phi_count": "dp-offline: size of the threshold candidate ladder",
    "dp_phi_lo": "dp-offline: lowest candidate observation cut",
    "dp_phi_hi": "dp-offline: highest candidate observation cut",
    "dp_mc_samples": "dp-offline: Monte Carlo samples per grid point (centralized)",
}


def _config_epilog() -> str:
    default = ExperimentConfig()
    lines = ["config keys (key = value syntax; override with --set key=value):"]
    for key, field_name in _KEY_TO_FIELD.items():
        lines.append(f"  {key:<16} default {getattr(default, field_name)!r}: {_HELP[key]}")
    return "\n".join(lines)


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        if ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def _parse_scalar(token: str, where: str):
    token = token.strip()
    if len(token) >= 2 and token.startswith('"') and token.endswith('"'):
        return token[1:-1]
    if token in ("true", "false"):
        return token == "true"
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse value {token!r}") from None


def parse_kv_text(text: str, source: str = "<config>") -> dict:
    """Flat key = value parser; rejects duplicates and anything it cannot read."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not key.replace("_", "").isalnum():
            raise ConfigError(f"{where}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"{where}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{where}: empty value for {key!r}")
        if value.startswith("["):
            if not value.endswith("]"):
                raise ConfigError(f"{where}: unterminated array for {key!r}")
            inner = value[1:-1].strip()
            out[key] = (
                [] if not inner else [_parse_scalar(t, where) for t in inner.split(",")]
            )
        else:
            out[key] = _parse_scalar(value, where)
    return out


def _coerce(key: str, raw, template) -> object:
    if isinstance(template, bool):
        if not isinstance(raw, bool):
            raise ConfigError(f"key {key!r} expects a boolean")
        return raw
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"key {key!r} expects an integer, got {raw!r}")
        return raw
    if isinstance(template, float):
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"key {key!r} expects a number, got {raw!r}")
        return float(raw)
    if isinstance(template, str):
        if not isinstance(raw, str):
            raise ConfigError(f"key {key!r} expects a string, got {raw!r}")
        return raw
    if isinstance(template, list):
        if not isinstance(raw, list):
            raise ConfigError(f"key {key!r} expects an array, got {raw!r}")
        return [float(v) if isinstance(v, (int, float)) and not isinstance(v, bool)
                else _bad_elem(key, v) for v in raw]
    raise ConfigError(f"key {key!r} is not settable")


def _bad_elem(key, v):
    raise ConfigError(f"array key {key!r} expects numbers, got {v!r}")


def _apply_raw(cfg: ExperimentConfig, raw: dict) -> ExperimentConfig:
    for key, value in raw.items():
        field_name = _KEY_TO_FIELD.get(key)
        if field_name is None:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, field_name, _coerce(key, value, getattr(cfg, field_name)))
    return cfg


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        _apply_raw(cfg, parse_kv_text(text, source=args.config))
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        raw = parse_kv_text(item, source="--set")
        overrides.update(raw)
    _apply_raw(cfg, overrides)
    for flag in ("seed", "trials", "workers", "out"):
        value = getattr(args, flag, None)
        if value is not None:
            setattr(cfg, flag, value)
    if getattr(args, "alpha", None):
        try:
            cfg.alpha = [float(a) for a in args.alpha.split(",")]
        except ValueError:
            raise ConfigError(f"--alpha expects comma-separated numbers, got {args.alpha!r}") from None
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"key 'scheme' must be one of {SCHEMES}, got {cfg.scheme!r}")
    if cfg.setting not in SETTINGS:
        raise ConfigError(f"key 'setting' must be one of {SETTINGS}, got {cfg.setting!r}")
    if cfg.L < 1:
        raise ConfigError("key 'L' must be >= 1")
    if not 0.0 < cfg.rho < 1.0:
        raise ConfigError("key 'rho' must be in (0, 1)")
    if not 0.0 <= cfg.lam <= 1.0:
        raise ConfigError("key 'lambda' must be in [0, 1]")
    if cfg.xi <= 0.0:
        raise ConfigError("key 'xi' must be positive")
    if cfg.quantizer_u < 2:
        raise ConfigError("key 'quantizer_u' must be >= 2")
    if not cfg.alpha:
        raise ConfigError("key 'alpha' must not be empty")
    if any(not 0.0 < a < 1.0 for a in cfg.alpha):
        raise ConfigError("key 'alpha' entries must lie in (0, 1)")
    if any(b >= a for a, b in zip(cfg.alpha, cfg.alpha[1:])):
        raise ConfigError("key 'alpha' must be strictly descending")
    if cfg.trials < 1:
        raise ConfigError("key 'trials' must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("key 'workers' must be >= 1")
    if cfg.horizon_cap < 0:
        raise ConfigError("key 'horizon_cap' must be >= 0")
    if cfg.lcsh_mode not in ("lr-identity", "band-probability"):
        raise ConfigError("key 'lcsh_mode' must be lr-identity or band-probability")
    if cfg.dp_setting not in ("us", "centralized"):
        raise ConfigError("key 'dp_setting' must be us or centralized")


def model_params(cfg: ExperimentConfig) -> ModelParams:
    return ModelParams(L=cfg.L, rho=cfg.rho, lam=cfg.lam,
                       densities=GaussianShift(mu=cfg.mu))


def detector_config(cfg: ExperimentConfig, params: ModelParams) -> DetectorConfig:
    quantizer = None
    if cfg.setting == "us":
        if cfg.obs_thresholds:
            quantizer = QuantizerSpec.from_obs_thresholds(cfg.obs_thresholds, params.densities)
        else:
            quantizer = optimize_thresholds(cfg.quantizer_u, params.densities)
    delta = None
    if cfg.setting == "lcsh":
        if cfg.delta <= 0.0:
            raise ConfigError("key 'delta' must be positive for the lcsh setting "
                              "(run calibrate-delta to pick one)")
        delta = cfg.delta
    return DetectorConfig(
        scheme=cfg.scheme,
        setting=cfg.setting,
        beta=0.0,
        xi=cfg.xi,
        quantizer=quantizer,
        delta=delta,
        eps=cfg.eps,
        lcsh_mode=cfg.lcsh_mode,
    )


def _cap(cfg: ExperimentConfig, params: ModelParams) -> int:
    return cfg.horizon_cap if cfg.horizon_cap > 0 else harness.default_horizon_cap(params)


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    params = model_params(cfg)
    det_cfg = detector_config(cfg, params)
    points = harness.sweep_alpha(
        det_cfg, params, cfg.alpha, cfg.trials, cfg.seed,
        horizon_cap=_cap(cfg, params), workers=cfg.workers,
    )
    out = cfg.out or "sweep.csv"
    harness.write_tradeoff_csv(out, points, det_cfg, params, cfg.seed)
    print(f"# {cfg.scheme} / {cfg.setting}  L={cfg.L} rho={cfg.rho} lambda={cfg.lam} "
          f"mu={cfg.mu} trials={cfg.trials} seed={cfg.seed}")
    print(f"{'alpha':>10} {'beta':>8} {'pfa':>10} {'add':>10} {'cond':>10} {'rate':>8} {'cens':>5}")
    for p in points:
        print(f"{p.alpha:>10.4g} {p.beta:>8.3f} {p.pfa:>10.5f} {p.add:>10.3f} "
              f"{p.cond_delay:>10.3f} {p.comm_rate:>8.4f} {p.censored:>5d}")
    print(f"wrote {out}")
    if args.plot:
        from . import report

        fig_path = _with_suffix(out, ".png")
        report.render_tradeoff_figure(
            points, fig_path, title=f"{cfg.scheme} / {cfg.setting}, lambda={cfg.lam}"
        )
        print(f"wrote {fig_path}")
    return 0


def cmd_calibrate_delta(args) -> int:
    cfg = load_config(args)
    if cfg.setting != "lcsh":
        raise ConfigError("calibrate-delta needs setting = lcsh")
    params = model_params(cfg)
    if cfg.delta <= 0.0:
        cfg.delta = 1.0  # placeholder; calibration picks the real spacing
    base = detector_config(cfg, params)
    beta = stats.beta_for_alpha(cfg.rho, cfg.alpha[-1])
    base = replace(base, beta=beta)
    delta = harness.calibrate_delta(
        base, params, cfg.target_rate, cfg.rate_tol, cfg.trials, cfg.seed,
        horizon_cap=_cap(cfg, params), workers=cfg.workers,
    )
    point = harness.estimate_operating_point(
        replace(base, delta=delta), params, beta, cfg.trials, cfg.seed,
        horizon_cap=_cap(cfg, params), workers=cfg.workers,
    )
    print(f"delta = {delta!r}")
    print(f"measured rate = {point.comm_rate!r} bits/sensor/slot "
          f"(target {cfg.target_rate} +- {cfg.rate_tol}, beta = {beta:.4f})")
    return 0


def cmd_optimize_quantizer(args) -> int:
    cfg = load_config(args)
    densities = GaussianShift(mu=cfg.mu)
    spec = optimize_thresholds(cfg.quantizer_u, densities)
    value = kl_pmf(induced_pmfs(spec, densities))
    cuts = ", ".join(f"{t:.4f}" for t in spec.obs_thresholds(densities))
    print(f"alphabet size U = {cfg.quantizer_u}")
    print(f"observation thresholds = [{cuts}]")
    print(f"message K-L distance D = {value:.4f}")
    print(f"raw-measurement K-L distance = {kl_continuous(densities):.4f}")
    return 0


def cmd_dp_offline(args) -> int:
    cfg = load_config(args)
    if cfg.L > 3:
        raise ConfigError("dp-offline is a small-scale reference; needs L <= 3")
    params = model_params(cfg)
    from . import dp

    grid = dp.SimplexGrid.build(cfg.L, cfg.dp_resolution)
    candidates = None
    if cfg.dp_setting == "us":
        if cfg.quantizer_u != 2:
            raise ConfigError("dp-offline candidate ladder is binary; needs quantizer_u = 2")
        candidates = dp.default_phi_candidates(
            params.densities, cfg.dp_phi_count, cfg.dp_phi_lo, cfg.dp_phi_hi
        )
    table = dp.value_iterate(
        params, cfg.dp_c, grid, cfg.dp_epsilon, candidates,
        mc_samples=cfg.dp_mc_samples, mc_seed=cfg.seed,
    )
    out = cfg.out or "value-table.csv"
    dp.table_to_csv(table, out)
    vertex = grid.nearest_index(np.eye(cfg.L + 1)[0])
    print(f"grid points = {len(grid)}, sweeps = {table.iterations}, gap = {table.gap:.3g}")
    print(f"J at the all-pre-change vertex = {table.J[vertex]:.6f}")
    print(f"wrote {out}")
    if args.plot:
        if cfg.L != 2:
            raise ConfigError("--plot for dp-offline needs L = 2")
        from . import report

        fig_path = _with_suffix(out, ".png")
        report.render_value_table_figure(table, fig_path)
        print(f"wrote {fig_path}")
    return 0


def cmd_simulate_one(args) -> int:
    cfg = load_config(args)
    params = model_params(cfg)
    det_cfg = replace(
        detector_config(cfg, params),
        beta=stats.beta_for_alpha(cfg.rho, cfg.alpha[-1]),
    )
    trace: list = []
    result = harness.run_trial(
        det_cfg, params, cfg.seed, args.trial_index,
        horizon_cap=_cap(cfg, params), trace=trace,
    )
    out = cfg.out or "trace.csv"
    import csv as _csv

    with open(out, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["k", "scheme", "stat", "top_chart", "cusum", "pi_hat", "burst_bits"])
        for rec in trace:
            writer.writerow([
                rec.k,
                cfg.scheme,
                repr(float(rec.stat)),
                rec.top_chart,
                "|".join(repr(float(v)) for v in rec.cusum) if rec.cusum is not None else "",
                "|".join(str(int(v)) for v in rec.pi_hat) if rec.pi_hat is not None else "",
                rec.burst_bits,
            ])
    tau = "censored" if result.censored else result.tau
    print(f"tau = {tau}, first change = {result.gamma1}, false alarm = {result.false_alarm}, "
          f"delay = {result.delay}, bits = {result.bits_sent}")
    print(f"wrote {out}")
    return 0


def _with_suffix(path: str, suffix: str) -> str:
    root = path[: path.rfind(".")] if "." in path.split("/")[-1] else path
    return root + suffix


def _add_common(sp) -> None:
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override one config key (repeatable)")
    sp.add_argument("--seed", type=int, help="master seed")
    sp.add_argument("--trials", type=int, help="Monte Carlo trials")
    sp.add_argument("--workers", type=int, help="parallel trial workers")
    sp.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="propdetect",
        description="Sequential change detection with an unknown propagation order.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sweep", help="trace a delay-vs-false-alarm curve, write CSV")
    _add_common(sp)
    sp.add_argument("--alpha", help="comma-separated false-alarm targets, descending")
    sp.add_argument("--plot", action="store_true", help="also render the curve as PNG")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("calibrate-delta", help="match the lcsh bit rate to a target")
    _add_common(sp)
    sp.add_argument("--alpha", help="alpha grid; the last entry sets the operating beta")
    sp.set_defaults(func=cmd_calibrate_delta)

    sp = sub.add_parser("optimize-quantizer", help="K-L-maximizing quantizer thresholds")
    _add_common(sp)
    sp.set_defaults(func=cmd_optimize_quantizer)

    sp = sub.add_parser("dp-offline", help="value iteration; write the J/A table as CSV")
    _add_common(sp)
    sp.add_argument("--plot", action="store_true", help="render J and A over the simplex (L=2)")
    sp.set_defaults(func=cmd_dp_offline)

    sp = sub.add_parser("simulate-one", help="one seeded trial with a per-step trace CSV")
    _add_common(sp)
    sp.add_argument("--alpha", help="alpha grid; the last entry sets the stopping beta")
    sp.add_argument("--trial-index", type=int, default=0, help="which trial stream to replay")
    sp.set_defaults(func=cmd_simulate_one)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
