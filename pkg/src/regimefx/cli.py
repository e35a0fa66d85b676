"""Command-line front end.

Subcommands: estimate, calibrate, price, curve, simulate, check. Exit codes:
0 success, 2 validation error, 3 calibration infeasible, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CalibrationError, MartingaleError, UnobservedRegimeError
from .esscher import EsscherParams, JumpSpec, calibrate, report_lines, solve_esscher
from .markov_regime import (
    EstimatorWindows,
    RateMatrix,
    RegimeSet,
    TransitionMatrix,
    estimate_transition_matrix,
    occupation_mgf,
    read_matrix_csv,
    read_open_prices,
    sample_occupation_times,
    transition_to_rate,
    write_counts_csv,
    write_matrix_csv,
)
from .pricing import CURVE_HEADER, price_call, price_curve
from .simulation import (
    CheckResult,
    MeasureTag,
    check_esscher_density,
    check_esscher_martingale,
    mc_price_call,
    simulate_spot_path,
)

log = logging.getLogger("regimefx")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_VERIFICATION = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CheckSettings:
    horizon: float = 1.0
    n_paths: int = 200_000
    mgf_u: tuple[float, ...] | None = None
    strike: float | None = None


@dataclass(frozen=True)
class RunConfig:
    regimes: RegimeSet
    spec: JumpSpec
    k0: float
    rate: RateMatrix
    s0: float
    s_over_k: np.ndarray
    maturities: tuple[float, ...]
    initial_state: int
    thetas: tuple[float, ...]
    n_paths: int
    seed: int
    output_dir: Path
    check: CheckSettings = field(default_factory=CheckSettings)
    esscher_override: EsscherParams | None = None

    @property
    def strikes(self) -> np.ndarray:
        return self.s0 / self.s_over_k


def preset_path(name: str = "figures.json") -> Path:
    return Path(str(resources.files("regimefx") / "presets" / name))


def _num(d: dict, key: str, where: str, default=None) -> float:
    if key not in d:
        if default is None:
            raise ConfigError(f"{where}: missing '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: expected a finite number, got {v!r}")
    return float(v)


def _grid(spec, where: str) -> np.ndarray:
    if isinstance(spec, dict):
        start, stop = _num(spec, "start", where), _num(spec, "stop", where)
        num = int(_num(spec, "num", where))
        if num < 1:
            raise ConfigError(f"{where}.num must be >= 1")
        return np.linspace(start, stop, num)
    if isinstance(spec, list) and spec:
        return np.array([float(v) for v in spec])
    raise ConfigError(f"{where}: expected a non-empty list or a start/stop/num object")


def _rate_from(raw: dict, base: Path) -> RateMatrix:
    if "rate_matrix" in raw:
        return RateMatrix(np.array(raw["rate_matrix"], dtype=float))
    tm = raw.get("transition_matrix")
    if not isinstance(tm, dict):
        raise ConfigError("config needs 'rate_matrix' or a 'transition_matrix' object")
    dt = _num(tm, "dt", "transition_matrix", 1.0 / 252.0)
    if "matrix" in tm:
        p = TransitionMatrix(np.array(tm["matrix"], dtype=float), dt)
    elif "path" in tm:
        path = (base / tm["path"]).resolve()
        if not path.is_file():
            raise ConfigError(f"transition_matrix.path: no such file {path}")
        p = read_matrix_csv(path, dt)
    else:
        raise ConfigError("transition_matrix needs 'matrix' or 'path'")
    return transition_to_rate(p)


def _spec_from(raw: dict) -> JumpSpec:
    jump = raw.get("jump")
    if not isinstance(jump, dict):
        raise ConfigError("config needs a 'jump' object")
    kind = jump.get("kind")
    if kind == "exponential":
        return JumpSpec.exponential(_num(jump, "theta", "jump"))
    if kind == "gamma":
        return JumpSpec.gamma(_num(jump, "shape", "jump"), _num(jump, "theta", "jump"))
    if kind == "point_mass":
        return JumpSpec.point_mass(_num(jump, "z", "jump"))
    raise ConfigError(f"jump.kind must be 'exponential', 'gamma' or 'point_mass', got {kind!r}")


def load_config(path: str | Path, seed: int | None = None, paths: int | None = None,
                out: str | Path | None = None) -> RunConfig:
    """Parse and fully validate a JSON run configuration.

    Command-line overrides for seed, path count and output directory win over
    the file. Raises :class:`ConfigError` (or ``ValueError`` from the model
    types) before anything is written.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent

    rows = raw.get("regimes")
    if not isinstance(rows, list) or not rows:
        raise ConfigError("config needs a non-empty 'regimes' list")
    regimes = RegimeSet(
        mu=[_num(r, "mu", f"regimes[{i}]") for i, r in enumerate(rows)],
        sigma=[_num(r, "sigma", f"regimes[{i}]") for i, r in enumerate(rows)],
        lam=[_num(r, "lam", f"regimes[{i}]") for i, r in enumerate(rows)],
        rd=[_num(r, "rd", f"regimes[{i}]") for i, r in enumerate(rows)],
        rf=[_num(r, "rf", f"regimes[{i}]") for i, r in enumerate(rows)],
    )
    spec = _spec_from(raw)
    k0 = _num(raw, "k0", "config", 0.0)
    rate = _rate_from(raw, base)
    if rate.n != regimes.n:
        raise ConfigError(f"rate matrix is {rate.n}x{rate.n} but there are {regimes.n} regimes")

    pr = raw.get("pricing", {})
    s0 = _num(pr, "s0", "pricing", 1.0)
    s_over_k = _grid(pr.get("s_over_k", [1.0]), "pricing.s_over_k")
    maturities = tuple(float(t) for t in _grid(pr.get("maturities", [1.0]), "pricing.maturities"))
    initial_state = int(_num(pr, "initial_state", "pricing", 0.0))
    if s0 <= 0 or np.any(s_over_k <= 0) or min(maturities) <= 0:
        raise ConfigError("s0, s_over_k and maturities must be > 0")
    if not 0 <= initial_state < regimes.n:
        raise ConfigError(f"pricing.initial_state must be in 0..{regimes.n - 1}")

    curve = raw.get("curve", {})
    thetas = tuple(float(t) for t in curve.get("thetas", [spec.param]))
    if any(t <= 0 for t in thetas):
        raise ConfigError("curve.thetas must be > 0")

    mc = raw.get("mc", {})
    n_paths = int(paths if paths is not None else _num(mc, "n_paths", "mc", 100_000.0))
    seed = int(seed if seed is not None else _num(mc, "seed", "mc", 0.0))
    if n_paths < 100:
        raise ConfigError("mc.n_paths must be >= 100")

    ck = raw.get("check", {})
    mgf_u = ck.get("mgf_u")
    if mgf_u is not None and len(mgf_u) != regimes.n:
        raise ConfigError("check.mgf_u needs one entry per regime")
    check = CheckSettings(
        horizon=_num(ck, "horizon", "check", 1.0),
        n_paths=int(paths if paths is not None else _num(ck, "n_paths", "check", 200_000.0)),
        mgf_u=tuple(float(v) for v in mgf_u) if mgf_u is not None else None,
        strike=_num(ck, "strike", "check", s0),
    )
    if check.horizon <= 0 or check.strike <= 0 or check.n_paths < 100:
        raise ConfigError("check.horizon and check.strike must be > 0, check.n_paths >= 100")

    override = None
    if "esscher_params" in raw:
        ep = raw["esscher_params"]
        override = EsscherParams(ep["theta_c"], ep["theta_j"], ep.get("k0", k0))
        if override.n != regimes.n:
            raise ConfigError("esscher_params need one entry per regime")
        override.check_domain(spec)

    outdir = Path(out if out is not None else raw.get("output_dir", "out"))
    if not outdir.is_absolute() and out is None:
        outdir = base / outdir
    return RunConfig(regimes, spec, k0, rate, s0, s_over_k, maturities, initial_state,
                     thetas, n_paths, seed, outdir, check, override)


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    windows = EstimatorWindows(*args.params) if args.params else EstimatorWindows(
        args.candles_back_up, args.candles_back_down, args.delta_back_up, args.delta_back_down,
        args.candles_up, args.candles_down, args.delta_up, args.delta_down,
    )
    opens = read_open_prices(args.input)
    out = Path(args.out or ".")
    try:
        p, counts = estimate_transition_matrix(opens, windows, dt=args.dt)
    except UnobservedRegimeError as exc:
        totals = exc.counts.sum(axis=1)
        observed = [k for k in range(3) if totals[k] > 0]
        out.mkdir(parents=True, exist_ok=True)
        partial = np.zeros((3, 3))
        for k in observed:
            partial[k] = exc.counts[k] / totals[k]
        write_matrix_csv(out / "transition_matrix.csv", partial, rows=observed)
        write_counts_csv(out / "transition_counts.csv", exc.counts, windows)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "transition_matrix.csv", p.p)
    write_counts_csv(out / "transition_counts.csv", counts, windows)
    for name, row in zip(("up", "down", "sideway"), p.p):
        print(name, " ".join(f"{v:.4f}" for v in row))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config, args.seed, args.paths, args.out)
    params, rn = calibrate(cfg.regimes, cfg.spec, cfg.k0)
    text = "\n".join(report_lines(cfg.regimes, cfg.spec, params, rn)) + "\n"
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "calibration.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_price(args) -> int:
    cfg = load_config(args.config, args.seed, args.paths, args.out)
    _, rn = calibrate(cfg.regimes, cfg.spec, cfg.k0)
    strikes = np.array(args.strike, dtype=float) if args.strike else cfg.strikes
    rows = []
    for t in cfg.maturities:
        for k in strikes:
            res = price_call(cfg.s0, k, t, cfg.regimes, cfg.rate, rn,
                             initial_state=cfg.initial_state, n_paths=cfg.n_paths, seed=cfg.seed)
            rows.append([_fmt(t), _fmt(k), _fmt(cfg.s0 / k), _fmt(res.price),
                         _fmt(res.std_error), res.n_paths, res.series_truncation])
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    header = ["maturity", "strike", "s_over_k", "price", "std_error", "n_paths", "series_truncation"]
    _write_csv(cfg.output_dir / "prices.csv", header, rows)
    for r in rows:
        print(f"T={float(r[0]):g} K={float(r[1]):.6g} price={float(r[3]):.8f} se={float(r[4]):.2e}")
    return EXIT_OK


def curve_filename(t: float, theta: float) -> str:
    return f"curve_T{t:g}_theta{theta:g}.csv"


def cmd_curve(args) -> int:
    cfg = load_config(args.config, args.seed, args.paths, args.out)
    specs = {th: dataclasses.replace(cfg.spec, param=th) for th in cfg.thetas}
    for spec in specs.values():
        calibrate(cfg.regimes, spec, cfg.k0)
    outputs = {}
    for th, spec in specs.items():
        for t in cfg.maturities:
            rows = price_curve(cfg.s0, cfg.strikes, t, cfg.regimes, cfg.rate, spec, cfg.k0,
                               cfg.initial_state, cfg.n_paths, cfg.seed)
            outputs[curve_filename(t, th)] = [
                [_fmt(r.s_over_k), _fmt(r.price_jump), _fmt(r.stderr_jump),
                 _fmt(r.price_nojump), _fmt(r.stderr_nojump)] for r in rows
            ]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    for name, rows in outputs.items():
        _write_csv(cfg.output_dir / name, CURVE_HEADER, rows)
        print(cfg.output_dir / name)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed, args.paths, args.out)
    params, rn = calibrate(cfg.regimes, cfg.spec, cfg.k0)
    strikes = np.array(args.strike, dtype=float) if args.strike else cfg.strikes
    rows = []
    for t in cfg.maturities:
        for k in strikes:
            res = mc_price_call(cfg.s0, k, t, cfg.regimes, cfg.rate, rn,
                                cfg.initial_state, cfg.n_paths, cfg.seed)
            rows.append([_fmt(t), _fmt(k), _fmt(cfg.s0 / k), _fmt(res.price),
                         _fmt(res.std_error), res.n_paths])
    measure = MeasureTag(args.measure)
    path = simulate_spot_path(cfg.regimes, cfg.rate, cfg.spec, cfg.s0, max(cfg.maturities),
                              measure, cfg.seed, cfg.initial_state, rn=rn, params=params)
    states = list(path.chain.states) + [path.chain.states[-1]]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(cfg.output_dir / "mc_prices.csv",
               ["maturity", "strike", "s_over_k", "price", "std_error", "n_paths"], rows)
    _write_csv(cfg.output_dir / "sample_path.csv", ["time", "spot", "state"],
               [[_fmt(a), _fmt(b), s] for a, b, s in zip(path.times, path.spot, states)])
    for r in rows:
        print(f"T={float(r[0]):g} K={float(r[1]):.6g} mc_price={float(r[3]):.8f} se={float(r[4]):.2e}")
    return EXIT_OK


def run_checks(cfg: RunConfig) -> list[CheckResult]:
    """Density martingale, discounted-spot martingale, MGF and dual-pricer checks."""
    ck = cfg.check
    params, rn = calibrate(cfg.regimes, cfg.spec, cfg.k0)
    tested = cfg.esscher_override or params
    i0, seed, n = cfg.initial_state, cfg.seed, ck.n_paths
    out = []

    mean, se = check_esscher_density(cfg.regimes, cfg.rate, cfg.spec, tested, ck.horizon, n, seed, i0)
    out.append(CheckResult("esscher_density", mean, se, 1.0))

    mean, se = check_esscher_martingale(cfg.regimes, cfg.rate, cfg.spec, tested, cfg.s0,
                                        ck.horizon, n, seed, i0)
    out.append(CheckResult("discounted_spot", mean, se, 1.0))

    u = np.array(ck.mgf_u if ck.mgf_u is not None else np.linspace(0.3, -0.2, cfg.regimes.n))
    p0 = np.zeros(cfg.regimes.n)
    p0[i0] = 1.0
    exact = occupation_mgf(cfg.rate, u, ck.horizon, p0)
    occ, _ = sample_occupation_times(cfg.rate, i0, ck.horizon, n, seed)
    vals = np.exp(occ @ u)
    # a frozen chain gives a constant sample; report its SE as exactly 0
    se = float(vals.std(ddof=1) / math.sqrt(n)) if np.ptp(vals) > 0 else 0.0
    out.append(CheckResult("occupation_mgf", float(vals.mean()), se, exact))

    series = price_call(cfg.s0, ck.strike, ck.horizon, cfg.regimes, cfg.rate, rn,
                        initial_state=i0, n_paths=n, seed=seed)
    # disjoint seed range keeps the two estimators independent
    mc = mc_price_call(cfg.s0, ck.strike, ck.horizon, cfg.regimes, cfg.rate, rn, i0, n, seed + n)
    out.append(CheckResult("dual_pricer", series.price - mc.price,
                           math.hypot(series.std_error, mc.std_error), 0.0))
    return out


def cmd_check(args) -> int:
    cfg = load_config(args.config, args.seed, args.paths, args.out)
    results = run_checks(cfg)
    lines = [line for r in results for line in r.lines()]
    ok = all(r.passed for r in results)
    lines.append(f"overall = {'pass' if ok else 'fail'}")
    text = "\n".join(lines) + "\n"
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    (cfg.output_dir / "check_report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_VERIFICATION


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="JSON run configuration (default: bundled figures preset)")
    common.add_argument("--seed", type=int, default=None, help="base seed; path i uses seed + i")
    common.add_argument("--paths", type=int, default=None, help="Monte Carlo paths")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="regimefx", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common],
                         help="estimate the up/down/sideway transition matrix from open prices")
    est.add_argument("input", help="text file with one open price per line")
    est.add_argument("--params", type=float, nargs=8, default=None,
                     metavar=("CBU", "CBD", "DBU", "DBD", "CU", "CD", "DU", "DD"),
                     help="candles_back_up candles_back_down delta_back_up delta_back_down "
                          "candles_up candles_down delta_up delta_down")
    for name, default in (("candles-back-up", 30), ("candles-back-down", 30),
                          ("delta-back-up", 10), ("delta-back-down", 10),
                          ("candles-up", 30), ("candles-down", 30),
                          ("delta-up", 10), ("delta-down", 10)):
        kind = int if name.startswith("candles") else float
        est.add_argument(f"--{name}", type=kind, default=default)
    est.add_argument("--dt", type=float, default=1.0 / 252.0, help="bar length in years")
    est.set_defaults(func=cmd_estimate)

    for name, func, text in (
        ("calibrate", cmd_calibrate, "solve the Esscher parameters and report residuals"),
        ("price", cmd_price, "price calls with the regime-averaged series"),
        ("curve", cmd_curve, "price-versus-S/K curves for every (T, theta) pair"),
        ("check", cmd_check, "run the martingale, MGF and dual-pricer checks"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    sim = sub.add_parser("simulate", parents=[common], help="path Monte Carlo prices and a sample path")
    sim.add_argument("--measure", choices=[m.value for m in MeasureTag], default="risk_neutral")
    sim.add_argument("--strike", type=float, nargs="*", default=None)
    sim.set_defaults(func=cmd_simulate)
    for p in (sub.choices["price"],):
        p.add_argument("--strike", type=float, nargs="*", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "estimate" and args.config is None:
        args.config = str(preset_path())
    try:
        if args.command == "estimate" and args.params:
            args.params = [int(v) if i in (0, 1, 4, 5) else v for i, v in enumerate(args.params)]
        return args.func(args)
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except MartingaleError as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
