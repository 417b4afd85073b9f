"""Command-line entry point: simulate | analyze | conditional | calibrate | selfcheck."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, empirics
from .calibration import ScanError, calibrate
from .config import SCHEMA_VERSION, ConfigError, RunConfig, finite_or_none, load_mixture, save_mixture
from .process import conditional_given_abs, read_history_csv, simulate_history
from .scaling import DomainError, mixture_pdf
from .selfcheck import report, run_selfcheck

log = logging.getLogger("indexscaling")


class CommandError(RuntimeError):
    pass


def _provenance(cfg: RunConfig, command: str) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "tool": "indexscaling",
        "tool_version": __version__,
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg.as_dict(),
    }


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=finite_or_none) + "\n")


def _write_table(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def load_returns(path) -> np.ndarray:
    """Detrended lag-1 returns from a "date,close" file or a simulated history."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh), [])
    except OSError as exc:
        raise empirics.IngestionError(f"{path}: {exc}") from exc
    if [h.strip().lower() for h in header[:2]] == ["day", "return"]:
        hist = read_history_csv(path)
        prices = empirics.PriceSeries([str(i) for i in range(len(hist) + 1)], hist.prices(), str(path))
    else:
        prices = empirics.ingest_csv(path)
    logs, _ = empirics.detrend(prices)
    return np.diff(logs)


def cmd_simulate(cfg: RunConfig, out_dir: Path, seed: int | None) -> dict:
    length = cfg.get_int("process", "length")
    if length < 1:
        raise ConfigError(f"[process] length must be >= 1, got {length}")
    proc = cfg.process(seed)
    hist = simulate_history(proc, length)
    hist.to_csv(out_dir / "history.csv")
    summary = _provenance(cfg, "simulate")
    summary.update(
        seed=proc.seed,
        length=length,
        mean=float(np.mean(hist.returns)),
        variance=float(np.var(hist.returns)),
        epochs=len(hist.epoch_boundaries),
        epoch_boundaries=[[b.day, b.stage] for b in hist.epoch_boundaries],
    )
    _write_json(out_dir / "summary.json", summary)
    return summary


def cmd_analyze(cfg: RunConfig, series: Path, out_dir: Path) -> dict:
    returns = load_returns(series)
    lags = cfg.get_list("analyze", "lags", int)
    tau_max = cfg.get_int("analyze", "tau_max", minimum=1)
    fit_range = cfg.get_list("analyze", "fit_range", int)
    orders = cfg.get_list("analyze", "orders", float)
    bins = cfg.get_int("analyze", "bins", minimum=1)
    span = cfg.get_float("analyze", "span_sd")
    if len(fit_range) != 2 or fit_range[1] > tau_max:
        raise ConfigError("[analyze] fit_range must be two lags within tau_max")
    need = max(max(lags) + 100, tau_max + 2)
    if len(returns) < need:
        raise CommandError(
            f"series has {len(returns)} returns; lags up to {max(lags)} and tau_max={tau_max} need at least {need}"
        )

    x = empirics.log_prices_from_returns(returns)
    samples = [empirics.sliding_returns(x, T) for T in lags]
    hists = [empirics.empirical_pdf(s, bins, span) for s in samples]
    D_hat = empirics.fit_collapse_exponent(hists)
    curve = empirics.volatility_autocorr(returns, tau_max)
    fit = empirics.fit_power_law(curve, fit_range, exclude_nonpositive=True)
    table = empirics.moment_scaling(samples, orders)
    deff = empirics.effective_dimension_curve(
        cfg.get_float("analyze", "deff_D_e"),
        cfg.get_list("analyze", "deff_t"),
        tuple(cfg.get_list("analyze", "deff_T_range", int)),
    )

    _write_table(
        out_dir / "histograms.csv",
        ["lag", "bin_lo", "bin_hi", "density"],
        ((h.lag, float(lo), float(hi), float(d)) for h in hists for lo, hi, d in zip(h.edges[:-1], h.edges[1:], h.density)),
    )
    _write_table(out_dir / "autocorr.csv", ["tau", "c"], zip(curve.lags.tolist(), curve.values.tolist()))
    _write_table(
        out_dir / "moments.csv",
        ["q", "lag", "moment"],
        ((float(q), int(T), float(table.moments[i, j])) for i, q in enumerate(table.orders) for j, T in enumerate(table.lags)),
    )
    _write_table(out_dir / "deff.csv", ["t", "D_eff"], deff.tolist())

    summary = _provenance(cfg, "analyze")
    summary.update(
        series=str(series),
        n_returns=len(returns),
        D_hat=D_hat,
        beta=fit.beta,
        beta_fit_range=list(fit_range),
        beta_excluded_lags=fit.excluded,
        D_q={f"{q:g}": float(d) for q, d in zip(table.orders, table.exponents)},
    )
    _write_json(out_dir / "summary.json", summary)
    return summary


def cmd_conditional(cfg: RunConfig, mixture_path: Path | None, out_dir: Path) -> dict:
    mix = load_mixture(mixture_path) if mixture_path else cfg.mixture()
    Ts = cfg.get_list("conditional", "T")
    r1 = cfg.get_float("conditional", "r1_abs")
    r2 = np.linspace(-cfg.get_float("conditional", "r2_max"), cfg.get_float("conditional", "r2_max"),
                     cfg.get_int("conditional", "points", minimum=3))
    rows = []
    norms = {}
    for T in Ts:
        try:
            cond = conditional_given_abs(mix, T, r1, r2)
        except DomainError as exc:
            raise ConfigError(f"[conditional] {exc}") from None
        marg = mixture_pdf(mix, T**0.5, r2)
        norms[f"{T:g}"] = float(np.trapezoid(cond, r2))
        rows.extend((float(T), float(a), float(b), float(c)) for a, b, c in zip(r2, cond, marg))
    _write_table(out_dir / "conditional.csv", ["T", "r2", "density", "marginal"], rows)
    summary = _provenance(cfg, "conditional")
    summary.update(mixture=mix.to_dict(), r1_abs=r1, T=Ts, mass_on_grid=norms)
    _write_json(out_dir / "summary.json", summary)
    return summary


def cmd_calibrate(cfg: RunConfig, series: Path, out_dir: Path) -> dict:
    returns = load_returns(series)
    start = cfg.get_float("calibrate", "grid_start")
    stop = cfg.get_float("calibrate", "grid_stop")
    step = cfg.get_float("calibrate", "grid_step")
    grid = np.round(np.arange(start, stop + step / 2, step), 10)
    fit_range = cfg.get_list("analyze", "fit_range", int)
    try:
        rep = calibrate(
            returns,
            n_components=cfg.get_int("calibrate", "components", minimum=1),
            grid=grid,
            seeds=cfg.get_list("calibrate", "seeds", int),
            restart_mean=cfg.get_float("process", "restart_mean"),
            window=cfg.get_int("process", "window"),
            policy=cfg.raw("process", "restart_policy").lower(),
            tau_range=tuple(fit_range),
            lags=cfg.get_list("analyze", "lags", int),
            orders=cfg.get_list("analyze", "orders", float),
            workers=cfg.get_int("calibrate", "workers", minimum=1),
        )
    except (DomainError, ScanError) as exc:
        raise CommandError(str(exc)) from None
    data = _provenance(cfg, "calibrate")
    data.update(series=str(series), report=rep.to_dict())
    _write_json(out_dir / "calibration.json", data)
    save_mixture(rep.ensemble_mixture, out_dir / "mixture.json")
    cols = ["D_e", "beta_mean", "beta_sd", "n_valid", "multiscaling_loss"]
    _write_table(out_dir / "scan.csv", cols, ([p[c] for c in cols] for p in rep.scan))
    return data


def cmd_selfcheck(out_dir: Path | None, inject_bad_coefficient: bool) -> dict:
    results = run_selfcheck(inject_bad_coefficient)
    for c in results:
        print(c.line())
    data = {"schema_version": SCHEMA_VERSION, "tool_version": __version__, **report(results)}
    if out_dir is not None:
        _write_json(out_dir / "selfcheck.json", data)
    return data


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI config file; defaults are used for missing fields")
    common.add_argument("--seed", type=int, help="override [process] seed")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="directory for output files")

    ap = argparse.ArgumentParser(prog="indexscaling", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="simulate one history")
    p = sub.add_parser("analyze", parents=[common], help="stylized facts of a series")
    p.add_argument("series", type=Path, help="'date,close' CSV or simulated history CSV")
    p = sub.add_parser("conditional", parents=[common], help="conditional PDF tables given |r1|")
    p.add_argument("--mixture", type=Path, help="mixture JSON (default: [mixture] section)")
    p.add_argument("--T", dest="T", type=str, help="comma-separated durations, overrides [conditional] T")
    p.add_argument("--r1-abs", type=float, help="overrides [conditional] r1_abs")
    p = sub.add_parser("calibrate", parents=[common], help="fit mixture and D_e to a series")
    p.add_argument("series", type=Path)
    p = sub.add_parser("selfcheck", parents=[common], help="run oracle and invariant checks")
    p.add_argument("--inject-bad-coefficient", action="store_true", help=argparse.SUPPRESS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "selfcheck":
            args.out_dir.mkdir(parents=True, exist_ok=True)
            return 0 if cmd_selfcheck(args.out_dir, args.inject_bad_coefficient)["passed"] else 1
        overrides = {}
        if args.seed is not None:
            overrides[("process", "seed")] = args.seed
        if getattr(args, "T", None):
            overrides[("conditional", "T")] = args.T
        if getattr(args, "r1_abs", None) is not None:
            overrides[("conditional", "r1_abs")] = args.r1_abs
        cfg = RunConfig.load(args.config, overrides)
        args.out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            s = cmd_simulate(cfg, args.out_dir, None)
            print(f"simulated {s['length']} days in {s['epochs']} epochs -> {args.out_dir / 'history.csv'}")
        elif args.command == "analyze":
            s = cmd_analyze(cfg, args.series, args.out_dir)
            print(f"D_hat={s['D_hat']:.4f} beta={s['beta']:.4f} D(q)={s['D_q']}")
        elif args.command == "conditional":
            cmd_conditional(cfg, args.mixture, args.out_dir)
            print(f"wrote {args.out_dir / 'conditional.csv'}")
        elif args.command == "calibrate":
            rep = cmd_calibrate(cfg, args.series, args.out_dir)["report"]
            print(f"D_e={rep['D_e']:.2f} (multiscaling {rep['multiscaling_D_e']}) target beta={rep['target_beta']:.4f}")
    except (ConfigError, CommandError, empirics.IngestionError, empirics.EstimationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
