"""Fit the scaling function and the inhomogeneity exponent to a history."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import empirics
from .empirics import HistogramPdf, ReturnSample
from .process import ProcessConfig, RestartPolicy, mean_stage_variance, simulate_history
from .scaling import DomainError, VolatilityMixture, mixture_pdf, normal_logpdf

log = logging.getLogger(__name__)

DEFAULT_LAGS = (1, 2, 4, 8, 16, 32)
DEFAULT_ORDERS = (1, 2, 3, 4, 5)


class ScanError(RuntimeError):
    pass


@dataclass
class MixtureFit:
    mixture: VolatilityMixture
    converged: bool
    iterations: int
    loglik: float
    misfit: float


def _pooled(samples: Sequence[ReturnSample], D: float = 0.5) -> np.ndarray:
    return np.concatenate([np.asarray(s.returns, dtype=float) / float(s.lag) ** D for s in samples])


def log_density_misfit(mix: VolatilityMixture, histograms: Sequence[HistogramPdf], D: float = 0.5) -> float:
    """Mean squared log-density difference between g and the collapsed histograms."""
    errs = []
    for h in histograms:
        scale = float(h.lag) ** D
        keep = h.density > 0
        model = mixture_pdf(mix, 1.0, h.centers[keep] / scale)
        errs.append(np.log(h.density[keep] * scale) - np.log(model))
    return float(np.mean(np.square(np.concatenate(errs))))


def fit_scaling_function(
    samples: Sequence[ReturnSample],
    n_components: int = 16,
    histograms: Sequence[HistogramPdf] | None = None,
    max_iter: int = 1000,
    tol: float = 1e-7,
) -> MixtureFit:
    """Zero-mean Gaussian scale mixture fitted by EM to the collapsed returns.

    Returns at lag T are rescaled by T^{1/2} and pooled.  Initial sigmas are
    spaced on quantiles of |x|, weights start uniform.  Iteration stops when
    the mean log-likelihood per return changes by less than `tol`.
    Components whose weight underflows are dropped and the remaining weights
    renormalised.
    """
    if n_components < 1:
        raise DomainError("need at least one component")
    x = _pooled(samples)
    if x.size < n_components:
        raise DomainError("fewer returns than components")
    x2 = x * x
    # |N(0, s^2)| has median 0.6745 s
    levels = (np.arange(n_components) + 0.5) / n_components
    sig2 = np.square(np.quantile(np.abs(x), levels) / 0.6744897501960817)
    floor = 1e-12 * max(float(np.mean(x2)), 1e-300)
    sig2 = np.maximum(sig2, floor)
    logw = np.full(n_components, -math.log(n_components))

    prev = -np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lp = (logw - 0.5 * np.log(2.0 * math.pi * sig2)) - x2[:, None] * (0.5 / sig2)
        top = lp.max(axis=1, keepdims=True)
        resp = np.exp(lp - top)
        total = resp.sum(axis=1)
        ll = float(np.mean(np.log(total) + top[:, 0]))
        resp /= total[:, None]
        nk = resp.sum(axis=0)
        alive = nk > 1e-12 * x.size
        resp, nk, sig2 = resp[:, alive], nk[alive], sig2[alive]
        sig2 = np.maximum(x2 @ resp / nk, floor)
        logw = np.log(nk / nk.sum())
        if abs(ll - prev) <= tol:
            converged = True
            break
        prev = ll
    w = np.exp(logw)
    order = np.argsort(sig2)
    mix = VolatilityMixture.from_arrays(w[order], np.sqrt(sig2[order]), normalize=True)
    if not converged:
        log.warning("EM stopped after %d iterations without converging", it)
    if histograms is None:
        histograms = [empirics.empirical_pdf(s) for s in samples]
    misfit = log_density_misfit(mix, histograms)
    final_ll = float(logsumexp(normal_logpdf(x[:, None], mix.sigma**2) + np.log(mix.w), axis=1).sum())
    return MixtureFit(mix, converged, it, final_ll, misfit)


def ensemble_mixture(
    empirical: VolatilityMixture,
    D_e: float,
    restart_mean: float = 500.0,
    policy: RestartPolicy | str = RestartPolicy.FROM_BEGINNING,
) -> VolatilityMixture:
    """Rescale the sliding-interval g to the ensemble g_e.

    A sliding window samples every stage of every epoch, so the empirical
    daily variance is the ensemble variance times the long-run mean of
    a_i^{2 D_e}.  The second moments are matched; the shape is kept.
    """
    return empirical.scaled(1.0 / math.sqrt(mean_stage_variance(D_e, restart_mean, policy)))


@dataclass
class HistoryStats:
    beta: float
    excluded: list[int]
    D_q: list[float]
    D_hat: float


def history_stats(
    returns,
    tau_range=(2, 100),
    lags: Sequence[int] = DEFAULT_LAGS,
    orders: Sequence[float] = DEFAULT_ORDERS,
    with_collapse: bool = False,
) -> HistoryStats:
    """beta, D(q) and optionally the collapse exponent of one return series."""
    returns = np.asarray(returns, dtype=float)
    curve = empirics.volatility_autocorr(returns, int(tau_range[1]))
    try:
        fit = empirics.fit_power_law(curve, tau_range, exclude_nonpositive=True)
        beta, excluded = fit.beta, fit.excluded
    except empirics.FitError:
        beta, excluded = math.nan, [int(t) for t in curve.lags]
    x = empirics.log_prices_from_returns(returns - returns.mean())
    samples = [empirics.sliding_returns(x, T) for T in lags]
    table = empirics.moment_scaling(samples, orders)
    D_hat = math.nan
    if with_collapse:
        D_hat = empirics.fit_collapse_exponent([empirics.empirical_pdf(s) for s in samples])
    return HistoryStats(beta, excluded, table.exponents.tolist(), D_hat)


def _scan_job(args) -> HistoryStats:
    cfg, length, tau_range, lags, orders = args
    h = simulate_history(cfg, length)
    return history_stats(h.returns, tau_range, lags, orders)


@dataclass
class ScanPoint:
    D_e: float
    beta_mean: float
    beta_sd: float
    n_valid: int
    D_q_mean: list[float]
    multiscaling_loss: float | None = None


@dataclass
class ScanResult:
    points: list[ScanPoint]
    target_beta: float
    best_D_e: float
    multiscaling_D_e: float | None
    seeds: list[int]

    def table(self) -> list[dict]:
        return [asdict(p) for p in self.points]


def scan_inhomogeneity(
    mixture: VolatilityMixture,
    target_beta: float,
    grid: Sequence[float],
    length: int,
    seeds: Sequence[int],
    *,
    restart_mean: float = 500.0,
    window: int = 100,
    policy: RestartPolicy | str = RestartPolicy.FROM_BEGINNING,
    tau_range=(2, 100),
    lags: Sequence[int] = DEFAULT_LAGS,
    orders: Sequence[float] = DEFAULT_ORDERS,
    target_D_q: Sequence[float] | None = None,
    workers: int = 1,
) -> ScanResult:
    """Grid search for D_e matching the volatility-autocorrelation exponent.

    Every grid point is simulated with the same seeds so the Monte Carlo
    noise is shared across the grid.  When `target_D_q` is given the grid
    point minimising sum_q |D(q) - D_target(q)| is reported as well.
    """
    grid = [float(g) for g in grid]
    if not grid or any(not (0.0 < g <= 0.5) for g in grid):
        raise DomainError("D_e grid must lie within (0, 1/2]")
    if math.isfinite(restart_mean) and length < 20 * restart_mean:
        raise DomainError(f"simulation length {length} shorter than 20 restart means")
    jobs = [
        (ProcessConfig(mixture, D, window, restart_mean, policy, int(seed)), length, tau_range, lags, orders)
        for D in grid
        for seed in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(_scan_job, jobs))
    else:
        stats = [_scan_job(j) for j in jobs]

    points = []
    n = len(seeds)
    for g, D in enumerate(grid):
        chunk = stats[g * n:(g + 1) * n]
        betas = np.array([s.beta for s in chunk])
        valid = np.isfinite(betas)
        dq = np.mean([s.D_q for s in chunk], axis=0).tolist()
        loss = None
        if target_D_q is not None:
            loss = float(np.sum(np.abs(np.asarray(dq) - np.asarray(target_D_q))))
        points.append(
            ScanPoint(
                D,
                float(betas[valid].mean()) if valid.any() else math.nan,
                float(betas[valid].std(ddof=1)) if valid.sum() > 1 else math.nan,
                int(valid.sum()),
                dq,
                loss,
            )
        )
    usable = [p for p in points if p.n_valid > 0]
    if not usable:
        raise ScanError("no grid point produced positive c(tau) on the fit range")
    best = min(usable, key=lambda p: abs(p.beta_mean - target_beta))
    ms = None
    if target_D_q is not None:
        ms = min(points, key=lambda p: p.multiscaling_loss).D_e
    return ScanResult(points, float(target_beta), best.D_e, ms, [int(s) for s in seeds])


@dataclass
class CalibrationReport:
    empirical_mixture: VolatilityMixture
    ensemble_mixture: VolatilityMixture
    mixture_converged: bool
    mixture_misfit: float
    D_hat: float
    D_e: float
    multiscaling_D_e: float | None
    target_beta: float
    achieved_beta: float
    D_q_empirical: list[float]
    D_q_model: list[float]
    orders: list[float]
    lags: list[int]
    tau_range: tuple[int, int]
    restart_mean: float
    scan: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["empirical_mixture"] = self.empirical_mixture.to_dict()
        out["ensemble_mixture"] = self.ensemble_mixture.to_dict()
        out["tau_range"] = list(self.tau_range)
        return out


def calibrate(
    returns,
    *,
    n_components: int = 16,
    grid: Sequence[float] | None = None,
    seeds: Sequence[int] = (101, 102, 103, 104),
    restart_mean: float = 500.0,
    window: int = 100,
    policy: RestartPolicy | str = RestartPolicy.FROM_BEGINNING,
    tau_range=(2, 100),
    lags: Sequence[int] = DEFAULT_LAGS,
    orders: Sequence[float] = DEFAULT_ORDERS,
    sim_length: int | None = None,
    workers: int = 1,
) -> CalibrationReport:
    """Full calibration of one detrended lag-1 return series.

    The mixture is fitted to the collapsed histograms, the target beta and
    D(q) are measured on the data, D_e is scanned by simulation, and the
    fitted g is mapped to g_e for the selected D_e.
    """
    returns = np.asarray(returns, dtype=float)
    if grid is None:
        grid = np.round(np.arange(0.02, 0.5001, 0.02), 10)
    x = empirics.log_prices_from_returns(returns - returns.mean())
    samples = [empirics.sliding_returns(x, T) for T in lags]
    histograms = [empirics.empirical_pdf(s) for s in samples]
    D_hat = empirics.fit_collapse_exponent(histograms)
    fit = fit_scaling_function(samples, n_components, histograms)
    data = history_stats(returns, tau_range, lags, orders)
    if not math.isfinite(data.beta):
        raise ScanError("c(tau) of the input series is not positive anywhere on the fit range")
    scan = scan_inhomogeneity(
        fit.mixture,
        data.beta,
        grid,
        sim_length or len(returns),
        seeds,
        restart_mean=restart_mean,
        window=window,
        policy=policy,
        tau_range=tau_range,
        lags=lags,
        orders=orders,
        target_D_q=data.D_q,
        workers=workers,
    )
    best = next(p for p in scan.points if p.D_e == scan.best_D_e)
    return CalibrationReport(
        empirical_mixture=fit.mixture,
        ensemble_mixture=ensemble_mixture(fit.mixture, scan.best_D_e, restart_mean, policy),
        mixture_converged=fit.converged,
        mixture_misfit=fit.misfit,
        D_hat=D_hat,
        D_e=scan.best_D_e,
        multiscaling_D_e=scan.multiscaling_D_e,
        target_beta=data.beta,
        achieved_beta=best.beta_mean,
        D_q_empirical=list(data.D_q),
        D_q_model=list(best.D_q_mean),
        orders=[float(q) for q in orders],
        lags=[int(T) for T in lags],
        tau_range=(int(tau_range[0]), int(tau_range[1])),
        restart_mean=float(restart_mean),
        scan=scan.table(),
    )
