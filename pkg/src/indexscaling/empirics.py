"""Sliding-interval estimators for price or return series, real or simulated."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .scaling import DomainError, interval_width


class IngestionError(ValueError):
    def __init__(self, message: str, lines: Sequence[int] = ()):
        super().__init__(message)
        self.lines = list(lines)


class EstimationError(ValueError):
    pass


class CollapseError(EstimationError):
    pass


class FitError(EstimationError):
    pass


@dataclass
class PriceSeries:
    dates: list[str]
    closes: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.closes = np.asarray(self.closes, dtype=float)
        if len(self.dates) != len(self.closes):
            raise IngestionError("dates and closes differ in length")
        if np.any(~np.isfinite(self.closes)) or np.any(self.closes <= 0):
            bad = [i + 2 for i in np.flatnonzero(~(self.closes > 0) | ~np.isfinite(self.closes))]
            raise IngestionError(f"non-positive closes on lines {bad}", bad)

    def __len__(self) -> int:
        return len(self.closes)


def _date_key(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def ingest_csv(path, source: str | None = None) -> PriceSeries:
    """Read a "date,close" CSV with header.

    Dates are either numeric day stamps or ISO strings (compared as text).
    Every offending line is collected before the error is raised.
    """
    dates: list[str] = []
    closes: list[float] = []
    bad: list[int] = []
    problems: list[str] = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip().lower() for h in header[:2]] != ["date", "close"]:
                raise IngestionError(f"{path}: expected header 'date,close', got {header!r}", [1])
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) < 2 or not row[1].strip():
                    bad.append(lineno)
                    problems.append(f"line {lineno}: missing close")
                    continue
                try:
                    close = float(row[1])
                except ValueError:
                    bad.append(lineno)
                    problems.append(f"line {lineno}: unparsable close {row[1]!r}")
                    continue
                if not (close > 0 and math.isfinite(close)):
                    bad.append(lineno)
                    problems.append(f"line {lineno}: non-positive close {row[1]!r}")
                    continue
                dates.append(row[0].strip())
                closes.append(close)
                if len(dates) > 1 and not _date_key(dates[-1]) > _date_key(dates[-2]):
                    bad.append(lineno)
                    problems.append(f"line {lineno}: date {dates[-1]!r} does not follow {dates[-2]!r}")
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise IngestionError(f"{path}: cannot read series ({exc})") from exc
    if bad:
        shown = "; ".join(problems[:20])
        if len(problems) > 20:
            shown += f"; ... and {len(problems) - 20} more"
        raise IngestionError(f"{path}: " + shown, bad)
    return PriceSeries(dates, np.asarray(closes), source if source is not None else str(path))


def write_csv(series: PriceSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "close"])
        for d, c in zip(series.dates, series.closes):
            writer.writerow([d, repr(float(c))])


def detrend(series: PriceSeries) -> tuple[np.ndarray, float]:
    """Remove the endpoint log-growth rate rho from ln S.

    Time is counted in rows (trading days).  Returns the detrended log
    prices and rho.
    """
    if len(series) < 2:
        raise DomainError("detrending needs at least two closes")
    logs = np.log(series.closes)
    t = np.arange(len(logs), dtype=float)
    rho = (logs[-1] - logs[0]) / t[-1]
    return logs - rho * t, float(rho)


@dataclass
class ReturnSample:
    lag: int
    returns: np.ndarray
    rho: float = 0.0

    def __len__(self) -> int:
        return len(self.returns)


def sliding_returns(detrended, T: int, rho: float = 0.0) -> ReturnSample:
    x = np.asarray(detrended, dtype=float)
    if not (1 <= T < len(x)):
        raise DomainError(f"lag T={T} outside [1, {len(x) - 1}]")
    return ReturnSample(int(T), x[T:] - x[:-T], rho)


def log_prices_from_returns(returns) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(returns)])


@dataclass
class HistogramPdf:
    edges: np.ndarray
    density: np.ndarray
    lag: int
    count: int
    outside: int = 0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def empirical_pdf(sample: ReturnSample, bins: int = 61, span_sd: float = 6.0, edges=None) -> HistogramPdf:
    """Normalised histogram on bins symmetric about zero.

    By default `bins` equal bins cover +/- `span_sd` sample standard
    deviations.  Values outside the range are counted in `outside` and the
    density is normalised over the in-range values.
    """
    r = np.asarray(sample.returns, dtype=float)
    if r.size < 100:
        raise EstimationError(f"histogram needs at least 100 samples, got {r.size}")
    if edges is None:
        sd = float(r.std())
        half = span_sd * sd
        # rounding leaves a tiny nonzero sd for constant samples
        if sd <= 1e-12 * float(np.max(np.abs(r))) or half == 0.0:
            half = 1.5 * abs(float(r[0])) or 1.0
        edges = np.linspace(-half, half, bins + 1)
    edges = np.asarray(edges, dtype=float)
    counts, _ = np.histogram(r, edges)
    inside = int(counts.sum())
    density = counts / (inside * np.diff(edges))
    return HistogramPdf(edges, density, sample.lag, int(r.size), int(r.size) - inside)


def _log_curve(h: HistogramPdf, D: float):
    scale = float(h.lag) ** D
    keep = h.density > 0
    return h.centers[keep] / scale, np.log(h.density[keep] * scale)


def collapse_metric(histograms: Sequence[HistogramPdf], D: float, n_grid: int = 201) -> float:
    """Mean squared log-density difference between rescaled histograms.

    Each p_T is mapped to x = r / T^D, y = T^D p_T; the log densities are
    interpolated on a common grid spanning the overlap of all occupied
    supports, and the squared differences are averaged over all pairs of
    lags and grid points.
    """
    if len(histograms) < 2:
        return 0.0
    curves = [_log_curve(h, D) for h in histograms]
    lo = max(c[0].min() for c in curves)
    hi = min(c[0].max() for c in curves)
    if not hi > lo:
        raise CollapseError(f"rescaled supports do not overlap at D={D:.4g}")
    grid = np.linspace(lo, hi, n_grid)
    logs = np.array([np.interp(grid, x, y) for x, y in curves])
    m = len(logs)
    # mean over pairs of (L_a - L_b)^2 equals 2 m/(m-1) times the across-lag variance
    return float(np.mean(logs.var(axis=0)) * 2.0 * m / (m - 1))


def fit_collapse_exponent(histograms: Sequence[HistogramPdf], bounds=(0.05, 1.0), step: float = 0.01) -> float:
    """D minimising `collapse_metric`: coarse grid, then bounded refinement."""
    grid = np.arange(bounds[0], bounds[1] + step / 2, step)
    values = []
    for D in grid:
        try:
            values.append(collapse_metric(histograms, D))
        except CollapseError:
            values.append(np.inf)
    values = np.asarray(values)
    if not np.isfinite(values).any():
        raise CollapseError("no exponent in range gives overlapping supports")
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi <= lo:
        return float(grid[i])
    res = minimize_scalar(
        lambda D: collapse_metric(histograms, D), bounds=(lo, hi), method="bounded", options={"xatol": 1e-5}
    )
    return float(res.x) if res.fun <= values[i] else float(grid[i])


@dataclass
class AutocorrCurve:
    lags: np.ndarray
    values: np.ndarray
    beta: float | None = None
    fit_range: tuple[int, int] | None = None


def volatility_autocorr(returns, tau_max: int) -> AutocorrCurve:
    """Autocorrelation of |r| with the finite-sample normalisation

        c(tau) = (S_xy - S_x S_y / t_max) / (S_xx - S_x^2 / t_max),

    sums running over the available pairs (t, t + tau) with x = |r(t)|,
    y = |r(t + tau)|, and t_max = L - tau + 1 for a series of length L.
    """
    a = np.abs(np.asarray(getattr(returns, "returns", returns), dtype=float))
    L = a.size
    if tau_max < 1 or L <= tau_max + 1:
        raise DomainError(f"series of length {L} too short for tau_max={tau_max}")
    lags = np.arange(1, tau_max + 1)
    values = np.empty(tau_max)
    csum = np.concatenate([[0.0], np.cumsum(a)])
    csq = np.concatenate([[0.0], np.cumsum(a * a)])
    for k, tau in enumerate(lags):
        n = L - tau
        t_max = L - tau + 1
        sx = csum[n]
        sy = csum[L] - csum[tau]
        sxy = float(np.dot(a[:n], a[tau:]))
        sxx = csq[n]
        values[k] = (sxy - sx * sy / t_max) / (sxx - sx * sx / t_max)
    return AutocorrCurve(lags, values)


@dataclass
class PowerLawFit:
    beta: float
    amplitude: float
    lags: np.ndarray
    excluded: list[int] = field(default_factory=list)


def fit_power_law(curve: AutocorrCurve, tau_range=(2, 100), exclude_nonpositive: bool = False) -> PowerLawFit:
    """Least-squares slope of log c against log tau; beta > 0 means decay.

    Non-positive c inside the range raise FitError unless
    `exclude_nonpositive` is set, in which case those lags are left out and
    listed in `excluded`.
    """
    lags = np.asarray(curve.lags)
    vals = np.asarray(curve.values, dtype=float)
    sel = (lags >= tau_range[0]) & (lags <= tau_range[1])
    bad = lags[sel & ~(vals > 0)]
    if bad.size and not exclude_nonpositive:
        raise FitError(f"c(tau) <= 0 at lags {bad.tolist()}; shrink the fit range")
    use = sel & (vals > 0)
    if use.sum() < 2:
        raise FitError("fewer than two positive lags in the fit range")
    slope, intercept = np.polyfit(np.log(lags[use]), np.log(vals[use]), 1)
    curve.beta = float(-slope)
    curve.fit_range = (int(tau_range[0]), int(tau_range[1]))
    return PowerLawFit(float(-slope), float(math.exp(intercept)), lags[use], [int(x) for x in bad])


@dataclass
class MomentTable:
    orders: np.ndarray
    lags: np.ndarray
    moments: np.ndarray  # shape (len(orders), len(lags))
    exponents: np.ndarray

    def exponent(self, q: float) -> float:
        return float(self.exponents[list(self.orders).index(q)])


def _as_samples(samples) -> list[ReturnSample]:
    if isinstance(samples, Mapping):
        return [s if isinstance(s, ReturnSample) else ReturnSample(int(T), np.asarray(s)) for T, s in samples.items()]
    return list(samples)


def moment_scaling(samples, orders: Iterable[float] = (1, 2, 3, 4, 5)) -> MomentTable:
    """D(q): slope of log <|r|^q> against log T across the given lags."""
    samples = sorted(_as_samples(samples), key=lambda s: s.lag)
    if len(samples) < 2:
        raise EstimationError("moment scaling needs at least two lags")
    q = np.asarray(list(orders), dtype=float)
    lags = np.array([s.lag for s in samples])
    moments = np.empty((q.size, lags.size))
    for k, s in enumerate(samples):
        r = np.abs(np.asarray(s.returns, dtype=float))
        if r.size == 0:
            raise EstimationError(f"no returns at lag {s.lag}")
        moments[:, k] = [np.mean(r**qq) for qq in q]
    if not np.all(moments > 0):
        raise EstimationError("vanishing moments; series is degenerate")
    logT = np.log(lags)
    exps = np.array([np.polyfit(logT, np.log(m), 1)[0] for m in moments])
    return MomentTable(q, lags, moments, exps)


def effective_dimension_curve(D_e: float, t_values, T_range=(1, 40)) -> np.ndarray:
    """Local scaling exponent of the interval width over integer T in `T_range`.

    Every absolute moment of the inhomogeneous law scales with the width, so
    D_eff(t) is the least-squares slope of log width(t, T) against log T.
    Returns an array of shape (len(t_values), 2) with columns (t, D_eff).
    """
    T = np.arange(T_range[0], T_range[1] + 1, dtype=float)
    if T.size < 2:
        raise DomainError("T range must contain at least two integers")
    logT = np.log(T)
    rows = []
    for t in np.atleast_1d(np.asarray(t_values, dtype=float)):
        w = interval_width(D_e, t, T)
        rows.append((t, np.polyfit(logT, np.log(w), 1)[0]))
    return np.array(rows)
