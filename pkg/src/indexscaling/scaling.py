"""Scaling-function algebra for the inhomogeneous index model.

The scaling function g is represented as a finite Gaussian scale mixture

    g(x) = sum_j w_j N(x; 0, sigma_j^2),   g~(k) = sum_j w_j exp(-sigma_j^2 k^2 / 2)

so that the spherical multi-argument construction

    g~(k_1) (x) g~(k_2) (x) ... = g~(sqrt(k_1^2 + k_2^2 + ...))

is automatically a valid joint characteristic function: it is the CF of a
Gaussian vector whose common variance is drawn once from the mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import invgamma

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class OracleAccuracyError(RuntimeError):
    """CF inversion could not reach the requested accuracy on the given grid."""

    def __init__(self, message: str, bound: float):
        super().__init__(message)
        self.bound = bound


class NegativeDensityError(RuntimeError):
    """Inverted CF produced a density with significant negative values."""

    def __init__(self, message: str, min_value: float):
        super().__init__(message)
        self.min_value = min_value


@dataclass(frozen=True)
class VolatilityMixture:
    """Discrete Gaussian scale mixture: weights w_j and volatilities sigma_j."""

    weights: tuple[float, ...]
    sigmas: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.sigmas, dtype=float)
        if w.ndim != 1 or w.size == 0 or w.shape != s.shape:
            raise DomainError("mixture needs matching, non-empty weight and sigma lists")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise DomainError(f"sigmas must be positive and finite, got {s.tolist()}")
        if np.any(w <= 0) or np.any(w > 1):
            raise DomainError(f"weights must lie in (0, 1], got {w.tolist()}")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "sigmas", tuple(float(x) for x in s))

    @classmethod
    def from_arrays(cls, weights, sigmas, normalize: bool = False) -> "VolatilityMixture":
        w = np.asarray(weights, dtype=float)
        if normalize:
            w = w / w.sum()
        return cls(tuple(w), tuple(np.asarray(sigmas, dtype=float)))

    @classmethod
    def gaussian(cls, sigma: float) -> "VolatilityMixture":
        return cls((1.0,), (float(sigma),))

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def sigma(self) -> np.ndarray:
        return np.asarray(self.sigmas)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def variance(self) -> float:
        return float(np.dot(self.w, self.sigma**2))

    def moment(self, q: float) -> float:
        """Absolute moment E|x|^q of g."""
        gauss = 2.0 ** (q / 2.0) * math.gamma((q + 1.0) / 2.0) / math.sqrt(math.pi)
        return float(np.dot(self.w, self.sigma**q) * gauss)

    def scaled(self, factor: float) -> "VolatilityMixture":
        if not factor > 0:
            raise DomainError("scale factor must be positive")
        return VolatilityMixture(self.weights, tuple(factor * self.sigma))

    def to_dict(self) -> dict:
        return {"weights": list(self.weights), "sigmas": list(self.sigmas)}

    @classmethod
    def from_dict(cls, data: dict) -> "VolatilityMixture":
        try:
            return cls.from_arrays(data["weights"], data["sigmas"])
        except KeyError as exc:
            raise DomainError(f"mixture definition lacks field {exc.args[0]!r}") from None


def student_t_mixture(nu: float = 3.0, scale: float = 1.0, n_components: int = 16) -> VolatilityMixture:
    """Fat-tailed preset: Student-t with `nu` degrees of freedom as a scale mixture.

    The variance of a Student-t is inverse-gamma distributed,
    sigma^2 ~ InvGamma(nu/2, nu*scale^2/2).  It is discretised at the
    quantile midpoints (j + 1/2)/K with equal weights.
    """
    if nu <= 0 or scale <= 0 or n_components < 1:
        raise DomainError("need nu > 0, scale > 0 and at least one component")
    u = (np.arange(n_components) + 0.5) / n_components
    var = invgamma.ppf(u, a=nu / 2.0, scale=nu * scale**2 / 2.0)
    return VolatilityMixture.from_arrays(np.full(n_components, 1.0 / n_components), np.sqrt(var))


def normal_logpdf(x, var):
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * np.square(x) / var


def mixture_pdf(mix: VolatilityMixture, scale: float, x):
    """Density (1/scale) g(x/scale)."""
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale!r}")
    x = np.asarray(x, dtype=float)
    var = (scale * mix.sigma) ** 2
    logp = normal_logpdf(x[..., None], var) + np.log(mix.w)
    return np.exp(logsumexp(logp, axis=-1))


def mixture_cf(mix: VolatilityMixture, k):
    k = np.asarray(k, dtype=float)
    return np.exp(-0.5 * np.square(k)[..., None] * mix.sigma**2) @ mix.w


def otimes_joint_cf(mix: VolatilityMixture, scales: Sequence[float], k):
    """Joint CF g~(s_1 k_1) (x) ... (x) g~(s_n k_n) = g~(sqrt(sum s_i^2 k_i^2)).

    `k` may carry leading batch dimensions; its last axis must match `scales`.
    """
    s = np.asarray(scales, dtype=float)
    k = np.asarray(k, dtype=float)
    if s.ndim != 1 or np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise DomainError("scales must be a vector of positive finite numbers")
    if k.shape[-1:] != s.shape:
        raise ValueError(f"wavenumber dimension {k.shape[-1:]} does not match {s.shape[0]} scales")
    radius2 = np.sum(np.square(s * k), axis=-1)
    return np.exp(-0.5 * radius2[..., None] * mix.sigma**2) @ mix.w


@dataclass(frozen=True)
class InhomogeneitySchedule:
    """Coefficients a_i = [i^{2D} - (i-1)^{2D}]^{1/(2D)}, i = 1..n."""

    D_e: float
    coefficients: np.ndarray

    @property
    def n(self) -> int:
        return len(self.coefficients)

    def variance_factors(self) -> np.ndarray:
        """a_i^{2 D_e}: the per-day variance multipliers."""
        return self.coefficients ** (2.0 * self.D_e)

    def scales(self) -> np.ndarray:
        """a_i^{D_e}: the per-day standard-deviation multipliers."""
        return self.coefficients**self.D_e


def _check_exponent(D_e: float) -> None:
    if not (0.0 < D_e <= 1.0):
        raise DomainError(f"D_e must lie in (0, 1], got {D_e!r}")


def stage_variance_factor(D_e: float, stage):
    """a_i^{2 D_e} = i^{2D_e} - (i-1)^{2D_e}, free of cancellation for large i."""
    i = np.asarray(stage, dtype=float)
    alpha = 2.0 * D_e
    # i^a (1 - (1 - 1/i)^a), written with expm1/log1p
    with np.errstate(divide="ignore"):
        tail = -np.expm1(alpha * np.log1p(-1.0 / i))
    return np.where(i == 1.0, 1.0, i**alpha * tail)


def inhom_coefficients(D_e: float, n: int) -> InhomogeneitySchedule:
    _check_exponent(D_e)
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n!r}")
    factors = stage_variance_factor(D_e, np.arange(1, n + 1))
    a = factors ** (1.0 / (2.0 * D_e))
    a[0] = 1.0
    if D_e == 0.5:
        a[:] = 1.0
    return InhomogeneitySchedule(D_e, a)


def interval_width(D_e: float, t: float, T: float):
    """sqrt((t+T)^{2D_e} - t^{2D_e}), the width of the return over [t, t+T]."""
    _check_exponent(D_e)
    t = np.asarray(t, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(t < 0) or np.any(T <= 0):
        raise DomainError("need t >= 0 and T > 0")
    alpha = 2.0 * D_e
    with np.errstate(divide="ignore", invalid="ignore"):
        # (t+T)^a - t^a = (t+T)^a (1 - (t/(t+T))^a)
        ratio = t / (t + T)
        diff = (t + T) ** alpha * -np.expm1(alpha * np.log(ratio))
    diff = np.where(t == 0, T**alpha, diff)
    out = np.sqrt(diff)
    return float(out) if out.ndim == 0 else out


def inhom_pdf(mix: VolatilityMixture, D_e: float, t: float, T: float, r):
    return mixture_pdf(mix, interval_width(D_e, t, T), r)


@dataclass
class CFInversion:
    """Result of a brute-force CF inversion on a lattice."""

    points: tuple[np.ndarray, ...]
    density: np.ndarray
    error_bound: float
    min_value: float
    max_imag: float
    cutoff: float
    n_nodes: int

    @property
    def mass(self) -> float:
        """Trapezoidal integral of the table over its own lattice."""
        val = self.density
        for axis_pts in reversed(self.points):
            val = np.trapezoid(val, axis_pts, axis=-1)
        return float(val)


def _find_cutoff(cf_abs_along: Callable[[float], float], tol: float, k_start: float = 1e-3) -> float:
    k = k_start
    for _ in range(200):
        if cf_abs_along(k) < tol:
            return k
        k *= 1.25
    raise OracleAccuracyError("characteristic function does not decay below tolerance", math.inf)


def _inversion_table(cf, pts, h, cutoff, dims):
    m = int(math.ceil(cutoff / h))
    k = np.arange(-m, m + 1) * h
    wts = np.full(k.size, h)
    wts[[0, -1]] *= 0.5
    if dims == 1:
        values = np.asarray(cf(k[:, None]), dtype=complex)
        kernel = np.exp(-1j * np.outer(pts[0], k)) * wts
        table = kernel @ values / (2.0 * math.pi)
    else:
        k1, k2 = np.meshgrid(k, k, indexing="ij")
        values = np.asarray(cf(np.stack([k1, k2], axis=-1)), dtype=complex)
        e1 = np.exp(-1j * np.outer(pts[0], k)) * wts
        e2 = np.exp(-1j * np.outer(pts[1], k)) * wts
        table = e1 @ values @ e2.T / (2.0 * math.pi) ** 2
    return table, k.size


def invert_cf_oracle(
    cf: Callable[[np.ndarray], np.ndarray],
    points,
    dims: int = 1,
    *,
    tol: float = 1e-8,
    cf_floor: float = 1e-12,
    period: float | None = None,
    check_positive: bool = True,
) -> CFInversion:
    """Invert a joint CF by trapezoidal quadrature on a symmetric k-lattice.

    Parameters
    ----------
    cf : callable
        Maps an array of wavenumbers of shape (..., dims) to CF values.
    points : array or pair of arrays
        Evaluation abscissae; for ``dims=2`` a pair (x1, x2) spanning a
        tensor lattice.
    dims : int
        1 or 2.
    tol : float
        Required accuracy.  The achieved bound is estimated by repeating the
        quadrature at half the step; if it exceeds `tol` an
        OracleAccuracyError is raised.
    period : float, optional
        Aliasing period 2*pi/h of the lattice.  Defaults to four times the
        largest |x| requested, which pushes the first alias well into the tail.
    check_positive : bool
        Raise NegativeDensityError when the table dips below -(tol + achieved
        error bound).

    The k cutoff is chosen automatically where |CF| falls below `cf_floor`
    along every axis and the diagonal.
    """
    if dims not in (1, 2):
        raise DomainError("dims must be 1 or 2")
    if dims == 1:
        pts = (np.atleast_1d(np.asarray(points, dtype=float)),)
    else:
        pts = tuple(np.atleast_1d(np.asarray(p, dtype=float)) for p in points)
        if len(pts) != 2:
            raise DomainError("2-dim inversion needs a pair of abscissa arrays")

    directions = [np.eye(dims)[i] for i in range(dims)]
    if dims == 2:
        directions.append(np.array([1.0, 1.0]) / math.sqrt(2.0))
    cutoff = max(
        _find_cutoff(lambda kk, d=d: float(abs(np.asarray(cf((kk * d)[None, :]))[0])), cf_floor)
        for d in directions
    )

    x_extent = max(float(np.max(np.abs(p))) for p in pts)
    if period is None:
        period = 4.0 * max(x_extent, 1e-300)
    h = 2.0 * math.pi / period

    coarse, _ = _inversion_table(cf, pts, h, cutoff, dims)
    fine, n_nodes = _inversion_table(cf, pts, h / 2.0, cutoff, dims)
    bound = float(np.max(np.abs(fine - coarse)))
    density = fine.real
    result = CFInversion(
        points=pts,
        density=density,
        error_bound=bound,
        min_value=float(density.min()),
        max_imag=float(np.max(np.abs(fine.imag))),
        cutoff=cutoff,
        n_nodes=n_nodes,
    )
    # negativity beyond the quadrature error is conclusive even on a coarse lattice
    if check_positive and result.min_value < -(tol + bound):
        raise NegativeDensityError(
            f"inverted CF is not a density: minimum {result.min_value:.3g} (error bound {bound:.3g})",
            result.min_value,
        )
    if bound > tol:
        raise OracleAccuracyError(
            f"CF inversion reached only {bound:.3g} (requested {tol:.3g}); widen the period or refine", bound
        )
    return result
