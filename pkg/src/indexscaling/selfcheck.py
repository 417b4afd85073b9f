"""Oracle and invariant checks runnable from the command line."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .process import (
    EpochState,
    ProcessConfig,
    conditional_next_pdf,
    joint_pdf,
    rng_stream,
    sample_epoch_paths,
)
from .scaling import (
    VolatilityMixture,
    inhom_coefficients,
    invert_cf_oracle,
    mixture_cf,
    otimes_joint_cf,
)


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: measured {self.measured:.3e} (tolerance {self.tolerance:.1e})"


TWO_COMPONENT = VolatilityMixture((0.5, 0.5), (1.0, 2.0))


def check_telescoping(inject_bad_coefficient: bool = False) -> float:
    worst = 0.0
    for D_e in (0.1, 0.24, 0.5, 0.9):
        for n in (1, 2, 10, 100, 10_000):
            sched = inhom_coefficients(D_e, n)
            a = sched.coefficients.copy()
            if inject_bad_coefficient and n > 1:
                a[n // 2] *= 1.01
            total = np.sum(a ** (2 * D_e))
            worst = max(worst, abs(total - n ** (2 * D_e)) / n ** (2 * D_e), abs(a[0] - 1.0))
            if D_e == 0.5:
                worst = max(worst, float(np.max(np.abs(a - 1.0))))
    return worst


def check_joint_oracle() -> float:
    worst = 0.0
    x = np.linspace(-8.0, 8.0, 101)
    for D_e in (0.5, 0.24):
        cfg = ProcessConfig(TWO_COMPONENT, D_e)
        scales = np.sqrt(cfg.stage_variance([1, 2]))
        inv = invert_cf_oracle(lambda k: otimes_joint_cf(TWO_COMPONENT, scales, k), (x, x), dims=2, tol=1e-7)
        grid = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
        worst = max(worst, float(np.max(np.abs(inv.density - joint_pdf(cfg, [1, 2], grid)))))
    return worst


def check_cf_1d() -> float:
    x = np.linspace(-8.0, 8.0, 201)
    inv = invert_cf_oracle(lambda k: mixture_cf(VolatilityMixture.gaussian(1.0), k[..., 0]), x, dims=1)
    exact = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    return float(np.max(np.abs(inv.density - exact)))


def check_marginalization() -> float:
    rng = rng_stream(7, "selfcheck")
    scales = np.array([1.0, 0.6, 0.4, 0.3])
    worst = 0.0
    for _ in range(200):
        k = rng.normal(size=4)
        keep = rng.random(4) < 0.5
        k0 = np.where(keep, k, 0.0)
        full = otimes_joint_cf(TWO_COMPONENT, scales, k0)
        reduced = otimes_joint_cf(TWO_COMPONENT, scales[keep], k[keep]) if keep.any() else 1.0
        worst = max(worst, abs(float(full) - float(reduced)))
    return worst


def check_gaussian_reduction() -> float:
    mix = VolatilityMixture.gaussian(1.3)
    rng = rng_stream(11, "selfcheck")
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 6))
        s = rng.uniform(0.2, 2.0, n)
        k = rng.normal(size=n)
        prod = np.prod([mixture_cf(mix, si * ki) for si, ki in zip(s, k)])
        worst = max(worst, abs(float(otimes_joint_cf(mix, s, k)) - float(prod)))
    return worst


def check_martingale() -> float:
    """Largest analytic conditional mean |E[r | state]| over sampled states."""
    cfg = ProcessConfig(TWO_COMPONENT, 0.24, window=5)
    paths = sample_epoch_paths(cfg, 6, 200, seed=3)
    r = np.linspace(-40.0, 40.0, 8001)
    worst = 0.0
    for row in paths:
        state = EpochState.from_history(cfg, 6, list(zip(range(1, 6), row[:5])))
        dens = conditional_next_pdf(cfg, state, r)
        worst = max(worst, abs(float(np.trapezoid(r * dens, r))))
    return worst


CHECKS = [
    ("coefficient telescoping", 1e-10, check_telescoping),
    ("1-dim CF inversion vs normal density", 1e-8, check_cf_1d),
    ("2-dim CF inversion vs closed-form joint density", 1e-6, check_joint_oracle),
    ("marginalization at the CF level", 1e-14, check_marginalization),
    ("Gaussian reduction of the joint CF", 1e-14, check_gaussian_reduction),
    ("analytic conditional mean", 1e-12, check_martingale),
]


def run_selfcheck(inject_bad_coefficient: bool = False) -> list[Check]:
    results = []
    for name, tol, fn in CHECKS:
        start = time.perf_counter()
        if fn is check_telescoping:
            measured = fn(inject_bad_coefficient)
        else:
            measured = fn()
        results.append(Check(name, measured, tol, bool(measured < tol), time.perf_counter() - start))
    return results


def report(results: list[Check]) -> dict:
    return {"passed": all(c.passed for c in results), "checks": [asdict(c) for c in results]}
