"""Non-stationary scaling process: closed-form laws and autoregressive sampler.

Within an epoch the joint law of daily returns at stages i_1 < i_2 < ... is

    sum_j w_j prod_m N(r_m; 0, sigma_j^2 a_{i_m}^{2 D_e}),

the inverse transform of g~_e(a_1^{D_e} k_1) (x) g~_e(a_2^{D_e} k_2) (x) ...
Conditioning therefore only reweights the mixture components, and the
autoregressive step is exact: draw a component from the posterior over the
conditioning window, then a normal return at the current stage's scale.
"""

from __future__ import annotations

import csv
import enum
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .scaling import DomainError, VolatilityMixture, normal_logpdf, stage_variance_factor


class RestartPolicy(str, enum.Enum):
    FROM_BEGINNING = "from_beginning"
    RANDOM_STAGE = "random_stage"


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named generator derived from a 64-bit seed.

    Streams with different names never overlap; the same (seed, name) pair
    always yields the same sequence.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))


@dataclass(frozen=True)
class ProcessConfig:
    mixture: VolatilityMixture
    D_e: float
    window: int = 100
    restart_mean: float = 500.0
    restart_policy: RestartPolicy = RestartPolicy.FROM_BEGINNING
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.D_e <= 1.0):
            raise DomainError(f"D_e must lie in (0, 1], got {self.D_e!r}")
        if self.window < 2:
            raise DomainError(f"window must be at least 2, got {self.window!r}")
        if not self.restart_mean >= 1:
            raise DomainError(f"restart_mean must be at least 1, got {self.restart_mean!r}")
        policy = RestartPolicy(self.restart_policy)
        object.__setattr__(self, "restart_policy", policy)
        if policy is RestartPolicy.RANDOM_STAGE and not (2 <= self.restart_mean < math.inf):
            raise DomainError("random-stage restarts need a finite restart_mean >= 2")

    @property
    def restarts(self) -> bool:
        return math.isfinite(self.restart_mean)

    def stage_variance(self, stage) -> np.ndarray:
        return stage_variance_factor(self.D_e, stage)


def _component_loglik(cfg: ProcessConfig, stages, returns) -> np.ndarray:
    """log N(r_m; 0, sigma_j^2 a_{i_m}^{2D}) summed over observations, per component."""
    stages = np.asarray(stages, dtype=float)
    returns = np.asarray(returns, dtype=float)
    var = cfg.stage_variance(stages)[..., None] * cfg.mixture.sigma**2
    return normal_logpdf(returns[..., None], var).sum(axis=-2)


def _check_stages(stages) -> np.ndarray:
    s = np.asarray(stages, dtype=int)
    if s.ndim != 1 or np.any(s < 1):
        raise ValueError("stages must be a list of positive integers")
    if np.any(np.diff(s) <= 0):
        raise ValueError(f"stages must be strictly increasing, got {s.tolist()}")
    return s


def joint_pdf(cfg: ProcessConfig, stages: Sequence[int], r):
    """Joint density of returns at the given epoch stages.

    `r` has shape (..., len(stages)); leading axes are evaluated in batch.
    """
    s = _check_stages(stages)
    r = np.asarray(r, dtype=float)
    if r.shape[-1] != s.size:
        raise ValueError(f"return vector has {r.shape[-1]} entries for {s.size} stages")
    loglik = _component_loglik(cfg, s, r)
    return np.exp(logsumexp(loglik + np.log(cfg.mixture.w), axis=-1))


def posterior_weights(cfg: ProcessConfig, observed: Iterable[tuple[int, float]]) -> np.ndarray:
    obs = list(observed)
    logw = np.log(cfg.mixture.w)
    if obs:
        stages, returns = zip(*obs)
        logw = logw + _component_loglik(cfg, stages, returns)
    return np.exp(logw - logsumexp(logw))


@dataclass
class EpochState:
    """Autoregressive state at the start of a day.

    `stage` is the epoch-relative index of the day about to be drawn;
    `history` holds the conditioning window as (stage, return) pairs.
    """

    stage: int
    history: list[tuple[int, float]]
    posterior: np.ndarray

    @classmethod
    def from_history(cls, cfg: ProcessConfig, stage: int, history: Sequence[tuple[int, float]]) -> "EpochState":
        window = list(history)[-(cfg.window - 1):] if history else []
        if any(s >= stage for s, _ in window):
            raise ValueError("history stages must precede the current stage")
        return cls(stage, window, posterior_weights(cfg, window))

    def __post_init__(self):
        if len(self.history) >= max(self.stage, 1) or self.stage < 1:
            raise ValueError("history longer than the epoch allows")


def conditional_next_pdf(cfg: ProcessConfig, state: EpochState, r):
    r = np.asarray(r, dtype=float)
    var = cfg.stage_variance(state.stage) * cfg.mixture.sigma**2
    return np.exp(logsumexp(normal_logpdf(r[..., None], var) + np.log(state.posterior), axis=-1))


def conditional_next_variance(cfg: ProcessConfig, state: EpochState) -> float:
    return float(cfg.stage_variance(state.stage) * np.dot(state.posterior, cfg.mixture.sigma**2))


def conditional_given_abs(mix: VolatilityMixture, T: float, r1_abs: float, r2):
    """Stationary density of r_2 over [T, 2T] given |r_1| over [0, T]."""
    if not T > 0 or r1_abs < 0:
        raise DomainError("need T > 0 and r1_abs >= 0")
    var = mix.sigma**2 * T
    logw = np.log(mix.w) + normal_logpdf(r1_abs, var)
    post = np.exp(logw - logsumexp(logw))
    r2 = np.asarray(r2, dtype=float)
    return np.exp(logsumexp(normal_logpdf(r2[..., None], var) + np.log(post), axis=-1))


@dataclass(frozen=True)
class Restart:
    day: int
    stage: int


def restart_schedule(
    rng: np.random.Generator,
    length: int,
    t_c: float,
    policy: RestartPolicy | str = RestartPolicy.FROM_BEGINNING,
) -> list[Restart]:
    """Epoch starts over `length` days; the first epoch starts at day 0, stage 1.

    Gaps between restarts are geometric on {1, 2, ...} with mean `t_c`.
    """
    policy = RestartPolicy(policy)
    if not t_c >= 1:
        raise DomainError(f"t_c must be at least 1, got {t_c!r}")
    schedule = [Restart(0, 1)]
    if not math.isfinite(t_c):
        return schedule
    if policy is RestartPolicy.RANDOM_STAGE and t_c < 2:
        raise DomainError("random-stage restarts need t_c >= 2")
    p = 1.0 / t_c
    hi = int(math.floor(t_c))
    day = 0
    while True:
        day += int(rng.geometric(p))
        if day >= length:
            return schedule
        if policy is RestartPolicy.FROM_BEGINNING:
            stage = 1
        else:
            stage = int(rng.integers(2, hi + 1))
        schedule.append(Restart(day, stage))


def stationary_stage_distribution(t_c: float, policy: RestartPolicy | str, tail: float = 1e-15) -> np.ndarray:
    """P(stage = i), i = 1, 2, ..., for a day far from the start of the history."""
    policy = RestartPolicy(policy)
    if not math.isfinite(t_c):
        raise DomainError("without restarts the stage grows without bound")
    p = 1.0 / t_c
    q = 1.0 - p
    n_age = 1 if q == 0 else int(math.ceil(math.log(tail) / math.log(q))) + 1
    age = p * q ** np.arange(n_age)
    if policy is RestartPolicy.FROM_BEGINNING:
        return age
    hi = int(math.floor(t_c))
    start = np.zeros(hi)
    start[1:] = 1.0 / (hi - 1)  # index s-1 for start stage s in {2..hi}
    return np.convolve(start, age)


def mean_stage_variance(D_e: float, t_c: float, policy: RestartPolicy | str) -> float:
    """Long-run average of a_i^{2 D_e} along a history with restarts."""
    pi = stationary_stage_distribution(t_c, policy)
    return float(np.dot(pi, stage_variance_factor(D_e, np.arange(1, pi.size + 1))))


@dataclass
class SimulatedHistory:
    returns: np.ndarray
    stages: np.ndarray
    epoch_ids: np.ndarray
    epoch_boundaries: list[Restart]
    seed: int

    def __len__(self) -> int:
        return len(self.returns)

    def prices(self, start: float = 1.0) -> np.ndarray:
        return start * np.exp(np.concatenate([[0.0], np.cumsum(self.returns)]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["day", "return", "epoch_id", "stage"])
            for day, (r, e, s) in enumerate(zip(self.returns, self.epoch_ids, self.stages)):
                writer.writerow([day, repr(float(r)), int(e), int(s)])


def read_history_csv(path) -> SimulatedHistory:
    days, rets, epochs, stages = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            days.append(int(row["day"]))
            rets.append(float(row["return"]))
            epochs.append(int(row["epoch_id"]))
            stages.append(int(row["stage"]))
    epochs_arr = np.asarray(epochs, dtype=np.int64)
    stages_arr = np.asarray(stages, dtype=np.int64)
    starts = np.flatnonzero(np.diff(epochs_arr, prepend=-1) != 0)
    bounds = [Restart(int(days[i]), int(stages_arr[i])) for i in starts]
    return SimulatedHistory(np.asarray(rets), stages_arr, epochs_arr, bounds, seed=-1)


def simulate_history(cfg: ProcessConfig, length: int) -> SimulatedHistory:
    """One autoregressive history of `length` daily returns.

    Each day the mixture posterior is formed from the returns of the last
    `window - 1` days of the current epoch, a component is drawn from it and
    the return is drawn as a normal at scale sigma_j a_i^{D_e}.  The
    posterior is maintained incrementally: the newest log-likelihood term is
    added and the one leaving the window subtracted.
    """
    if length < 1:
        raise DomainError(f"length must be at least 1, got {length!r}")
    schedule = restart_schedule(rng_stream(cfg.seed, "restarts"), length, cfg.restart_mean, cfg.restart_policy)
    draws = rng_stream(cfg.seed, "returns")
    uniforms = draws.random(length)
    normals = draws.standard_normal(length)

    mix = cfg.mixture
    K = mix.n_components
    log_prior = np.log(mix.w)
    log_var = 2.0 * np.log(mix.sigma)
    inv_var = 1.0 / mix.sigma**2
    sigma = mix.sigma
    cap = cfg.window - 1
    two_de = 2.0 * cfg.D_e

    returns = np.empty(length)
    stages = np.empty(length, dtype=np.int64)
    epoch_ids = np.empty(length, dtype=np.int64)

    terms = np.zeros((cap, K))
    acc = np.zeros(K)
    count = 0
    head = 0
    next_restart = 1
    epoch = -1
    stage = 0
    for t in range(length):
        if next_restart - 1 < len(schedule) and schedule[next_restart - 1].day == t:
            stage = schedule[next_restart - 1].stage
            epoch += 1
            next_restart += 1
            acc[:] = 0.0
            count = 0
            head = 0
        # conditioning never reaches back past the epoch start
        assert count <= t - schedule[epoch].day

        c = 1.0 if stage == 1 else stage**two_de * -math.expm1(two_de * math.log1p(-1.0 / stage))
        lp = log_prior + acc
        lp = np.exp(lp - lp.max())
        cdf = np.cumsum(lp)
        j = min(int(np.searchsorted(cdf, uniforms[t] * cdf[-1], side="right")), K - 1)
        r = normals[t] * sigma[j] * math.sqrt(c)

        returns[t] = r
        stages[t] = stage
        epoch_ids[t] = epoch

        term = -0.5 * (log_var + math.log(c)) - 0.5 * (r * r / c) * inv_var
        if count < cap:
            terms[(head + count) % cap] = term
            acc += term
            count += 1
        else:
            acc -= terms[head]
            terms[head] = term
            acc += term
            head = (head + 1) % cap
            if head == 0:
                acc = terms.sum(axis=0)  # resync once per window turnover
        stage += 1
    return SimulatedHistory(returns, stages, epoch_ids, schedule, cfg.seed)


def sample_epoch_paths(cfg: ProcessConfig, days: int, count: int, seed: int | None = None) -> np.ndarray:
    """`count` independent single-epoch paths of `days` returns (stages 1..days).

    Uses the same window-conditioned autoregressive step as
    `simulate_history`, vectorised across paths.  Returns shape (count, days).
    """
    rng = rng_stream(cfg.seed if seed is None else seed, "epoch-paths")
    mix = cfg.mixture
    log_prior = np.log(mix.w)
    out = np.empty((count, days))
    for i in range(days):
        stage = i + 1
        lo = max(0, i - (cfg.window - 1))
        if i > lo:
            lp = log_prior + _component_loglik(cfg, np.arange(lo + 1, i + 1), out[:, lo:i])
        else:
            lp = np.broadcast_to(log_prior, (count, mix.n_components))
        post = np.exp(lp - lp.max(axis=1, keepdims=True))
        cdf = np.cumsum(post, axis=1)
        u = rng.random(count)[:, None] * cdf[:, -1:]
        j = np.minimum((cdf <= u).sum(axis=1), mix.n_components - 1)
        scale = mix.sigma[j] * math.sqrt(float(cfg.stage_variance(stage)))
        out[:, i] = rng.standard_normal(count) * scale
    return out


def sample_joint(cfg: ProcessConfig, stages: Sequence[int], size: int, rng: np.random.Generator) -> np.ndarray:
    """Direct draws from the joint law: one component per draw, then normals."""
    s = _check_stages(stages)
    j = rng.choice(cfg.mixture.n_components, size=size, p=cfg.mixture.w)
    scale = cfg.mixture.sigma[j][:, None] * np.sqrt(cfg.stage_variance(s))[None, :]
    return rng.standard_normal((size, s.size)) * scale
