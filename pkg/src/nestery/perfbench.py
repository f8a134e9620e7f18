"""Closed-loop workload simulator for nested-virtualization overhead.

A fixed population of users each loops think / submit / wait against a
FIFO multi-slot server. Service times draw from a log-normal base, scaled
by a per-level overhead factor and by a warm-up multiplier that decays
linearly to 1 over the first part of the run (freshly booted stacks serve
their first requests slowly). Calibration searches the base parameters so
the simulated level-0 run matches a measured reference row; higher levels
then follow from the factors alone.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .model import (
    CalibrationFailed,
    EmptySampleSet,
    InvariantViolation,
    ZeroBaseline,
)

# Overhead factors relative to level 0, measured as ratios of mean request
# duration: 0.096/0.082 and 0.125/0.082.
DEFAULT_FACTOR_L1 = 1.1707
DEFAULT_FACTOR_L2 = 1.5244

DEFAULT_WARMUP_DURATION_S = 35.0
DEFAULT_WARMUP_PEAK = 3.0

# Parallelism of the serving stack at each level. The bare host spreads
# requests across all of its cores; the serving VM (and the VM nested inside
# it, which cannot be sized larger than its parent) gets half the host.
# Requests beyond the slot count queue FIFO.
LEVEL_SERVING_SLOTS = {0: 16, 1: 8, 2: 8}


def default_serving_slots(level: int) -> int:
    return LEVEL_SERVING_SLOTS.get(level, LEVEL_SERVING_SLOTS[2])


@dataclass(frozen=True)
class OverheadModel:
    """Per-level service-time factors plus the warm-up transient shape.

    Factors are interpreted relative to level 0, so factor(2) is the whole
    L2-over-L0 ratio, not an increment on top of factor(1).
    """

    factor_l1: float = DEFAULT_FACTOR_L1
    factor_l2: float = DEFAULT_FACTOR_L2
    warmup_duration_s: float = DEFAULT_WARMUP_DURATION_S
    warmup_peak_multiplier: float = DEFAULT_WARMUP_PEAK

    def __post_init__(self):
        if not 1.0 <= self.factor_l1 <= self.factor_l2:
            raise InvariantViolation("factor_l1", "need 1 <= factor_l1 <= factor_l2")
        if self.warmup_duration_s < 0:
            raise InvariantViolation("warmup_duration_s", "warm-up duration must be >= 0")
        if self.warmup_peak_multiplier < 1.0:
            raise InvariantViolation("warmup_peak_multiplier", "peak must be >= 1")

    def factor(self, level: int) -> float:
        if level == 0:
            return 1.0
        if level == 1:
            return self.factor_l1
        if level == 2:
            return self.factor_l2
        raise InvariantViolation("level", f"no factor for level {level}")

    def warmup_multiplier(self, t: float) -> float:
        if self.warmup_duration_s <= 0:
            return 1.0
        frac = max(0.0, 1.0 - t / self.warmup_duration_s)
        return 1.0 + (self.warmup_peak_multiplier - 1.0) * frac


@dataclass(frozen=True)
class LoadProfile:
    users: int = 64
    period_s: float = 180.0
    # each think draws uniform on [0, 2 * mean]
    think_time_mean_s: float = 1.0
    seed: int = 1


@dataclass(frozen=True)
class ServiceTimeBase:
    """Log-normal base service time; sigma 0 degenerates to exp(mu)."""

    mu: float
    sigma: float


@dataclass(frozen=True)
class RequestSample:
    start_s: float  # submit time
    duration_s: float  # completion minus submit: queue wait plus service


@dataclass(frozen=True)
class StatsSummary:
    avg: float
    p80: float
    p90: float
    count: int = 0


# Rational approximation of the standard normal inverse CDF (Acklam's
# coefficients, relative error < 1.15e-9). Vendored so the draw path is
# pinned: exactly one uniform per sample, same values on every interpreter.
_ICDF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
           1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ICDF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
           6.680131188771972e+01, -1.328068155288572e+01)
_ICDF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
           -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ICDF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
           3.754408661907416e+00)
_ICDF_LOW = 0.02425


def _norm_inv_cdf(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        raise InvariantViolation("p", "inverse cdf needs 0 < p < 1")
    if p < _ICDF_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        a, b, c, d, e, f = _ICDF_C
        num = ((((a * q + b) * q + c) * q + d) * q + e) * q + f
        g, h, i, j = _ICDF_D
        den = (((g * q + h) * q + i) * q + j) * q + 1.0
        return num / den
    if p > 1.0 - _ICDF_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        a, b, c, d, e, f = _ICDF_C
        num = ((((a * q + b) * q + c) * q + d) * q + e) * q + f
        g, h, i, j = _ICDF_D
        den = (((g * q + h) * q + i) * q + j) * q + 1.0
        return -num / den
    q = p - 0.5
    r = q * q
    a, b, c, d, e, f = _ICDF_A
    num = ((((a * r + b) * r + c) * r + d) * r + e) * r + f
    g, h, i, j, k = _ICDF_B
    den = ((((g * r + h) * r + i) * r + j) * r + k) * r + 1.0
    return num * q / den


def service_time(
    level: int,
    t: float,
    base: ServiceTimeBase,
    model: OverheadModel,
    rng: random.Random,
) -> float:
    """One service-time draw for work starting at simulated time t."""
    u = rng.random()
    while u <= 0.0:  # random() can return exactly 0.0
        u = rng.random()
    draw = math.exp(base.mu + base.sigma * _norm_inv_cdf(u))
    return draw * model.factor(level) * model.warmup_multiplier(t)


_SUBMIT = 0
_DONE = 1


def simulate(
    level: int,
    profile: LoadProfile,
    base: ServiceTimeBase,
    model: OverheadModel,
    serving_slots: Optional[int] = None,
) -> list[RequestSample]:
    """Run one closed-loop period and return every request that completed
    within it, in completion order. Identical inputs give identical output:
    the only randomness is the profile's seeded generator."""
    slots = default_serving_slots(level) if serving_slots is None else serving_slots
    if profile.users < 1:
        raise InvariantViolation("users", "need at least one user")
    if profile.period_s <= 0:
        raise InvariantViolation("period_s", "period must be positive")
    if profile.think_time_mean_s < 0:
        raise InvariantViolation("think_time_mean_s", "think time must be >= 0")
    if slots < 1:
        raise InvariantViolation("serving_slots", "need at least one slot")

    rng = random.Random(profile.seed)
    heap: list[tuple[float, int, int, int, float]] = []
    seq = 0

    def push(t: float, kind: int, user: int, submit_t: float = 0.0) -> None:
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, user, submit_t))
        seq += 1

    def think() -> float:
        return rng.uniform(0.0, 2.0 * profile.think_time_mean_s)

    for user in range(profile.users):
        push(think(), _SUBMIT, user)

    busy = 0
    waiting: deque[tuple[int, float]] = deque()
    samples: list[RequestSample] = []

    while heap:
        t, _, kind, user, submit_t = heapq.heappop(heap)
        if kind == _SUBMIT:
            if t >= profile.period_s:
                continue
            if busy < slots:
                busy += 1
                push(t + service_time(level, t, base, model, rng), _DONE, user, t)
            else:
                waiting.append((user, t))
        else:
            if t <= profile.period_s:
                samples.append(RequestSample(start_s=submit_t, duration_s=t - submit_t))
            if t < profile.period_s:
                push(t + think(), _SUBMIT, user)
            if waiting:
                nxt_user, nxt_submit = waiting.popleft()
                push(t + service_time(level, t, base, model, rng), _DONE, nxt_user, nxt_submit)
            else:
                busy -= 1
    return samples


def compute_stats(samples: Sequence[Union[RequestSample, float]]) -> StatsSummary:
    """Mean plus nearest-rank percentiles (rank = ceil(q * n), 1-indexed on
    the sorted durations)."""
    durations = [
        s.duration_s if isinstance(s, RequestSample) else float(s) for s in samples
    ]
    if not durations:
        raise EmptySampleSet("no samples")
    durations.sort()
    n = len(durations)

    def nearest_rank(q: float) -> float:
        return durations[max(1, math.ceil(q * n)) - 1]

    return StatsSummary(
        avg=sum(durations) / n,
        p80=nearest_rank(0.80),
        p90=nearest_rank(0.90),
        count=n,
    )


def steady_samples(
    samples: Sequence[RequestSample], model: OverheadModel
) -> list[RequestSample]:
    """Requests submitted after the warm-up transient has decayed. Falls back
    to the whole list when the warm-up spans the entire run."""
    out = [s for s in samples if s.start_s >= model.warmup_duration_s]
    return out if out else list(samples)


def overhead_pct(baseline: StatsSummary, subject: StatsSummary) -> float:
    """Relative mean slowdown of subject over baseline, in percent."""
    if baseline.avg == 0:
        raise ZeroBaseline("baseline average is zero")
    return 100.0 * (subject.avg - baseline.avg) / baseline.avg


# ---------------------------------------------------------------------------
# calibration

# standard normal quantiles at 0.8 and 0.9, for the closed-form grid stage
_Z80 = 0.8416212335729143
_Z90 = 1.2815515655446004

# Relative fit weights for (avg, p80, p90). A steady-state draw cannot honor
# a reference row whose average exceeds its own 80th percentile (an artifact
# of short measured runs), so the average gets less pull and the tail
# columns dominate the fit. Tuned against the reference row; do not nudge
# casually, the descent landing moves in steps.
_FIT_WEIGHTS = (0.468, 1.0, 1.4)

_SIGMA_GRID = [0.02 + 0.02 * i for i in range(15)]

# Replica runs averaged per calibration probe, and the seed spacing that
# decorrelates them from the profile's own stream.
_REPLICA_COUNT = 4
_REPLICA_SEED_STRIDE = 1000


def _residual(stats: StatsSummary, target: StatsSummary, tol: tuple[float, float, float]) -> float:
    """Worst relative miss, each dimension normalized by its tolerance so
    residual <= 1 means everything is inside the band."""
    return max(
        abs(stats.avg - target.avg) / (target.avg * tol[0]),
        abs(stats.p80 - target.p80) / (target.p80 * tol[1]),
        abs(stats.p90 - target.p90) / (target.p90 * tol[2]),
    )


def _fit_error(stats: StatsSummary, target: StatsSummary) -> float:
    wa, w8, w9 = _FIT_WEIGHTS
    ra = (stats.avg - target.avg) / target.avg
    r8 = (stats.p80 - target.p80) / target.p80
    r9 = (stats.p90 - target.p90) / target.p90
    return wa * ra * ra + w8 * r8 * r8 + w9 * r9 * r9


def _grid_mean(target: StatsSummary, sigma: float) -> float:
    """Best mean for a fixed sigma under the weighted squares, ignoring
    queueing (pure log-normal stationarity; the refinement stage absorbs the
    queueing correction)."""
    shift = math.exp(-sigma * sigma / 2.0)
    ratios = (1.0, math.exp(_Z80 * sigma) * shift, math.exp(_Z90 * sigma) * shift)
    targets = (target.avg, target.p80, target.p90)
    num = den = 0.0
    for w, r, t in zip(_FIT_WEIGHTS, ratios, targets):
        num += w * r / t
        den += w * (r / t) ** 2
    return num / den


def calibrate(
    target: StatsSummary,
    profile: LoadProfile,
    model: OverheadModel,
    serving_slots: Optional[int] = None,
    tolerance: tuple[float, float, float] = (0.08, 0.10, 0.10),
    max_evals: int = 200,
) -> ServiceTimeBase:
    """Search (mu, sigma) so the post-warm-up stats of a level-0 run
    reproduce the target row within tolerance (relative bands on avg, p80,
    p90). The search is a fixed lattice descent: a coarse sigma sweep seeded
    with closed-form means, then two shrinking grid refinements around the
    incumbent. Every probe is a full re-simulation with the profile's seed,
    so identical inputs land on identical output. Raises CalibrationFailed
    with the banded residual if the final fit is outside the bands."""
    if min(target.avg, target.p80, target.p90) <= 0:
        raise InvariantViolation("target", "target stats must be positive")
    if target.p80 > target.p90:
        raise InvariantViolation("target", "inconsistent target: p80 > p90")

    evals = 0
    cache: dict[tuple[float, float], float] = {}
    # Each probe averages a few replica runs on derived seeds; a single run's
    # percentile ripple is larger than the structure the descent follows.
    replicas = [
        LoadProfile(
            users=profile.users,
            period_s=profile.period_s,
            think_time_mean_s=profile.think_time_mean_s,
            seed=profile.seed + _REPLICA_SEED_STRIDE * i,
        )
        for i in range(_REPLICA_COUNT)
    ]

    def probe_stats(m: float, sigma: float) -> StatsSummary:
        mu = math.log(m) - sigma * sigma / 2.0
        base = ServiceTimeBase(mu, sigma)
        acc = [0.0, 0.0, 0.0]
        n = 0
        for rep in replicas:
            run = simulate(0, rep, base, model, serving_slots)
            st = compute_stats(steady_samples(run, model))
            acc[0] += st.avg
            acc[1] += st.p80
            acc[2] += st.p90
            n += st.count
        k = len(replicas)
        return StatsSummary(avg=acc[0] / k, p80=acc[1] / k, p90=acc[2] / k, count=n)

    def objective(m: float, sigma: float) -> float:
        nonlocal evals
        if m <= 0 or sigma <= 1e-4:
            return math.inf
        key = (round(m, 9), round(sigma, 9))
        if key in cache:
            return cache[key]
        if evals >= max_evals:
            return math.inf
        evals += 1
        err = _fit_error(probe_stats(m, sigma), target)
        cache[key] = err
        return err

    best_m, best_sigma = _grid_mean(target, _SIGMA_GRID[0]), _SIGMA_GRID[0]
    best_val = objective(best_m, best_sigma)
    for sigma in _SIGMA_GRID[1:]:
        m = _grid_mean(target, sigma)
        val = objective(m, sigma)
        if val < best_val:
            best_val, best_m, best_sigma = val, m, sigma

    # Shrinking 5x5 lattices around the incumbent. Strictly-better moves
    # only, scanned in fixed order, so the landing is reproducible.
    for m_step, sigma_step in ((0.004, 0.008), (0.001, 0.002), (0.00025, 0.0005)):
        center_m, center_sigma = best_m, best_sigma
        for di in range(-2, 3):
            for dj in range(-2, 3):
                m = center_m * (1.0 + m_step * di)
                sigma = center_sigma + sigma_step * dj
                val = objective(m, sigma)
                if val < best_val:
                    best_val, best_m, best_sigma = val, m, sigma

    banded = _residual(probe_stats(best_m, best_sigma), target, tolerance)
    if banded > 1.0:
        raise CalibrationFailed(banded)
    mu = math.log(best_m) - best_sigma * best_sigma / 2.0
    return ServiceTimeBase(mu=mu, sigma=best_sigma)


# ---------------------------------------------------------------------------
# the full experiment

LEVEL_KEYS = ((0, "L0"), (1, "L1"), (2, "L2"))


@dataclass
class ExperimentResult:
    base: ServiceTimeBase
    summaries: dict[str, StatsSummary]
    overheads: dict[str, float]
    series: dict[str, list[RequestSample]]

    def summary_dict(self) -> dict:
        out: dict = {"levels": {}, "overheads": self.overheads}
        for key, s in self.summaries.items():
            out["levels"][key] = {
                "avg": round(s.avg, 6),
                "p80": round(s.p80, 6),
                "p90": round(s.p90, 6),
                "count": s.count,
            }
        return out


def run_experiment(
    model: OverheadModel,
    profile: LoadProfile,
    base: ServiceTimeBase,
    serving_slots: Optional[int] = None,
) -> ExperimentResult:
    """Simulate all three levels with the same seed stream and summarize.
    Summaries and overheads cover the post-warm-up window; the raw series
    keep every sample so the warm-up transient stays visible to plots. Both
    overheads are measured against level 0."""
    series: dict[str, list[RequestSample]] = {}
    summaries: dict[str, StatsSummary] = {}
    for level, key in LEVEL_KEYS:
        samples = simulate(level, profile, base, model, serving_slots)
        series[key] = samples
        summaries[key] = compute_stats(steady_samples(samples, model))
    overheads = {
        "l1_over_l0_pct": overhead_pct(summaries["L0"], summaries["L1"]),
        "l2_over_l0_pct": overhead_pct(summaries["L0"], summaries["L2"]),
    }
    return ExperimentResult(
        base=base, summaries=summaries, overheads=overheads, series=series
    )
