"""Tempered annealing schedule between a narrow Gaussian and the Gibbs law.

Stage ``0`` is the Gaussian ``exp(-||x||^2 / (2 s_0))``; stage ``i`` for
``1 <= i < M`` is ``exp(-beta f(x) - ||x||^2 / (2 s_i))``; stage ``M`` is the
target ``exp(-beta f(x))``. The variances grow geometrically,
``s_i = s_0 (1 + alpha)^i``, starting at ``s_0 = epsilon / (2 d L)`` and
stopping at the first index whose variance reaches ``sqrt(d L / (m c^2))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import potential as pot
from .domain import DiscreteDistribution, GridDomain, bhattacharyya, log_mass, normalize_log_weights
from .errors import GrowthTooAggressive, ScheduleTooLong

MAX_STAGES = 10_000


@dataclass(frozen=True, eq=False)
class AnnealSchedule:
    """Geometric variance schedule and its grid stage laws.

    Attributes:
        sigma_sq: Variances ``s_0 .. s_M``; ``s_M`` is the first one above the target.
        alpha: Growth rate, ``s_{i+1} = s_i (1 + alpha)``.
        M: Index of the final stage (the target law).
        epsilon: Schedule tolerance fixing ``s_0``.
        target_sigma_sq: Stopping variance ``sqrt(d L / (m c_lsi^2))``.
        log_weights: Unnormalised log densities of every stage on the grid,
            shape ``(M + 1, num_nodes)``.
    """

    spec: pot.PotentialSpec
    constants: pot.AssumptionConstants
    domain: GridDomain
    sigma_sq: np.ndarray
    alpha: float
    M: int
    epsilon: float
    target_sigma_sq: float
    log_weights: np.ndarray = field(repr=False)

    @property
    def num_stages(self) -> int:
        return self.M + 1


def _stage_log_weights(spec, domain, sigma_sq, M):
    x = domain.nodes
    sq = np.sum(x * x, axis=1)
    bf = spec.beta * pot.energy(spec, x)
    rows = [-sq / (2.0 * sigma_sq[0])]
    for i in range(1, M):
        rows.append(-bf - sq / (2.0 * sigma_sq[i]))
    rows.append(-bf)
    return np.array(rows)


def build_schedule(
    spec: pot.PotentialSpec,
    constants: pot.AssumptionConstants,
    domain: GridDomain,
    epsilon: float,
    alpha_scale: float = 0.2,
) -> AnnealSchedule:
    """Construct the schedule.

    Raises:
        GrowthTooAggressive: If ``alpha >= 1``.
        ScheduleTooLong: If more than ``10^4`` stages are needed.
    """
    if not 0 < epsilon < 1:
        raise ValueError("schedule epsilon must lie in (0, 1)")
    if not alpha_scale > 0:
        raise ValueError("alpha_scale must be positive")
    if constants.c_lsi is None:
        raise ValueError("c_lsi must be supplied or measured before building a schedule")
    d, L, m, c = spec.d, constants.L, constants.m, constants.c_lsi
    alpha = alpha_scale * c * math.sqrt(m / (d * L))
    if alpha >= 1:
        raise GrowthTooAggressive(f"alpha={alpha:.4g} must be below 1")
    s0 = epsilon / (2.0 * d * L)
    target = math.sqrt(d * L / (m * c * c))
    if s0 >= target:
        M = 1
    else:
        M = math.ceil(math.log(target / s0) / math.log1p(alpha) - 1e-12)
    if M > MAX_STAGES:
        raise ScheduleTooLong(f"schedule needs {M} stages (limit {MAX_STAGES})")
    sigma_sq = s0 * (1.0 + alpha) ** np.arange(M + 1)
    logw = _stage_log_weights(spec, domain, sigma_sq, M)
    return AnnealSchedule(spec, constants, domain, sigma_sq, alpha, M, epsilon, target, logw)


def _check_index(schedule: AnnealSchedule, i: int) -> None:
    if not 0 <= i <= schedule.M:
        raise IndexError(f"stage {i} outside 0..{schedule.M}")


def stage_distribution(schedule: AnnealSchedule, i: int) -> DiscreteDistribution:
    _check_index(schedule, i)
    return DiscreteDistribution(normalize_log_weights(schedule.log_weights[i]))


def stage_log_mass(schedule: AnnealSchedule, i: int) -> float:
    """Grid quadrature of the unnormalised stage density, ``log Z_i``."""
    _check_index(schedule, i)
    return log_mass(schedule.domain, schedule.log_weights[i])


def stage_potential(schedule: AnnealSchedule, i: int) -> pot.PotentialSpec:
    """Potential whose Gibbs law (at the original ``beta``) is stage ``i``."""
    _check_index(schedule, i)
    spec = schedule.spec
    if i == 0:
        return pot.with_quadratic(spec, 1.0 / schedule.sigma_sq[0], keep_f=False)
    if i == schedule.M:
        return spec
    return pot.with_quadratic(spec, 1.0 / schedule.sigma_sq[i])


def overlap(schedule: AnnealSchedule, i: int, j: int) -> float:
    """Bhattacharyya coefficient between stages ``i`` and ``j``."""
    if i == j:
        _check_index(schedule, i)
        return 1.0
    a, b = sorted((i, j))
    return bhattacharyya(stage_distribution(schedule, a), stage_distribution(schedule, b))


def reference_stage_count(constants: pot.AssumptionConstants, d: int) -> float:
    """``sqrt(d L / (m c_lsi^2))``."""
    return math.sqrt(d * constants.L / (constants.m * constants.c_lsi**2))


@dataclass(frozen=True)
class ScheduleReport:
    consecutive: tuple[float, ...]
    final_overlap: float
    M: int
    M_reference: float
    min_consecutive_threshold: float
    final_threshold: float
    ratio_threshold: float

    @property
    def min_consecutive(self) -> float:
        return min(self.consecutive)

    @property
    def M_ratio(self) -> float:
        return self.M / self.M_reference

    @property
    def checks(self) -> dict:
        return {
            "consecutive": self.min_consecutive >= self.min_consecutive_threshold,
            "final": self.final_overlap >= self.final_threshold,
            "stage_count": 1.0 / self.ratio_threshold <= self.M_ratio <= self.ratio_threshold,
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def validate_schedule(
    schedule: AnnealSchedule,
    min_consecutive: float = 0.5,
    min_final: float = 0.5,
    ratio: float = 2.0,
) -> ScheduleReport:
    """Overlap and length diagnostics.

    ``final_overlap`` is the overlap of stage ``M - 1`` with the target, and the
    stage count is compared with :func:`reference_stage_count`.
    """
    cons = tuple(overlap(schedule, i, i + 1) for i in range(schedule.M))
    final = overlap(schedule, max(schedule.M - 1, 0), schedule.M)
    ref = reference_stage_count(schedule.constants, schedule.spec.d)
    return ScheduleReport(cons, final, schedule.M, ref, min_consecutive, min_final, ratio)


def write_schedule_csv(schedule: AnnealSchedule, path) -> None:
    """Columns ``stage, sigma_sq, overlap_next, overlap_target``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "sigma_sq", "overlap_next", "overlap_target"])
        for i in range(schedule.M + 1):
            nxt = overlap(schedule, i, i + 1) if i < schedule.M else 1.0
            writer.writerow([i, repr(float(schedule.sigma_sq[i])), repr(nxt), repr(overlap(schedule, i, schedule.M))])


# ---------------------------------------------------------------------------
# Moment proxies
# ---------------------------------------------------------------------------


def mgf_product(schedule: AnnealSchedule, i: int, s: float) -> float:
    """``E[exp(-s||x||^2)] * E[exp(s||x||^2)]`` under stage ``i`` (at least 1)."""
    w = stage_distribution(schedule, i).weights
    sq = np.sum(schedule.domain.nodes**2, axis=1)
    return float(np.dot(w, np.exp(-s * sq)) * np.dot(w, np.exp(s * sq)))


def mgf_constant(schedule: AnnealSchedule, i: int, s: float) -> float:
    """Smallest ``C`` with ``mgf_product <= exp(C d L s^2 / m)``."""
    c = schedule.constants
    val = mgf_product(schedule, i, s)
    return math.log(val) * c.m / (schedule.spec.d * c.L * s * s)


def second_moment_constant(schedule: AnnealSchedule, i: int) -> float:
    """``E[||x||^2] / (L d / m)`` under stage ``i``."""
    w = stage_distribution(schedule, i).weights
    sq = np.sum(schedule.domain.nodes**2, axis=1)
    c = schedule.constants
    return float(np.dot(w, sq) / (c.L * schedule.spec.d / c.m))
