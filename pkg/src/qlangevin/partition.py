"""Partition function estimation by telescoping over the annealing schedule.

With unnormalised stage densities ``w_i`` and masses ``Z_i = sum_x w_i(x) h^d``,

    Z_M = Z_0 * prod_i Z_{i+1} / Z_i,   Z_{i+1} / Z_i = E_{mu_i}[g_i],   g_i = w_{i+1} / w_i.

For the tempered rungs ``g_i = exp((1/s_i - 1/s_{i+1}) ||x||^2 / 2)``. ``Z_0``
is replaced by the Gaussian normaliser ``(2 pi s_0)^(d/2)``. The potential is
taken as ``beta * f`` so the target is ``Z = int exp(-beta f)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import anneal, qsa
from .errors import IllConditionedSchedule


def z0_closed_form(sigma1_sq: float, d: int) -> float:
    """Gaussian normaliser ``(2 pi s)^(d/2)``."""
    if not sigma1_sq > 0:
        raise ValueError("variance must be positive")
    return (2.0 * math.pi * sigma1_sq) ** (d / 2.0)


def _log_g(schedule: anneal.AnnealSchedule, i: int) -> np.ndarray:
    if not 0 <= i < schedule.M:
        raise IndexError(f"rung {i} outside 0..{schedule.M - 1}")
    return schedule.log_weights[i + 1] - schedule.log_weights[i]


def _moments(schedule, i, weights=None):
    w = anneal.stage_distribution(schedule, i).weights if weights is None else weights
    lg = _log_g(schedule, i)
    top = lg.max()
    g = np.exp(lg - top)
    return float(np.dot(w, g)), float(np.dot(w, g * g)), top


def stage_ratio(schedule: anneal.AnnealSchedule, i: int, weights: Optional[np.ndarray] = None) -> float:
    """``E_{mu_i}[g_i]``; ``weights`` replaces ``mu_i`` (e.g. empirical frequencies)."""
    m1, _, top = _moments(schedule, i, weights)
    return m1 * math.exp(top)


def relative_variance(schedule: anneal.AnnealSchedule, i: int) -> float:
    """``E[g_i^2] / E[g_i]^2`` under ``mu_i`` (at least one)."""
    m1, m2, _ = _moments(schedule, i)
    return m2 / (m1 * m1)


def relvar_constant(schedule: anneal.AnnealSchedule, i: int) -> float:
    """``C`` with ``relvar = exp(C d L alpha^2 / m)``."""
    c = schedule.constants
    return math.log(relative_variance(schedule, i)) * c.m / (schedule.spec.d * c.L * schedule.alpha**2)


def grid_partition(schedule: anneal.AnnealSchedule) -> float:
    """Direct grid quadrature of ``exp(-beta f)``."""
    return math.exp(anneal.stage_log_mass(schedule, schedule.M))


@dataclass(frozen=True)
class PartitionEstimate:
    z_hat: float
    epsilon: float
    mode: str
    z0: float
    per_stage_ratios: tuple[float, ...]
    per_stage_relvar: tuple[float, ...]
    per_stage_shots: tuple[int, ...]
    reference: float

    @property
    def relative_error(self) -> float:
        return abs(self.z_hat / self.reference - 1.0)

    def report(self) -> dict:
        return {
            "z_hat": self.z_hat,
            "mode": self.mode,
            "epsilon": self.epsilon,
            "z0": self.z0,
            "rungs": [
                {"rung": i, "ratio": r, "relvar": v, "shots": s}
                for i, (r, v, s) in enumerate(zip(self.per_stage_ratios, self.per_stage_relvar, self.per_stage_shots))
            ],
            "grid_reference": self.reference,
        }


def estimate_partition(
    schedule: anneal.AnnealSchedule,
    epsilon: float,
    mode: str = "exact",
    seed: int = 0,
    c_mean: float = 4.0,
    relvar_cap: float = 10.0,
    eta: float = 0.01,
    first_rung: str = "exact",
    run: Optional[qsa.RunResult] = None,
) -> PartitionEstimate:
    """Telescoping estimate of ``Z``.

    Args:
        schedule: Annealing schedule; its first variance fixes ``Z_0``.
        epsilon: Target relative error.
        mode: ``exact`` (grid expectations) or ``sampled`` (means over
            ``ceil(c_mean relvar M^2 / epsilon^2)`` measurement outcomes of the
            annealed stage states of one MALA-backend run).
        seed: Seed of the annealing run and of the measurements.
        c_mean: Chebyshev constant of the shot count.
        relvar_cap: Largest admissible rung relative variance.
        eta: Walk step size of the annealing run (sampled mode).
        first_rung: ``exact`` evaluates ``Z_1 / Z_0`` like every other rung;
            ``bracket`` sets it to one, relying on ``Z_1`` being within a
            factor ``1 - epsilon/2`` of ``Z_0``.
        run: A finished annealing run over ``schedule`` with stage marginals
            kept. Sampled mode then draws its shots from it instead of
            annealing again, so repeated estimates differ only in the shots.

    Raises:
        IllConditionedSchedule: If a rung's relative variance exceeds the cap.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    M = schedule.M
    relvars = [relative_variance(schedule, i) for i in range(M)]
    worst = int(np.argmax(relvars))
    if relvars[worst] > relvar_cap:
        raise IllConditionedSchedule(f"rung {worst} has relative variance {relvars[worst]:.3g} > {relvar_cap}")
    z0 = z0_closed_form(schedule.sigma_sq[0], schedule.spec.d)
    if mode == "exact":
        ratios = [stage_ratio(schedule, i) for i in range(M)]
        shots = [0] * M
    elif mode == "sampled":
        if run is None:
            run = qsa.run_annealing(schedule, "mala", eta, epsilon, seed=seed, keep_marginals=True)
        elif len(run.marginals) < M:
            raise ValueError("run must cover every stage of the schedule with keep_marginals=True")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        ratios, shots = [], []
        for i in range(M):
            k = math.ceil(c_mean * relvars[i] * M * M / epsilon**2)
            p = np.clip(run.marginals[i], 0.0, None)
            counts = rng.multinomial(k, p / p.sum())
            ratios.append(stage_ratio(schedule, i, counts / k))
            shots.append(k)
    else:
        raise ValueError("mode must be 'exact' or 'sampled'")
    start = 1 if first_rung == "bracket" else 0
    log_z = math.log(z0) + sum(math.log(r) for r in ratios[start:])
    return PartitionEstimate(math.exp(log_z), epsilon, mode, z0, tuple(ratios), tuple(relvars),
                             tuple(shots), grid_partition(schedule))
