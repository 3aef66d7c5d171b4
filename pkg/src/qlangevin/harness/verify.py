"""Inequality verification suites.

Every suite produces rows ``(lhs, rhs, margin, passed)`` where the checked
inequality reads ``lhs <= rhs`` and ``margin = rhs - lhs``. A suite passes when
every row does. Instances are drawn from a generator seeded by ``(seed, suite)``,
so a suite and seed always give the same rows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import anneal, chains, partition, potential as pot, walk as wk
from ..domain import GridDomain, bhattacharyya, build_grid

SUITE_NAMES = ("lemma1", "lemma2", "lemma3", "phasegap", "lemma7", "lemma8", "overlaps", "relvar")
DEFAULT_INSTANCES = {"lemma1": 30, "lemma2": 30, "lemma3": 20, "phasegap": 10}
HELLINGER_SLACK = 1.1
LEMMA3_THRESHOLD_FRACTION = 0.25


@dataclass(frozen=True)
class VerdictRow:
    suite: str
    instance: int
    lhs: float
    rhs: float
    params: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs)

    def as_dict(self) -> dict:
        return {
            "suite": self.suite,
            "instance": self.instance,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "pass": self.passed,
            "params": self.params,
        }


@dataclass(frozen=True)
class SuiteVerdict:
    name: str
    seed: int
    rows: tuple[VerdictRow, ...]
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def violations(self) -> int:
        return sum(not r.passed for r in self.rows)

    def as_dict(self) -> dict:
        return {
            "suite": self.name,
            "seed": self.seed,
            "passed": self.passed,
            "instances": len(self.rows),
            "violations": self.violations,
            "rows": [r.as_dict() for r in self.rows],
            "extras": self.extras,
        }


# ---------------------------------------------------------------------------
# Instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Instance:
    spec: pot.PotentialSpec
    domain: GridDomain
    constants: pot.AssumptionConstants
    eta: float

    def describe(self) -> dict:
        return {
            "potential": self.spec.name,
            "R": self.domain.R,
            "n": self.domain.n,
            "eta": self.eta,
            "L": self.constants.L,
            "G": self.constants.G,
        }


def _suite_rng(seed: int, suite: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), SUITE_NAMES.index(suite)]))


def random_potential(rng: np.random.Generator) -> pot.PotentialSpec:
    """A one-dimensional catalog potential with random parameters."""
    kind = int(rng.integers(4))
    if kind == 0:
        return pot.quadratic(1, scale=float(rng.uniform(0.5, 2.0)))
    if kind == 1:
        return pot.double_well(1)
    if kind == 2:
        return pot.tilted_double_well(rng.uniform(-0.5, 0.5, size=4).tolist())
    return pot.mixture_of_quadratics(rng.uniform(-1.0, 1.0, size=(3, 1)), scale=float(rng.uniform(0.5, 2.0)))


def random_instance(rng: np.random.Generator, n_range=(6, 12), admissible: bool = True) -> Instance:
    """Random catalog potential on a small grid with fitted constants.

    With ``admissible`` the step is a uniform fraction in ``[0.2, 1]`` of the
    largest admissible step; otherwise it is uniform in ``[0.02, 0.3]``.
    """
    spec = random_potential(rng)
    grid = build_grid(1, float(rng.uniform(1.2, 2.0)), int(rng.integers(n_range[0], n_range[1] + 1)))
    constants = pot.fit_constants(spec, grid.nodes, m=1.0)
    if admissible:
        eta = float(rng.uniform(0.2, 1.0)) * chains.max_admissible_step(spec, constants, grid.R)
    else:
        eta = float(rng.uniform(0.02, 0.3))
    return Instance(spec, grid, constants, eta)


def _quiet(fn: Callable, *args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", chains.StepSizeWarning)
        return fn(*args, **kwargs)


# ---------------------------------------------------------------------------
# Single checks
# ---------------------------------------------------------------------------


def lemma1_check(kernel_a: chains.MarkovKernel, kernel_b: chains.MarkovKernel) -> tuple[float, float]:
    """``(||U_a - U_b||, 4 sqrt(2) * max-row Hellinger)``."""
    wa, wb = wk.build_walk(kernel_a, "active"), wk.build_walk(kernel_b, "active")
    lhs = wk.op_distance(wa, wb)
    h = wk.max_row_hellinger(kernel_a, kernel_b)
    return lhs, 4.0 * math.sqrt(2.0) * h


def lemma2_check(inst: Instance) -> tuple[float, float]:
    """``(max-row Hellinger(lazy ULA, MALA), 1.1 * 4 eta d L)``."""
    ula = _quiet(chains.ula_kernel, inst.spec, inst.constants, inst.domain, inst.eta, lazy=True)
    mala = _quiet(chains.mala_kernel, inst.spec, inst.constants, inst.domain, inst.eta)
    lhs = wk.max_row_hellinger(ula, mala)
    return lhs, HELLINGER_SLACK * 4.0 * inst.eta * inst.spec.d * inst.constants.L


def hellinger_slope(spec, constants, domain, etas=(0.04, 0.02, 0.01)) -> float:
    """Log-log slope of max-row Hellinger(lazy ULA, MALA) against ``eta``."""
    hs = []
    for eta in etas:
        ula = _quiet(chains.ula_kernel, spec, constants, domain, eta, lazy=True)
        mala = _quiet(chains.mala_kernel, spec, constants, domain, eta)
        hs.append(wk.max_row_hellinger(ula, mala))
    return float(np.polyfit(np.log(etas), np.log(hs), 1)[0])


def lemma3_check(walk: wk.WalkOperator, strength: float, rng: np.random.Generator) -> tuple[float, float]:
    """Projector perturbation on the active space of ``walk``.

    ``U~`` is the polar factor of ``U + strength * H``; both projectors keep the
    phases below a quarter of the phase gap. Returns
    ``(||Pi - Pi~||, pi * ||U - U~|| / (4 Delta))``.
    """
    gap = wk.phase_gap(walk)
    gamma = LEMMA3_THRESHOLD_FRACTION * gap
    U = walk.U_active
    Ut = wk.perturbed_unitary(U, strength, rng)
    delta = float(np.linalg.norm(U - Ut, 2))
    lhs = float(np.linalg.norm(wk.projector_from_unitary(U, gamma) - wk.projector_from_unitary(Ut, gamma), 2))
    return lhs, delta * math.pi / (4.0 * gap)


def lemma7_bound(eta, constants, d, beta, R, B) -> float:
    """``6 sqrt(2) eta (L R + G) sqrt(d beta) / sqrt(B)``."""
    return 6.0 * math.sqrt(2.0) * eta * (constants.L * R + constants.G) * math.sqrt(d * beta) / math.sqrt(B)


def lemma8_bound(eta, constants, beta, R) -> float:
    """``8 sqrt(eta beta) (L R + G)``."""
    return 8.0 * math.sqrt(eta * beta) * (constants.L * R + constants.G)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def _suite_lemma1(count, seed):
    rng = _suite_rng(seed, "lemma1")
    rows = []
    for k in range(count):
        inst = random_instance(rng)
        ula = _quiet(chains.ula_kernel, inst.spec, inst.constants, inst.domain, inst.eta, lazy=True)
        mala = _quiet(chains.mala_kernel, inst.spec, inst.constants, inst.domain, inst.eta)
        lhs, rhs = lemma1_check(ula, mala)
        rows.append(VerdictRow("lemma1", k, lhs, rhs, inst.describe()))
    return rows, {}


def _suite_lemma2(count, seed):
    # Same instance stream as lemma1 so the two suites audit identical pairs.
    rng = _suite_rng(seed, "lemma1")
    rows = []
    for k in range(count):
        inst = random_instance(rng)
        lhs, rhs = lemma2_check(inst)
        rows.append(VerdictRow("lemma2", k, lhs, rhs, inst.describe()))
    spec = pot.double_well(1)
    grid = build_grid(1, 2.5, 33)
    consts = pot.AssumptionConstants(L=17.75, m=1.0, b=1.0, G=0.0)
    slope = hellinger_slope(spec, consts, grid)
    rows.append(VerdictRow("lemma2", count, abs(slope - 1.0), 0.1,
                           {"check": "log-log slope within [0.9, 1.1]", "slope": slope,
                            "etas": [0.04, 0.02, 0.01], "R": 2.5, "n": 33}))
    return rows, {"hellinger_slope": slope}


def _suite_phasegap(count, seed):
    rng = _suite_rng(seed, "phasegap")
    rows = []
    for k in range(count):
        inst = random_instance(rng, admissible=False)
        kernel = chains.mala_kernel(inst.spec, None, inst.domain, inst.eta)
        pi = chains.gibbs(inst.spec, inst.domain)
        phi = chains.conductance(kernel, pi, "exact")
        gap = wk.phase_gap(wk.build_walk(kernel, "discriminant"))
        rows.append(VerdictRow("phasegap", k, math.sqrt(2.0) * phi, gap, {**inst.describe(), "phi": phi}))
    return rows, {}


def _suite_lemma3(count, seed):
    rng = _suite_rng(seed, "lemma3")
    spec = pot.double_well(1)
    rows = []
    for k in range(count):
        grid = build_grid(1, 2.5, int(rng.integers(8, 13)))
        eta = float(rng.uniform(0.02, 0.3))
        walk = wk.build_walk(chains.mala_kernel(spec, None, grid, eta), "active")
        strength = float(rng.uniform(0.01, 0.2)) * 0.5 * wk.phase_gap(walk)
        lhs, rhs = lemma3_check(walk, strength, rng)
        rows.append(VerdictRow("lemma3", k, lhs, rhs, {"n": grid.n, "eta": eta, "strength": strength}))
    return rows, {}


# Exhaustive mini-batch families: (centers, batch size).
FAMILIES = (
    ((-1.0, -0.4, 0.4, 1.0), 2),
    ((-1.0, -0.6, -0.2, 0.2, 0.6, 1.0), 2),
)
FAMILY_GRID = (2.0, 9)
# Fractions of the largest admissible step; at the full step the pairwise bound
# exceeds the unitary diameter, so a smaller step is audited as well.
FAMILY_STEP_FRACTIONS = (1.0, 0.03)


def _families():
    R, n = FAMILY_GRID
    grid = build_grid(1, R, n)
    for centers, B in FAMILIES:
        spec = pot.mixture_of_quadratics(np.array(centers)[:, None])
        consts = pot.fit_constants(spec, grid.nodes)
        for frac in FAMILY_STEP_FRACTIONS:
            eta = frac * chains.max_admissible_step(spec, consts, R)
            yield spec, grid, consts, eta, B, wk.stochastic_walk_family(spec, consts, grid, eta, B)


def _suite_lemma7(count, seed):
    rows = []
    for k, (spec, grid, consts, eta, B, fam) in enumerate(_families()):
        lhs = float(np.linalg.norm(fam.expected - fam.reference.U, 2))
        rhs = lemma7_bound(eta, consts, spec.d, spec.beta, grid.R, B)
        unbatched = lemma7_bound(eta, consts, spec.d, spec.beta, grid.R, 1)
        rows.append(VerdictRow("lemma7", k, lhs, rhs, {"N": spec.N, "B": B, "eta": eta, "bound_without_B": unbatched}))
    return rows, {}


def _suite_lemma8(count, seed):
    rows = []
    for spec, grid, consts, eta, B, fam in _families():
        rhs = lemma8_bound(eta, consts, spec.beta, grid.R)
        walks = fam.walks
        for a in range(len(walks)):
            for b in range(a + 1, len(walks)):
                lhs = float(np.linalg.norm(walks[a].U - walks[b].U, 2))
                params = {"N": spec.N, "B": B, "eta": eta, "pair": [list(fam.batches[a].indices), list(fam.batches[b].indices)]}
                rows.append(VerdictRow("lemma8", len(rows), lhs, rhs, params))
    return rows, {}


def benchmark_schedules(alpha_scale: float = 0.2):
    """The shipped one-dimensional schedule benchmarks."""
    cases = (
        ("double_well", pot.double_well(1), build_grid(1, 2.5, 33), 0.5),
        ("tilted_double_well", pot.tilted_double_well([-0.1, -0.05, 0.05, 0.1]), build_grid(1, 2.5, 33), 0.5),
        ("quadratic", pot.quadratic(1), build_grid(1, 6.0, 129), 0.05),
    )
    for name, spec, grid, eps in cases:
        base = pot.fit_constants(spec, grid.nodes) if name != "quadratic" else pot.AssumptionConstants(1.0, 1.0)
        consts = chains.measure_landscape(spec, base, grid, 0.01)
        if name == "quadratic":
            consts = consts.with_landscape(c_lsi=1.0)
        yield name, anneal.build_schedule(spec, consts, grid, eps, alpha_scale)


def gaussian_overlap(s1: float, s2: float, d: int = 1) -> float:
    """Bhattacharyya coefficient of centred Gaussians with variances ``s1`` and ``s2``."""
    return (2.0 * math.sqrt(s1 * s2) / (s1 + s2)) ** (d / 2.0)


def _suite_overlaps(count, seed):
    rows, extras = [], {}
    for name, sched in benchmark_schedules():
        rep = anneal.validate_schedule(sched)
        rows.append(VerdictRow("overlaps", len(rows), 0.5, rep.min_consecutive, {"benchmark": name, "check": "consecutive", "M": sched.M}))
        rows.append(VerdictRow("overlaps", len(rows), 0.5, rep.final_overlap, {"benchmark": name, "check": "final"}))
        s = 1.0 / (8.0 * sched.constants.L)
        extras[name] = {
            "M": sched.M,
            "M_reference": rep.M_reference,
            "mgf_constant_max": max(anneal.mgf_constant(sched, i, s) for i in range(sched.M + 1)),
            "second_moment_constant_max": max(anneal.second_moment_constant(sched, i) for i in range(sched.M + 1)),
        }
    # Flat potential: grid overlaps of the Gaussian stages against the closed form.
    grid = build_grid(1, 6.0, 201)
    sched = anneal.build_schedule(pot.zero(1), pot.AssumptionConstants(1.0, 1.0, c_lsi=1.0), grid, 0.5)
    worst = 0.0
    for i in range(sched.M - 1):
        exact = gaussian_overlap(sched.sigma_sq[i], sched.sigma_sq[i + 1])
        worst = max(worst, abs(bhattacharyya(anneal.stage_distribution(sched, i), anneal.stage_distribution(sched, i + 1)) / exact - 1.0))
    rows.append(VerdictRow("overlaps", len(rows), worst, 0.01, {"benchmark": "zero", "check": "closed form, relative"}))
    return rows, extras


def _suite_relvar(count, seed):
    rows, extras = [], {}
    for name, sched in benchmark_schedules():
        rv = [partition.relative_variance(sched, i) for i in range(sched.M)]
        cap = 2.0 if name == "double_well" else 10.0
        rows.append(VerdictRow("relvar", len(rows), 1.0 - 1e-12, min(rv), {"benchmark": name, "check": "floor"}))
        rows.append(VerdictRow("relvar", len(rows), max(rv), cap, {"benchmark": name, "check": "cap"}))
        extras[name] = {"M": sched.M, "alpha": sched.alpha,
                        "C_max": max(partition.relvar_constant(sched, i) for i in range(sched.M))}
    return rows, extras


_SUITES = {
    "lemma1": _suite_lemma1,
    "lemma2": _suite_lemma2,
    "lemma3": _suite_lemma3,
    "phasegap": _suite_phasegap,
    "lemma7": _suite_lemma7,
    "lemma8": _suite_lemma8,
    "overlaps": _suite_overlaps,
    "relvar": _suite_relvar,
}


def verify_suite(name: str, instances: Optional[int] = None, seed: int = 0) -> SuiteVerdict:
    """Run one suite, or every suite for ``name="all"``.

    Args:
        name: Suite name or ``all``.
        instances: Random instance count for the randomised suites; the
            family and benchmark suites ignore it.
        seed: Base seed.

    Raises:
        KeyError: For an unknown suite name.
    """
    if name == "all":
        rows, extras = [], {}
        for sub in SUITE_NAMES:
            v = verify_suite(sub, instances, seed)
            rows.extend(v.rows)
            extras[sub] = v.extras
        return SuiteVerdict("all", seed, tuple(rows), extras)
    if name not in _SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {SUITE_NAMES + ('all',)}")
    count = DEFAULT_INSTANCES.get(name, 0) if instances is None else int(instances)
    rows, extras = _SUITES[name](count, seed)
    return SuiteVerdict(name, seed, tuple(rows), extras)
