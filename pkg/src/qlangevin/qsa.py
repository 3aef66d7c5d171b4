"""State-vector simulation of quantum-walk annealing.

Every stage ``i`` of an :class:`~qlangevin.anneal.AnnealSchedule` has a walk
built from a Langevin kernel whose stationary law is (close to) the stage law.
The coherent stage state ``|mu_i>`` lifted into the product space is the
phase-0 eigenvector of the exact (MALA) walk. Reflections

    V_i = exp(i pi/3) Pi_i + (I - Pi_i)

use exact spectral projectors ``Pi_i`` onto the walk eigenvectors with phase
below a quarter of the phase gap of the exact walk, which is the midpoint of
its spectral gap. The pi/3 fixed-point recursion drives ``|mu_i>`` to
``|mu_{i+1}>``, cutting the failure probability from ``1 - p0`` to
``(1 - p0)^(3^k)`` after ``k`` levels.

Backends:
    ``mala``: exact walk of the lazy Metropolis kernel (rank-one projector).
    ``ula``: walk of the lazy unadjusted kernel, thresholded at the exact gap.
    ``sula``: each reflection averages ``K`` independently drawn mini-batch
        walks; the reflection uses the closest unitary to their mean.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import anneal, chains
from . import potential as pot
from . import walk as wk
from .domain import DiscreteDistribution, tv_distance
from .errors import AnnealingFailed, NoOverlap

BACKENDS = ("mala", "ula", "sula")
PI3 = math.pi / 3.0


@dataclass
class QueryLedger:
    """Running query counts of one run."""

    walk_applications: int = 0
    gradient_component_evals: int = 0
    function_evals: int = 0
    reflections: int = 0

    def charge(self, walks: int, grads_per_walk: int, funcs_per_walk: int = 0) -> None:
        self.walk_applications += walks
        self.gradient_component_evals += walks * grads_per_walk
        self.function_evals += walks * funcs_per_walk
        self.reflections += 1

    def as_dict(self) -> dict:
        return {
            "walk_applications": self.walk_applications,
            "gradient_component_evals": self.gradient_component_evals,
            "function_evals": self.function_evals,
            "reflections": self.reflections,
        }


@dataclass(frozen=True)
class AmplifyPlan:
    depth: int
    predicted_failure: float
    p0: float
    target: float
    phase: float = PI3

    @property
    def reflection_count(self) -> int:
        return 3**self.depth - 1


def plan_amplification(p0: float, target_error: float, max_depth: int = 40) -> AmplifyPlan:
    """Smallest depth ``k`` with ``(1 - p0)^(3^k) <= target_error``."""
    if not p0 > 0:
        raise NoOverlap("initial overlap is zero; amplification cannot start")
    if p0 > 1 + 1e-12:
        raise ValueError("p0 must not exceed 1")
    if not target_error > 0:
        raise ValueError("target error must be positive")
    fail = max(0.0, 1.0 - p0)
    k = 0
    while fail ** (3**k) > target_error:
        k += 1
        if k > max_depth:
            raise NoOverlap(f"p0={p0:.3g} too small for target {target_error:.3g}")
    return AmplifyPlan(k, fail ** (3**k), float(p0), float(target_error))


# ---------------------------------------------------------------------------
# Step-size gates
# ---------------------------------------------------------------------------


def ula_step_gate(epsilon, constants: pot.AssumptionConstants, d: int, beta: float, c0: float = 1.0) -> float:
    """``eps^2 rho^2 / (c0 16 sqrt(2) pi d^2 L^2 beta)``."""
    return epsilon**2 * constants.rho**2 / (c0 * 16.0 * math.sqrt(2.0) * math.pi * d**2 * constants.L**2 * beta)


def sula_step_gate(epsilon, constants, d: int, beta: float, R: float, B: int) -> float:
    """Minimum of the three step bounds for mini-batch walks."""
    L, G, rho = constants.L, constants.G, constants.rho
    lr = L * R + G
    return min(
        epsilon**2 * rho**2 / (2.0 * beta * d**2 * L**2),
        epsilon**4 * rho**2 * B / (4.0 * beta**3 * d * lr**2),
        epsilon**4 * rho**2 / (128.0**2 * lr**4 * beta**3),
    )


# ---------------------------------------------------------------------------
# Stage walks and reflections
# ---------------------------------------------------------------------------


def stage_step(schedule: anneal.AnnealSchedule, i: int, eta: float, rule: str = "stiffness") -> float:
    """Step size used at stage ``i``.

    ``fixed`` uses ``eta`` everywhere. ``stiffness`` shrinks it by ``L / L_i``
    where ``L_i = L + 1/(beta s_i)`` is the smoothness of the tempered stage.
    """
    if rule == "fixed" or i == schedule.M:
        return eta
    if rule != "stiffness":
        raise ValueError(f"unknown stage step rule {rule!r}")
    L = schedule.constants.L
    Li = (L if i > 0 else 0.0) + 1.0 / (schedule.spec.beta * schedule.sigma_sq[i])
    return eta * min(1.0, L / Li)


@dataclass(frozen=True, eq=False)
class StageWalk:
    """Exact walk of one stage together with its lifted stage state."""

    index: int
    spec: pot.PotentialSpec
    eta: float
    walk: wk.WalkOperator
    gap: float
    state: np.ndarray


def exact_stage_walk(schedule, i, eta, rule="stiffness") -> StageWalk:
    spec_i = anneal.stage_potential(schedule, i)
    eta_i = stage_step(schedule, i, eta, rule)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", chains.StepSizeWarning)
        kernel = chains.mala_kernel(spec_i, None, schedule.domain, eta_i)
    w = wk.build_walk(kernel, "active")
    gap = wk.phase_gap(w)
    mu = anneal.stage_distribution(schedule, i)
    state = wk.lift(w, wk.coherent_state(mu)).amplitudes
    return StageWalk(i, spec_i, eta_i, w, gap, state)


def _subspace(walk: wk.WalkOperator, gamma: float, perturbation: float, rng) -> np.ndarray:
    if perturbation > 0:
        Ut = wk.perturbed_unitary(walk.U_active, perturbation, rng)
        ph, Z = wk._schur_eig(Ut)
        return walk.basis @ Z[:, np.abs(ph) < gamma]
    return wk.spectral_subspace(walk, gamma)


def _mean_batch_kernel(spec, domain, eta, batches) -> np.ndarray:
    """Kernel of the closest walk unitary to the mean of the batch walks.

    The mean of ``S(2 sum_x |psi^l_x><psi^l_x| - I)`` over batches is
    ``S(2 sum_x rho_x - I)`` with ``rho_x`` the batch average of the row
    projectors; its polar factor replaces ``rho_x`` by the projector onto the
    leading eigenvector ``v_x`` of ``rho_x``, i.e. a walk with rows ``v_x^2``.
    """
    roots = []
    for b in batches:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", chains.StepSizeWarning)
            k = chains.sula_kernel(spec, None, domain, eta, b, lazy=True)
        roots.append(np.sqrt(k.matrix))
    R = np.stack(roots)  # (K, n, n)
    v = R.mean(axis=0)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    for _ in range(50):
        c = np.einsum("kxy,xy->kx", R, v)
        new = np.einsum("kxy,kx->xy", R, c)
        new /= np.linalg.norm(new, axis=1, keepdims=True)
        if np.max(np.abs(new - v)) < 1e-14:
            v = new
            break
        v = new
    P = v * v
    return P / P.sum(axis=1, keepdims=True)


@dataclass
class Reflector:
    """Applies the reflection of one stage for a given backend.

    ``apply`` charges the ledger and, for the ``sula`` backend, draws a fresh set
    of batches on every call.
    """

    stage: StageWalk
    backend: str
    schedule: anneal.AnnealSchedule
    c_proj: float
    ledger: QueryLedger
    rng: np.random.Generator
    batch_size: int = 1
    threshold_fraction: float = 0.25
    perturbation: float = 0.0
    _basis: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def gamma(self) -> float:
        return self.threshold_fraction * self.stage.gap

    @property
    def cost(self) -> int:
        return math.ceil(self.c_proj / self.stage.gap)

    def basis(self) -> np.ndarray:
        if self.backend == "sula" and self.stage.index not in (0,) and self.stage.spec.N > 1:
            return self._sula_basis()
        if self._basis is None:
            if self.backend == "mala":
                w = self.stage.walk
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", chains.StepSizeWarning)
                    k = chains.ula_kernel(self.stage.spec, None, self.schedule.domain, self.stage.eta, lazy=True)
                w = wk.build_walk(k, "active")
            self._basis = _subspace(w, self.gamma, self.perturbation, self.rng)
        return self._basis

    def _sula_basis(self) -> np.ndarray:
        spec = self.stage.spec
        batches = [pot.sample_batch(spec.N, self.batch_size, self.rng) for _ in range(self.cost)]
        P = _mean_batch_kernel(spec, self.schedule.domain, self.stage.eta, batches)
        w = wk.build_walk(chains.MarkovKernel(P, False, "SULA-mean", self.stage.eta, spec.beta), "active")
        return _subspace(w, self.gamma, self.perturbation, self.rng)

    def _charge(self) -> None:
        N = self.stage.spec.N
        if self.backend == "mala":
            self.ledger.charge(self.cost, N, 2)
        elif self.backend == "ula":
            self.ledger.charge(self.cost, N, 0)
        else:
            self.ledger.charge(self.cost, min(self.batch_size, N), 0)

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        V = self.basis()
        self._charge()
        phase = np.exp(-1j * PI3 if inverse else 1j * PI3)
        return v + (phase - 1.0) * (V @ (V.conj().T @ v))


def reflection(schedule, i, backend, eta, c_proj=10.0, seed=0, batch_size=1, perturbation=0.0,
               rule="stiffness") -> Reflector:
    """Reflection of stage ``i`` for ``backend`` with its own ledger."""
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    stage = exact_stage_walk(schedule, i, eta, rule)
    return Reflector(stage, backend, schedule, c_proj, QueryLedger(), np.random.default_rng(seed),
                     batch_size, perturbation=perturbation)


def reflection_matrix(refl: Reflector) -> np.ndarray:
    """Dense reflection on the product space (small grids only)."""
    V = refl.basis()
    return np.eye(V.shape[0]) + (np.exp(1j * PI3) - 1.0) * (V @ V.conj().T)


def amplify(state: np.ndarray, source: Reflector, target: Reflector, plan: AmplifyPlan) -> np.ndarray:
    """pi/3 fixed-point recursion ``U_{m+1} = U_m R_s U_m^+ R_t U_m`` with ``U_0 = I``."""

    def forward(m, v):
        if m == 0:
            return v
        v = forward(m - 1, v)
        v = target.apply(v)
        v = adjoint(m - 1, v)
        v = source.apply(v)
        return forward(m - 1, v)

    def adjoint(m, v):
        if m == 0:
            return v
        v = adjoint(m - 1, v)
        v = source.apply(v, inverse=True)
        v = forward(m - 1, v)
        v = target.apply(v, inverse=True)
        return adjoint(m - 1, v)

    return forward(plan.depth, np.asarray(state, dtype=complex))


# ---------------------------------------------------------------------------
# End-to-end run
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageRecord:
    stage: int
    p0: float
    depth: int
    predicted_failure: float
    overlap: float
    infidelity: float
    gap: float


@dataclass(frozen=True, eq=False)
class RunResult:
    backend: str
    eta: float
    epsilon: float
    seed: int
    state: np.ndarray
    probabilities: np.ndarray
    final_tv: float
    ledger: QueryLedger
    stages: tuple[StageRecord, ...]
    marginals: tuple[np.ndarray, ...] = ()

    def report(self) -> dict:
        return {
            "backend": self.backend,
            "eta": self.eta,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "stages": len(self.stages),
            "per_stage": [
                {
                    "stage": r.stage,
                    "p0": r.p0,
                    "depth": r.depth,
                    "predicted_failure": r.predicted_failure,
                    "overlap": r.overlap,
                    "infidelity": r.infidelity,
                    "phase_gap": r.gap,
                }
                for r in self.stages
            ],
            "ledger": self.ledger.as_dict(),
            "final_tv": self.final_tv,
        }


def stage_rng(seed: int, stage: int) -> np.random.Generator:
    """Counter-based stream for one stage of a run.

    Streams are Philox generators keyed by the run seed and advanced by
    ``stage`` jumps of ``2^128`` draws, so they never overlap.
    """
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**128).jumped(stage))


class StateReflector:
    """Reflection about a known state, used as the source of a warm-started hop."""

    def __init__(self, state: np.ndarray):
        self.vector = np.asarray(state, dtype=complex)

    def apply(self, v: np.ndarray, inverse: bool = False) -> np.ndarray:
        phase = np.exp(-1j * PI3 if inverse else 1j * PI3)
        return v + (phase - 1.0) * self.vector * np.vdot(self.vector, v)


def run_annealing(
    schedule: anneal.AnnealSchedule,
    backend: str,
    eta: float,
    epsilon: float,
    seed: int = 0,
    c_proj: float = 10.0,
    batch_size: int = 1,
    abort_overlap: float = 0.05,
    rule: str = "stiffness",
    perturbation: float = 0.0,
    warm_start: Optional[DiscreteDistribution] = None,
    keep_marginals: bool = False,
) -> RunResult:
    """Drive the lifted stage-0 state through every stage of ``schedule``.

    Each hop ``i -> i+1`` is planned from the actual squared overlap of the
    current state with the lifted stage-``i+1`` state and the per-stage failure
    budget ``(epsilon / M)^2``, which keeps the accumulated amplitude error
    below ``epsilon``.

    Raises:
        AnnealingFailed: If the overlap after a hop falls below ``abort_overlap``.
    """
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    ledger = QueryLedger()
    M = schedule.M

    def reflector(i: int) -> Reflector:
        st = exact_stage_walk(schedule, i, eta, rule)
        return Reflector(st, backend, schedule, c_proj, ledger, stage_rng(seed, i), batch_size,
                         perturbation=perturbation)

    if warm_start is None:
        hops = list(range(M))
        current = reflector(0)
        state = current.stage.state.astype(complex)
    else:
        hops = [M - 1]
        final = exact_stage_walk(schedule, M, eta, rule)
        state = wk.lift(final.walk, wk.coherent_state(warm_start)).amplitudes.astype(complex)
        current = StateReflector(state)
    budget = (epsilon / max(len(hops), 1)) ** 2
    records = []
    marginals = [wk.StateVector(state / np.linalg.norm(state), "product").probabilities()] if keep_marginals else []
    for i in hops:
        nxt = reflector(i + 1)
        p0 = float(abs(np.vdot(nxt.stage.state, state)) ** 2)
        plan = plan_amplification(p0, budget)
        state = amplify(state, current, nxt, plan)
        ov = float(abs(np.vdot(nxt.stage.state, state)))
        records.append(StageRecord(i + 1, p0, plan.depth, plan.predicted_failure, ov, 1.0 - ov * ov,
                                   nxt.stage.gap))
        if ov < abort_overlap:
            raise AnnealingFailed(i + 1, ov)
        if keep_marginals:
            marginals.append(wk.StateVector(state / np.linalg.norm(state), "product").probabilities())
        current = nxt
    state = state / np.linalg.norm(state)
    probs = wk.StateVector(state, "product").probabilities()
    target = anneal.stage_distribution(schedule, M)
    return RunResult(backend, float(eta), float(epsilon), int(seed), state, probs,
                     tv_distance(probs, target), ledger, tuple(records), tuple(marginals))


@dataclass(frozen=True)
class Measurement:
    samples: np.ndarray
    frequencies: np.ndarray
    empirical_tv: float


def measure(state, shots: int, seed: int) -> Measurement:
    """Draw ``shots`` first-register outcomes from a :class:`~qlangevin.walk.StateVector`.

    Plain arrays are read as grid amplitudes.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    if isinstance(state, wk.StateVector):
        probs = state.probabilities()
    else:
        probs = np.abs(np.asarray(state)) ** 2
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    samples = rng.choice(len(probs), size=shots, p=probs)
    freq = np.bincount(samples, minlength=len(probs)) / shots
    return Measurement(samples, freq, tv_distance(freq, probs))
