"""Finite-sum potentials, gradient oracles and assumption constants.

A potential is ``f(x) = (1/N) * sum_k f_k(x)`` over ``R^d``. Every component
carries an analytic gradient and is vectorised over a leading batch axis, so
``value(X)`` with ``X`` of shape ``(k, d)`` returns shape ``(k,)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (
    AssumptionViolation,
    InvalidBatch,
    NonFiniteEnergy,
    NonFiniteGradient,
    TooManyBatches,
)

MAX_ENUMERATED_BATCHES = 64


@dataclass(frozen=True)
class Component:
    """One summand ``f_k`` with its gradient.

    Attributes:
        value: Maps points of shape ``(k, d)`` to energies of shape ``(k,)``.
        grad: Maps points of shape ``(k, d)`` to gradients of shape ``(k, d)``.
        label: Human readable description used in reports.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    label: str = ""


@dataclass(frozen=True)
class PotentialSpec:
    """Finite-sum target ``f = (1/N) sum_k f_k`` at inverse temperature ``beta``."""

    components: tuple[Component, ...]
    d: int
    beta: float = 1.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.components) < 1:
            raise ValueError("a potential needs at least one component")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def N(self) -> int:
        return len(self.components)


@dataclass(frozen=True)
class AssumptionConstants:
    """Smoothness, dissipativity and landscape constants.

    ``c_lsi`` and ``rho`` may be ``None`` until they are supplied by the user or
    measured from a kernel (see :func:`qlangevin.chains.measure_landscape`).
    """

    L: float
    m: float
    b: float = 0.0
    G: float = 0.0
    c_lsi: float | None = None
    rho: float | None = None

    def __post_init__(self):
        if not (self.L > 0 and self.m > 0 and self.b >= 0 and self.G >= 0):
            raise ValueError("constants require L>0, m>0, b>=0, G>=0")

    def with_landscape(self, c_lsi: float | None = None, rho: float | None = None):
        return replace(
            self,
            c_lsi=self.c_lsi if c_lsi is None else float(c_lsi),
            rho=self.rho if rho is None else float(rho),
        )


@dataclass(frozen=True)
class MiniBatch:
    """Indices of a batch drawn uniformly without replacement from ``range(N)``."""

    indices: tuple[int, ...]
    N: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if not idx:
            raise InvalidBatch("batch must contain at least one index")
        if len(set(idx)) != len(idx):
            raise InvalidBatch(f"duplicate indices in batch {idx}")
        if min(idx) < 0 or max(idx) >= self.N:
            raise InvalidBatch(f"batch {idx} out of range for N={self.N}")

    @property
    def B(self) -> int:
        return len(self.indices)


def _as_points(x, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    arr = arr.reshape(-1, d) if single else arr
    if arr.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {arr.shape}")
    return arr, single


def component_values(spec: PotentialSpec, x) -> np.ndarray:
    """Energies of every component, shape ``(N, k)``."""
    pts, _ = _as_points(x, spec.d)
    return np.stack([c.value(pts) for c in spec.components])


def component_grads(spec: PotentialSpec, x) -> np.ndarray:
    """Gradients of every component, shape ``(N, k, d)``."""
    pts, _ = _as_points(x, spec.d)
    return np.stack([c.grad(pts) for c in spec.components])


def energy(spec: PotentialSpec, x):
    """Evaluate ``f(x)``; returns a float for a single point, else an array."""
    pts, single = _as_points(x, spec.d)
    vals = component_values(spec, pts).mean(axis=0)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteEnergy(f"non-finite energy at {pts[~np.isfinite(vals)][0]}")
    return float(vals[0]) if single else vals


def grad(spec: PotentialSpec, x):
    """Full gradient ``(1/N) sum_k grad f_k(x)``."""
    pts, single = _as_points(x, spec.d)
    g = component_grads(spec, pts).mean(axis=0)
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("non-finite gradient")
    return g[0] if single else g


def stochastic_grad(spec: PotentialSpec, x, batch: MiniBatch):
    """Mini-batch gradient ``(1/B) sum_{k in batch} grad f_k(x)``."""
    if batch.N != spec.N:
        raise InvalidBatch(f"batch drawn for N={batch.N}, potential has N={spec.N}")
    pts, single = _as_points(x, spec.d)
    g = np.zeros_like(pts)
    for k in batch.indices:
        g = g + spec.components[k].grad(pts)
    g = g / batch.B
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("non-finite stochastic gradient")
    return g[0] if single else g


def enumerate_batches(N: int, B: int) -> list[MiniBatch]:
    """All size-``B`` subsets of ``range(N)`` in lexicographic order."""
    if not 1 <= B <= N:
        raise InvalidBatch(f"batch size {B} invalid for N={N}")
    count = math.comb(N, B)
    if count > MAX_ENUMERATED_BATCHES:
        raise TooManyBatches(f"C({N},{B})={count} exceeds {MAX_ENUMERATED_BATCHES}")
    return [MiniBatch(c, N) for c in itertools.combinations(range(N), B)]


def sample_batch(N: int, B: int, rng: np.random.Generator) -> MiniBatch:
    if not 1 <= B <= N:
        raise InvalidBatch(f"batch size {B} invalid for N={N}")
    return MiniBatch(tuple(sorted(rng.choice(N, size=B, replace=False).tolist())), N)


def with_quadratic(spec: PotentialSpec, precision: float, keep_f: bool = True) -> PotentialSpec:
    """Add ``precision * ||x||^2 / (2 beta)`` to every component.

    The returned potential ``g`` satisfies ``beta*g = beta*f + precision*||x||^2/2``,
    which is the form of the tempered annealing stages. With ``keep_f=False`` the
    result is the pure Gaussian potential with a single component.
    """
    scale = precision / spec.beta

    def q_val(x):
        return 0.5 * scale * np.sum(x * x, axis=-1)

    def q_grad(x):
        return scale * x

    if not keep_f:
        comp = Component(q_val, q_grad, f"gauss(prec={precision:g})")
        return PotentialSpec((comp,), spec.d, spec.beta, "gaussian", {"precision": precision})
    comps = []
    for c in spec.components:
        comps.append(
            Component(
                (lambda x, c=c: c.value(x) + q_val(x)),
                (lambda x, c=c: c.grad(x) + q_grad(x)),
                f"{c.label}+gauss(prec={precision:g})",
            )
        )
    params = dict(spec.params, precision=precision)
    return PotentialSpec(tuple(comps), spec.d, spec.beta, spec.name + "+gauss", params)


# ---------------------------------------------------------------------------
# Catalog
# ---------------------------------------------------------------------------


def quadratic(d: int = 1, scale: float = 1.0, center=None, beta: float = 1.0) -> PotentialSpec:
    """Isotropic quadratic ``scale/2 * ||x - center||^2``."""
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float).reshape(d)
    comp = Component(
        lambda x: 0.5 * scale * np.sum((x - c) ** 2, axis=-1),
        lambda x: scale * (x - c),
        f"quad(scale={scale:g})",
    )
    return PotentialSpec((comp,), d, beta, "quadratic", {"d": d, "scale": scale})


def zero(d: int = 1, beta: float = 1.0) -> PotentialSpec:
    """The null potential, useful for closed-form Gaussian checks."""
    comp = Component(lambda x: np.zeros(x.shape[0]), lambda x: np.zeros_like(x), "zero")
    return PotentialSpec((comp,), d, beta, "zero", {"d": d})


def _dw_value(x, tilt=0.0):
    v = 0.25 * (x[:, 0] ** 2 - 1.0) ** 2 + tilt * x[:, 0]
    if x.shape[1] == 2:
        v = v + 0.5 * x[:, 1] ** 2
    return v


def _dw_grad(x, tilt=0.0):
    g = np.empty_like(x)
    g[:, 0] = x[:, 0] ** 3 - x[:, 0] + tilt
    if x.shape[1] == 2:
        g[:, 1] = x[:, 1]
    return g


def double_well(d: int = 1, beta: float = 1.0) -> PotentialSpec:
    """Double well ``(x1^2 - 1)^2/4`` plus ``x2^2/2`` in two dimensions."""
    if d not in (1, 2):
        raise ValueError("double well is defined for d in {1, 2}")
    comp = Component(_dw_value, _dw_grad, "double_well")
    return PotentialSpec((comp,), d, beta, "double_well", {"d": d})


def tilted_double_well(tilts: Sequence[float], d: int = 1, beta: float = 1.0) -> PotentialSpec:
    """Finite-sum double well whose components carry linear tilts ``a_k x1``.

    The tilts are centred so the sum is exactly the untilted double well.
    """
    a = np.asarray(tilts, dtype=float)
    a = a - a.mean()
    comps = tuple(
        Component(
            (lambda x, t=t: _dw_value(x, t)),
            (lambda x, t=t: _dw_grad(x, t)),
            f"double_well(tilt={t:+.3g})",
        )
        for t in a
    )
    return PotentialSpec(comps, d, beta, "tilted_double_well", {"d": d, "tilts": a.tolist()})


def mixture_of_quadratics(centers, scale: float = 1.0, beta: float = 1.0) -> PotentialSpec:
    """Finite sum of quadratics ``f_k = scale/2 ||x - c_k||^2``.

    Args:
        centers: Array of shape ``(N,)`` (for d=1) or ``(N, d)``.
        scale: Common curvature of every component.
        beta: Inverse temperature.
    """
    c = np.asarray(centers, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    d = c.shape[1]
    comps = tuple(
        Component(
            (lambda x, ck=ck: 0.5 * scale * np.sum((x - ck) ** 2, axis=-1)),
            (lambda x, ck=ck: scale * (x - ck)),
            f"quad(center={ck.tolist()})",
        )
        for ck in c
    )
    return PotentialSpec(comps, d, beta, "mixture_of_quadratics", {"centers": c.tolist(), "scale": scale})


CATALOG = {
    "quadratic": quadratic,
    "double_well": double_well,
    "tilted_double_well": tilted_double_well,
    "mixture_of_quadratics": mixture_of_quadratics,
    "zero": zero,
}


def from_catalog(name: str, **params) -> PotentialSpec:
    if name not in CATALOG:
        raise KeyError(f"unknown potential {name!r}; choose from {sorted(CATALOG)}")
    return CATALOG[name](**params)


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificationReport:
    """Worst values of the four defining expressions over the probe set.

    ``lipschitz`` must be ``<= L``; ``dissipativity`` and ``lower_bound`` must be
    ``>= 0``; ``gradient_growth`` must be ``<= 0``.
    """

    lipschitz: float
    dissipativity: float
    lower_bound: float
    gradient_growth: float
    probes: int
    passed: bool
    failures: tuple[str, ...] = ()


def _probe_points(nodes: np.ndarray, probes: int) -> np.ndarray:
    if probes < 2:
        raise ValueError("certification needs at least 2 probes")
    if probes >= len(nodes):
        return nodes
    idx = np.unique(np.round(np.linspace(0, len(nodes) - 1, probes)).astype(int))
    return nodes[idx]


def _max_secant(values: np.ndarray, pts: np.ndarray, chunk: int = 512):
    """Largest ``||v_i - v_j|| / ||x_i - x_j||`` over distinct point pairs."""
    best, pair = 0.0, None
    for start in range(0, len(pts), chunk):
        xs, vs = pts[start : start + chunk], values[start : start + chunk]
        dist = np.linalg.norm(xs[:, None, :] - pts[None, :, :], axis=-1)
        dv = np.linalg.norm(vs[:, None, :] - values[None, :, :], axis=-1)
        ratio = np.divide(dv, dist, out=np.zeros_like(dv), where=dist > 0)
        i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[i, j] > best:
            best, pair = float(ratio[i, j]), (xs[i].tolist(), pts[j].tolist())
    return best, pair


def _constant_expressions(spec: PotentialSpec, pts: np.ndarray, m: float, b: float):
    """Per-probe quantities shared by certification and fitting."""
    gk = component_grads(spec, pts)  # (N, k, d)
    f = energy(spec, pts)
    g = gk.mean(axis=0)
    lip, lip_at = 0.0, None
    for comp_g in gk:
        value, pair = _max_secant(comp_g, pts)
        if value > lip:
            lip, lip_at = value, pair
    sq = np.sum(pts * pts, axis=-1)
    diss = np.sum(g * pts, axis=-1) - m * sq + b
    lower = f - m * sq / 4.0 - f.min() + b / 2.0
    gnorm = np.linalg.norm(gk, axis=-1).max(axis=0)
    return lip, lip_at, diss, lower, gnorm, np.sqrt(sq)


def certify_constants(
    spec: PotentialSpec, constants: AssumptionConstants, nodes: np.ndarray, probes: int = 200
) -> CertificationReport:
    """Audit claimed constants on a probe subset of ``nodes``.

    Raises:
        AssumptionViolation: On the first violated inequality, with its witness.
    """
    pts = _probe_points(np.asarray(nodes, dtype=float).reshape(len(nodes), -1), probes)
    L, m, b, G = constants.L, constants.m, constants.b, constants.G
    lip, lip_at, diss, lower, gnorm, r = _constant_expressions(spec, pts, m, b)
    growth = gnorm - L * r - G
    tol = 1e-9
    if lip > L * (1 + tol):
        raise AssumptionViolation("smoothness", lip_at, lip)
    if diss.min() < -tol:
        raise AssumptionViolation("dissipativity", pts[np.argmin(diss)].tolist(), diss.min())
    if lower.min() < -tol:
        raise AssumptionViolation("quadratic lower bound", pts[np.argmin(lower)].tolist(), lower.min())
    if growth.max() > tol:
        raise AssumptionViolation("gradient growth", pts[np.argmax(growth)].tolist(), growth.max())
    return CertificationReport(lip, float(diss.min()), float(lower.min()), float(growth.max()), len(pts), True)


def fit_constants(spec: PotentialSpec, nodes: np.ndarray, m: float = 1.0) -> AssumptionConstants:
    """Tightest ``(L, b, G)`` for a given dissipativity slope ``m`` on ``nodes``.

    ``L`` is the largest secant slope of any component gradient over all node
    pairs, ``b`` the smallest offset satisfying both the dissipativity and the
    quadratic lower-bound inequalities, and ``G`` the smallest gradient-growth
    offset given ``L``.
    """
    pts = np.asarray(nodes, dtype=float).reshape(len(nodes), -1)
    lip, _, diss0, lower0, gnorm, r = _constant_expressions(spec, pts, m, 0.0)
    b = float(max(0.0, -diss0.min(), -2.0 * lower0.min()))
    G = max(0.0, float((gnorm - lip * r).max()))
    return AssumptionConstants(L=lip, m=m, b=b, G=G)
