"""Classical Langevin kernels on a grid, samplers and mixing diagnostics.

Kernels are exact row-stochastic matrices. The Gaussian proposal of a row at
``x`` has mean ``x - eta * g(x)`` and covariance ``(2 eta / beta) I``; it is
evaluated at the grid nodes and renormalised over the truncated grid.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import potential as pot
from .domain import DiscreteDistribution, GridDomain
from .errors import (
    DivergenceDetected,
    InvalidStep,
    StationaryNotConverged,
    TooLargeForExact,
)

EXACT_CONDUCTANCE_MAX_NODES = 14


class StepSizeWarning(UserWarning):
    """Raised (as a warning) when ``eta`` exceeds the admissible step size."""


@dataclass(frozen=True, eq=False)
class MarkovKernel:
    """Row-stochastic transition matrix over the nodes of a grid."""

    matrix: np.ndarray
    lazy: bool
    kind: str
    eta: float
    beta: float
    batch: Optional[pot.MiniBatch] = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def check(self, tol: float = 1e-10) -> None:
        P = self.matrix
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > tol:
            raise ValueError("matrix is not row-stochastic")
        if self.lazy and np.any(np.diag(P) < 0.5 - tol):
            raise ValueError("lazy kernel has a diagonal entry below 1/2")


@dataclass(frozen=True)
class MixingDiagnostics:
    stationary: DiscreteDistribution
    conductance: float
    db_residual: float
    spectral_gap: Optional[float]


def max_admissible_step(spec: pot.PotentialSpec, constants: pot.AssumptionConstants, R: float) -> float:
    """Largest step ``d / (beta (L R + G)^2)`` covered by the Hellinger estimate."""
    return spec.d / (spec.beta * (constants.L * R + constants.G) ** 2)


def _validate_step(eta, spec, constants, domain):
    if not eta > 0:
        raise InvalidStep(f"step size must be positive, got {eta}")
    if constants is not None:
        bound = max_admissible_step(spec, constants, domain.R)
        if eta > bound:
            warnings.warn(
                f"eta={eta:g} exceeds the admissible step {bound:.4g}", StepSizeWarning, stacklevel=3
            )


def proposal_log_matrix(domain: GridDomain, drift: np.ndarray, eta: float, beta: float) -> np.ndarray:
    """Log of the grid-renormalised Gaussian proposal ``log q(x -> y)``.

    Args:
        domain: Grid whose nodes are both sources and destinations.
        drift: Gradient used in the mean ``x - eta * drift(x)``, shape ``(k, d)``.
        eta: Step size.
        beta: Inverse temperature; the proposal variance is ``2 eta / beta``.
    """
    x = domain.nodes
    mean = x - eta * drift
    sq = np.sum((x[None, :, :] - mean[:, None, :]) ** 2, axis=-1)
    logq = -beta * sq / (4.0 * eta)
    return logq - logsumexp(logq, axis=1, keepdims=True)


def _lazify(q: np.ndarray) -> np.ndarray:
    out = 0.5 * q
    out[np.diag_indices_from(out)] += 0.5
    return out


def _gradient_kernel(spec, constants, domain, eta, lazy, drift, kind, batch=None):
    _validate_step(eta, spec, constants, domain)
    q = np.exp(proposal_log_matrix(domain, drift, eta, spec.beta))
    q /= q.sum(axis=1, keepdims=True)
    P = _lazify(q) if lazy else q
    return MarkovKernel(P, lazy, kind, float(eta), spec.beta, batch)


def ula_kernel(spec, constants, domain, eta, lazy: bool = False) -> MarkovKernel:
    """Unadjusted Langevin kernel with the full gradient."""
    return _gradient_kernel(spec, constants, domain, eta, lazy, pot.grad(spec, domain.nodes), "ULA")


def sula_kernel(spec, constants, domain, eta, batch: pot.MiniBatch, lazy: bool = False) -> MarkovKernel:
    """Unadjusted Langevin kernel driven by the mini-batch gradient of ``batch``."""
    drift = pot.stochastic_grad(spec, domain.nodes, batch)
    return _gradient_kernel(spec, constants, domain, eta, lazy, drift, "SULA", batch)


def mala_kernel(spec, constants, domain, eta) -> MarkovKernel:
    """Lazy Metropolis-adjusted Langevin kernel with exact grid detailed balance.

    The off-diagonal entry is ``0.5 * min(pi_x q_xy, pi_y q_yx) / pi_x`` where
    ``q`` is the grid-renormalised proposal and ``pi`` the grid Gibbs weights.
    Rejected mass stays on the diagonal.
    """
    _validate_step(eta, spec, constants, domain)
    logq = proposal_log_matrix(domain, pot.grad(spec, domain.nodes), eta, spec.beta)
    logpi = -spec.beta * pot.energy(spec, domain.nodes)
    flow = np.minimum(logpi[:, None] + logq, (logpi[:, None] + logq).T)
    P = 0.5 * np.exp(flow - logpi[:, None])
    np.fill_diagonal(P, 0.0)
    P[np.diag_indices_from(P)] = 1.0 - P.sum(axis=1)
    return MarkovKernel(P, True, "MALA", float(eta), spec.beta)


def gibbs(spec: pot.PotentialSpec, domain: GridDomain) -> DiscreteDistribution:
    """Grid Gibbs law ``pi(x) ∝ exp(-beta f(x))``."""
    from .domain import discretize_density

    return discretize_density(domain, -spec.beta * pot.energy(spec, domain.nodes))


def stationary(kernel, tol: float = 1e-12, max_iter: int = 10**6) -> DiscreteDistribution:
    """Left fixed point of the kernel by accelerated power iteration.

    The iteration runs on the lazy matrix ``(I + P)/2`` (same fixed point, no
    periodicity) and squares the iterate after every sweep, so ``k`` sweeps
    cost the equivalent of ``2^k - 1`` plain steps.
    """
    P = kernel.matrix if isinstance(kernel, MarkovKernel) else np.asarray(kernel, dtype=float)
    n = P.shape[0]
    step = 0.5 * (np.eye(n) + P)
    pi = np.full(n, 1.0 / n)
    done = 0
    power = 1
    while True:
        pi = pi @ step
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        done += power
        for _ in range(3):
            res = np.abs(pi @ P - pi).sum()
            if res <= tol:
                return DiscreteDistribution(pi / pi.sum())
            pi = pi @ P
            pi /= pi.sum()
        if done >= max_iter:
            raise StationaryNotConverged(f"residual {res:.3g} after {done} iterations")
        step = step @ step
        step /= step.sum(axis=1, keepdims=True)
        power *= 2


def detailed_balance_residual(kernel, pi) -> float:
    """``max_{x,y} |pi_x p_xy - pi_y p_yx|``."""
    P = kernel.matrix if isinstance(kernel, MarkovKernel) else np.asarray(kernel)
    w = pi.weights if isinstance(pi, DiscreteDistribution) else np.asarray(pi)
    F = w[:, None] * P
    return float(np.max(np.abs(F - F.T)))


def _cut_ratios(F: np.ndarray, w: np.ndarray, masks: np.ndarray) -> np.ndarray:
    inside = masks.astype(float)
    mass = inside @ w
    flow = np.einsum("sx,xy,sy->s", inside, F, 1.0 - inside)
    ok = (mass > 0) & (mass <= 0.5 + 1e-12)
    return np.where(ok, flow / np.where(ok, mass, 1.0), np.inf)


def conductance(kernel, pi, mode: str = "exact") -> float:
    """Conductance ``min_{pi(S) <= 1/2} Q(S, S^c) / pi(S)``.

    ``exact`` enumerates every subset (at most 14 nodes). ``sweep`` restricts to
    the sets of the ``k`` least likely nodes and is therefore an upper bound.
    """
    P = kernel.matrix if isinstance(kernel, MarkovKernel) else np.asarray(kernel)
    w = pi.weights if isinstance(pi, DiscreteDistribution) else np.asarray(pi)
    n = len(w)
    F = w[:, None] * P
    if mode == "exact":
        if n > EXACT_CONDUCTANCE_MAX_NODES:
            raise TooLargeForExact(f"exact conductance needs <= {EXACT_CONDUCTANCE_MAX_NODES} nodes, got {n}")
        codes = np.arange(1, 2**n - 1, dtype=np.int64)
        masks = (codes[:, None] >> np.arange(n)) & 1
    elif mode == "sweep":
        order = np.argsort(w, kind="stable")
        masks = np.zeros((n - 1, n), dtype=np.int64)
        for k in range(1, n):
            masks[k - 1, order[:k]] = 1
    else:
        raise ValueError(f"unknown conductance mode {mode!r}")
    ratios = _cut_ratios(F, w, masks)
    best = float(ratios.min()) if ratios.size else math.inf
    return 0.0 if not np.isfinite(best) else min(max(best, 0.0), 1.0)


def symmetrized(P: np.ndarray, w: np.ndarray) -> np.ndarray:
    s = np.sqrt(w)
    A = s[:, None] * P / s[None, :]
    return 0.5 * (A + A.T)


def spectral_gap(kernel, pi=None) -> float:
    """``1 - lambda_2`` of a reversible kernel, from its symmetrised form."""
    P = kernel.matrix if isinstance(kernel, MarkovKernel) else np.asarray(kernel)
    pi = stationary(P) if pi is None else pi
    w = pi.weights if isinstance(pi, DiscreteDistribution) else np.asarray(pi)
    ev = np.linalg.eigvalsh(symmetrized(P, w))
    return float(1.0 - ev[-2])


def diagnostics(kernel: MarkovKernel, conductance_mode: str = "sweep") -> MixingDiagnostics:
    pi = stationary(kernel)
    gap = spectral_gap(kernel, pi) if kernel.kind == "MALA" else None
    return MixingDiagnostics(
        pi, conductance(kernel, pi, conductance_mode), detailed_balance_residual(kernel, pi), gap
    )


def isoperimetric_constant(dist: DiscreteDistribution, domain: GridDomain) -> float:
    """Half-space isoperimetric constant of a grid law.

    For every axis the law is marginalised onto that axis and the
    one-dimensional Cheeger constant ``min_t p(t) / min(F(t), 1 - F(t))`` is
    evaluated at the midpoints between nodes. In one dimension this is exact for
    the piecewise-constant density; in two dimensions it restricts the infimum to
    axis-aligned half-planes.
    """
    w = dist.weights
    best = math.inf
    for axis in range(domain.d):
        coords = np.round(domain.nodes[:, axis] / domain.h).astype(int)
        levels, inv = np.unique(coords, return_inverse=True)
        marginal = np.bincount(inv, weights=w, minlength=len(levels))
        density = marginal / domain.h
        cdf = np.cumsum(marginal)[:-1]
        # density just left and right of every cut; the smaller one bounds the boundary mass
        edge = np.minimum(density[:-1], density[1:])
        tail = np.minimum(cdf, 1.0 - cdf)
        ok = tail > 0
        if np.any(ok):
            best = min(best, float(np.min(edge[ok] / tail[ok])))
    return best


def measure_landscape(spec, constants, domain, eta) -> pot.AssumptionConstants:
    """Fill missing ``c_lsi`` and ``rho`` from the MALA kernel on ``domain``.

    ``c_lsi`` falls back to the spectral gap divided by ``eta`` and ``rho`` to the
    half-space isoperimetric constant of the grid Gibbs law.
    """
    c_lsi, rho = constants.c_lsi, constants.rho
    if c_lsi is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StepSizeWarning)
            kernel = mala_kernel(spec, constants, domain, eta)
        c_lsi = spectral_gap(kernel, gibbs(spec, domain)) / eta
    if rho is None:
        rho = isoperimetric_constant(gibbs(spec, domain), domain)
    return constants.with_landscape(c_lsi=c_lsi, rho=rho)


# ---------------------------------------------------------------------------
# Continuous-space samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    accepted: Optional[np.ndarray]
    sampler: str
    eta: float

    def to_csv(self, path) -> None:
        """Write columns ``step, x0..x{d-1}[, accepted]``."""
        d = self.points.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["step"] + [f"x{i}" for i in range(d)]
            if self.accepted is not None:
                header.append("accepted")
            writer.writerow(header)
            for k, p in enumerate(self.points):
                row = [k] + [repr(float(v)) for v in p]
                if self.accepted is not None:
                    row.append(int(self.accepted[k - 1]) if k > 0 else 1)
                writer.writerow(row)


def _log_q(y, x, gx, eta, beta):
    diff = y - x + eta * gx
    return -beta * float(diff @ diff) / (4.0 * eta)


def _point_evaluators(spec: pot.PotentialSpec):
    """Cheap single-point energy and gradient, skipping the batch bookkeeping."""
    comps = spec.components
    inv = 1.0 / len(comps)

    def energy(x):
        pt = x.reshape(1, -1)
        val = sum(float(c.value(pt)[0]) for c in comps) * inv
        if not math.isfinite(val):
            raise pot.NonFiniteEnergy(f"non-finite energy at {x}")
        return val

    def grad(x):
        pt = x.reshape(1, -1)
        g = np.array(comps[0].grad(pt)[0], dtype=float)
        for c in comps[1:]:
            g += c.grad(pt)[0]
        g *= inv
        if not np.all(np.isfinite(g)):
            raise pot.NonFiniteGradient("non-finite gradient")
        return g

    return energy, grad


def simulate(
    sampler: str,
    spec: pot.PotentialSpec,
    x0,
    eta: float,
    steps: int,
    seed: int,
    batch_size: Optional[int] = None,
    R: Optional[float] = None,
) -> Trajectory:
    """Run ULA, MALA or SGLD in continuous space.

    Args:
        sampler: One of ``"ULA"``, ``"MALA"``, ``"SGLD"``.
        spec: Target potential.
        x0: Starting point.
        eta: Step size.
        steps: Number of transitions.
        seed: Seed of the private generator.
        batch_size: Mini-batch size for SGLD.
        R: If given, escaping the ball of radius ``10 R`` raises.

    Raises:
        DivergenceDetected: When the iterate leaves ``10 R`` or becomes non-finite.
    """
    sampler = sampler.upper()
    if sampler not in {"ULA", "MALA", "SGLD"}:
        raise ValueError(f"unknown sampler {sampler!r}")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not eta > 0:
        raise InvalidStep("step size must be positive")
    rng = np.random.default_rng(seed)
    d = spec.d
    beta = spec.beta
    x = np.asarray(x0, dtype=float).reshape(d)
    out = np.empty((steps + 1, d))
    out[0] = x
    acc = np.ones(steps, dtype=bool) if sampler == "MALA" else None
    scale = math.sqrt(2.0 * eta / beta)
    noise = rng.standard_normal((steps, d))
    energy, grad = _point_evaluators(spec)
    fx = energy(x) if sampler == "MALA" else 0.0
    gx = grad(x)
    limit = None if R is None else 10.0 * R
    for k in range(steps):
        if sampler == "SGLD":
            batch = pot.sample_batch(spec.N, batch_size or 1, rng)
            g = pot.stochastic_grad(spec, x, batch)
        else:
            g = gx
        y = x - eta * g + scale * noise[k]
        if sampler == "MALA":
            fy = energy(y)
            gy = grad(y)
            log_a = -beta * (fy - fx) + _log_q(x, y, gy, eta, beta) - _log_q(y, x, gx, eta, beta)
            if math.log(rng.random()) < min(0.0, log_a):
                x, fx, gx = y, fy, gy
            else:
                acc[k] = False
        else:
            x = y
            if sampler == "ULA":
                gx = grad(x)
        if not np.all(np.isfinite(x)) or (limit is not None and math.sqrt(float(x @ x)) > limit):
            raise DivergenceDetected(f"iterate left the admissible region at step {k + 1}")
        out[k + 1] = x
    return Trajectory(out, acc, sampler, float(eta))
