"""Szegedy quantisation of Markov kernels.

For a kernel ``P`` on ``n`` nodes the walk acts on the product space of
dimension ``n^2`` (index ``x * n + y`` for ``|x>|y>``) as

    U = S (2 A A^T - I),   A = sum_x |psi_x><x|,   |psi_x> = sum_y sqrt(p_xy) |x>|y>,

with ``S`` the swap. ``U`` maps ``span{A, SA}`` (the *active space*) to itself:
``U A = S A`` and ``U S A = 2 S A D - A`` where ``D_xy = sqrt(p_xy p_yx)`` is the
discriminant. Everything spectral is therefore computed from ``2n x 2n``
matrices; on the orthogonal complement ``U = -S`` and its phases are 0 or pi.
The dense ``n^2 x n^2`` unitary is only materialised in ``full`` mode.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from . import chains
from . import potential as pot
from .chains import MarkovKernel
from .domain import DiscreteDistribution, GridDomain
from .errors import InvalidThreshold, ModeMismatch, TooLargeForFull, ZeroPhaseGap

FULL_MODE_MAX_NODES = 40
GRAM_TOL = 1e-11
GAP_TOL = 1e-12
MODES = ("full", "active", "discriminant")


class ProjectorRankWarning(UserWarning):
    """The selected spectral subspace is empty or not one-dimensional."""


# ---------------------------------------------------------------------------
# Product-space primitives
# ---------------------------------------------------------------------------


def swap(V: np.ndarray, n: int) -> np.ndarray:
    """Apply the swap ``|x>|y> -> |y>|x>`` to the rows of ``V`` (shape ``(n^2, ...)``)."""
    rest = V.shape[1:]
    return V.reshape((n, n) + rest).swapaxes(0, 1).reshape(V.shape)


def apply_isometry(root: np.ndarray, C: np.ndarray) -> np.ndarray:
    """``A @ C`` for ``root = sqrt(P)``; ``C`` has shape ``(n,)`` or ``(n, k)``."""
    n = root.shape[0]
    if C.ndim == 1:
        return (root * C[:, None]).reshape(n * n)
    return (root[:, :, None] * C[:, None, :]).reshape(n * n, C.shape[1])


def apply_isometry_adjoint(root: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``A^T @ V`` for product-space vectors or matrices ``V``."""
    n = root.shape[0]
    if V.ndim == 1:
        return np.einsum("xy,xy->x", root, V.reshape(n, n))
    return np.einsum("xy,xyk->xk", root, V.reshape(n, n, -1))


def apply_walk(root: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``U @ V`` without forming ``U``."""
    n = root.shape[0]
    return swap(2.0 * apply_isometry(root, apply_isometry_adjoint(root, V)) - V, n)


def isometry_matrix(root: np.ndarray) -> np.ndarray:
    return apply_isometry(root, np.eye(root.shape[0]))


def _schur_eig(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Phases and orthonormal eigenvectors of a (numerically) unitary matrix."""
    T, Z = sla.schur(np.asarray(M, dtype=complex), output="complex")
    return np.angle(np.diag(T)), Z


def polar_factor(M: np.ndarray) -> np.ndarray:
    """Closest unitary to ``M`` in every unitarily invariant norm."""
    W, _, Vh = np.linalg.svd(M)
    return W @ Vh


# ---------------------------------------------------------------------------
# Walk operator
# ---------------------------------------------------------------------------


def discriminant(kernel) -> np.ndarray:
    """``D_xy = sqrt(p_xy p_yx)``."""
    P = kernel.matrix if isinstance(kernel, MarkovKernel) else np.asarray(kernel, dtype=float)
    return np.sqrt(P * P.T)


@dataclass(frozen=True, eq=False)
class WalkOperator:
    """Quantised kernel.

    Attributes:
        mode: ``full`` (dense ``U`` stored), ``active`` (active-space basis only)
            or ``discriminant`` (spectral summary only).
        kernel: Source kernel.
        D: Discriminant matrix.
        singular_values: Singular values of ``D`` in descending order.
        phases: Sorted eigenphases. Full mode lists all ``n^2`` phases of ``U``;
            active mode the phases on the active space; discriminant mode
            ``arccos`` of the singular values.
        U: Dense walk unitary (full mode only).
        basis: Orthonormal basis ``Q`` of the active space, shape ``(n^2, k)``.
        U_active: ``Q^T U Q``.
        active_phases: Eigenphases on the active space (unsorted, aligned with
            ``active_vectors``).
        active_vectors: Orthonormal eigenvectors of ``U_active`` in ``Q`` coordinates.
    """

    mode: str
    kernel: MarkovKernel
    D: np.ndarray
    singular_values: np.ndarray
    phases: np.ndarray
    root: np.ndarray
    U: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    U_active: Optional[np.ndarray] = None
    active_phases: Optional[np.ndarray] = None
    active_vectors: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.D.shape[0]

    @property
    def lambda1(self) -> float:
        """Second largest singular value of the discriminant."""
        return float(self.singular_values[1]) if self.n > 1 else 0.0

    def require_space(self) -> None:
        if self.basis is None:
            raise ModeMismatch("operation needs a full or active mode walk")

    def apply(self, V: np.ndarray) -> np.ndarray:
        return apply_walk(self.root, V)

    def eigvectors(self) -> np.ndarray:
        """Active-space eigenvectors in product-space coordinates, ``(n^2, k)``."""
        self.require_space()
        return self.basis @ self.active_vectors


def _active_space(root: np.ndarray, D: np.ndarray):
    """Orthonormal basis of ``span{A, SA}`` and the compressed walk.

    The Gram matrix of ``[A, SA]`` is ``[[I, D], [D, I]]`` and ``U [A, SA] =
    [A, SA] T`` with ``T = [[0, -I], [I, 2D]]``.
    """
    n = D.shape[0]
    eye = np.eye(n)
    gram = np.block([[eye, D], [D, eye]])
    evals, evecs = np.linalg.eigh(gram)
    keep = evals > GRAM_TOL
    C = evecs[:, keep] / np.sqrt(evals[keep])
    T = np.block([[np.zeros((n, n)), -eye], [eye, 2.0 * D]])
    U_act = C.T @ gram @ T @ C
    sigma = np.block([[np.zeros((n, n)), eye], [eye, np.zeros((n, n))]])
    S_act = C.T @ gram @ sigma @ C
    Q = apply_isometry(root, C[:n]) + swap(apply_isometry(root, C[n:]), n)
    return Q, U_act, S_act


def build_walk(kernel: MarkovKernel, mode: str = "full") -> WalkOperator:
    """Quantise ``kernel``.

    Raises:
        TooLargeForFull: Full mode on more than 40 nodes.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    P = kernel.matrix
    n = P.shape[0]
    if mode == "full" and n > FULL_MODE_MAX_NODES:
        raise TooLargeForFull(f"full mode supports at most {FULL_MODE_MAX_NODES} nodes, got {n}")
    root = np.sqrt(P)
    D = discriminant(P)
    sv = np.linalg.svd(D, compute_uv=False)
    if mode == "discriminant":
        phases = np.sort(np.arccos(np.clip(sv, -1.0, 1.0)))
        return WalkOperator(mode, kernel, D, sv, phases, root)
    Q, U_act, S_act = _active_space(root, D)
    act_ph, Z = _schur_eig(U_act)
    U = None
    if mode == "full":
        A = isometry_matrix(root)
        U = swap(2.0 * A @ A.T - np.eye(n * n), n)
        k = Q.shape[1]
        anti_active = int(round(0.5 * (k - np.trace(S_act))))
        sym_active = k - anti_active
        zeros = n * (n - 1) // 2 - anti_active
        pis = n * (n + 1) // 2 - sym_active
        phases = np.sort(np.concatenate([act_ph, np.zeros(zeros), np.full(pis, math.pi)]))
    else:
        phases = np.sort(act_ph)
    return WalkOperator(mode, kernel, D, sv, phases, root, U, Q, U_act, act_ph, Z)


def phase_gap(walk: WalkOperator) -> float:
    """``2 arccos |lambda_1|`` from the discriminant's singular values.

    Raises:
        ZeroPhaseGap: If ``lambda_1`` equals one within tolerance.
    """
    lam = walk.lambda1
    if lam >= 1.0 - GAP_TOL:
        raise ZeroPhaseGap(f"second singular value {lam!r} is one; the walk has no gap")
    return 2.0 * math.acos(min(abs(lam), 1.0))


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateVector:
    """Unit vector on the grid (length ``n``) or product space (length ``n^2``)."""

    amplitudes: np.ndarray
    space: str = "grid"

    def __post_init__(self):
        a = np.asarray(self.amplitudes)
        if abs(np.linalg.norm(a) - 1.0) > 1e-10:
            raise ValueError("state vector must have unit norm")

    def probabilities(self) -> np.ndarray:
        """Measurement law of the first register."""
        a = self.amplitudes
        if self.space == "grid":
            return np.abs(a) ** 2
        n = math.isqrt(len(a))
        return np.sum(np.abs(a.reshape(n, n)) ** 2, axis=1)


def coherent_state(dist) -> StateVector:
    """``sum_x sqrt(w_x) |x>``."""
    w = dist.weights if isinstance(dist, DiscreteDistribution) else np.asarray(dist, dtype=float)
    return StateVector(np.sqrt(w), "grid")


def lift(walk: WalkOperator, state) -> StateVector:
    """Embed a grid state into the product space via ``A``."""
    amps = state.amplitudes if isinstance(state, StateVector) else np.asarray(state)
    return StateVector(apply_isometry(walk.root, amps), "product")


# ---------------------------------------------------------------------------
# Projectors
# ---------------------------------------------------------------------------


def spectral_subspace(walk: WalkOperator, gamma: float) -> np.ndarray:
    """Orthonormal basis of active-space eigenvectors with ``|phase| < gamma``."""
    if not gamma > 0:
        raise InvalidThreshold(f"threshold must be positive, got {gamma}")
    walk.require_space()
    sel = np.abs(walk.active_phases) < gamma
    return walk.basis @ walk.active_vectors[:, sel]


def projector_below(walk: WalkOperator, gamma: float, space: str = "active") -> np.ndarray:
    """Dense spectral projector onto eigenvectors of ``U`` with ``|phase| < gamma``.

    Args:
        walk: Full-mode walk.
        gamma: Phase threshold.
        space: ``active`` restricts to the active space, where lifted states
            live; ``full`` also includes the complement, on which ``U = -S``
            has phase 0 (antisymmetric part) and ``pi`` (symmetric part).
    """
    if walk.mode != "full":
        raise ModeMismatch("dense projectors need a full-mode walk")
    V = spectral_subspace(walk, gamma)
    proj = V @ V.conj().T
    rank = V.shape[1]
    if space == "full":
        n = walk.n
        eye = np.eye(n * n)
        comp = eye - walk.basis @ walk.basis.T
        S = swap(eye, n)
        proj = proj + comp @ (0.5 * (eye - S))
        if gamma > math.pi:
            proj = proj + comp @ (0.5 * (eye + S))
        rank = int(round(np.trace(proj).real))
    elif space != "active":
        raise ValueError("space must be 'active' or 'full'")
    if rank != 1:
        warnings.warn(f"spectral projector has rank {rank}", ProjectorRankWarning, stacklevel=2)
    return proj


def perturbed_unitary(U: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Polar factor of ``U + strength * H`` for a random Hermitian ``H`` of unit norm."""
    k = U.shape[0]
    G = rng.standard_normal((k, k)) + 1j * rng.standard_normal((k, k))
    H = 0.5 * (G + G.conj().T)
    H /= np.linalg.norm(H, 2)
    return polar_factor(U + strength * H)


def projector_from_unitary(U: np.ndarray, gamma: float) -> np.ndarray:
    """Spectral projector of a small dense unitary onto ``|phase| < gamma``."""
    if not gamma > 0:
        raise InvalidThreshold(f"threshold must be positive, got {gamma}")
    ph, Z = _schur_eig(U)
    V = Z[:, np.abs(ph) < gamma]
    return V @ V.conj().T


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def _joint_basis(walks: Sequence[WalkOperator]) -> np.ndarray:
    cols = []
    for w in walks:
        A = isometry_matrix(w.root)
        cols += [A, swap(A, w.n)]
    B = np.hstack(cols)
    W, s, _ = np.linalg.svd(B, full_matrices=False)
    return W[:, s > 1e-10 * s[0]]


def op_distance(walk_a: WalkOperator, walk_b: WalkOperator) -> float:
    """Spectral norm ``||U_a - U_b||``.

    Both walks equal ``-S`` outside the span of their four isometry blocks, so the
    norm is evaluated on that (at most ``4n``-dimensional) joint space.
    """
    if walk_a.mode == "discriminant" or walk_b.mode == "discriminant":
        raise ModeMismatch("operator distance needs full or active mode walks")
    if walk_a.n != walk_b.n:
        raise ModeMismatch("walks live on different grids")
    Q = _joint_basis([walk_a, walk_b])
    diff = walk_a.apply(Q) - walk_b.apply(Q)
    return float(np.linalg.norm(diff, 2))


def max_row_hellinger(kernel_a, kernel_b) -> float:
    """``max_x sqrt(0.5 * sum_y (sqrt p_xy - sqrt q_xy)^2)``."""
    Pa = kernel_a.matrix if isinstance(kernel_a, MarkovKernel) else np.asarray(kernel_a)
    Pb = kernel_b.matrix if isinstance(kernel_b, MarkovKernel) else np.asarray(kernel_b)
    diff = np.sqrt(Pa) - np.sqrt(Pb)
    return float(np.sqrt(0.5 * np.max(np.sum(diff * diff, axis=1))))


# ---------------------------------------------------------------------------
# Stochastic walk family
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WalkFamily:
    walks: tuple[WalkOperator, ...]
    batches: tuple[pot.MiniBatch, ...]
    expected: np.ndarray
    reference: WalkOperator


def stochastic_walk_family(
    spec: pot.PotentialSpec,
    constants: Optional[pot.AssumptionConstants],
    domain: GridDomain,
    eta: float,
    batch_size: int,
    enumeration: str = "exact",
    count: int = 0,
    seed: int = 0,
) -> WalkFamily:
    """Full-mode walks of lazy mini-batch kernels and their mean operator.

    ``enumeration="exact"`` uses every size-``batch_size`` subset with uniform
    weights; ``"sampled"`` draws ``count`` batches from ``seed``. The reference
    walk is the lazy full-gradient kernel.
    """
    if enumeration == "exact":
        batches = pot.enumerate_batches(spec.N, batch_size)
    elif enumeration == "sampled":
        rng = np.random.default_rng(seed)
        batches = [pot.sample_batch(spec.N, batch_size, rng) for _ in range(count)]
    else:
        raise ValueError("enumeration must be 'exact' or 'sampled'")
    walks = tuple(
        build_walk(chains.sula_kernel(spec, constants, domain, eta, b, lazy=True), "full") for b in batches
    )
    expected = np.mean([w.U for w in walks], axis=0)
    reference = build_walk(chains.ula_kernel(spec, constants, domain, eta, lazy=True), "full")
    return WalkFamily(walks, tuple(batches), expected, reference)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def spectrum_rows(walk: WalkOperator, pi: Optional[DiscreteDistribution] = None):
    """Rows ``(index, phase, |overlap with lifted pi|)`` of the active spectrum."""
    walk.require_space()
    pi = chains.stationary(walk.kernel) if pi is None else pi
    ref = lift(walk, coherent_state(pi)).amplitudes
    overlaps = np.abs(walk.eigvectors().conj().T @ ref)
    order = np.argsort(walk.active_phases, kind="stable")
    return [(i, float(walk.active_phases[j]), float(overlaps[j])) for i, j in enumerate(order)]


def write_spectrum_csv(walk: WalkOperator, path, pi=None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "phase", "overlap_pi"])
        for i, ph, ov in spectrum_rows(walk, pi):
            writer.writerow([i, repr(ph), repr(ov)])
