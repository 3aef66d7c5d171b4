"""Truncated uniform grids and discrete distributions on them."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import DegenerateDensity, UnsupportedDimension


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Hypercube lattice filtered to the closed ball of radius ``R``.

    Attributes:
        d: Dimension (1 or 2).
        R: Truncation radius.
        n: Nodes per axis of the underlying lattice.
        nodes: Retained coordinates, shape ``(num_nodes, d)``, lexicographic.
        h: Lattice spacing ``2R/(n-1)``.
    """

    d: int
    R: float
    n: int
    nodes: np.ndarray
    h: float

    @property
    def cell_measure(self) -> float:
        return self.h**self.d

    @property
    def size(self) -> int:
        return len(self.nodes)

    def same_as(self, other: "GridDomain") -> bool:
        return (self.d, self.R, self.n) == (other.d, other.R, other.n)


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Probability vector aligned with the nodes of a grid."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12 * max(1, len(w)):
            raise ValueError("weights must be nonnegative and sum to one")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.weights)


def radius_bar(z: float, d: int, m: float, beta: float, L: float) -> float:
    """Square root of the largest of the three truncation terms at level ``z``."""
    if not (z > 0 and d > 0 and m > 0 and beta > 0 and L > 0):
        raise ValueError("radius_bar requires positive arguments")
    mb = m * beta
    lz = math.log(1.0 / z)
    terms = (
        625.0 * d * math.log(4.0 / z) / mb,
        4.0 * d * math.log(4.0 * L / m) / mb,
        (4.0 * d + 8.0 * math.sqrt(d * lz) + 8.0 * lz) / mb,
    )
    return math.sqrt(max(terms))


def truncation_radius(epsilon: float, d: int, m: float, beta: float, L: float) -> float:
    """Radius ``radius_bar(epsilon/12)`` that keeps the truncated law within tolerance."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    return radius_bar(epsilon / 12.0, d, m, beta, L)


def build_grid(d: int, R: float, n: int) -> GridDomain:
    """Uniform lattice on ``[-R, R]^d`` with ``n`` nodes per axis, cut to the ball."""
    if d not in (1, 2):
        raise UnsupportedDimension(f"only d in {{1, 2}} is supported, got {d}")
    if n < 2 or not R > 0:
        raise ValueError("need n >= 2 and R > 0")
    axis = np.linspace(-R, R, n)
    # Snap the exact centre to zero so the node set is symmetric under negation.
    axis = 0.5 * (axis - axis[::-1])
    pts = np.array(list(itertools.product(axis, repeat=d)), dtype=float)
    keep = np.sum(pts * pts, axis=1) <= R * R * (1 + 1e-12)
    pts = pts[keep]
    if len(pts) < 2:
        raise ValueError("grid retains fewer than two nodes")
    pts.setflags(write=False)
    return GridDomain(d=d, R=float(R), n=int(n), nodes=pts, h=2.0 * R / (n - 1))


LogDensity = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Normalise log weights with max subtraction."""
    logw = np.asarray(logw, dtype=float)
    if not np.all(np.isfinite(logw) | (logw == -np.inf)) or np.all(logw == -np.inf):
        raise DegenerateDensity("log density must be finite with some mass")
    w = np.exp(logw - logw.max())
    total = w.sum()
    if not total > 0:
        raise DegenerateDensity("density has zero mass on the grid")
    return w / total


def discretize_density(domain: GridDomain, log_density: LogDensity) -> DiscreteDistribution:
    """Turn an unnormalised log density into grid weights.

    The cell measure is a common factor and cancels on normalisation, so
    the result is invariant to additive constants in ``log_density``.
    """
    logw = log_density(domain.nodes) if callable(log_density) else np.asarray(log_density, float)
    return DiscreteDistribution(normalize_log_weights(logw))


def log_mass(domain: GridDomain, logw: np.ndarray) -> float:
    """``log(sum_x exp(logw(x)) * h^d)``, the grid quadrature of an unnormalised density."""
    top = logw.max()
    return float(top + math.log(np.exp(logw - top).sum()) + domain.d * math.log(domain.h))


def _weights(p) -> np.ndarray:
    return p.weights if isinstance(p, DiscreteDistribution) else np.asarray(p, dtype=float)


def tv_distance(p, q) -> float:
    """Total variation ``0.5 * sum |p - q|``."""
    return 0.5 * float(np.abs(_weights(p) - _weights(q)).sum())


def bhattacharyya(p, q) -> float:
    """``sum sqrt(p q)``, the overlap of the coherent encodings."""
    return float(np.sqrt(_weights(p) * _weights(q)).sum())


def hellinger(p, q) -> float:
    """Hellinger distance ``sqrt(0.5 * sum (sqrt p - sqrt q)^2)``."""
    diff = np.sqrt(_weights(p)) - np.sqrt(_weights(q))
    return float(np.sqrt(0.5 * np.sum(diff * diff)))
