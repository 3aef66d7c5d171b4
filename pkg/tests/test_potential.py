import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qlangevin import domain as dm, potential as pot
from qlangevin.errors import AssumptionViolation, InvalidBatch, NonFiniteEnergy, TooManyBatches

SHIPPED = [
    pot.quadratic(1),
    pot.quadratic(2, scale=1.5, center=[0.3, -0.2]),
    pot.double_well(1),
    pot.double_well(2),
    pot.tilted_double_well([-0.3, 0.1, 0.2]),
    pot.mixture_of_quadratics(np.array([[-1.0], [0.0], [2.0]]), scale=0.7),
    pot.mixture_of_quadratics(np.array([[-1.0, 0.5], [1.0, -0.5]])),
]


@pytest.mark.parametrize(
    "spec, x, expected",
    [
        (pot.quadratic(1), 2.0, 2.0),
        (pot.double_well(1), 1.0, 0.0),
        (pot.double_well(1), 0.0, 0.25),
        (pot.mixture_of_quadratics(np.array([[-1.0], [1.0]])), 0.0, 0.5),
    ],
)
def test_energy_examples(spec, x, expected):
    assert pot.energy(spec, x) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("x, expected", [(1.0, 0.0), (2.0, 6.0), (-0.5, 0.375)])
def test_double_well_gradient_is_cubic(x, expected):
    assert pot.grad(pot.double_well(1), x)[0] == pytest.approx(expected, abs=1e-15)


def test_quadratic_gradient_is_identity():
    assert pot.grad(pot.quadratic(1), 2.0)[0] == 2.0


@pytest.mark.parametrize("spec", SHIPPED, ids=lambda s: f"{s.name}-d{s.d}")
def test_energy_is_component_mean(spec):
    x = np.random.default_rng(0).uniform(-2, 2, size=(50, spec.d))
    parts = pot.component_values(spec, x)
    np.testing.assert_allclose(pot.energy(spec, x), parts.mean(axis=0), rtol=1e-12)


@pytest.mark.parametrize("spec", SHIPPED, ids=lambda s: f"{s.name}-d{s.d}")
def test_gradient_matches_central_differences(spec):
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, size=(100, spec.d))
    h = 1e-5
    fd = np.empty_like(x)
    for j in range(spec.d):
        e = np.zeros(spec.d)
        e[j] = h
        fd[:, j] = (pot.energy(spec, x + e) - pot.energy(spec, x - e)) / (2 * h)
    g = pot.grad(spec, x)
    err = np.linalg.norm(g - fd, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1.0)
    assert err.max() <= 1e-6


def test_non_finite_energy_raises():
    bad = pot.PotentialSpec((pot.Component(lambda x: np.full(len(x), np.inf), lambda x: np.zeros_like(x)),), 1)
    with pytest.raises(NonFiniteEnergy):
        pot.energy(bad, 0.0)


def _four_quadratics():
    return pot.mixture_of_quadratics(np.array([[-1.5], [-0.5], [0.25], [2.0]]))


def test_exhaustive_batches_average_to_full_gradient():
    spec = _four_quadratics()
    x = np.array([[0.0], [0.7]])
    batches = pot.enumerate_batches(4, 2)
    assert len(batches) == 6
    mean = np.mean([pot.stochastic_grad(spec, x, b) for b in batches], axis=0)
    np.testing.assert_allclose(mean, pot.grad(spec, x), atol=1e-15)
    # The mean of x - c_k at x = 0 is -(-1.5 - 0.5 + 0.25 + 2.0) / 4 = -0.0625.
    assert pot.grad(spec, 0.0)[0] == pytest.approx(-0.0625, abs=1e-15)


def test_full_batch_equals_gradient():
    spec = _four_quadratics()
    full = pot.MiniBatch((0, 1, 2, 3), 4)
    np.testing.assert_array_equal(pot.stochastic_grad(spec, 0.3, full), pot.grad(spec, 0.3))


def test_identical_components_give_zero_variance():
    spec = pot.mixture_of_quadratics(np.zeros((3, 1)))
    for b in pot.enumerate_batches(3, 1):
        np.testing.assert_allclose(pot.stochastic_grad(spec, 1.2, b), pot.grad(spec, 1.2), atol=1e-15)


@pytest.mark.parametrize("indices", [(0, 0), (4,), (), (-1,)])
def test_invalid_batches(indices):
    with pytest.raises(InvalidBatch):
        pot.MiniBatch(indices, 4)


def test_too_many_batches():
    with pytest.raises(TooManyBatches):
        pot.enumerate_batches(20, 10)


@given(st.integers(1, 12), st.data())
def test_sampled_batches_are_valid(N, data):
    B = data.draw(st.integers(1, N))
    seed = data.draw(st.integers(0, 2**32 - 1))
    b = pot.sample_batch(N, B, np.random.default_rng(seed))
    assert len(set(b.indices)) == B and all(0 <= i < N for i in b.indices)


@given(st.floats(-3, 3), st.floats(0.1, 5.0))
def test_with_quadratic_adds_confinement(x, precision):
    spec = pot.double_well(1)
    tempered = pot.with_quadratic(spec, precision)
    assert pot.energy(tempered, x) == pytest.approx(pot.energy(spec, x) + 0.5 * precision * x * x, rel=1e-12, abs=1e-12)
    g = pot.grad(tempered, x)[0]
    assert g == pytest.approx(pot.grad(spec, x)[0] + precision * x, rel=1e-12, abs=1e-12)


def test_certify_exact_quadratic_constants():
    grid = dm.build_grid(1, 4.0, 81)
    rep = pot.certify_constants(pot.quadratic(1), pot.AssumptionConstants(1.0, 1.0, 0.0, 0.0), grid.nodes)
    assert rep.passed and rep.lipschitz == pytest.approx(1.0)


@pytest.mark.parametrize(
    "claimed, inequality",
    [
        (pot.AssumptionConstants(L=5.0, m=1.0, b=1.0), "smoothness"),
        (pot.AssumptionConstants(L=26.0, m=1.0, b=0.5), "dissipativity"),
        (pot.AssumptionConstants(L=26.0, m=2.0, b=1.0), "dissipativity"),
    ],
)
def test_falsified_double_well_constants(claimed, inequality):
    grid = dm.build_grid(1, 3.0, 121)
    with pytest.raises(AssumptionViolation) as info:
        pot.certify_constants(pot.double_well(1), claimed, grid.nodes)
    assert info.value.inequality == inequality
    assert info.value.witness is not None


def test_tightest_double_well_constants_on_dense_grid():
    # Hand oracle on [-3, 3]: L = max |3x^2 - 1| = 26; x^4 - 2x^2 + b >= 0 needs b >= 1;
    # (u^2 - 3u + 1)/4 + b/2 >= 0 (u = x^2) needs b >= 0.625; |x^3 - x| <= 26|x| gives G = 0.
    grid = dm.build_grid(1, 3.0, 601)
    fitted = pot.fit_constants(pot.double_well(1), grid.nodes, m=1.0)
    assert fitted.L == pytest.approx(26.0, rel=5e-3)
    assert fitted.b == pytest.approx(1.0, abs=1e-12)
    assert fitted.G == 0.0
    assert pot.certify_constants(pot.double_well(1), fitted, grid.nodes, probes=601).passed


@pytest.mark.parametrize("spec", SHIPPED[:6], ids=lambda s: f"{s.name}-d{s.d}")
def test_fitted_constants_hold_at_every_node(spec):
    grid = dm.build_grid(spec.d, 2.5, 33 if spec.d == 1 else 15)
    fitted = pot.fit_constants(spec, grid.nodes)
    assert pot.certify_constants(spec, fitted, grid.nodes, probes=grid.size).passed


def test_constants_validation():
    with pytest.raises(ValueError):
        pot.AssumptionConstants(L=0.0, m=1.0)
    c = pot.AssumptionConstants(L=1.0, m=1.0).with_landscape(c_lsi=0.5)
    assert c.c_lsi == 0.5 and c.rho is None


def test_catalog_lookup():
    assert pot.from_catalog("double_well", d=2).d == 2
    with pytest.raises(KeyError):
        pot.from_catalog("banana")


def test_exhaustive_enumeration_is_lexicographic():
    got = [b.indices for b in pot.enumerate_batches(4, 2)]
    assert got == list(itertools.combinations(range(4), 2))
