import math

import numpy as np
import pytest

from conftest import DW_CONSTANTS
from qlangevin import anneal, chains, domain as dm, partition as pt, potential as pot, qsa
from qlangevin.errors import IllConditionedSchedule

UNIT = pot.AssumptionConstants(L=1.0, m=1.0, b=0.0, G=0.0, c_lsi=1.0)


@pytest.fixture(scope="module")
def quad_schedule():
    grid = dm.build_grid(1, 6.0, 129)
    return anneal.build_schedule(pot.quadratic(1), UNIT, grid, 0.05)


@pytest.fixture(scope="module")
def dw_schedule():
    grid = dm.build_grid(1, 2.5, 33)
    constants = chains.measure_landscape(pot.double_well(1), DW_CONSTANTS, grid, 0.01)
    return anneal.build_schedule(pot.double_well(1), constants, grid, 0.5)


@pytest.mark.parametrize("s,d,expected", [(1 / (2 * math.pi), 1, 1.0), (1.0, 2, 2 * math.pi)])
def test_z0_examples(s, d, expected):
    assert pt.z0_closed_form(s, d) == pytest.approx(expected, rel=1e-15)


def test_z0_rejects_nonpositive():
    with pytest.raises(ValueError):
        pt.z0_closed_form(0.0, 1)


def test_first_rung_brackets_z0():
    eps = 0.2
    grid = dm.build_grid(1, 6.0, 65)
    s = anneal.build_schedule(pot.quadratic(1), UNIT, grid, eps)
    z0 = pt.z0_closed_form(s.sigma_sq[0], 1)
    # Mass of exp(-f) times the initial Gaussian; f >= 0 with f(0) = 0 keeps it below Z0.
    x = grid.nodes
    z1 = math.exp(dm.log_mass(grid, -pot.energy(s.spec, x) - np.sum(x**2, axis=1) / (2 * s.sigma_sq[0])))
    assert (1 - eps / 2) * z0 <= z1 <= z0


def test_degenerate_rung_ratio_is_one(quad_schedule):
    # Reuse the schedule with a rung whose two stages coincide.
    lw = quad_schedule.log_weights.copy()
    lw[2] = lw[1]
    s = anneal.AnnealSchedule(quad_schedule.spec, quad_schedule.constants, quad_schedule.domain,
                              quad_schedule.sigma_sq, quad_schedule.alpha, quad_schedule.M, quad_schedule.epsilon,
                              quad_schedule.target_sigma_sq, lw)
    assert pt.stage_ratio(s, 1) == pytest.approx(1.0, abs=1e-15)
    assert pt.relative_variance(s, 1) == pytest.approx(1.0, abs=1e-15)


def test_zero_potential_ratio_matches_quadrature():
    grid = dm.build_grid(1, 6.0, 129)
    s = anneal.build_schedule(pot.zero(1), UNIT, grid, 0.5)
    for i in range(s.M - 1):
        quad = math.exp(anneal.stage_log_mass(s, i + 1) - anneal.stage_log_mass(s, i))
        assert pt.stage_ratio(s, i) == pytest.approx(quad, rel=1e-12)
        # Continuum Gaussian normalisers give sqrt(1 + alpha).
        assert pt.stage_ratio(s, i) == pytest.approx(math.sqrt(1 + s.alpha), rel=1e-6)


def test_zero_potential_relvar_closed_form(record_property):
    grid = dm.build_grid(1, 6.0, 129)
    s = anneal.build_schedule(pot.zero(1), UNIT, grid, 0.5)
    assert s.alpha == pytest.approx(0.2)
    r = 1 + s.alpha
    exact = 1 / math.sqrt(r * (2 - r))
    for i in range(s.M - 1):
        rv = pt.relative_variance(s, i)
        assert rv == pytest.approx(exact, rel=1e-6)
        assert rv >= 1
    C = math.log(exact) / s.alpha**2
    record_property("relvar_C", C)
    assert pt.relative_variance(s, 0) <= math.exp(C * s.alpha**2) * (1 + 1e-6)


def test_relvar_floor_and_cap(dw_schedule, quad_schedule):
    for s in (dw_schedule, quad_schedule):
        rv = [pt.relative_variance(s, i) for i in range(s.M)]
        assert min(rv) >= 1 - 1e-12
    assert max(pt.relative_variance(dw_schedule, i) for i in range(dw_schedule.M)) <= 2.0


def test_relvar_constant_bounded(dw_schedule, record_property):
    cs = [pt.relvar_constant(dw_schedule, i) for i in range(dw_schedule.M)]
    record_property("relvar_C_max", max(cs))
    assert all(np.isfinite(cs))


def test_rung_index_checked(quad_schedule):
    with pytest.raises(IndexError):
        pt.stage_ratio(quad_schedule, quad_schedule.M)


# --- estimates ------------------------------------------------------------------------------


def test_quadratic_exact(quad_schedule):
    est = pt.estimate_partition(quad_schedule, 0.05)
    # Truncation at R=6 drops a tail of relative mass about 2e-9.
    assert est.reference == pytest.approx(math.sqrt(2 * math.pi), rel=1e-8)
    assert est.z_hat == pytest.approx(2.50662827098, rel=1e-10)
    assert abs(est.z_hat / math.sqrt(2 * math.pi) - 1) <= 0.05
    assert est.relative_error <= 0.05
    assert all(s == 0 for s in est.per_stage_shots)


def test_double_well_exact_telescopes(dw_schedule):
    est = pt.estimate_partition(dw_schedule, 0.5)
    # With exact rungs the only discrepancy is the grid quadrature of the narrow stage-0 Gaussian.
    assert est.relative_error <= 1e-4
    z0_grid = math.exp(anneal.stage_log_mass(dw_schedule, 0))
    assert est.z_hat * z0_grid / est.z0 == pytest.approx(est.reference, rel=1e-12)
    assert est.z_hat > 0


def test_bracket_rung_error_is_first_ratio(dw_schedule):
    exact = pt.estimate_partition(dw_schedule, 0.5)
    bracket = pt.estimate_partition(dw_schedule, 0.5, first_rung="bracket")
    assert bracket.z_hat * exact.per_stage_ratios[0] == pytest.approx(exact.z_hat, rel=1e-12)


def test_trivial_schedule_bracket_returns_z0():
    grid = dm.build_grid(1, 2.0, 9)
    s = anneal.build_schedule(pot.zero(1), pot.AssumptionConstants(L=1.0, m=1.0, c_lsi=4.0), grid, 0.9)
    assert s.M == 1
    est = pt.estimate_partition(s, 0.5, first_rung="bracket")
    assert est.z_hat == est.z0 == pt.z0_closed_form(s.sigma_sq[0], 1)


def test_ill_conditioned_schedule():
    grid = dm.build_grid(1, 2.5, 33)
    s = anneal.build_schedule(pot.double_well(1), DW_CONSTANTS.with_landscape(c_lsi=2.0), grid, 0.5,
                              alpha_scale=0.9)
    worst = max(pt.relative_variance(s, i) for i in range(s.M))
    assert worst > 1.0
    with pytest.raises(IllConditionedSchedule):
        pt.estimate_partition(s, 0.5, relvar_cap=0.5 * (1 + worst))


def test_bad_mode_and_epsilon(quad_schedule):
    with pytest.raises(ValueError):
        pt.estimate_partition(quad_schedule, 0.05, mode="quantum")
    with pytest.raises(ValueError):
        pt.estimate_partition(quad_schedule, 1.5)


def test_sampled_mode_shots_and_determinism():
    grid = dm.build_grid(1, 6.0, 65)
    s = anneal.build_schedule(pot.quadratic(1), UNIT, grid, 0.2)
    a = pt.estimate_partition(s, 0.2, mode="sampled", seed=3)
    b = pt.estimate_partition(s, 0.2, mode="sampled", seed=3)
    assert a.z_hat == b.z_hat
    for rv, k in zip(a.per_stage_relvar, a.per_stage_shots):
        assert k == math.ceil(4.0 * rv * s.M**2 / 0.2**2)
    assert a.relative_error <= 0.2


def test_sampled_mode_reuses_a_finished_run():
    grid = dm.build_grid(1, 6.0, 33)
    s = anneal.build_schedule(pot.quadratic(1), UNIT, grid, 0.5)
    run = qsa.run_annealing(s, "mala", 0.01, 0.5, seed=4, keep_marginals=True)
    fresh = pt.estimate_partition(s, 0.5, mode="sampled", seed=4)
    reused = pt.estimate_partition(s, 0.5, mode="sampled", seed=4, run=run)
    assert reused.z_hat == fresh.z_hat
    bare = qsa.run_annealing(s, "mala", 0.01, 0.5, seed=4)
    with pytest.raises(ValueError):
        pt.estimate_partition(s, 0.5, mode="sampled", run=bare)


def test_estimate_report(quad_schedule):
    rep = pt.estimate_partition(quad_schedule, 0.05).report()
    assert set(rep) == {"z_hat", "mode", "epsilon", "z0", "rungs", "grid_reference"}
    assert len(rep["rungs"]) == quad_schedule.M
    assert set(rep["rungs"][0]) == {"rung", "ratio", "relvar", "shots"}
