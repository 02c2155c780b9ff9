import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivnn.analysis import (MONITORED_WEIGHT, RESULT_COLUMNS, SweepConfig, cell_seed, consistency_sweep,
                           group_by_sigma, linear_regressors, linearization_check, local_iv_estimate, local_ls_estimate,
                           loglog_slope, median_realization, read_results_csv, residual_norm, residual_trace,
                           sweep_cells, write_results_csv)
from ivnn.errors import DimensionMismatch, SingularCrossMatrix, SingularNormalMatrix
from ivnn.lti import RationalFilter
from ivnn.nn import MlpShape, forward_signal, init_params, unflatten
from ivnn.plant import StribeckPlant, simulate_closed_loop
from ivnn.signals import FourthOrderLimits, Signal, derivative_basis_matrix, make_fourth_order_reference
from ivnn.train import IV, LS, OptimizerOptions

TS = 1e-3


def test_ls_estimate_degenerate_cases():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((20, 3))
    assert np.all(local_ls_estimate(F, np.zeros(20)) == 0)
    # component of d orthogonal to range(F)
    Q, _ = np.linalg.qr(np.hstack([F, rng.standard_normal((20, 1))]))
    d = Q[:, 3]
    assert np.allclose(local_ls_estimate(F, d), 0, atol=1e-14)


def test_ls_estimate_matches_brute_force_scan():
    rng = np.random.default_rng(1)
    F = rng.standard_normal((5, 2))
    d = rng.standard_normal(5)
    delta = local_ls_estimate(F, d)
    grid = np.linspace(-3, 3, 601)
    cost = [(np.sum((d + F @ np.array([a, b])) ** 2), a, b) for a, b in itertools.product(grid, grid)]
    _, a, b = min(cost)
    # residual convention: minimise || -d - F delta ||
    assert np.allclose(delta, [a, b], atol=0.01)
    assert np.allclose(delta, -np.linalg.lstsq(F, d, rcond=None)[0], rtol=1e-12)


def test_iv_estimate_degenerate_and_defining_system():
    rng = np.random.default_rng(2)
    Z, F, d = rng.standard_normal((30, 4)), rng.standard_normal((30, 4)), rng.standard_normal(30)
    delta = local_iv_estimate(Z, F, d)
    lhs, rhs = Z.T @ F @ delta, -Z.T @ d
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(rhs)
    Q, _ = np.linalg.qr(np.hstack([Z, rng.standard_normal((30, 1))]))
    assert np.allclose(local_iv_estimate(Z, F, Q[:, 4]), 0, atol=1e-12)
    assert np.array_equal(local_iv_estimate(F, F, d), local_ls_estimate(F, d))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_closed_forms_satisfy_their_linear_systems(seed, p):
    rng = np.random.default_rng(seed)
    Z, F, d = rng.standard_normal((40, p)), rng.standard_normal((40, p)), rng.standard_normal(40)
    dl = local_ls_estimate(F, d)
    assert np.linalg.norm(F.T @ F @ dl + F.T @ d) <= 1e-12 * np.linalg.norm(F.T @ F) * max(1, np.linalg.norm(dl))
    di = local_iv_estimate(Z, F, d)
    M = Z.T @ F
    assert np.linalg.norm(M @ di + Z.T @ d) <= 1e-12 * np.linalg.norm(M) * max(1, np.linalg.norm(di) * np.linalg.cond(M))
    assert np.array_equal(local_iv_estimate(F, F, d), dl)


def test_singular_matrices_are_loud():
    F = np.ones((10, 2))
    with pytest.raises(SingularNormalMatrix):
        local_ls_estimate(F, np.ones(10))
    Z = np.zeros((10, 2))
    with pytest.raises(SingularCrossMatrix):
        local_iv_estimate(Z, np.eye(10)[:, :2], np.ones(10))
    with pytest.raises(DimensionMismatch):
        local_ls_estimate(np.ones((4, 2)), np.ones(5))


def test_return_condition_number():
    F = np.diag([1.0, 10.0])
    _, cond = local_ls_estimate(F, np.ones(2), return_cond=True)
    assert cond == pytest.approx(100.0)


@pytest.fixture(scope="module")
def small_setup():
    r = make_fourth_order_reference(FourthOrderLimits(), TS)
    ds0 = simulate_closed_loop(StribeckPlant(), RationalFilter.controller(), r, Signal(np.zeros(len(r)), TS))
    shape = MlpShape((3, 3, 1), basis=derivative_basis_matrix(TS, [0.25, 0.5, 1.0]))
    return r, ds0, shape


def test_residual_trace_of_zero_network(small_setup):
    _, ds0, shape = small_setup
    zero = unflatten(np.zeros(shape.n_phi), shape)
    trace, scale = residual_trace(zero, ds0)
    assert scale == np.max(np.abs(ds0.u.values))
    assert np.array_equal(trace.values, ds0.u.values / scale)
    assert residual_norm(zero, ds0) == pytest.approx(np.linalg.norm(ds0.u.values))


def test_residual_trace_bounded_by_fit(small_setup):
    _, ds0, shape = small_setup
    phi = init_params(shape, 4)
    trace, scale = residual_trace(phi, ds0)
    assert np.linalg.norm(trace.values) * scale == pytest.approx(residual_norm(phi, ds0), rel=1e-12)


def affine_linear_loop():
    """Linear mass-damper loop with an affine network: the model class contains the exact inverse."""
    plant = StribeckPlant(c1=4.0, c2=4.0)
    r = make_fourth_order_reference(FourthOrderLimits(), TS)
    ds0 = simulate_closed_loop(plant, RationalFilter.controller(), r, Signal(np.zeros(len(r)), TS))
    shape = MlpShape((3, 1), basis=derivative_basis_matrix(TS, [0.25, 0.5, 1.0]))
    phi0 = unflatten(np.array([0.0, 4.0 * 0.5, 5.0 * 1.0, 0.0]), shape)
    return ds0, phi0


def test_linearization_check_affine_case_is_exact():
    ds0, phi0 = affine_linear_loop()
    assert np.max(np.abs(forward_signal(phi0, ds0.y).values - ds0.u.values)) < 1e-9
    d = np.random.default_rng(3).standard_normal(ds0.n) * 0.01
    for crit in (LS, IV):
        # reference-driven regressors: correlated with F, independent of d
        Z = linear_regressors(ds0.r, phi0.basis) if crit == IV else None
        rows = linearization_check(ds0, phi0, crit, [0.0, 1.0, 0.5], d, Z)
        assert rows[0].discrepancy == 0 and rows[0].closed_form_shift == 0
        for row in rows[1:]:
            assert row.ratio < 1e-6
        r1, r2 = rows[1:]
        assert r1.closed_form_shift == pytest.approx(2 * r2.closed_form_shift, rel=1e-12)


def test_linearization_check_validates_inputs():
    ds0, phi0 = affine_linear_loop()
    with pytest.raises(DimensionMismatch):
        linearization_check(ds0, phi0, LS, [1.0], np.zeros(3))
    with pytest.raises(ValueError):
        linearization_check(ds0, phi0, "ML", [1.0], np.zeros(ds0.n))


def test_loglog_slope():
    x = np.array([1, 0.5, 0.25, 0.125])
    assert loglog_slope(x, 3 * x**2) == pytest.approx(2.0)
    assert loglog_slope(x, 0.1 * x) == pytest.approx(1.0)


def test_cell_seed():
    assert cell_seed(0, 1, 2) == cell_seed(0, 1, 2)
    seeds = {cell_seed(7, i, j) for i in range(5) for j in range(20)}
    assert len(seeds) == 100
    assert cell_seed(0, 1, 2) != cell_seed(1, 1, 2)
    expected = int(np.random.SeedSequence(7, spawn_key=(3, 4)).generate_state(1, dtype=np.uint64)[0])
    assert cell_seed(7, 3, 4) == expected


@pytest.fixture(scope="module")
def tiny_sweep(small_setup):
    r, ds0, shape = small_setup
    phi0 = init_params(shape, 1)
    cfg = SweepConfig(StribeckPlant(), RationalFilter.controller(), RationalFilter.noise_shaping(), r, phi0,
                      sigma_levels=(0.0, 0.002), realizations=3, master_seed=5,
                      optimizer=OptimizerOptions(max_iters=4))
    return cfg, consistency_sweep(cfg)


def test_sweep_record_count_and_order(tiny_sweep):
    cfg, results = tiny_sweep
    assert len(results) == len(cfg.sigma_levels) * cfg.realizations * 2
    keys = [(r.sigma_index, r.realization, r.criterion) for r in results]
    assert keys == [(i, j, c) for i in range(2) for j in range(3) for c in (LS, IV)]
    idx = cfg.phi0.shape.weight_index(*MONITORED_WEIGHT)
    for res in results:
        assert res.error == "" and res.monitored_coeff == res.phi_hat[idx]
        assert res.seed == cell_seed(5, res.sigma_index, res.realization)


def test_sweep_is_deterministic(tiny_sweep):
    cfg, results = tiny_sweep
    cells = sweep_cells(cfg)[1:4:2]
    again = consistency_sweep(cfg, cells)
    want = {(r.sigma_index, r.realization, r.criterion): r.row() for r in results}
    for res in again:
        assert res.row() == want[(res.sigma_index, res.realization, res.criterion)]


def test_sweep_records_cell_failures(small_setup):
    r, _, shape = small_setup
    cfg = SweepConfig(StribeckPlant(), RationalFilter.controller(), RationalFilter.noise_shaping(), r,
                      init_params(shape, 1), sigma_levels=(-1.0, 0.0), realizations=1,
                      optimizer=OptimizerOptions(max_iters=1))
    results = consistency_sweep(cfg)
    assert len(results) == 4
    assert all(x.error.startswith("ValueError") and not x.converged for x in results[:2])
    assert results[0].status_text().startswith("ValueError")
    assert all(x.error == "" for x in results[2:])


def test_results_csv_round_trip(tmp_path, tiny_sweep):
    _, results = tiny_sweep
    write_results_csv(results, tmp_path / "results.csv")
    rows = read_results_csv(tmp_path / "results.csv")
    assert list(rows[0]) == RESULT_COLUMNS
    for row, res in zip(rows, results):
        assert row["monitored_coeff"] == res.monitored_coeff
        assert row["residual_norm"] == res.residual_norm
        assert row["seed"] == res.seed and row["criterion"] == res.criterion
        assert row["converged"] == res.converged
    grouped = group_by_sigma(rows, IV, "monitored_coeff")
    assert list(grouped) == [0.0, 0.002] and grouped[0.002].size == 3
    direct = group_by_sigma(results, IV, "monitored_coeff")
    assert all(np.array_equal(grouped[k], direct[k]) for k in grouped)


def test_median_realization():
    rows = [{"criterion": LS, "sigma_nu": 0.005, "residual_norm": v, "realization": j}
            for j, v in enumerate([3.0, 1.0, 2.0, np.nan, 5.0])]
    rows.append({"criterion": IV, "sigma_nu": 0.005, "residual_norm": 2.5, "realization": 9})
    # finite LS norms sorted: 1 (j=1), 2 (j=2), 3 (j=0), 5 (j=4); lower median
    assert median_realization(rows, 0.005) == 2
    assert median_realization(rows, 0.005, IV) == 9
    with pytest.raises(ValueError):
        median_realization(rows, 0.001)


def test_workers_do_not_change_results(tiny_sweep):
    cfg, results = tiny_sweep
    cells = sweep_cells(cfg)[:2]
    from dataclasses import replace

    par = consistency_sweep(replace(cfg, workers=2), cells)
    assert [r.row() for r in par] == [r.row() for r in results[:4]]
