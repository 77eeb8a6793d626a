import numpy as np
import pytest

from conftest import single_asset_market
from hjbportfolio.errors import ConfigError, PhiRangeError
from hjbportfolio.market import MarketSpec
from hjbportfolio.qp import (
    AlphaTable,
    QPSettings,
    build_alpha_table,
    eval_alpha,
    read_alpha_csv,
    solve_qp,
    write_alpha_csv,
)
from oracles import brute_force_qp, qp_support_enumeration


def two_asset_identity(m=0.3):
    return MarketSpec(("a", "b"), np.array([m, m]), np.eye(2))


def test_symmetric_two_asset_split():
    market = two_asset_identity(0.3)
    for phi in (-0.5, 0.0, 2.0, 9.0):
        theta, val = solve_qp(market, phi)
        np.testing.assert_allclose(theta, [0.5, 0.5], atol=1e-12)
        assert val == pytest.approx(-0.3 + (phi + 1) / 4, rel=1e-12)


def test_lp_limit_picks_best_mean_vertex(dax6_market):
    theta, val = solve_qp(dax6_market, -1.0)
    np.testing.assert_array_equal(theta, [1, 0, 0, 0, 0, 0])
    assert val == -0.7315


def test_lp_limit_tie_breaks_to_lowest_index():
    market = MarketSpec(("a", "b", "c"), np.array([0.2, 0.4, 0.4]), np.eye(3))
    theta, val = solve_qp(market, -1.0)
    np.testing.assert_array_equal(theta, [0, 1, 0])
    assert val == -0.4


def test_phi_below_domain_raises(dax6_market):
    with pytest.raises(PhiRangeError):
        solve_qp(dax6_market, -1.5)


def test_six_asset_matches_support_enumeration(dax6_market):
    for phi in (-0.9, 0.0, 3.0, 9.0, 15.0):
        theta, val = solve_qp(dax6_market, phi)
        theta_ref, val_ref = qp_support_enumeration(
            dax6_market.mu, dax6_market.sigma_mat, phi
        )
        assert val == pytest.approx(val_ref, abs=1e-11)
        np.testing.assert_allclose(theta, theta_ref, atol=1e-8)


def test_three_asset_matches_brute_force(dax6_market):
    mu = dax6_market.mu[:3]
    sigma = dax6_market.sigma_mat[:3, :3]
    market = MarketSpec(dax6_market.asset_names[:3], mu, sigma)
    for phi in (-1.0, 0.0, 9.0):
        _, val = solve_qp(market, phi)
        _, val_bf = brute_force_qp(mu, sigma, phi, step=1e-3)
        assert val <= val_bf + 1e-12       # grid value can never beat the optimum
        assert val_bf - val <= 1e-5


def test_warm_start_agrees_with_cold(dax6_market):
    cold, val_cold = solve_qp(dax6_market, 5.0)
    warm, val_warm = solve_qp(dax6_market, 5.0, warm_start=np.array([0, 0, 0.5, 0.5, 0, 0]))
    assert val_warm == pytest.approx(val_cold, abs=1e-12)
    np.testing.assert_allclose(warm, cold, atol=1e-9)


def test_default_table_has_3201_nodes(dax6_table):
    assert len(dax6_table.phi_grid) == 3201
    assert dax6_table.phi_grid[0] == -1.0
    assert dax6_table.phi_grid[-1] == 15.0


def test_single_asset_table_is_affine():
    market = single_asset_market(mu=0.1, var=0.04)
    table = build_alpha_table(market)
    expected = -0.1 + (table.phi_grid + 1) / 2 * 0.04
    np.testing.assert_allclose(table.alpha, expected, atol=1e-14)
    np.testing.assert_allclose(table.alpha_prime, 0.02, atol=1e-15)
    np.testing.assert_allclose(table.theta_hat, 1.0, atol=0)


def test_table_monotone_and_concave(dax6_table):
    d1 = np.diff(dax6_table.alpha)
    assert d1.min() > 0
    assert dax6_table.alpha_prime.min() > 0
    assert np.diff(dax6_table.alpha, 2).max() <= 1e-9


def test_alpha_prime_matches_central_differences(dax6_table):
    step = dax6_table.phi_grid[1] - dax6_table.phi_grid[0]
    cd = (dax6_table.alpha[2:] - dax6_table.alpha[:-2]) / (2 * step)
    interior_kinks = dax6_table.kink_mask()[1:-1]
    assert interior_kinks.mean() <= 0.05
    smooth = ~interior_kinks
    agree = np.abs(cd[smooth] - dax6_table.alpha_prime[1:-1][smooth]) <= 1e-4
    assert agree.mean() >= 0.95


def test_theta_simplex_invariants(dax6_table):
    assert dax6_table.theta_hat.min() >= -1e-12
    np.testing.assert_allclose(dax6_table.theta_hat.sum(axis=1), 1.0, atol=1e-10)


def test_theta_locally_lipschitz_along_grid(dax6_table):
    step = dax6_table.phi_grid[1] - dax6_table.phi_grid[0]
    jumps = np.linalg.norm(np.diff(dax6_table.theta_hat, axis=0), axis=1)
    lipschitz = jumps.max() / step
    # bounded difference quotients; the constant itself is data-dependent
    assert np.isfinite(lipschitz) and lipschitz < 1e3


def test_eval_at_node_returns_node_values(dax6_table):
    i = 1600
    phi = float(dax6_table.phi_grid[i])
    alpha, aprime, theta = eval_alpha(dax6_table, phi)
    assert alpha == dax6_table.alpha[i]
    assert aprime == dax6_table.alpha_prime[i]
    np.testing.assert_array_equal(theta, dax6_table.theta_hat[i])


def test_eval_constant_segment_preserves_theta():
    market = single_asset_market(mu=0.1, var=0.04)
    table = build_alpha_table(market)
    _, _, theta = eval_alpha(table, 1.2345)
    np.testing.assert_array_equal(theta, [1.0])


def test_eval_blend_is_renormalized(dax6_table):
    rng = np.random.default_rng(11)
    lo, hi = dax6_table.phi_min, dax6_table.phi_max
    for phi in rng.uniform(lo, hi, 200):
        _, _, theta = eval_alpha(dax6_table, float(phi))
        assert theta.min() >= 0
        assert abs(theta.sum() - 1.0) <= 1e-12


def test_eval_out_of_range_raises(dax6_table):
    with pytest.raises(PhiRangeError):
        eval_alpha(dax6_table, 15.5)
    with pytest.raises(PhiRangeError):
        eval_alpha(dax6_table, -1.1)


def test_csv_round_trip(dax6_table, tmp_path):
    path = tmp_path / "alpha.csv"
    write_alpha_csv(dax6_table, path, meta={"config_hash": "abc", "seed": 1, "version": "x"})
    back = read_alpha_csv(path)
    np.testing.assert_array_equal(back.phi_grid, dax6_table.phi_grid)
    np.testing.assert_array_equal(back.alpha, dax6_table.alpha)
    np.testing.assert_array_equal(back.alpha_prime, dax6_table.alpha_prime)
    np.testing.assert_array_equal(back.theta_hat, dax6_table.theta_hat)


def test_settings_validation():
    with pytest.raises(ConfigError):
        QPSettings(phi_min=2.0, phi_max=1.0)
    with pytest.raises(ConfigError):
        QPSettings(phi_step=0.0)


def test_table_rejects_unsorted_grid():
    with pytest.raises(ConfigError):
        AlphaTable(
            phi_grid=np.array([0.0, 0.0, 1.0]),
            alpha=np.zeros(3),
            alpha_prime=np.ones(3),
            theta_hat=np.ones((3, 1)),
        )
