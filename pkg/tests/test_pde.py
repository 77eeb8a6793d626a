import dataclasses
import math

import numpy as np
import pytest

from conftest import constant_phi_field
from hjbportfolio.backend import HAVE_NUMBA
from hjbportfolio.errors import ConfigError, MaxPrincipleError, PhiRangeError
from hjbportfolio.kernels import apply_bc
from hjbportfolio.market import MarketSpec
from hjbportfolio.pde import (
    BCKind,
    GridSpec,
    solve,
    step,
    terminal_condition,
    write_phi_csv,
)
from hjbportfolio.qp import QPSettings, build_alpha_table
from hjbportfolio.utility import UtilitySpec
from oracles import explicit_pde_update, lerp_table


@pytest.fixture(scope="module")
def dara96_field(dax6_market, dax6_table, default_grid):
    return solve(UtilitySpec.dara(9.0, 6.0, 2.0), dax6_table, dax6_market, default_grid)


def degenerate_market():
    return MarketSpec(
        ("null",), np.array([0.0]), np.array([[0.0]]), epsilon=0.0, degenerate_ok=True
    )


def test_gridspec_normalizes_spacing():
    g = GridSpec()
    span = 10.0 - math.log(0.01)
    cells = round(span / 0.05)
    assert cells == 292
    assert g.h == pytest.approx(span / cells, rel=1e-15)
    assert g.n_interior == cells - 1
    x = g.x_nodes()
    assert x[0] == g.x_left
    assert x[-1] == pytest.approx(g.x_right, abs=1e-12)
    assert g.k == pytest.approx(0.05 * g.h**2, rel=1e-3)
    assert g.m_steps * g.k == pytest.approx(g.T, rel=1e-15)


def test_gridspec_rejects_bad_input():
    with pytest.raises(ConfigError):
        GridSpec(x_left=1.0, x_right=0.0)
    with pytest.raises(ConfigError):
        GridSpec(h=-0.1)
    with pytest.raises(ConfigError):
        GridSpec(T=0.0)


def test_terminal_condition_cara_constant(default_grid):
    term = terminal_condition(UtilitySpec.cara(9.0), default_grid)
    np.testing.assert_array_equal(term, 9.0)
    term1 = terminal_condition(UtilitySpec.cara(1.0), default_grid)
    np.testing.assert_array_equal(term1, 1.0)


def test_terminal_condition_dara_step_left_closed():
    grid = GridSpec(x_left=0.0, x_right=2.0, h=0.5, k=0.01, T=0.1)
    term = terminal_condition(UtilitySpec.dara(9.0, 6.0, 1.0), grid)
    # node exactly at the switch point takes the left value
    np.testing.assert_array_equal(term, [9.0, 9.0, 9.0, 6.0, 6.0])


def test_constant_layer_is_exact_steady_state(dax6_market, dax6_table):
    market0 = dataclasses.replace(dax6_market, epsilon=0.0)
    grid = GridSpec(T=1.0)
    layer = apply_bc(np.full(grid.n_interior + 2, 9.0), grid.h, False)
    out = step(layer, 0.0, dax6_table, market0, grid, bc=BCKind.NEUMANN_BOTH)
    assert np.abs(out - 9.0).max() <= 1e-13


def test_steady_state_full_horizon(dax6_market, dax6_table):
    market0 = dataclasses.replace(dax6_market, epsilon=0.0)
    grid = GridSpec(T=1.0)
    field = solve(
        UtilitySpec.cara(9.0), dax6_table, market0, grid, bc=BCKind.NEUMANN_BOTH
    )
    assert np.abs(field.values - 9.0).max() <= 1e-11
    assert field.global_min >= 9.0 - 1e-11
    assert field.global_max <= 9.0 + 1e-11


def test_degenerate_coefficients_leave_layer_unchanged():
    # mu = 0, Sigma = 0, eps = 0: D, E, F all vanish and the system is the
    # identity, so one step returns the input bitwise
    market = degenerate_market()
    table = build_alpha_table(market)
    grid = GridSpec(x_left=-1.0, x_right=1.0, h=0.1, k=0.01, T=1.0)
    rng = np.random.default_rng(3)
    layer = apply_bc(rng.uniform(2.0, 5.0, grid.n_interior + 2), grid.h, False)
    out = step(layer, 0.0, table, market, grid, bc=BCKind.NEUMANN_BOTH)
    np.testing.assert_array_equal(out[1:-1], layer[1:-1])


def test_pluggable_source_term():
    market = degenerate_market()
    table = build_alpha_table(market)
    grid = GridSpec(x_left=-1.0, x_right=1.0, h=0.1, k=0.01, T=1.0)
    layer = apply_bc(np.full(grid.n_interior + 2, 4.0), grid.h, False)
    out = step(layer, 0.0, table, market, grid, bc=BCKind.NEUMANN_BOTH,
               source=lambda x, tau, phi: np.full_like(x, 3.0))
    np.testing.assert_allclose(out[1:-1], 4.0 + grid.k * 3.0, rtol=0, atol=1e-15)


def test_one_step_matches_explicit_micro_stepping(dax6_market, dax6_table, default_grid):
    # oracle: the same finite-volume operator, fully explicit, 100 micro steps.
    # Agreement at 1e-4 requires a smooth layer: across the startup kink that
    # the Robin ghost puts into the constant terminal data, the implicit and
    # explicit treatments differ at O(3e-3) in a thin boundary layer.
    grid = default_grid
    smooth = solve(
        UtilitySpec.cara(9.0), dax6_table, dax6_market, grid, snapshot_times=[0.2]
    ).values[-1].copy()
    semi = step(smooth, 0.2, dax6_table, dax6_market, grid, bc=BCKind.ROBIN_LEFT)
    explicit = explicit_pde_update(
        smooth, 100, grid.k, grid.h, grid.x_nodes(), dax6_market.epsilon, dax6_market.r,
        dax6_table.phi_grid, dax6_table.alpha, dax6_table.alpha_prime, True,
    )
    assert np.abs(semi - explicit).max() <= 1e-4


def test_first_step_changes_most_near_left_edge(dax6_market, dax6_table, default_grid):
    # the inflow term e^(-x) peaks at x_left, so that is where the first
    # update moves the terminal layer hardest
    grid = default_grid
    term = apply_bc(
        terminal_condition(UtilitySpec.cara(9.0), grid).copy(), grid.h, True
    )
    semi = step(term, 0.0, dax6_table, dax6_market, grid, bc=BCKind.ROBIN_LEFT)
    change = np.abs(semi[1:-1] - term[1:-1])
    assert np.argmax(change) <= 3


def test_cara_solution_monotone_at_integer_taus(cara9_dense_field):
    taus = cara9_dense_field.tau_snapshots
    for j in np.flatnonzero(np.abs(taus - np.round(taus)) < 1e-9):
        diffs = np.diff(cara9_dense_field.values[j])
        assert diffs.min() >= -1e-8, f"tau={taus[j]}"


def test_dara_solution_not_monotone_after_step_smoothing(dara96_field):
    # the terminal jump at x* survives smoothing for the first couple of
    # years of forward time before the inflow decay washes it out
    for tau in (1.0, 2.0):
        layer = dara96_field.values[dara96_field.layer_index(tau)]
        diffs = np.diff(layer)
        assert diffs.min() < -1e-8
        assert np.any(diffs > 1e-8)


def test_max_principle_guard_quiet_on_defaults(cara9_dense_field, dara96_field):
    for field, hi in ((cara9_dense_field, 9.0), (dara96_field, 9.0)):
        assert field.global_min >= -1.0 - 1e-6
        assert field.global_max <= hi + 1e-6


def test_guard_fires_when_leaving_table_domain(dax6_market):
    narrow = build_alpha_table(dax6_market, QPSettings(phi_min=5.0, phi_max=15.0))
    grid = GridSpec(T=1.0)
    with pytest.raises(MaxPrincipleError, match="guard interval"):
        solve(UtilitySpec.cara(9.0), narrow, dax6_market, grid)


def test_terminal_data_outside_table_rejected(dax6_market, dax6_table):
    grid = GridSpec(T=1.0)
    with pytest.raises(PhiRangeError, match="terminal"):
        solve(UtilitySpec.cara(20.0), dax6_table, dax6_market, grid)


def test_divergence_form_conservation(dax6_market, dax6_table):
    # with Neumann ends and eps = 0 the interior fluxes telescope, so the
    # discrete mass changes only by the boundary fluxes of the scheme
    market0 = dataclasses.replace(dax6_market, epsilon=0.0)
    grid = GridSpec(x_left=-2.0, x_right=3.0, h=0.05, k=1e-4, T=1.0)
    n = grid.n_interior
    x = grid.x_nodes()
    layer = apply_bc(np.linspace(2.0, 8.0, n + 2), grid.h, False)
    new = step(layer, 0.0, dax6_table, market0, grid, bc=BCKind.NEUMANN_BOTH)

    def flux(face_phi, dphi_dx_new):
        d = lerp_table(dax6_table.phi_grid, dax6_table.alpha_prime, face_phi)
        alpha = lerp_table(dax6_table.phi_grid, dax6_table.alpha, face_phi)
        return d * dphi_dx_new + (-(alpha - 0.0 - market0.r) * face_phi)

    right = flux(0.5 * (layer[n] + layer[n + 1]), (new[n + 1] - new[n]) / grid.h)
    left = flux(0.5 * (layer[0] + layer[1]), (new[1] - new[0]) / grid.h)
    mass_change = grid.h * np.sum(new[1:-1] - layer[1:-1])
    assert abs(mass_change - grid.k * (right - left)) <= 1e-12


def test_grid_refinement_first_order(dax6_market, dax6_table):
    # h = 0.1 is outside the scheme's stability envelope for the stiff
    # left-edge inflow (the guard fires), so the study starts at the default h
    spec = UtilitySpec.cara(9.0)
    fields = {}
    for h in (0.05, 0.025, 0.0125):
        grid = GridSpec(h=h, T=0.5)
        fields[h] = solve(spec, dax6_table, dax6_market, grid, snapshot_times=[0.5])
    # nodes nest when the cell count doubles
    err_coarse = np.abs(fields[0.05].values[-1] - fields[0.025].values[-1][::2]).max()
    err_fine = np.abs(fields[0.025].values[-1] - fields[0.0125].values[-1][::2]).max()
    order = math.log2(err_coarse / err_fine)
    assert order >= 0.9
    assert err_fine <= err_coarse / 1.8


def test_snapshots_map_to_nearest_grid_times(dax6_market, dax6_table):
    grid = GridSpec(T=1.0)
    wanted = [0.0, 0.4999, 1.0]
    field = solve(UtilitySpec.cara(9.0), dax6_table, dax6_market, grid, snapshot_times=wanted)
    assert len(field.tau_snapshots) == 3
    for got, req in zip(field.tau_snapshots, wanted):
        assert abs(got - req) <= grid.k / 2 + 1e-12
    with pytest.raises(ConfigError):
        solve(UtilitySpec.cara(9.0), dax6_table, dax6_market, grid, snapshot_times=[2.0])


def test_boundary_relations_hold_on_stored_layers(cara9_dense_field):
    h = cara9_dense_field.grid.h
    for j in range(0, len(cara9_dense_field.tau_snapshots), 40):
        layer = cara9_dense_field.values[j]
        assert layer[0] == layer[1] / (1 + h) - h / (1 + h)
        assert layer[-1] == layer[-2]


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_backends_agree(dax6_market, dax6_table):
    grid = GridSpec(T=0.25)
    spec = UtilitySpec.cara(9.0)
    f_jit = solve(spec, dax6_table, dax6_market, grid, snapshot_times=[0.25])
    f_np = solve(spec, dax6_table, dax6_market, grid, snapshot_times=[0.25], force_numpy=True)
    assert np.abs(f_jit.values - f_np.values).max() <= 1e-12


def test_step_rejects_wrong_layer_size(dax6_market, dax6_table, default_grid):
    with pytest.raises(ConfigError):
        step(np.ones(10), 0.0, dax6_table, dax6_market, default_grid)


def test_phi_csv_export(cara9_dense_field, tmp_path):
    sub = constant_phi_field(
        GridSpec(x_left=0.0, x_right=1.0, h=0.5, k=0.1, T=0.2),
        3.0, [0.0, 0.2], type("T", (), {"phi_min": -1.0, "phi_max": 15.0})(),
    )
    path = tmp_path / "phi.csv"
    write_phi_csv(sub, path, meta={"config_hash": "h", "seed": 0, "version": "v"})
    text = path.read_text().splitlines()
    assert text[0].startswith("# config_hash=")
    assert text[3] == "tau,x,phi"
    assert len(text) == 4 + 2 * 3  # two layers, three nodes
