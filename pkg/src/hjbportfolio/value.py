"""Value-function reconstruction from the Riccati variable.

With phi solved, the value function is recovered as

    V(x, t) = a(t) + b(t) * int_{x0}^{x} exp(-int_{x0}^{xi} phi(eta, t) deta) dxi

where, writing gamma(t) = alpha(x0, t, phi(x0, t)) and
omega(t) = d_x alpha - alpha phi at x0 (total derivative
d_x alpha = eps e^(-x0) + alpha_tilde'(phi) d_x phi, with d_x phi by central
difference),

    b(t) = U'(x0) exp(-int_t^T omega),   a(t) = U(x0) - int_t^T gamma b.

All quadratures are composite trapezoid on the stored grids, matching the
first-order accuracy of the PDE scheme. V is increasing in x by
construction (d_x V = b exp(-int phi) > 0).

check_hjb_residual closes the loop: it recomputes phi = -d_x^2 V / d_x V
from the reconstructed V by central differences and evaluates the
transformed equation d_t V - alpha(x, t, phi) d_x V on interior nodes, which
should vanish up to discretization error.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .csvutil import write_csv
from .errors import ConfigError, NumericError
from .market import MarketSpec
from .pde import PhiField
from .qp import AlphaTable
from .utility import UtilitySpec, utility_prime, utility_value


@dataclass(frozen=True)
class ValueField:
    """V(x, t) on the PDE grid at the stored times, with the a/b profiles."""

    grid: object
    x0: float
    x0_index: int
    tau_snapshots: np.ndarray  # ascending, aligned with rows of V
    a_of_t: np.ndarray
    b_of_t: np.ndarray
    V: np.ndarray

    @property
    def t_snapshots(self) -> np.ndarray:
        return self.grid.T - self.tau_snapshots


@dataclass(frozen=True)
class HJBResidualReport:
    max_abs: float
    mean_abs: float
    n_points: int
    n_skipped: int


def _cumtrapz_from(y: np.ndarray, x: np.ndarray, i0: int) -> np.ndarray:
    """Signed cumulative trapezoid of y dx anchored at index i0.

    Accumulated outward from i0 in both directions: anchoring a left-edge
    cumsum by subtraction would cancel catastrophically when the integrand
    spans many orders of magnitude (exp(-int phi) does).
    """
    seg = 0.5 * (y[1:] + y[:-1]) * np.diff(x)
    out = np.empty_like(y)
    out[i0] = 0.0
    out[i0 + 1:] = np.cumsum(seg[i0:])
    out[:i0] = -np.cumsum(seg[:i0][::-1])[::-1]
    return out


def _alpha_lerp(table: AlphaTable, phi):
    grid = table.phi_grid
    phi = np.asarray(phi, dtype=np.float64)
    j = np.clip(np.searchsorted(grid, phi, side="right") - 1, 0, len(grid) - 2)
    w = (phi - grid[j]) / (grid[j + 1] - grid[j])
    alpha = table.alpha[j] + (table.alpha[j + 1] - table.alpha[j]) * w
    aprime = table.alpha_prime[j] + (table.alpha_prime[j + 1] - table.alpha_prime[j]) * w
    return alpha, aprime


def reconstruct(
    phi_field: PhiField,
    spec: UtilitySpec,
    table: AlphaTable,
    market: MarketSpec,
    x0: float | None = None,
    declared_coarse: bool = False,
) -> ValueField:
    """Rebuild V(x, t) on the stored layers.

    x0 defaults to the grid node nearest 0 (the experiment's initial
    log-wealth); any node works. The time integrals for a and b run over the
    stored layers; when those are coarser than the PDE time step a warning
    points out the accuracy trade unless the caller declares the coarse set
    as intentional (``declared_coarse``).
    """
    grid = phi_field.grid
    x = grid.x_nodes()
    taus = phi_field.tau_snapshots
    if len(taus) < 2:
        raise ConfigError("value reconstruction needs at least 2 stored layers")
    gaps = np.diff(taus)
    if not declared_coarse and gaps.max() > grid.k * (1 + 1e-9):
        warnings.warn(
            "stored layers are coarser than the PDE time step; "
            "a(t)/b(t) quadrature runs on the coarse set",
            stacklevel=2,
        )
    if x0 is None:
        x0 = 0.0
    if not (x[0] - 1e-12 <= x0 <= x[-1] + 1e-12):
        raise ConfigError(f"x0={x0} outside the grid [{x[0]}, {x[-1]}]")
    # snap to the nearest node; the reconstruction allows any fixed anchor
    i0 = int(np.argmin(np.abs(x - x0)))
    x0 = float(x[i0])
    if i0 == 0 or i0 == len(x) - 1:
        raise ConfigError("x0 must be an interior grid node")

    eps_x0 = market.epsilon * np.exp(-x0)
    phi_x0 = phi_field.values[:, i0]
    alpha_x0, aprime_x0 = _alpha_lerp(table, phi_x0)
    gamma = alpha_x0 - eps_x0 - market.r
    dphi_dx = (phi_field.values[:, i0 + 1] - phi_field.values[:, i0 - 1]) / (2 * grid.h)
    dalpha_dx = eps_x0 + aprime_x0 * dphi_dx
    omega = dalpha_dx - gamma * phi_x0

    # int_t^T f dt = int_0^tau f~ dtau for f~(tau) = f(T - tau)
    omega_int = np.concatenate([[0.0], np.cumsum(0.5 * (omega[1:] + omega[:-1]) * gaps)])
    b = utility_prime(spec, x0) * np.exp(-omega_int)
    gb = gamma * b
    a = utility_value(spec, x0) - np.concatenate(
        [[0.0], np.cumsum(0.5 * (gb[1:] + gb[:-1]) * gaps)]
    )

    V = np.empty_like(phi_field.values)
    for j in range(len(taus)):
        inner = _cumtrapz_from(phi_field.values[j], x, i0)
        weight = np.exp(-inner)
        outer = _cumtrapz_from(weight, x, i0)
        V[j] = a[j] + b[j] * outer
    if b.min() <= 0 or not np.all(np.isfinite(b)):
        raise NumericError("b(t) must stay positive and finite")
    return ValueField(
        grid=grid, x0=x0, x0_index=i0, tau_snapshots=taus, a_of_t=a, b_of_t=b, V=V
    )


def check_hjb_residual(
    vf: ValueField, table: AlphaTable, market: MarketSpec
) -> HJBResidualReport:
    """Residual of d_t V - alpha(x, t, -d_x^2 V / d_x V) d_x V on interior nodes.

    Central differences throughout; nodes whose recomputed phi leaves the
    tabulated domain are skipped and counted. Raises if d_x V <= 0 anywhere
    (V must be increasing for the transformation to be valid).
    """
    if len(vf.tau_snapshots) < 3:
        raise ConfigError("HJB residual needs at least 3 stored layers")
    grid = vf.grid
    x = grid.x_nodes()
    h = grid.h
    V = vf.V
    taus = vf.tau_snapshots

    dxV = (V[:, 2:] - V[:, :-2]) / (2 * h)
    # d_x V = b exp(-int phi) > 0 analytically but underflows the float
    # resolution of V where the utility plateaus; such nodes are skipped,
    # a genuinely negative slope is an error
    floor = 1e-13 * (np.abs(V[:, 2:]) + np.abs(V[:, :-2])) / (2 * h)
    if np.any(dxV < -floor):
        raise NumericError("d_x V < 0 at an interior node; V is not increasing")
    resolvable = dxV > floor
    dxxV = (V[:, 2:] - 2 * V[:, 1:-1] + V[:, :-2]) / (h * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi_eff = -dxxV / dxV

    # d/dt = -d/dtau; rows are tau-ordered
    residuals = []
    skipped = 0
    eps_term = market.epsilon * np.exp(-x[1:-1])
    for j in range(1, len(taus) - 1):
        dtV = -(V[j + 1, 1:-1] - V[j - 1, 1:-1]) / (taus[j + 1] - taus[j - 1])
        phi_j = phi_eff[j]
        ok = resolvable[j] & (phi_j >= table.phi_min) & (phi_j <= table.phi_max)
        skipped += int((~ok).sum())
        alpha_j, _ = _alpha_lerp(table, phi_j[ok])
        alpha_full = alpha_j - eps_term[ok] - market.r
        residuals.append(dtV[ok] - alpha_full * dxV[j][ok])
    res = np.concatenate(residuals)
    if res.size == 0:
        raise NumericError("no interior nodes had phi inside the tabulated domain")
    return HJBResidualReport(
        max_abs=float(np.abs(res).max()),
        mean_abs=float(np.abs(res).mean()),
        n_points=int(res.size),
        n_skipped=skipped,
    )


def write_value_csv(vf: ValueField, path, meta: dict | None = None):
    x = vf.grid.x_nodes()
    ts = vf.t_snapshots

    def rows():
        for j in range(len(ts)):
            for i in range(len(x)):
                yield [float(ts[j]), float(x[i]), float(vf.V[j, i])]

    write_csv(path, ["t", "x", "V"], rows(), meta=meta)
