"""Semi-implicit finite-volume solver for the Riccati-variable PDE.

Written in forward time tau = T - t, the equation is

    d_tau phi = d_x^2 A + d_x B + C,
    A = alpha(x, phi) = alpha_tilde(phi) - eps e^(-x) - r,
    B = -alpha(x, phi) phi,   C = 0,

with initial data phi(x, 0) = -U''(x)/U'(x). Integrating over finite-volume
cells and taking the diffusion unknowns at the new layer while the
coefficients

    D = alpha_tilde'(phi),  E = eps e^(-x),  B

are evaluated at the old layer on cell faces (arithmetic node averages)
yields, per step, the tridiagonal system

    -(k/h^2) D_{i+} phi_{i+1} + (1 + (k/h^2)(D_{i+} + D_{i-})) phi_i
    -(k/h^2) D_{i-} phi_{i-1}
        = (k/h)(E_{i+} - E_{i-} + F_{i+} - F_{i-}) + k C_i + phi_i_old,

solved with the Thomas algorithm. Boundary conditions are a Robin condition
on the left (d_x phi = 1 + phi, discretized phi_0 = phi_1/(1+h) - h/(1+h))
and a Neumann condition on the right (phi_{n+1} = phi_n); both are
eliminated implicitly into the end rows. A Neumann-both variant exists for
inflow-free test fixtures where the Robin asymptotics do not apply.

A discrete maximum-principle guard runs every step: the layer must stay
inside the hull of the terminal/boundary data (the Robin relation has fixed
point -1, which enters the hull on the left), within slack 1e-6, and inside
the tabulated alpha domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .backend import numba_enabled
from .csvutil import write_csv
from .errors import ConfigError, MaxPrincipleError, NumericError, PhiRangeError
from .kernels import apply_bc, pde_loop, pde_step_numpy
from .market import MarketSpec
from .qp import AlphaTable
from .utility import UtilitySpec, risk_aversion_profile

GUARD_SLACK = 1e-6
ROBIN_FIXED_POINT = -1.0


class BCKind(Enum):
    ROBIN_LEFT = "robin_left"      # Robin on the left, Neumann on the right
    NEUMANN_BOTH = "neumann_both"  # for eps = 0 fixtures


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time grid.

    The requested spatial step is adjusted so that an integer number of
    cells spans [x_left, x_right] (h = (x_right - x_left)/(n+1)), and the
    time step so that m = round(T/k) steps land exactly on T. Node i sits at
    x_left + i*h for i = 0..n+1; nodes 0 and n+1 are the boundary ghosts.
    If k is omitted it defaults to 0.05 h^2.
    """

    x_left: float = math.log(0.01)
    x_right: float = 10.0
    h: float = 0.05
    k: float | None = None
    T: float = 10.0

    def __post_init__(self):
        if not self.x_left < self.x_right:
            raise ConfigError(f"x_left {self.x_left} must be < x_right {self.x_right}")
        if self.h <= 0:
            raise ConfigError(f"h must be > 0, got {self.h}")
        if self.T <= 0:
            raise ConfigError(f"T must be > 0, got {self.T}")
        cells = max(2, int(round((self.x_right - self.x_left) / self.h)))
        h = (self.x_right - self.x_left) / cells
        k = self.k if self.k is not None else 0.05 * h * h
        if k <= 0:
            raise ConfigError(f"k must be > 0, got {k}")
        m = max(1, int(round(self.T / k)))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "k", self.T / m)

    @property
    def n_interior(self) -> int:
        return int(round((self.x_right - self.x_left) / self.h)) - 1

    @property
    def m_steps(self) -> int:
        return int(round(self.T / self.k))

    def x_nodes(self) -> np.ndarray:
        return self.x_left + self.h * np.arange(self.n_interior + 2)


@dataclass(frozen=True)
class PhiField:
    """Stored layers of phi(x, tau) plus grid geometry and solve diagnostics."""

    grid: GridSpec
    tau_snapshots: np.ndarray
    values: np.ndarray  # (n_layers, n_interior + 2)
    table_range: tuple[float, float]
    global_min: float
    global_max: float

    def __post_init__(self):
        taus = np.ascontiguousarray(self.tau_snapshots, dtype=np.float64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        taus.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "tau_snapshots", taus)
        object.__setattr__(self, "values", vals)

    @property
    def layer_min(self) -> np.ndarray:
        return self.values.min(axis=1)

    @property
    def layer_max(self) -> np.ndarray:
        return self.values.max(axis=1)

    def layer_index(self, tau: float) -> int:
        """Index of the stored layer nearest to tau."""
        return int(np.argmin(np.abs(self.tau_snapshots - tau)))

    def interp_x(self, tau: float, x) -> np.ndarray:
        """phi at arbitrary x (linear, clamped to the domain), nearest layer in tau."""
        layer = self.values[self.layer_index(tau)]
        return np.interp(np.asarray(x, dtype=np.float64), self.grid.x_nodes(), layer)


def terminal_condition(spec: UtilitySpec, grid: GridSpec) -> np.ndarray:
    """phi(x, tau=0) = -U''/U' on the grid nodes (forward time starts at T)."""
    return np.asarray(risk_aversion_profile(spec, grid.x_nodes()), dtype=np.float64)


def _interp_arrays(table: AlphaTable):
    dphi = np.diff(table.phi_grid)
    if np.abs(dphi - dphi[0]).max() > 1e-9 * max(1.0, abs(dphi[0])):
        raise ConfigError("PDE solver requires a uniform phi grid in the alpha table")
    return float(table.phi_grid[0]), 1.0 / float(dphi[0])


def _face_eps(market: MarketSpec, grid: GridSpec):
    x_int = grid.x_nodes()[1:-1]
    face_m = market.epsilon * np.exp(-(x_int - grid.h / 2))
    face_p = market.epsilon * np.exp(-(x_int + grid.h / 2))
    return face_m, face_p


def step(
    phi_layer: np.ndarray,
    tau: float,
    table: AlphaTable,
    market: MarketSpec,
    grid: GridSpec,
    bc: BCKind = BCKind.ROBIN_LEFT,
    source=None,
) -> np.ndarray:
    """One semi-implicit update of a full layer (ghost nodes included).

    ``source`` is the optional zero-order term C(x, tau, phi) of the general
    quasi-linear form, given as a callable (x_interior, tau, phi_interior) ->
    array; it is zero for the portfolio problem. tau is accepted for
    signature generality; the coefficients here are time-independent.
    """
    phi_layer = np.asarray(phi_layer, dtype=np.float64)
    if len(phi_layer) != grid.n_interior + 2:
        raise ConfigError(
            f"layer has {len(phi_layer)} nodes, grid expects {grid.n_interior + 2}"
        )
    phi_lo, inv_dphi = _interp_arrays(table)
    face_m, face_p = _face_eps(market, grid)
    src = None
    if source is not None:
        x_int = grid.x_nodes()[1:-1]
        src = np.asarray(source(x_int, tau, phi_layer[1:-1]), dtype=np.float64)
    out, dmin = pde_step_numpy(
        phi_layer, grid.k, grid.h, face_m, face_p, market.r,
        phi_lo, inv_dphi, table.alpha, table.alpha_prime,
        bc is BCKind.ROBIN_LEFT, src,
    )
    if dmin < 0:
        raise NumericError(
            f"non-diagonally-dominant system: negative diffusion coefficient "
            f"{dmin:.3e} at tau={tau}"
        )
    return out


def solve(
    spec: UtilitySpec,
    table: AlphaTable,
    market: MarketSpec,
    grid: GridSpec,
    snapshot_times=None,
    bc: BCKind = BCKind.ROBIN_LEFT,
    force_numpy: bool = False,
) -> PhiField:
    """March the terminal profile from tau = 0 to tau = T.

    Snapshots are stored at the grid times nearest to ``snapshot_times``
    (default: integer taus 0..T). The returned field records the global
    min/max over all computed layers, not only the stored ones.
    """
    if snapshot_times is None:
        snapshot_times = np.arange(0.0, math.floor(grid.T) + 1.0)
    snapshot_times = np.asarray(snapshot_times, dtype=np.float64)
    if np.any(snapshot_times < -1e-12) or np.any(snapshot_times > grid.T + 1e-9):
        raise ConfigError("snapshot times must lie within [0, T]")

    term = terminal_condition(spec, grid)
    lo_tab, hi_tab = table.phi_min, table.phi_max
    if term.min() < lo_tab - 1e-12 or term.max() > hi_tab + 1e-12:
        raise PhiRangeError(
            f"terminal risk-aversion profile range [{term.min()}, {term.max()}] "
            f"outside alpha table domain [{lo_tab}, {hi_tab}]"
        )
    phi0 = apply_bc(term.copy(), grid.h, bc is BCKind.ROBIN_LEFT)

    data_lo = float(phi0.min())
    data_hi = float(phi0.max())
    if bc is BCKind.ROBIN_LEFT:
        data_lo = min(data_lo, ROBIN_FIXED_POINT)
    guard_lo = max(data_lo, lo_tab) - GUARD_SLACK
    guard_hi = min(data_hi, hi_tab) + GUARD_SLACK

    store_steps = np.unique(np.round(snapshot_times / grid.k).astype(np.int64))
    store_steps = store_steps[(store_steps >= 0) & (store_steps <= grid.m_steps)]
    phi_lo, inv_dphi = _interp_arrays(table)
    face_m, face_p = _face_eps(market, grid)

    stored, gmin, gmax, status, err_step, err_val = pde_loop(
        phi0, grid.m_steps, store_steps, grid.k, grid.h,
        face_m, face_p, market.r,
        phi_lo, inv_dphi,
        np.ascontiguousarray(table.alpha), np.ascontiguousarray(table.alpha_prime),
        bc is BCKind.ROBIN_LEFT, guard_lo, guard_hi,
        force_numpy=force_numpy or not numba_enabled(),
    )
    if status == 1:
        raise MaxPrincipleError(
            f"phi = {err_val:.9g} left the guard interval "
            f"[{guard_lo:.9g}, {guard_hi:.9g}] at tau = {err_step * grid.k:.6g} "
            f"(step {err_step}); terminal/boundary data hull "
            f"[{data_lo:.9g}, {data_hi:.9g}], table domain [{lo_tab:g}, {hi_tab:g}]"
        )
    if status == 2:
        raise NumericError(
            f"non-diagonally-dominant system at step {err_step}: "
            f"negative diffusion coefficient {err_val:.3e}"
        )
    return PhiField(
        grid=grid,
        tau_snapshots=store_steps * grid.k,
        values=stored,
        table_range=(lo_tab, hi_tab),
        global_min=float(gmin),
        global_max=float(gmax),
    )


def write_phi_csv(field: PhiField, path, meta: dict | None = None):
    x = field.grid.x_nodes()

    def rows():
        for j, tau in enumerate(field.tau_snapshots):
            for i in range(len(x)):
                yield [float(tau), float(x[i]), float(field.values[j, i])]

    write_csv(path, ["tau", "x", "phi"], rows(), meta=meta)
