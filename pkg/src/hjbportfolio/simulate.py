"""Euler-Maruyama simulation of the optimally controlled log-wealth process.

Per path and step at time t the feedback control is looked up as

    phi* = phi(x_t, tau = T - t)   (linear in x, nearest stored layer in tau)
    theta = theta_hat(phi*)        (alpha-table interpolation, clip/renorm)

and the state advances with

    x <- x + drift(x, t, theta) dt + sqrt(vol2(x, t, theta)) sqrt(dt) Z.

Noise is counter-based: path p draws its normals from a Philox stream keyed
by (seed, p), so batches are bit-reproducible and independent of evaluation
order or thread count. With antithetic pairing enabled, odd path 2q+1 uses
the negated draws of even path 2q.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .backend import numba_enabled
from .csvutil import write_csv
from .errors import ConfigError, PhiRangeError, SimulationError
from .kernels import sim_loop
from .market import MarketSpec
from .pde import PhiField
from .qp import AlphaTable


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 5000
    x0: float = 0.0
    T: float = 10.0
    dt: float = 0.05
    seed: int = 42
    store_paths: bool = False
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be >= 1, got {self.n_paths}")
        if not (0 < self.dt <= self.T):
            raise ConfigError(f"need 0 < dt <= T, got dt={self.dt}, T={self.T}")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError(f"T/dt = {steps} must be an integer within 1e-9")
        if not (0 <= int(self.seed) < 2**63):
            raise ConfigError(f"seed must be a nonnegative 64-bit integer, got {self.seed}")
        if self.antithetic and self.n_paths % 2:
            raise ConfigError(f"antithetic pairing needs an even n_paths, got {self.n_paths}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


def antithetic_pairs(cfg: SimConfig) -> SimConfig:
    """Enable paired Z / -Z noise; the estimator mean is unchanged in expectation."""
    if cfg.n_paths % 2:
        raise ConfigError(f"antithetic pairing needs an even n_paths, got {cfg.n_paths}")
    return replace(cfg, antithetic=True)


@dataclass(frozen=True)
class SimulationBatch:
    terminal_wealth: np.ndarray
    config: SimConfig
    phi_seen_min: np.ndarray  # per path, smallest phi queried
    phi_seen_max: np.ndarray
    paths: np.ndarray | None = None


def noise_matrix(cfg: SimConfig) -> np.ndarray:
    """(n_paths, n_steps) standard normals, a pure function of (seed, path, step)."""
    z = np.empty((cfg.n_paths, cfg.n_steps))
    key_base = int(cfg.seed) << 64
    if cfg.antithetic:
        for p in range(0, cfg.n_paths, 2):
            gen = np.random.Generator(np.random.Philox(key=key_base + p))
            z[p] = gen.standard_normal(cfg.n_steps)
            z[p + 1] = -z[p]
    else:
        for p in range(cfg.n_paths):
            gen = np.random.Generator(np.random.Philox(key=key_base + p))
            z[p] = gen.standard_normal(cfg.n_steps)
    return z


def simulate(
    phi_field: PhiField,
    table: AlphaTable,
    market: MarketSpec,
    cfg: SimConfig,
    force_numpy: bool = False,
) -> SimulationBatch:
    """Run the batch and collect terminal wealths (and full paths on request)."""
    grid = phi_field.grid
    taus = phi_field.tau_snapshots
    if taus[-1] < cfg.T - cfg.dt - 1e-9:
        raise ConfigError(
            f"phi field covers tau up to {taus[-1]}, simulation horizon needs {cfg.T}"
        )
    # control at the start of step s uses tau = T - s*dt, nearest stored layer
    tau_wanted = cfg.T - cfg.dt * np.arange(cfg.n_steps)
    layer_for_step = np.array(
        [int(np.argmin(np.abs(taus - t))) for t in tau_wanted], dtype=np.int64
    )
    z = noise_matrix(cfg)
    xt, paths, seen_min, seen_max, status, bad_path, bad_step = sim_loop(
        float(cfg.x0), float(cfg.dt), z, layer_for_step,
        np.ascontiguousarray(phi_field.values),
        float(grid.x_left), float(grid.h),
        np.ascontiguousarray(market.mu), np.ascontiguousarray(market.sigma_mat),
        float(market.epsilon), float(market.r),
        float(table.phi_grid[0]), 1.0 / float(table.phi_grid[1] - table.phi_grid[0]),
        np.ascontiguousarray(table.theta_hat),
        table.phi_min, table.phi_max, bool(cfg.store_paths),
        force_numpy=force_numpy or not numba_enabled(),
    )
    if status == 1:
        raise PhiRangeError(
            f"queried phi outside the tabulated domain at path {bad_path}, "
            f"step {bad_step} (t = {bad_step * cfg.dt:g})"
        )
    if status == 3:
        raise SimulationError(
            f"non-finite wealth at path {bad_path}, step {bad_step} "
            f"(t = {bad_step * cfg.dt:g}); aborted"
        )
    return SimulationBatch(
        terminal_wealth=xt,
        config=cfg,
        phi_seen_min=seen_min,
        phi_seen_max=seen_max,
        paths=paths if cfg.store_paths else None,
    )


def write_terminal_csv(batch: SimulationBatch, path, meta: dict | None = None):
    write_csv(path, ["x_T"], ([float(v)] for v in batch.terminal_wealth), meta=meta)


def write_paths_csv(batch: SimulationBatch, path, meta: dict | None = None):
    if batch.paths is None:
        raise ConfigError("batch was run without store_paths")
    dt = batch.config.dt

    def rows():
        for p in range(batch.paths.shape[0]):
            for s in range(batch.paths.shape[1]):
                yield [p, float(s * dt), float(batch.paths[p, s])]

    write_csv(path, ["path", "t", "x"], rows(), meta=meta)
