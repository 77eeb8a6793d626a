"""Market data container and the concrete drift/volatility functions.

The controlled log-wealth process is

    dx = mu(x, t, theta) dt + sigma(x, t, theta) dW

with, for a portfolio with regular inflow,

    mu(x, t, theta)     = mu' theta - 0.5 theta' Sigma theta + eps * e^(-x) + r
    sigma(x, t, theta)^2 = theta' Sigma theta

where theta lives on the unit simplex. Worst-case uncertainty sets are out
of scope; they would plug in through the same ControlledProcessParams
interface.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import MarketDataError, NotPositiveDefiniteError

PD_EIG_TOL = 1e-12
SYM_TOL = 1e-10


@dataclass(frozen=True)
class MarketSpec:
    """Validated market data: asset names, mean returns, covariance, inflow, rate.

    The covariance matrix is symmetrized ((S + S') / 2) on construction and
    checked for positive definiteness unless ``degenerate_ok`` is set (PSD
    matrices are then allowed, for analytic test fixtures only). Arrays are
    frozen; instances are safe to share across threads.
    """

    asset_names: tuple[str, ...]
    mu: np.ndarray
    sigma_mat: np.ndarray
    epsilon: float = 0.0
    r: float = 0.0
    degenerate_ok: bool = False

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma_mat, dtype=np.float64)
        names = tuple(str(s) for s in self.asset_names)
        n = len(names)
        if sigma.ndim != 2 or sigma.shape != (n, n):
            raise MarketDataError(
                f"covariance matrix shape {sigma.shape} does not match {n} asset names"
            )
        if len(mu) != n:
            raise MarketDataError(f"mu has {len(mu)} entries, expected {n}")
        if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sigma)):
            raise MarketDataError("non-finite value in market data")
        if self.epsilon < 0:
            raise MarketDataError(f"inflow rate epsilon must be >= 0, got {self.epsilon}")
        if self.r < 0:
            raise MarketDataError(f"risk-free rate r must be >= 0, got {self.r}")

        sigma = 0.5 * (sigma + sigma.T)
        if np.abs(sigma - sigma.T).max() > SYM_TOL:  # cannot fail after symmetrization
            raise MarketDataError("covariance matrix not symmetric after symmetrization")

        min_eig = float(np.linalg.eigvalsh(sigma).min()) if n else 0.0
        if self.degenerate_ok:
            if min_eig < -1e-10:
                raise NotPositiveDefiniteError(min_eig)
        elif min_eig <= PD_EIG_TOL:
            raise NotPositiveDefiniteError(min_eig)

        mu.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "asset_names", names)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma_mat", sigma)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "r", float(self.r))

    @property
    def n_assets(self) -> int:
        return len(self.asset_names)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma_mat).min())


@dataclass(frozen=True)
class ControlledProcessParams:
    """Drift and squared volatility of the controlled process, as pure functions
    of (x, t, theta)."""

    drift: Callable[[float, float, np.ndarray], float]
    vol2: Callable[[float, float, np.ndarray], float]


def example1_process(market: MarketSpec) -> ControlledProcessParams:
    """Concrete drift/vol2 pair for the regular-inflow portfolio model."""
    mu, sigma = market.mu, market.sigma_mat
    eps, r = market.epsilon, market.r

    def vol2(x: float, t: float, theta) -> float:
        th = np.asarray(theta, dtype=np.float64)
        return float(th @ sigma @ th)

    def drift(x: float, t: float, theta) -> float:
        th = np.asarray(theta, dtype=np.float64)
        return float(mu @ th - 0.5 * (th @ sigma @ th) + eps * math.exp(-x) + r)

    return ControlledProcessParams(drift=drift, vol2=vol2)


def _data_rows(path) -> list[list[str]]:
    """CSV rows with '#' comment lines and blank lines stripped."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or all(not c.strip() for c in row):
                continue
            if row[0].lstrip().startswith("#"):
                continue
            rows.append([c.strip() for c in row])
    return rows


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _parse_float(cell: str, where: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise MarketDataError(f"non-numeric cell {cell!r} in {where}") from None


def _parse_sigma(path) -> tuple[list[str] | None, np.ndarray]:
    rows = _data_rows(path)
    if not rows:
        raise MarketDataError(f"{path}: no data rows")
    # a header row has a non-numeric (or empty) corner and only names after it;
    # a data row with a leading name column has numbers after the name
    first = rows[0]
    tail = [c for c in first[1:] if c]
    header_cells = None
    if not _is_number(first[0]) and tail and all(not _is_number(c) for c in tail):
        header_cells = first
        rows = rows[1:]
        if not rows:
            raise MarketDataError(f"{path}: header but no data rows")
    row_names = None
    if not _is_number(rows[0][0]):
        row_names = [r[0] for r in rows]
        rows = [r[1:] for r in rows]
    n = len(rows)
    mat = np.empty((n, n))
    for i, r in enumerate(rows):
        if len(r) != n:
            raise MarketDataError(
                f"{path}: row {i + 1} has {len(r)} entries, expected {n} (square matrix)"
            )
        for j, c in enumerate(r):
            mat[i, j] = _parse_float(c, f"{path} row {i + 1} col {j + 1}")
    header_names = None
    if header_cells is not None:
        if len(header_cells) == n + 1:  # corner cell present
            header_names = header_cells[1:]
        elif len(header_cells) == n:
            header_names = header_cells
        else:
            raise MarketDataError(
                f"{path}: header has {len(header_cells)} cells for {n} columns"
            )
    names = row_names or header_names
    if row_names and header_names:
        for a, b in zip(row_names, header_names):
            if a.lower() != b.lower():
                raise MarketDataError(f"{path}: header name {b!r} != row name {a!r}")
    return names, mat


def _parse_mu(path) -> tuple[list[str] | None, np.ndarray]:
    rows = _data_rows(path)
    if not rows:
        raise MarketDataError(f"{path}: no data rows")
    if all(len(r) == 1 for r in rows):
        vals = [_parse_float(r[0], f"{path} row {i + 1}") for i, r in enumerate(rows)]
        return None, np.array(vals)
    names, vals = [], []
    for i, r in enumerate(rows):
        if len(r) != 2:
            raise MarketDataError(f"{path}: row {i + 1} must be 'name,value' or a single value")
        if _is_number(r[0]) and not _is_number(r[1]):
            raise MarketDataError(f"{path}: row {i + 1} looks like 'value,name'; expected 'name,value'")
        names.append(r[0])
        vals.append(_parse_float(r[1], f"{path} row {i + 1}"))
    if names and _is_number(names[0]):  # e.g. header-less two-column numerics
        raise MarketDataError(f"{path}: ambiguous two-column numeric layout")
    return names, np.array(vals)


def load_market_csv(
    mu_path,
    sigma_path,
    *,
    epsilon: float = 0.0,
    r: float = 0.0,
    degenerate_ok: bool = False,
    asset_names: Sequence[str] | None = None,
) -> MarketSpec:
    """Read mean returns and covariance from CSV files into a MarketSpec.

    The sigma CSV is an n x n numeric matrix with an optional header row
    and/or leading name column; the mu CSV holds either ``name,value`` rows
    or a single numeric column. Files are comma-delimited UTF-8 with '.'
    decimal separator; lines starting with '#' are skipped. Names, when
    present in both files, must agree in order (case-insensitively).
    """
    mu_names, mu = _parse_mu(mu_path)
    sig_names, sigma = _parse_sigma(sigma_path)
    if len(mu) != sigma.shape[0]:
        raise MarketDataError(
            f"dimension mismatch: mu has {len(mu)} entries, sigma is {sigma.shape[0]}x{sigma.shape[1]}"
        )
    if mu_names and sig_names:
        for i, (a, b) in enumerate(zip(mu_names, sig_names)):
            if a.lower() != b.lower():
                raise MarketDataError(
                    f"asset name mismatch at position {i + 1}: {a!r} (mu) vs {b!r} (sigma)"
                )
    names = list(asset_names) if asset_names else (mu_names or sig_names)
    if names is None:
        names = [f"asset_{i + 1}" for i in range(len(mu))]
    return MarketSpec(
        asset_names=tuple(names),
        mu=mu,
        sigma_mat=sigma,
        epsilon=epsilon,
        r=r,
        degenerate_ok=degenerate_ok,
    )
