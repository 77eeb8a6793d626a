"""Parametric simplex-constrained QP and the tabulated optimal-value function.

For each phi the program solved is

    alpha(phi) = min over theta in the simplex of
                 -mu' theta + ((phi + 1) / 2) theta' Sigma theta,

strictly convex for phi > -1 when Sigma is positive definite. Its optimal
value is strictly increasing and concave in phi, with the closed-form
derivative

    alpha'(phi) = 0.5 theta_hat(phi)' Sigma theta_hat(phi),

which is how the stored derivative column is computed (no numerical
differencing, which would be noisy at active-set kinks).

The solver is a primal active-set method: the budget constraint is kept in
the KKT system, nonnegativity constraints are handled through a working set
of assets clamped at zero. Sweeping the phi grid in order with warm starts
makes each node cheap because the active set changes at finitely many kinks.

At phi = -1 the quadratic term vanishes and the program degenerates to a
linear one whose solution is the vertex of the largest mean return (ties
broken by lowest index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .csvutil import read_csv, write_csv
from .errors import ConfigError, NumericError, PhiRangeError, QPConvergenceError
from .market import MarketSpec

_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class QPSettings:
    phi_min: float = -1.0
    phi_max: float = 15.0
    phi_step: float = 0.005
    tol: float = 1e-10
    max_iter: int = 100

    def __post_init__(self):
        if not self.phi_min < self.phi_max:
            raise ConfigError(f"phi_min {self.phi_min} must be < phi_max {self.phi_max}")
        if self.phi_step <= 0:
            raise ConfigError(f"phi_step must be > 0, got {self.phi_step}")

    def grid(self) -> np.ndarray:
        n = int(round((self.phi_max - self.phi_min) / self.phi_step)) + 1
        return np.linspace(self.phi_min, self.phi_max, n)


@dataclass(frozen=True)
class AlphaTable:
    """Tabulated alpha(phi), its derivative and the minimizer per grid node."""

    phi_grid: np.ndarray
    alpha: np.ndarray
    alpha_prime: np.ndarray
    theta_hat: np.ndarray  # (n_nodes, n_assets)

    def __post_init__(self):
        for name in ("phi_grid", "alpha", "alpha_prime", "theta_hat"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not (len(self.phi_grid) == len(self.alpha) == len(self.alpha_prime) == len(self.theta_hat)):
            raise ConfigError("alpha table column lengths differ")
        if np.any(np.diff(self.phi_grid) <= 0):
            raise ConfigError("phi grid must be strictly increasing")

    @property
    def phi_min(self) -> float:
        return float(self.phi_grid[0])

    @property
    def phi_max(self) -> float:
        return float(self.phi_grid[-1])

    @property
    def n_assets(self) -> int:
        return self.theta_hat.shape[1]

    def kink_mask(self, support_tol: float = 1e-9) -> np.ndarray:
        """Nodes where the active set changes against either neighbor.

        alpha is C1 but not C2 across these nodes, so finite-difference
        checks of alpha_prime are exempted there.
        """
        support = self.theta_hat > support_tol
        changed = np.any(support[1:] != support[:-1], axis=1)
        mask = np.zeros(len(self.phi_grid), dtype=bool)
        mask[1:] |= changed
        mask[:-1] |= changed
        return mask


def _lp_vertex(market: MarketSpec) -> tuple[np.ndarray, float]:
    theta = np.zeros(market.n_assets)
    i = int(np.argmax(market.mu))  # argmax takes the lowest index on ties
    theta[i] = 1.0
    return theta, float(-market.mu[i])


def _objective(market: MarketSpec, phi: float, theta: np.ndarray) -> float:
    q = phi + 1.0
    return float(-market.mu @ theta + 0.5 * q * theta @ market.sigma_mat @ theta)


def _solve_eqp(q_sigma: np.ndarray, mu: np.ndarray, free: np.ndarray):
    """Minimize over the free assets with the budget constraint; clamped assets
    stay at zero. Returns (theta_free, lambda)."""
    nf = len(free)
    kkt = np.zeros((nf + 1, nf + 1))
    kkt[:nf, :nf] = q_sigma[np.ix_(free, free)]
    kkt[:nf, nf] = -1.0
    kkt[nf, :nf] = 1.0
    rhs = np.concatenate([mu[free], [1.0]])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:nf], float(sol[nf])


def solve_qp(
    market: MarketSpec,
    phi: float,
    settings: QPSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Minimizer and optimal value at a single phi.

    Raises PhiRangeError below settings.phi_min and QPConvergenceError if the
    active-set iteration exhausts its budget or the KKT residual exceeds the
    solver tolerance.
    """
    settings = settings or QPSettings()
    if phi < settings.phi_min:
        raise PhiRangeError(f"phi={phi} below phi_min={settings.phi_min}")
    n = market.n_assets
    mu, sigma = market.mu, market.sigma_mat
    q = phi + 1.0
    if n == 1:
        theta = np.array([1.0])
        return theta, _objective(market, phi, theta)
    if q <= 0.0 or q * np.abs(sigma).max() == 0.0:
        return _lp_vertex(market)

    q_sigma = q * sigma
    if warm_start is not None:
        theta = np.clip(np.asarray(warm_start, dtype=np.float64), 0.0, None)
        s = theta.sum()
        theta = theta / s if s > 0 else np.full(n, 1.0 / n)
    else:
        theta = np.full(n, 1.0 / n)
    clamped = theta <= _ZERO_TOL
    if clamped.all():
        clamped[np.argmax(mu)] = False
    theta = theta.copy()
    theta[clamped] = 0.0
    s = theta.sum()
    theta /= s

    for _ in range(settings.max_iter):
        free = np.flatnonzero(~clamped)
        try:
            th_free, lam = _solve_eqp(q_sigma, mu, free)
        except np.linalg.LinAlgError:
            raise QPConvergenceError(f"singular KKT system at phi={phi}") from None
        if th_free.min() >= -_ZERO_TOL:
            theta = np.zeros(n)
            theta[free] = np.clip(th_free, 0.0, None)
            grad = -mu + q_sigma @ theta
            dual = grad[clamped] - lam
            if dual.size == 0 or dual.min() >= -settings.tol:
                break
            release = np.flatnonzero(clamped)[int(np.argmin(dual))]
            clamped[release] = False
        else:
            # step toward the EQP point until the first asset hits zero
            direction = th_free - theta[free]
            neg = direction < -_ZERO_TOL
            with np.errstate(divide="ignore"):
                ratios = np.where(neg, theta[free] / -direction, np.inf)
            j = int(np.argmin(ratios))
            t_step = min(1.0, float(ratios[j]))
            theta[free] += t_step * direction
            theta[free[j]] = 0.0
            clamped[free[j]] = True
    else:
        raise QPConvergenceError(
            f"active-set iteration did not converge at phi={phi} "
            f"within {settings.max_iter} iterations"
        )

    grad = -mu + q_sigma @ theta
    lam_hat = grad[~clamped].mean() if (~clamped).any() else lam
    kkt_res = max(
        abs(theta.sum() - 1.0),
        float(np.abs(grad[~clamped] - lam_hat).max(initial=0.0)),
        float(max(0.0, -(grad[clamped] - lam_hat).min(initial=0.0) - settings.tol)),
    )
    if kkt_res > max(settings.tol, 1e-9 * max(1.0, np.abs(q_sigma).max())):
        raise QPConvergenceError(f"KKT residual {kkt_res:.3e} at phi={phi}")
    theta = theta / theta.sum()
    return theta, _objective(market, phi, theta)


def build_alpha_table(market: MarketSpec, settings: QPSettings | None = None) -> AlphaTable:
    """Tabulate alpha, alpha' and theta_hat over the phi grid.

    The sweep runs in grid order, each node warm-started from the previous
    minimizer. alpha_prime is stored from the closed form
    0.5 theta' Sigma theta. Structural invariants (strict monotonicity,
    positive derivative, concavity) are verified for positive definite
    markets before the table is returned.
    """
    settings = settings or QPSettings()
    phis = settings.grid()
    n = market.n_assets
    alpha = np.empty(len(phis))
    alpha_prime = np.empty(len(phis))
    theta_hat = np.empty((len(phis), n))
    warm = None
    for i, phi in enumerate(phis):
        try:
            theta, val = solve_qp(market, float(phi), settings, warm_start=warm)
        except NumericError as exc:
            raise QPConvergenceError(f"table build failed at phi={phi}: {exc}") from exc
        alpha[i] = val
        alpha_prime[i] = 0.5 * theta @ market.sigma_mat @ theta
        theta_hat[i] = theta
        warm = theta
    table = AlphaTable(phi_grid=phis, alpha=alpha, alpha_prime=alpha_prime, theta_hat=theta_hat)
    if not market.degenerate_ok:
        _validate_table(table)
    return table


def _validate_table(table: AlphaTable):
    d1 = np.diff(table.alpha)
    if d1.min() <= 0:
        i = int(np.argmin(d1))
        raise NumericError(
            f"alpha not strictly increasing between phi={table.phi_grid[i]} "
            f"and {table.phi_grid[i + 1]} (diff {d1[i]:.3e})"
        )
    if table.alpha_prime.min() <= 0:
        i = int(np.argmin(table.alpha_prime))
        raise NumericError(f"alpha_prime <= 0 at phi={table.phi_grid[i]}")
    d2 = np.diff(table.alpha, 2)
    if d2.max() > 1e-9:
        i = int(np.argmax(d2))
        raise NumericError(
            f"alpha violates concavity at phi={table.phi_grid[i + 1]} (second diff {d2[i]:.3e})"
        )


def eval_alpha(table: AlphaTable, phi: float) -> tuple[float, float, np.ndarray]:
    """(alpha, alpha_prime, theta) at phi by piecewise-linear interpolation.

    theta rows are blended linearly, then clipped to >= 0 and renormalized to
    sum 1 so interpolated controls stay on the simplex. phi outside the grid
    raises PhiRangeError: the caller's phi left the tabulated domain.
    """
    grid = table.phi_grid
    if phi < grid[0] - 1e-12 or phi > grid[-1] + 1e-12:
        raise PhiRangeError(
            f"phi={phi} outside tabulated domain [{grid[0]}, {grid[-1]}]"
        )
    j = int(np.searchsorted(grid, phi, side="right")) - 1
    j = min(max(j, 0), len(grid) - 2)
    w = (phi - grid[j]) / (grid[j + 1] - grid[j])
    w = min(max(w, 0.0), 1.0)
    alpha = (1 - w) * table.alpha[j] + w * table.alpha[j + 1]
    aprime = (1 - w) * table.alpha_prime[j] + w * table.alpha_prime[j + 1]
    theta = (1 - w) * table.theta_hat[j] + w * table.theta_hat[j + 1]
    theta = np.clip(theta, 0.0, None)
    theta = theta / theta.sum()
    return float(alpha), float(aprime), theta


def write_alpha_csv(table: AlphaTable, path, meta: dict | None = None):
    cols = ["phi", "alpha", "alpha_prime"] + [
        f"theta_{i + 1}" for i in range(table.n_assets)
    ]
    rows = (
        [table.phi_grid[i], table.alpha[i], table.alpha_prime[i], *table.theta_hat[i]]
        for i in range(len(table.phi_grid))
    )
    write_csv(path, cols, rows, meta=meta)


def read_alpha_csv(path) -> AlphaTable:
    cols, data, _meta = read_csv(path)
    if cols[:3] != ["phi", "alpha", "alpha_prime"]:
        raise ConfigError(f"{path}: not an alpha table (columns {cols[:3]})")
    data = np.asarray(data)
    return AlphaTable(
        phi_grid=data[:, 0],
        alpha=data[:, 1],
        alpha_prime=data[:, 2],
        theta_hat=data[:, 3:],
    )


__all__ = [
    "QPSettings",
    "AlphaTable",
    "solve_qp",
    "build_alpha_table",
    "eval_alpha",
    "write_alpha_csv",
    "read_alpha_csv",
]
