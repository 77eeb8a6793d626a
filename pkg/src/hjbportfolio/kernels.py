"""Hot numeric kernels: PDE time-stepping loop and Monte Carlo path loop.

Each kernel has two interchangeable implementations with identical
signatures and semantics:

  * ``*_numba`` -- @njit(cache=True) versions with explicit loops (the PDE
    loop runs the Thomas algorithm directly);
  * ``*_numpy`` -- vectorized numpy versions, the tridiagonal solves going
    through scipy.linalg.solve_banded.

``pde_loop`` / ``sim_loop`` dispatch on backend.numba_enabled(). Status codes
instead of exceptions cross the kernel boundary; wrappers in pde.py and
simulate.py convert them to typed errors.

Status codes: 0 ok; 1 phi left the guard interval (step/value reported);
2 negative diffusion coefficient (row reported); 3 non-finite state.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

from .backend import HAVE_NUMBA, numba_enabled

if HAVE_NUMBA:
    from numba import njit
else:  # pragma: no cover - decorator stub so the module imports without numba

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


# ---------------------------------------------------------------------------
# PDE semi-implicit finite-volume loop
# ---------------------------------------------------------------------------

def _assemble_step(phi, k, h, face_eps_m, face_eps_p, r_rate,
                   phi_lo, inv_dphi, alpha_tab, aprime_tab, source):
    """Coefficient assembly for one semi-implicit step (numpy, full layer in).

    Returns (sub, diag, sup, rhs) over interior nodes, with D/E/F evaluated at
    the old layer on the finite-volume faces (arithmetic average of the
    adjacent nodes).
    """
    nmax = len(alpha_tab) - 2
    fp = 0.5 * (phi[1:-1] + phi[2:])
    fm = 0.5 * (phi[:-2] + phi[1:-1])

    def interp(tab, v):
        pos = (v - phi_lo) * inv_dphi
        j = np.clip(pos.astype(np.int64), 0, nmax)
        w = pos - j
        return tab[j] + (tab[j + 1] - tab[j]) * w

    dp = interp(aprime_tab, fp)
    dm = interp(aprime_tab, fm)
    big_fp = -(interp(alpha_tab, fp) - face_eps_p - r_rate) * fp
    big_fm = -(interp(alpha_tab, fm) - face_eps_m - r_rate) * fm
    lam = k / (h * h)
    kh = k / h
    rhs = phi[1:-1] + kh * ((face_eps_p - face_eps_m) + (big_fp - big_fm))
    if source is not None:
        rhs = rhs + k * source
    diag = 1.0 + lam * (dp + dm)
    sub = -lam * dm
    sup = -lam * dp
    return sub, diag, sup, rhs, min(dp.min(), dm.min())


def apply_bc(phi, h, robin_left: bool):
    """Write the ghost nodes from the boundary relations, in place."""
    if robin_left:
        phi[0] = phi[1] / (1.0 + h) - h / (1.0 + h)
    else:
        phi[0] = phi[1]
    phi[-1] = phi[-2]
    return phi


def pde_step_numpy(phi, k, h, face_eps_m, face_eps_p, r_rate,
                   phi_lo, inv_dphi, alpha_tab, aprime_tab,
                   robin_left: bool, source=None):
    """One semi-implicit update of a full layer (ghosts included).

    Returns (new_layer, min_diffusion_coefficient). The boundary relations
    are eliminated into the first/last tridiagonal rows and re-applied to the
    ghosts of the returned layer.
    """
    n = len(phi) - 2
    sub, diag, sup, rhs, dmin = _assemble_step(
        phi, k, h, face_eps_m, face_eps_p, r_rate,
        phi_lo, inv_dphi, alpha_tab, aprime_tab, source,
    )
    if robin_left:
        diag[0] += sub[0] / (1.0 + h)
        rhs[0] += sub[0] * h / (1.0 + h)
    else:
        diag[0] += sub[0]
    diag[-1] += sup[-1]
    ab = np.zeros((3, n))
    ab[0, 1:] = sup[:-1]
    ab[1] = diag
    ab[2, :-1] = sub[1:]
    inner = solve_banded((1, 1), ab, rhs)
    out = np.empty(n + 2)
    out[1:-1] = inner
    apply_bc(out, h, robin_left)
    return out, dmin


def pde_loop_numpy(phi0, m_steps, store_steps, k, h,
                   face_eps_m, face_eps_p, r_rate,
                   phi_lo, inv_dphi, alpha_tab, aprime_tab,
                   robin_left, guard_lo, guard_hi):
    n_nodes = len(phi0)
    stored = np.empty((len(store_steps), n_nodes))
    ptr = 0
    if ptr < len(store_steps) and store_steps[ptr] == 0:
        stored[ptr] = phi0
        ptr += 1
    phi = phi0.copy()
    gmin = phi.min()
    gmax = phi.max()
    for j in range(1, m_steps + 1):
        phi, dmin = pde_step_numpy(
            phi, k, h, face_eps_m, face_eps_p, r_rate,
            phi_lo, inv_dphi, alpha_tab, aprime_tab, robin_left,
        )
        if dmin < 0.0:
            return stored[:ptr], gmin, gmax, 2, j, dmin
        lmin = phi.min()
        lmax = phi.max()
        gmin = min(gmin, lmin)
        gmax = max(gmax, lmax)
        if lmin < guard_lo or lmax > guard_hi:
            bad = lmin if lmin < guard_lo else lmax
            return stored[:ptr], gmin, gmax, 1, j, bad
        if ptr < len(store_steps) and store_steps[ptr] == j:
            stored[ptr] = phi
            ptr += 1
    return stored, gmin, gmax, 0, 0, 0.0


@njit(cache=True)
def _pde_loop_jit(phi0, m_steps, store_steps, k, h,
                  face_eps_m, face_eps_p, r_rate,
                  phi_lo, inv_dphi, alpha_tab, aprime_tab,
                  robin_left, guard_lo, guard_hi):  # pragma: no cover - jitted
    n_nodes = phi0.shape[0]
    n = n_nodes - 2
    nmax = alpha_tab.shape[0] - 2
    lam = k / (h * h)
    kh = k / h
    stored = np.empty((store_steps.shape[0], n_nodes))
    ptr = 0
    if store_steps.shape[0] > 0 and store_steps[0] == 0:
        stored[0] = phi0
        ptr = 1
    phi = phi0.copy()
    new = np.empty(n_nodes)
    sub = np.empty(n)
    diag = np.empty(n)
    sup = np.empty(n)
    rhs = np.empty(n)
    cp = np.empty(n)
    xp = np.empty(n)
    gmin = phi[0]
    gmax = phi[0]
    for i in range(n_nodes):
        if phi[i] < gmin:
            gmin = phi[i]
        if phi[i] > gmax:
            gmax = phi[i]
    for j in range(1, m_steps + 1):
        for i in range(1, n + 1):
            fp = 0.5 * (phi[i] + phi[i + 1])
            fm = 0.5 * (phi[i - 1] + phi[i])
            # inline uniform-grid linear interpolation of the alpha table
            pos = (fp - phi_lo) * inv_dphi
            jj = int(pos)
            if jj < 0:
                jj = 0
            elif jj > nmax:
                jj = nmax
            w = pos - jj
            dp = aprime_tab[jj] + (aprime_tab[jj + 1] - aprime_tab[jj]) * w
            ap = alpha_tab[jj] + (alpha_tab[jj + 1] - alpha_tab[jj]) * w
            pos = (fm - phi_lo) * inv_dphi
            jj = int(pos)
            if jj < 0:
                jj = 0
            elif jj > nmax:
                jj = nmax
            w = pos - jj
            dm = aprime_tab[jj] + (aprime_tab[jj + 1] - aprime_tab[jj]) * w
            am = alpha_tab[jj] + (alpha_tab[jj + 1] - alpha_tab[jj]) * w
            if dp < 0.0 or dm < 0.0:
                return stored[:ptr], gmin, gmax, 2, j, min(dp, dm)
            big_fp = -(ap - face_eps_p[i - 1] - r_rate) * fp
            big_fm = -(am - face_eps_m[i - 1] - r_rate) * fm
            rhs[i - 1] = phi[i] + kh * ((face_eps_p[i - 1] - face_eps_m[i - 1])
                                        + (big_fp - big_fm))
            diag[i - 1] = 1.0 + lam * (dp + dm)
            sub[i - 1] = -lam * dm
            sup[i - 1] = -lam * dp
        if robin_left:
            diag[0] += sub[0] / (1.0 + h)
            rhs[0] += sub[0] * h / (1.0 + h)
        else:
            diag[0] += sub[0]
        diag[n - 1] += sup[n - 1]
        # Thomas algorithm
        cp[0] = sup[0] / diag[0]
        xp[0] = rhs[0] / diag[0]
        for i in range(1, n):
            m_ = diag[i] - sub[i] * cp[i - 1]
            cp[i] = sup[i] / m_
            xp[i] = (rhs[i] - sub[i] * xp[i - 1]) / m_
        new[n] = xp[n - 1]
        for i in range(n - 2, -1, -1):
            new[i + 1] = xp[i] - cp[i] * new[i + 2]
        if robin_left:
            new[0] = new[1] / (1.0 + h) - h / (1.0 + h)
        else:
            new[0] = new[1]
        new[n_nodes - 1] = new[n_nodes - 2]
        lmin = new[0]
        lmax = new[0]
        for i in range(n_nodes):
            phi[i] = new[i]
            if new[i] < lmin:
                lmin = new[i]
            if new[i] > lmax:
                lmax = new[i]
        if lmin < gmin:
            gmin = lmin
        if lmax > gmax:
            gmax = lmax
        if lmin < guard_lo or lmax > guard_hi:
            bad = lmin if lmin < guard_lo else lmax
            return stored[:ptr], gmin, gmax, 1, j, bad
        if ptr < store_steps.shape[0] and store_steps[ptr] == j:
            stored[ptr] = phi
            ptr += 1
    return stored, gmin, gmax, 0, 0, 0.0


def pde_loop(*args, force_numpy: bool = False):
    if numba_enabled() and not force_numpy:
        return _pde_loop_jit(*args)
    return pde_loop_numpy(*args)


# ---------------------------------------------------------------------------
# Euler-Maruyama path loop
# ---------------------------------------------------------------------------

def sim_loop_numpy(x0, dt, z, layer_for_step, layers,
                   x_left, h_x, mu, sigma, eps, r_rate,
                   phi_lo, inv_dphi, theta_tab,
                   table_min, table_max, store_paths):
    n_paths, n_steps = z.shape
    n_nodes = layers.shape[1]
    n_theta = theta_tab.shape[0]
    sqdt = np.sqrt(dt)
    x = np.full(n_paths, x0)
    phi_seen_min = np.full(n_paths, np.inf)
    phi_seen_max = np.full(n_paths, -np.inf)
    paths = np.empty((n_paths, n_steps + 1)) if store_paths else np.empty((0, 0))
    if store_paths:
        paths[:, 0] = x
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(n_steps):
            layer = layers[layer_for_step[s]]
            pos = np.clip((x - x_left) / h_x, 0.0, n_nodes - 1.0)
            i0 = np.minimum(pos.astype(np.int64), n_nodes - 2)
            w = pos - i0
            phi = layer[i0] + (layer[i0 + 1] - layer[i0]) * w
            if phi.min() < table_min - 1e-9 or phi.max() > table_max + 1e-9:
                bad = int(np.argmin(phi) if phi.min() < table_min - 1e-9 else np.argmax(phi))
                return x, paths, phi_seen_min, phi_seen_max, 1, bad, s
            np.minimum(phi_seen_min, phi, out=phi_seen_min)
            np.maximum(phi_seen_max, phi, out=phi_seen_max)
            pos = (phi - phi_lo) * inv_dphi
            jj = np.clip(pos.astype(np.int64), 0, n_theta - 2)
            wj = (pos - jj)[:, None]
            theta = theta_tab[jj] * (1.0 - wj) + theta_tab[jj + 1] * wj
            np.clip(theta, 0.0, None, out=theta)
            theta /= theta.sum(axis=1)[:, None]
            vol2 = np.einsum("ij,jk,ik->i", theta, sigma, theta)
            drift = theta @ mu - 0.5 * vol2 + eps * np.exp(-x) + r_rate
            x = x + drift * dt + np.sqrt(vol2) * sqdt * z[:, s]
            if not np.all(np.isfinite(x)):
                bad = int(np.flatnonzero(~np.isfinite(x))[0])
                return x, paths, phi_seen_min, phi_seen_max, 3, bad, s
            if store_paths:
                paths[:, s + 1] = x
    return x, paths, phi_seen_min, phi_seen_max, 0, 0, 0


@njit(cache=True)
def _sim_loop_jit(x0, dt, z, layer_for_step, layers,
                  x_left, h_x, mu, sigma, eps, r_rate,
                  phi_lo, inv_dphi, theta_tab,
                  table_min, table_max, store_paths):  # pragma: no cover - jitted
    n_paths, n_steps = z.shape
    n_nodes = layers.shape[1]
    n_theta = theta_tab.shape[0]
    n_assets = theta_tab.shape[1]
    sqdt = np.sqrt(dt)
    xt = np.empty(n_paths)
    phi_seen_min = np.full(n_paths, np.inf)
    phi_seen_max = np.full(n_paths, -np.inf)
    if store_paths:
        paths = np.empty((n_paths, n_steps + 1))
    else:
        paths = np.empty((0, 0))
    theta = np.empty(n_assets)
    for p in range(n_paths):
        x = x0
        if store_paths:
            paths[p, 0] = x
        for s in range(n_steps):
            layer = layers[layer_for_step[s]]
            pos = (x - x_left) / h_x
            if pos < 0.0:
                pos = 0.0
            elif pos > n_nodes - 1.0:
                pos = n_nodes - 1.0
            i0 = int(pos)
            if i0 > n_nodes - 2:
                i0 = n_nodes - 2
            w = pos - i0
            phi = layer[i0] + (layer[i0 + 1] - layer[i0]) * w
            if phi < table_min - 1e-9 or phi > table_max + 1e-9:
                return xt, paths, phi_seen_min, phi_seen_max, 1, p, s
            if phi < phi_seen_min[p]:
                phi_seen_min[p] = phi
            if phi > phi_seen_max[p]:
                phi_seen_max[p] = phi
            posj = (phi - phi_lo) * inv_dphi
            jj = int(posj)
            if jj < 0:
                jj = 0
            elif jj > n_theta - 2:
                jj = n_theta - 2
            wj = posj - jj
            tot = 0.0
            for a in range(n_assets):
                v = theta_tab[jj, a] * (1.0 - wj) + theta_tab[jj + 1, a] * wj
                if v < 0.0:
                    v = 0.0
                theta[a] = v
                tot += v
            vol2 = 0.0
            mdot = 0.0
            for a in range(n_assets):
                theta[a] /= tot
                mdot += theta[a] * mu[a]
            for a in range(n_assets):
                acc = 0.0
                for b in range(n_assets):
                    acc += sigma[a, b] * theta[b]
                vol2 += theta[a] * acc
            drift = mdot - 0.5 * vol2 + eps * np.exp(-x) + r_rate
            x = x + drift * dt + np.sqrt(vol2) * sqdt * z[p, s]
            if not np.isfinite(x):
                return xt, paths, phi_seen_min, phi_seen_max, 3, p, s
            if store_paths:
                paths[p, s + 1] = x
        xt[p] = x
    return xt, paths, phi_seen_min, phi_seen_max, 0, 0, 0


def sim_loop(*args, force_numpy: bool = False):
    if numba_enabled() and not force_numpy:
        return _sim_loop_jit(*args)
    return sim_loop_numpy(*args)
