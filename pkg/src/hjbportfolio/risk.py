"""Empirical tail-risk measures and risk-adjusted performance ratios.

Conventions: the sample is terminal wealth (higher is better), so risk sits
in the lower tail. With N sorted values and level beta, k = ceil(beta N):

    VaR_beta  = k-th smallest value,
    CVaR_beta = mean of the k smallest values  (= E[v | v <= VaR_beta]),
    CVaRD_beta = mean - CVaR_beta >= 0         (deviation form).

VaR/CVaR here are wealth levels, not losses. No interpolation between order
statistics is applied. The ratios are

    SR       = (mean - r) / std            (sample std, n-1 denominator)
    SR_CVaR  = (mean - r) / CVaR_beta
    SR_CVaRD = (mean - r) / CVaRD_beta

each reported as None when its denominator is degenerate (|.| < 1e-12).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .csvutil import fmt, write_csv
from .errors import ConfigError

_DEGENERATE = 1e-12


@dataclass(frozen=True)
class RiskReport:
    mean: float
    std: float
    var_beta: float
    cvar_beta: float
    cvard_beta: float
    sr: float | None
    sr_cvar: float | None
    sr_cvard: float | None
    beta: float
    r: float

    def as_rows(self):
        for key in ("mean", "std", "var_beta", "cvar_beta", "cvard_beta",
                    "sr", "sr_cvar", "sr_cvard", "beta", "r"):
            val = getattr(self, key)
            yield [key, "NA" if val is None else fmt(float(val))]


def tail_count(n: int, beta: float) -> int:
    """k = ceil(beta * n), robust to float representation of beta."""
    return max(1, min(n, math.ceil(beta * n - 1e-9)))


def var_cvar(v, beta: float) -> tuple[float, float]:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ConfigError("empty sample")
    if not (0 < beta < 1):
        raise ConfigError(f"beta must be in (0, 1), got {beta}")
    k = tail_count(v.size, beta)
    tail = np.sort(v)[:k]
    return float(tail[-1]), float(tail.mean())


def report(v, beta: float, r: float = 0.0) -> RiskReport:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise ConfigError(f"need at least 2 samples, got {v.size}")
    var, cvar = var_cvar(v, beta)
    mean = float(v.mean())
    std = float(v.std(ddof=1))
    cvard = mean - cvar
    excess = mean - r
    return RiskReport(
        mean=mean,
        std=std,
        var_beta=var,
        cvar_beta=cvar,
        cvard_beta=cvard,
        sr=excess / std if std >= _DEGENERATE else None,
        sr_cvar=excess / cvar if abs(cvar) >= _DEGENERATE else None,
        sr_cvard=excess / cvard if cvard >= _DEGENERATE else None,
        beta=float(beta),
        r=float(r),
    )


def write_report_csv(rep: RiskReport, path, meta: dict | None = None):
    write_csv(path, ["key", "value"], rep.as_rows(), meta=meta)
