"""Command-line pipeline driver.

Subcommands:

  alpha     tabulate the parametric-QP value function (cached by input hash)
  solve     alpha + PDE solve, writes phi.csv
  simulate  alpha + PDE + Monte Carlo, writes terminal_wealth.csv
  report    risk metrics over an existing terminal-wealth CSV
  pipeline  all stages into a run directory
  sweep     pipeline per risk-aversion value (CARA and/or DARA), one summary
            row per entry; entries run in parallel up to --jobs

Configuration is a flat key=value file with [sections]; every CSV written
carries a header comment with the config hash, seed and package version, so
reruns with identical inputs are bit-identical. Exit codes: 0 ok, 2 config
error, 4 I/O error, 3 numeric failure (PD check, QP convergence, PDE bounds).
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .csvutil import content_hash, read_csv, write_csv
from .errors import ConfigError, HJBPortfolioError, NumericError
from .market import MarketSpec, load_market_csv
from .pde import GridSpec, PhiField, solve, write_phi_csv
from .qp import AlphaTable, QPSettings, build_alpha_table, read_alpha_csv, write_alpha_csv
from .risk import report as risk_report
from .risk import write_report_csv
from .simulate import SimConfig, simulate, write_paths_csv, write_terminal_csv
from .utility import UtilitySpec
from .value import reconstruct, write_value_csv


@dataclass(frozen=True)
class RunConfig:
    market: MarketSpec
    utility: UtilitySpec
    grid: GridSpec
    qp: QPSettings
    sim: SimConfig
    beta: float
    out_dir: Path
    cache: bool
    mu_path: Path
    sigma_path: Path
    sweep_kinds: tuple[str, ...]
    sweep_a_values: tuple[float, ...]
    sweep_dara_drop: float
    sweep_x_star: float

    @property
    def config_hash(self) -> str:
        return content_hash(
            self.mu_path.read_bytes(),
            self.sigma_path.read_bytes(),
            self.market.epsilon, self.market.r,
            self.utility,
            self.grid,
            self.qp,
            self.sim,
            self.beta,
            __version__,
        )

    def meta(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.sim.seed,
            "version": __version__,
        }


def _get(cp, section, key, default, cast=float):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r}: not a valid {cast.__name__}")
    return default


def load_config(path, *, seed=None, beta=None, out=None, cache=None) -> RunConfig:
    """Parse an INI-style run configuration; CLI flags override file values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    base = path.parent

    if not cp.has_option("market", "mu_csv") or not cp.has_option("market", "sigma_csv"):
        raise ConfigError("[market] mu_csv and sigma_csv are required")
    mu_path = (base / cp.get("market", "mu_csv")).resolve()
    sigma_path = (base / cp.get("market", "sigma_csv")).resolve()
    for p in (mu_path, sigma_path):
        if not p.is_file():
            raise ConfigError(f"market data file not found: {p}")
    market = load_market_csv(
        mu_path, sigma_path,
        epsilon=_get(cp, "market", "epsilon", 1.0),
        r=_get(cp, "market", "r", 0.0),
        degenerate_ok=_get(cp, "market", "degenerate_ok", False, bool),
    )

    kind = _get(cp, "utility", "kind", "cara", str).strip().lower()
    if kind == "cara":
        utility = UtilitySpec.cara(_get(cp, "utility", "a", 9.0))
    elif kind == "dara":
        utility = UtilitySpec.dara(
            _get(cp, "utility", "a0", 9.0),
            _get(cp, "utility", "a1", 6.0),
            _get(cp, "utility", "x_star", 2.0),
        )
    else:
        raise ConfigError(f"[utility] kind must be cara or dara, got {kind!r}")

    grid = GridSpec(
        x_left=_get(cp, "grid", "x_left", math.log(0.01)),
        x_right=_get(cp, "grid", "x_right", 10.0),
        h=_get(cp, "grid", "h", 0.05),
        k=_get(cp, "grid", "k", None) if cp.has_option("grid", "k") else None,
        T=_get(cp, "grid", "T", 10.0),
    )
    qp = QPSettings(
        phi_min=_get(cp, "qp", "phi_min", -1.0),
        phi_max=_get(cp, "qp", "phi_max", 15.0),
        phi_step=_get(cp, "qp", "phi_step", 0.005),
        tol=_get(cp, "qp", "tolerance", 1e-10),
        max_iter=_get(cp, "qp", "max_iterations", 100, int),
    )
    sim = SimConfig(
        n_paths=_get(cp, "sim", "n_paths", 5000, int),
        x0=_get(cp, "sim", "x0", 0.0),
        T=grid.T,
        dt=_get(cp, "sim", "dt", 0.05),
        seed=seed if seed is not None else _get(cp, "sim", "seed", 42, int),
        store_paths=_get(cp, "sim", "store_paths", False, bool),
        antithetic=_get(cp, "sim", "antithetic", False, bool),
    )

    kinds_raw = _get(cp, "sweep", "kinds", "cara,dara", str)
    kinds = tuple(k.strip().lower() for k in kinds_raw.split(",") if k.strip())
    for k in kinds:
        if k not in ("cara", "dara"):
            raise ConfigError(f"[sweep] kinds entries must be cara or dara, got {k!r}")
    a_raw = _get(cp, "sweep", "a_values", "4,5,6,7,8,9,10,11,12", str)
    try:
        a_values = tuple(float(v) for v in a_raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"[sweep] a_values = {a_raw!r}: not a comma list of numbers")

    if out:
        out_dir = Path(out).resolve()  # CLI flag: relative to the caller's cwd
    else:
        out_dir = Path(_get(cp, "output", "dir", "runs", str))
        if not out_dir.is_absolute():
            out_dir = base / out_dir  # config value: relative to the config file
    cache_flag = cache if cache is not None else _get(cp, "output", "cache", True, bool)

    return RunConfig(
        market=market, utility=utility, grid=grid, qp=qp, sim=sim,
        beta=beta if beta is not None else _get(cp, "report", "beta", 0.05),
        out_dir=out_dir, cache=cache_flag,
        mu_path=mu_path, sigma_path=sigma_path,
        sweep_kinds=kinds, sweep_a_values=a_values,
        sweep_dara_drop=_get(cp, "sweep", "dara_drop", 3.0),
        sweep_x_star=_get(cp, "sweep", "x_star", 2.0),
    )


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def alpha_cache_key(rc: RunConfig) -> str:
    # alpha depends on (mu, sigma, qp settings) only: epsilon and r enter the
    # PDE analytically, so one table serves every utility/inflow combination
    return content_hash(
        rc.mu_path.read_bytes(), rc.sigma_path.read_bytes(), rc.qp, __version__
    )


def stage_alpha(rc: RunConfig, out_dir: Path) -> tuple[AlphaTable, Path]:
    """Build (or load from cache) the alpha table; returns (table, csv path).

    The cache lives under the run's root output directory so sweep entries
    share one table file.
    """
    key = alpha_cache_key(rc)
    meta = dict(rc.meta(), alpha_inputs_hash=key)
    cache_file = rc.out_dir / "cache" / f"alpha_{key}.csv"
    if rc.cache and cache_file.is_file():
        table = read_alpha_csv(cache_file)
        return table, cache_file
    table = build_alpha_table(rc.market, rc.qp)
    if rc.cache:
        write_alpha_csv(table, cache_file, meta=meta)
        return table, cache_file
    target = out_dir / "alpha.csv"
    write_alpha_csv(table, target, meta=meta)
    return table, target


def write_alpha_outputs(rc: RunConfig, table: AlphaTable, out_dir: Path):
    meta = dict(rc.meta(), alpha_inputs_hash=alpha_cache_key(rc))
    target = out_dir / "alpha.csv"
    if not (target.is_file() and _file_hash_matches(target, meta)):
        write_alpha_csv(table, target, meta=meta)
    step = float(table.phi_grid[1] - table.phi_grid[0])
    second = np.full(len(table.phi_grid), np.nan)
    second[1:-1] = np.diff(table.alpha, 2) / step**2

    def rows():
        for i in range(len(table.phi_grid)):
            sd = "NA" if np.isnan(second[i]) else second[i]
            yield [table.phi_grid[i], table.alpha[i], table.alpha_prime[i], sd]

    write_csv(out_dir / "alpha_plot.csv",
              ["phi", "alpha", "alpha_prime", "alpha_second_diff"], rows(), meta=meta)


def _file_hash_matches(path: Path, meta: dict) -> bool:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            head = [next(fh) for _ in range(len(meta))]
    except (OSError, StopIteration):
        return False
    keys = {}
    for line in head:
        if line.startswith("#") and "=" in line:
            k, _, v = line.lstrip("#").strip().partition("=")
            keys[k.strip()] = v.strip()
    return keys.get("alpha_inputs_hash") == meta.get("alpha_inputs_hash")


def stage_pde(rc: RunConfig, table: AlphaTable, dense: bool) -> PhiField:
    """Solve the PDE; dense mode stores a layer per simulation step."""
    if dense:
        snaps = np.round(np.arange(0, rc.sim.n_steps + 1) * rc.sim.dt, 12)
    else:
        snaps = None
    return solve(rc.utility, table, rc.market, rc.grid, snapshot_times=snaps)


def _integer_tau_subfield(field: PhiField) -> PhiField:
    taus = field.tau_snapshots
    keep = np.abs(taus - np.round(taus)) < min(0.25, field.grid.k * 0.5 + 1e-9)
    if keep.sum() < 2:
        return field
    return PhiField(
        grid=field.grid,
        tau_snapshots=taus[keep],
        values=field.values[keep],
        table_range=field.table_range,
        global_min=field.global_min,
        global_max=field.global_max,
    )


def run_pipeline(rc: RunConfig, out_dir: Path, write_outputs: bool = True):
    """alpha -> pde -> value -> simulate -> report; returns the report."""
    out_dir.mkdir(parents=True, exist_ok=True)
    table, _ = stage_alpha(rc, out_dir)
    if write_outputs:
        write_alpha_outputs(rc, table, out_dir)
    field = stage_pde(rc, table, dense=True)
    meta = rc.meta()
    if write_outputs:
        write_phi_csv(_integer_tau_subfield(field), out_dir / "phi.csv", meta=meta)
        vf = reconstruct(
            field, rc.utility, table, rc.market, x0=rc.sim.x0, declared_coarse=True
        )
        write_value_csv(vf, out_dir / "value.csv", meta=meta)
    batch = simulate(field, table, rc.market, rc.sim)
    write_terminal_csv(batch, out_dir / "terminal_wealth.csv", meta=meta)
    if rc.sim.store_paths:
        write_paths_csv(batch, out_dir / "paths.csv", meta=meta)
    rep = risk_report(batch.terminal_wealth, rc.beta, rc.market.r)
    write_report_csv(rep, out_dir / "report.csv", meta=meta)
    return rep


def _utility_for(kind: str, a: float, drop: float, x_star: float) -> UtilitySpec:
    if kind == "cara":
        return UtilitySpec.cara(a)
    if a - drop <= 0:
        raise ConfigError(f"DARA sweep needs a - drop > 0; a={a}, drop={drop}")
    return UtilitySpec.dara(a, a - drop, x_star)


def _sweep_entry(rc: RunConfig, kind: str, a: float, entry_dir_str: str):
    """One sweep entry; module-level so process pools can pickle it."""
    utility = _utility_for(kind, a, rc.sweep_dara_drop, rc.sweep_x_star)
    entry_rc = replace(rc, utility=utility)
    rep = run_pipeline(entry_rc, Path(entry_dir_str), write_outputs=False)
    return kind, a, rep


SWEEP_COLUMNS = ["a", "mean", "std", "cvar", "cvard", "sr", "sr_cvard"]


def run_sweep(rc: RunConfig, jobs: int = 1):
    """Pipeline per (kind, a); per-kind summary tables sorted by a.

    Entries share the market, grid and seed (common random numbers), so the
    summary rows are directly comparable across utilities.
    """
    out_dir = rc.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    # warm the alpha cache once so workers only read it
    stage_alpha(rc, out_dir)
    tasks = [
        (kind, a, str(out_dir / "entries" / f"{kind}_a{a:g}"))
        for kind in rc.sweep_kinds
        for a in rc.sweep_a_values
    ]
    results = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_entry, rc, k, a, d) for k, a, d in tasks]
            for fut in futures:
                kind, a, rep = fut.result()
                results[(kind, a)] = rep
    else:
        for k, a, d in tasks:
            kind, a, rep = _sweep_entry(rc, k, a, d)
            results[(kind, a)] = rep

    notes = []
    for kind in rc.sweep_kinds:
        rows = []
        for a in sorted(set(rc.sweep_a_values)):
            rep = results[(kind, a)]
            rows.append([
                a, rep.mean, rep.std, rep.cvar_beta, rep.cvard_beta,
                "NA" if rep.sr is None else rep.sr,
                "NA" if rep.sr_cvard is None else rep.sr_cvard,
            ])
        write_csv(out_dir / f"sweep_{kind}.csv", SWEEP_COLUMNS, rows, meta=rc.meta())
        srs = [r[5] for r in rows if r[5] != "NA"]
        drops = [i for i in range(1, len(srs)) if srs[i] < srs[i - 1]]
        if drops:
            a_sorted = sorted(set(rc.sweep_a_values))
            where = ", ".join(f"a={a_sorted[i]:g}" for i in drops)
            notes.append(f"note: {kind} SR trend is non-monotone at {where}")
    return results, notes


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="simulation seed override")
    p.add_argument("--beta", type=float, default=None, help="CVaR level override")
    p.add_argument("--no-cache", action="store_true", help="disable the alpha table cache")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hjbportfolio",
        description="Dynamic portfolio optimization by terminal-utility maximization",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("alpha", "tabulate the parametric-QP value function"),
        ("solve", "alpha table + PDE solve"),
        ("simulate", "alpha + PDE + Monte Carlo batch"),
        ("pipeline", "all stages into a run directory"),
        ("sweep", "pipeline per risk-aversion value"),
    ]:
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel sweep entries")
    p = sub.add_parser("report", help="risk metrics over a terminal-wealth CSV")
    p.add_argument("wealth_csv", help="CSV with one terminal wealth per line")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--rate", type=float, default=0.0, help="interest rate r in the ratios")
    p.add_argument("--out", default=None, help="output directory (default: alongside input)")
    return ap


def _cmd_report(args) -> int:
    src = Path(args.wealth_csv)
    if not src.is_file():
        raise ConfigError(f"wealth CSV not found: {src}")
    try:
        _cols, rows, meta = read_csv(src)
    except ValueError as exc:
        raise ConfigError(f"{src}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{src}: no samples")
    for i, row in enumerate(rows):
        if len(row) != 1:
            raise ConfigError(f"{src}: line {i + 2}: expected a single value per row")
        if not isinstance(row[0], float):
            raise ConfigError(f"{src}: line {i + 2}: not a number: {row[0]!r}")
    values = np.array([r[0] for r in rows])
    rep = risk_report(values, args.beta, args.rate)
    out_dir = Path(args.out) if args.out else src.parent
    out_meta = {"config_hash": content_hash(src.read_bytes(), args.beta, args.rate),
                "seed": meta.get("seed", "NA"), "version": __version__}
    write_report_csv(rep, out_dir / "report.csv", meta=out_meta)
    print(out_dir / "report.csv")
    return 0


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return _cmd_report(args)

    rc = load_config(
        args.config,
        seed=args.seed,
        beta=args.beta,
        out=args.out,
        cache=False if args.no_cache else None,
    )
    out_dir = rc.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.command == "alpha":
        table, path = stage_alpha(rc, out_dir)
        write_alpha_outputs(rc, table, out_dir)
        print(out_dir / "alpha.csv")
    elif args.command == "solve":
        table, _ = stage_alpha(rc, out_dir)
        field = stage_pde(rc, table, dense=False)
        write_phi_csv(field, out_dir / "phi.csv", meta=rc.meta())
        print(out_dir / "phi.csv")
    elif args.command == "simulate":
        table, _ = stage_alpha(rc, out_dir)
        field = stage_pde(rc, table, dense=True)
        batch = simulate(field, table, rc.market, rc.sim)
        write_terminal_csv(batch, out_dir / "terminal_wealth.csv", meta=rc.meta())
        if rc.sim.store_paths:
            write_paths_csv(batch, out_dir / "paths.csv", meta=rc.meta())
        print(out_dir / "terminal_wealth.csv")
    elif args.command == "pipeline":
        run_pipeline(rc, out_dir)
        print(out_dir / "report.csv")
    elif args.command == "sweep":
        _results, notes = run_sweep(rc, jobs=max(1, args.jobs))
        for note in notes:
            print(note)
        for kind in rc.sweep_kinds:
            print(out_dir / f"sweep_{kind}.csv")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except HJBPortfolioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
