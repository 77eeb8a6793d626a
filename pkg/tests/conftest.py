import numpy as np
import pytest

from hjbportfolio.market import MarketSpec, load_market_csv
from hjbportfolio.pde import GridSpec, PhiField, solve
from hjbportfolio.qp import build_alpha_table
from hjbportfolio.utility import UtilitySpec

from pathlib import Path

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

# Six-asset DAX excerpt used throughout (annualized, Aug 2010 - Apr 2012)
DAX6_NAMES = ("Merck", "VW", "SAP", "Fres Med", "Linde", "Fres")
DAX6_MU = np.array([0.7315, 0.3413, 0.1877, 0.2202, 0.1932, 0.1351])
DAX6_SIGMA = np.array([
    [1.6266, -0.0155, -0.0104, -0.0146, -0.0017, -0.0033],
    [-0.0155, 0.1584, 0.0345, 0.0292, 0.0569, 0.0238],
    [-0.0104, 0.0345, 0.0516, 0.0183, 0.0240, 0.0143],
    [-0.0146, 0.0292, 0.0183, 0.0434, 0.0227, 0.0248],
    [-0.0017, 0.0569, 0.0240, 0.0227, 0.0530, 0.0201],
    [-0.0033, 0.0238, 0.01430, 0.0248, 0.0201, 0.0386],
])


@pytest.fixture(scope="session")
def dax6_market():
    return load_market_csv(
        DATA_DIR / "dax6_mu.csv", DATA_DIR / "dax6_sigma.csv", epsilon=1.0, r=0.0
    )


@pytest.fixture(scope="session")
def dax6_table(dax6_market):
    return build_alpha_table(dax6_market)


@pytest.fixture(scope="session")
def default_grid():
    return GridSpec()


@pytest.fixture(scope="session")
def cara9_dense_field(dax6_market, dax6_table, default_grid):
    """CARA a=9 solve on the default grid with a layer per simulation step."""
    snaps = np.round(np.arange(0, 201) * 0.05, 12)
    return solve(
        UtilitySpec.cara(9.0), dax6_table, dax6_market, default_grid,
        snapshot_times=snaps,
    )


def constant_phi_field(grid: GridSpec, phi_value: float, taus, table) -> PhiField:
    """Synthesized field with phi identically constant (analytic fixture)."""
    taus = np.asarray(taus, dtype=np.float64)
    vals = np.full((len(taus), grid.n_interior + 2), float(phi_value))
    return PhiField(
        grid=grid,
        tau_snapshots=taus,
        values=vals,
        table_range=(table.phi_min, table.phi_max),
        global_min=float(phi_value),
        global_max=float(phi_value),
    )


def single_asset_market(mu=0.05, var=0.1, epsilon=0.0, r=0.0, degenerate_ok=False):
    return MarketSpec(
        asset_names=("only",),
        mu=np.array([mu]),
        sigma_mat=np.array([[var]]),
        epsilon=epsilon,
        r=r,
        degenerate_ok=degenerate_ok,
    )
