import logging
import time
from pathlib import Path

import numpy as np
import pytest

from evoecon.engine import SimConfig, deploy, step
from evoecon.sam_io import load_sam, parse_sam

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"
SAM_PATH = DATA / "spain6_2008.csv"
DEMO_CFG = DATA / "demo.cfg"


@pytest.fixture(autouse=True)
def _quiet_engine_log():
    logging.getLogger("evoecon").setLevel(logging.ERROR)
    yield


@pytest.fixture(scope="session")
def sam():
    return load_sam(SAM_PATH)


@pytest.fixture(scope="session")
def demo_config():
    return SimConfig.from_file(DEMO_CFG)


def small_config(**kw):
    """Demo economy with a short horizon for unit tests."""
    kw.setdefault("months", 60)
    return SimConfig.from_file(DEMO_CFG, **kw)


def run_months(config, months, sam=None):
    st = deploy(config, sam)
    for _ in range(months):
        step(st)
    return st


@pytest.fixture(scope="session")
def demo_run(demo_config):
    """The full-horizon demo simulation, shared across tests."""
    logging.getLogger("evoecon").setLevel(logging.ERROR)
    t0 = time.perf_counter()
    state = run_months(demo_config, demo_config.months)
    state.wall_seconds = time.perf_counter() - t0
    return state


def synthetic_sam(n_sectors: int, seed: int = 0, households: bool = False) -> str:
    """CSV text for a random SAM with ``n_sectors`` producing sectors.

    Columns cover every sector plus a GFCF column; rows add imports, wages,
    surplus and a product-tax row.  With ``households`` an H column of
    consumption is included.
    """
    rng = np.random.default_rng(seed)
    sec = [f"P{i + 1:02d}_S{i + 1}" for i in range(n_sectors)]
    rows = sec + ["F90_GFCF", "X91_Ext", "L92_Wages", "K93_Surplus", "T94_TaxProducts"]
    if households:
        rows.append("H95_Households")
    cols = sec + ["F90_GFCF"] + (["H95_Households"] if households else [])
    n = len(rows)
    table = np.zeros((n, len(cols)))
    for j in range(n_sectors):
        inputs = rng.uniform(0, 1, n_sectors) * rng.uniform(0.2, 0.6) * 1000 / n_sectors
        table[:n_sectors, j] = np.round(inputs, 0)
        table[n_sectors + 1, j] = round(rng.uniform(50, 200))
        table[n_sectors + 2, j] = round(rng.uniform(150, 400))
        table[n_sectors + 3, j] = round(rng.uniform(100, 300))
        table[n_sectors + 4, j] = round(rng.uniform(0, 30))
    table[:n_sectors, n_sectors] = np.round(rng.uniform(10, 100, n_sectors))
    if households:
        table[:n_sectors, n_sectors + 1] = np.round(rng.uniform(50, 400, n_sectors))
    lines = ["account," + ",".join(cols)]
    for i, r in enumerate(rows):
        lines.append(r + "," + ",".join(str(int(v)) for v in table[i]))
    lines.append("colSUM," + ",".join(str(int(v)) for v in table.sum(axis=0)))
    return "\n".join(lines) + "\n"


@pytest.fixture
def synth_sam():
    return parse_sam(synthetic_sam(4, seed=3, households=True))


# ---------------------------------------------------------------------------
# acceptance verdicts, one line each at the end of the session

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def verdict(name: str, passed: bool, detail: str) -> None:
    """Record and print one acceptance verdict; the caller still asserts."""
    ACCEPTANCE[name] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
