"""Shared fixtures: small hand-checkable grids and a calibrated two-area case."""

from pathlib import Path
from typing import List

import pytest

from ems_guard.core.config import Config
from ems_guard.core.models import AssetSignature, Branch, Bus, Generator, Network
from ems_guard.tools.casegen import TwoAreaCase, two_area_case
from ems_guard.tools.netcase import load_case
from ems_guard.tools.ptdf import PtdfMatrix, compute_ptdf
from ems_guard.tools.rtlrta import calibrate_threshold

CASES_DIR = Path(__file__).resolve().parent.parent / "configs" / "cases"


@pytest.fixture(scope="session")
def config() -> Config:
    return Config()


@pytest.fixture(scope="session")
def cases_dir() -> Path:
    return CASES_DIR


@pytest.fixture(scope="session")
def case5() -> Network:
    return load_case(CASES_DIR / "case5.m")


@pytest.fixture(scope="session")
def case14() -> Network:
    return load_case(CASES_DIR / "case14.json")


@pytest.fixture
def triangle() -> Network:
    """Three buses, three equal lines; cheap unit at bus 1, load at bus 3."""
    return Network(
        name="triangle",
        buses=[Bus(id=1), Bus(id=2), Bus(id=3, load_mw=90.0)],
        branches=[
            Branch(id=1, from_bus=1, to_bus=2, reactance=0.1, rating=100.0),
            Branch(id=2, from_bus=1, to_bus=3, reactance=0.1, rating=100.0),
            Branch(id=3, from_bus=2, to_bus=3, reactance=0.1, rating=100.0),
        ],
        generators=[
            Generator(id=1, bus=1, p_max=200.0, cost=10.0),
            Generator(id=2, bus=2, p_max=200.0, cost=30.0),
        ],
        reference_bus=1,
    )


@pytest.fixture
def two_bus() -> Network:
    """Cheap unit behind a 60 MW line, expensive unit at the 100 MW load."""
    return Network(
        name="two_bus",
        buses=[Bus(id=1), Bus(id=2, load_mw=100.0)],
        branches=[Branch(id=1, from_bus=1, to_bus=2, reactance=0.1, rating=60.0)],
        generators=[
            Generator(id=1, bus=1, p_max=200.0, cost=20.0),
            Generator(id=2, bus=2, p_max=200.0, cost=35.0),
        ],
        reference_bus=1,
    )


@pytest.fixture(scope="session")
def two_area() -> TwoAreaCase:
    return two_area_case(120, seed=2019)


@pytest.fixture(scope="session")
def two_area_ptdf(two_area: TwoAreaCase) -> PtdfMatrix:
    return compute_ptdf(two_area.network)


@pytest.fixture(scope="session")
def two_area_signatures(two_area: TwoAreaCase, two_area_ptdf: PtdfMatrix) -> List[AssetSignature]:
    net = two_area.network
    D = net.forecast_loads
    return [calibrate_threshold(net, two_area_ptdf, D, k) for k in two_area.targets]
