"""Shared fixtures for the test suite"""
import json

import pytest
from sqlmodel import Session, SQLModel, create_engine
from sqlmodel.pool import StaticPool

from exitctrl.catalog import build_catalog_problem
from exitctrl.database import init_db
from exitctrl.schemas import GridConfig, RunConfig, SimConfig
from exitctrl.verify import CheckContext


@pytest.fixture(name="poisson")
def poisson_fixture():
    """Brownian exit from (-1, 1) with unit running cost"""
    return build_catalog_problem("poisson1d")


@pytest.fixture(name="semilinear")
def semilinear_fixture():
    return build_catalog_problem("semilinear1d")


@pytest.fixture(name="controlled")
def controlled_fixture():
    return build_catalog_problem("controlled1d")


@pytest.fixture(name="sim")
def sim_fixture():
    """Coarse, short simulation settings"""
    return SimConfig(dt=0.01, t_max=10.0, n_paths=200, master_seed=7)


@pytest.fixture(name="make_context")
def make_context_fixture():
    """Build a CheckContext from a catalog entry and config overrides"""
    def make(catalog="poisson1d", params=None, n_paths=200, nodes=41, x0=None, **verify):
        problem = {"catalog": catalog}
        if params:
            problem["params"] = params
        config = RunConfig(
            problem=problem,
            simulation=SimConfig(dt=0.01, t_max=10.0, n_paths=n_paths, master_seed=11),
            grid=GridConfig(nodes=[nodes]),
            verify=verify,
            x0=x0,
        )
        return CheckContext.from_config(config)

    return make


@pytest.fixture(name="registry")
def registry_fixture():
    """Create an in-memory run registry session"""
    engine = create_engine(
        "sqlite:///:memory:",
        connect_args={"check_same_thread": False},
        poolclass=StaticPool,
    )
    init_db(engine)

    with Session(engine) as session:
        yield session

    SQLModel.metadata.drop_all(engine)


@pytest.fixture(name="write_config")
def write_config_fixture(tmp_path):
    """Write a run configuration document and return its path"""
    def write(doc, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    return write
