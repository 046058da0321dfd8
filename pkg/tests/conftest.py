import numpy as np
import pytest

from amdiqcc.params import ProtocolParams, SecurityParams, SimulatorParams


@pytest.fixture(scope="session")
def params():
    return ProtocolParams()


@pytest.fixture(scope="session")
def sec():
    return SecurityParams()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240917)


def fixture_counts_path(tag: str):
    from importlib.resources import files

    return files("amdiqcc.data") / f"counts_{tag}db.counts"


# Published per-column results the analysis must reproduce.
PUBLISHED = {
    "39p3": dict(y111z=1.951e6, e111pz=0.3528, l_min=3.932e4, rate=3.940e-8,
                 e_z=(1.714e-3, 1.692e-3, 1.475e-3), mean_dt=2.078e-6),
    "48p6": dict(y111z=2.391e6, e111pz=0.3232, l_min=1.571e5, rate=3.937e-8,
                 e_z=(0.946e-3, 0.974e-3, 0.782e-3), mean_dt=2.067e-6),
    "59p6": dict(y111z=1.643e6, e111pz=0.3413, l_min=7.139e4, rate=4.470e-9,
                 e_z=(1.126e-3, 0.716e-3, 0.726e-3), mean_dt=2.042e-6),
}


def make_sim(**kwargs) -> SimulatorParams:
    kwargs.setdefault("loss_db", (12.0, 12.0, 12.0))
    kwargs.setdefault("seed", 99)
    return SimulatorParams(**kwargs)
