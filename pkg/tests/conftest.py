import numpy as np
import pytest

from dssboussinesq import dss_data as dd
from dssboussinesq import dynamics as dy
from dssboussinesq import heat_profiles as hp
from dssboussinesq import profile_revision as pr
from dssboussinesq import solvers as sv
from dssboussinesq import spectral_core as sc

LAM = 2.0
R0 = 8.0


@pytest.fixture(scope="session")
def fields():
    return dd.builtin_fields(LAM)


@pytest.fixture(scope="session")
def box32():
    return sc.BoxSpec(16.0, 32)


@pytest.fixture(scope="session")
def box16():
    return sc.BoxSpec(8.0, 16)


@pytest.fixture(scope="session")
def profiles32(fields, box32):
    V0 = hp.compute_profile(fields["azimuthal"], box32)
    T0 = hp.compute_profile(fields["inverse-radius"], box32)
    return V0, T0


@pytest.fixture(scope="session")
def pair32(profiles32):
    return pr.revise(*profiles32, R0)


@pytest.fixture(scope="session")
def data32(pair32):
    return dy.build_system(pair32)


@pytest.fixture(scope="session")
def pmap32(data32):
    return sv.PoincareMap(data32)


@pytest.fixture(scope="session")
def periodic32(pmap32):
    return sv.solve_periodic(pmap32, 1e-8, 50)


@pytest.fixture(scope="session")
def stationary32(data32):
    smap = sv.StationaryMap(data32)
    return smap, sv.solve_stationary(smap, 1e-8)


@pytest.fixture(scope="session")
def orbit32(data32, stationary32):
    from dssboussinesq import pressure_reconstruct as prc
    smap, sol = stationary32
    return prc.build_orbit(data32, smap.unpack(sol.x), n_samples=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
