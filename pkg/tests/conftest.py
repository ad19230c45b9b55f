import logging

import pytest

from idlab.geometry import Domain, build_grid


@pytest.fixture(autouse=True)
def _quiet_clamp_warnings(caplog):
    logging.getLogger("idlab.coefficients").setLevel(logging.ERROR)
    yield


@pytest.fixture(scope="session")
def domain() -> Domain:
    return Domain()


@pytest.fixture(scope="session")
def domain3() -> Domain:
    return Domain(dim=3, xbar=(0.5, 0.5, 0.0))


@pytest.fixture(scope="session")
def grid16(domain):
    return build_grid(domain, 16)


@pytest.fixture(scope="session")
def grid24(domain):
    return build_grid(domain, 24)
