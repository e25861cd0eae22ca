"""Shared fixtures and the acceptance-criteria report.

Acceptance tests append one line per criterion to REPORT; the terminal
summary prints them after the run so the pass/fail record is visible
without -s.
"""

import numpy as np
import pytest

import esfsvc as es

REPORT = []


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in REPORT:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def truth12():
    """Small default scenario shared by estimator-level tests."""
    return es.generate_scenario(es.SimConfig(grid_side=12, seed=3))


@pytest.fixture(scope="session")
def basis12(truth12):
    sites = truth12.dataset.sites
    C = es.connectivity_matrix(es.pairwise_distance(sites),
                               es.ConnectivityConfig(r=es.mst_range(sites)))
    return es.moran_basis(C, max_l=12)


def two_covariate(dataset):
    """Intercept + first slope slice of a dataset, for small designs."""
    return es.Dataset(sites=dataset.sites, y=dataset.y,
                      X=dataset.X[:, :2].copy(), names=dataset.names[:2])


@pytest.fixture(scope="session")
def design12(truth12, basis12):
    """Unit-weight K = 2 design over the full 12 x 12 grid."""
    ds = two_covariate(truth12.dataset)
    return es.build_design(ds, basis12, np.arange(ds.n), np.ones(ds.n))
