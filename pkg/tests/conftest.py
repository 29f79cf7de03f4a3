"""Shared fixtures: small configurations and solves reused across test modules."""

import numpy as np
import pytest

from suspvisc.ensembles import EnsembleSpec, generate
from suspvisc.spectral import SolverConfig, solve_corrector
from suspvisc.viscosity import strain_basis


@pytest.fixture(scope="session")
def E2():
    return strain_basis(2)[0]


@pytest.fixture(scope="session")
def E3():
    return strain_basis(3)[0]


@pytest.fixture(scope="session")
def rsa2d():
    """Five hard disks in a periodic 8-box."""
    return generate(EnsembleSpec(d=2, L=8.0, phi=0.05, gap=0.2, seed=11))


@pytest.fixture(scope="session")
def sc2d():
    return SolverConfig(n=64, theta=1e3, tol=1e-7)


@pytest.fixture(scope="session")
def solved2d(rsa2d, sc2d, E2):
    """One converged corrector reused by metadata and dissipation tests."""
    return solve_corrector(rsa2d, E2, sc2d)


@pytest.fixture(scope="session")
def theta_sweep(rsa2d, E2):
    """Correctors on the same geometry at increasing penalization."""
    out = {}
    for theta in (1e2, 1e3, 1e4):
        out[theta] = solve_corrector(rsa2d, E2, SolverConfig(n=64, theta=theta, tol=1e-7))
    return out
