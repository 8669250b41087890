import sys

import numpy as np
import pytest

from spectral_schwarz.elliptic import assemble_global, coefficient_field
from spectral_schwarz.mesh import build_structured_mesh
from spectral_schwarz.partition import build_decomposition, build_dual_pou, build_nodal_pou
from spectral_schwarz.pwls import assemble_pwls


class Problem:
    """Mesh, decomposition, partition of unity and assembled system."""

    def __init__(self, mesh, decomp, pou, system, Lambda):
        self.mesh = mesh
        self.decomp = decomp
        self.pou = pou
        self.system = system
        self.Lambda = Lambda


def elliptic_problem(dim=2, n=4, m=4, l=1, model="model1", mu=0.0, Lambda=None, seed=0):
    mesh = build_structured_mesh(dim, n, m)
    decomp = build_decomposition(mesh, l)
    pou = build_nodal_pou(mesh, decomp)
    rho = coefficient_field(mesh, model, mu=mu, seed=seed)
    system = assemble_global(mesh, rho)
    return Problem(mesh, decomp, pou, system, Lambda or 1 + np.log(m))


def pwls_problem(n=2, m=2, p=6, omega=40.0, l=1, model="model41", lengths=(2.0, 1.0)):
    mesh = build_structured_mesh(2, n, m, "pwls", lengths=lengths)
    decomp = build_decomposition(mesh, l)
    pou = build_dual_pou(mesh, decomp)
    system = assemble_pwls(mesh, model, omega, p)
    H, h = mesh.H[0], mesh.h[0]
    return Problem(mesh, decomp, pou, system, 1 + np.log(H / h + 2))


@pytest.fixture(scope="session")
def toy2d():
    return elliptic_problem(2, 4, 4, model="model2", mu=4.0)


@pytest.fixture(scope="session")
def toy2d_small():
    return elliptic_problem(2, 2, 4)


@pytest.fixture(scope="session")
def pwls_toy():
    return pwls_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
