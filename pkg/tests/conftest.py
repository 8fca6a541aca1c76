import numpy as np
import pytest

from inclusion_probe.geometry import build_domain_mesh
from inclusion_probe.scenario import CoefficientField, ConductivityScenario
from inclusion_probe.shapes import Disk

UNIT_DISK = Disk((0.0, 0.0), 1.0)
PHANTOM_DISK = Disk((0.1, 0.0), 0.3)


def disk_phantom(gamma_inside: float = 3.0) -> ConductivityScenario:
    return ConductivityScenario(
        UNIT_DISK, CoefficientField.constant(1.0), PHANTOM_DISK, CoefficientField.constant(gamma_inside)
    )


@pytest.fixture(scope="session")
def disk_mesh_coarse():
    return build_domain_mesh(UNIT_DISK, 0.1)


@pytest.fixture(scope="session")
def phantom_mesh():
    """h = 0.05 mesh conforming to the phantom disk, Γ = right half."""
    return build_domain_mesh(UNIT_DISK, 0.05, gamma_arc=(-90.0, 90.0), interface=PHANTOM_DISK)


@pytest.fixture(scope="session")
def phantom_mesh_full():
    """h = 0.05 phantom mesh with Γ = whole boundary."""
    return build_domain_mesh(UNIT_DISK, 0.05, interface=PHANTOM_DISK)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gamma_data(mesh, rng, n=1):
    """Random boundary data supported on the Γ nodes."""
    mask = np.isin(mesh.boundary_nodes, mesh.gamma_nodes)
    f = np.zeros((n, len(mesh.boundary_nodes)))
    f[:, mask] = rng.standard_normal((n, int(mask.sum())))
    return f if n > 1 else f[0]


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
