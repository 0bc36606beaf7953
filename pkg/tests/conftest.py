import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from agrf.denoise import GaussianFieldPrior
from agrf.grf import FieldModel, build_mesh, constant_anisotropy, isotropic_field

settings.register_profile(
    "agrf", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("agrf")


def gaussian_prior(n_core=8, range_a=0.2, margin=0.1, rho2=1.0, angle=0.0, nu=2.0):
    mesh = build_mesh(n_core, margin)
    aniso = isotropic_field(mesh) if rho2 == 1.0 else constant_anisotropy(mesh, 1.0, rho2, angle)
    return GaussianFieldPrior.from_model(FieldModel.build(mesh, aniso, range_a, nu))


@pytest.fixture(scope="session")
def prior8():
    return gaussian_prior(8, 0.2)


@pytest.fixture(scope="session")
def aniso_prior8():
    return gaussian_prior(8, 0.2, rho2=0.5, angle=0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
