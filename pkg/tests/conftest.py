import pytest

from app import fixtures
from app.domain_mesh import DomainMesh, build_disk_mesh, build_sphere_mesh


@pytest.fixture(scope="session")
def disk3() -> DomainMesh:
    return build_disk_mesh(3)


@pytest.fixture(scope="session")
def disk4() -> DomainMesh:
    return build_disk_mesh(4)


@pytest.fixture(scope="session")
def sphere2() -> DomainMesh:
    return build_sphere_mesh(2)


@pytest.fixture(scope="session")
def sphere3() -> DomainMesh:
    return build_sphere_mesh(3)


@pytest.fixture(scope="session")
def plane() -> fixtures.PolarTarget:
    return fixtures.flat_plane()


@pytest.fixture(scope="session")
def cone15() -> fixtures.PolarTarget:
    return fixtures.flat_cone(1.5)


@pytest.fixture(scope="session")
def round_sphere() -> fixtures.PolarTarget:
    return fixtures.round_sphere()
