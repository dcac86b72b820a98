import numpy as np
import pytest

from app import fixtures
from app.domain_mesh import DomainMesh
from app.fixtures import PolarTarget
from app.tangent_analysis import (
    LocalDisk,
    MapSampler,
    blowup_map,
    conformal_factor_probe,
    default_radii,
    fit_tangent_map,
    high_order_clusters,
    order_profile,
    richardson,
    semicontinuity_probe,
)
from core.config import settings
from core.exceptions import InvalidInputError, ResolutionError


@pytest.fixture(scope="module")
def square(disk4: DomainMesh, plane: PolarTarget):
    return fixtures.power_map(disk4, plane, 2)


def test_order_of_square_at_origin(square) -> None:
    profile = order_profile(square, 0j)
    assert 1.7 <= profile.extrapolated <= 2.3
    assert np.all(profile.radii >= 3 * LocalDisk(square.mesh, 0j).cell)


def test_order_of_cone_model(disk4: DomainMesh, cone15: PolarTarget) -> None:
    u = fixtures.cone_model_map(disk4, cone15)
    profile = order_profile(u, 0j)
    assert 1.3 <= profile.extrapolated <= 1.7


def test_order_off_centre(square) -> None:
    # z^2 at 1/2 is w (1 + w) in the local coordinate w
    s = 0.25
    profile = order_profile(square, 0.5 + 0j, radii=[s])
    expected = (1 + 2 * s**2) / (1 + s**2)
    assert profile.order[0] == pytest.approx(expected, abs=0.05)


def test_richardson_recovers_limit() -> None:
    limit, rate = richardson([0.4, 0.2, 0.1], [2.16, 2.04, 2.01])
    assert limit == pytest.approx(2.0)
    assert rate == pytest.approx(2.0)
    assert richardson([0.2, 0.1], [1.5, 1.4]) == (1.4, None)
    with pytest.raises(ResolutionError):
        richardson([], [])


def test_unresolved_radius(square) -> None:
    with pytest.raises(ResolutionError):
        order_profile(square, 0j, radii=[0.01])


def test_local_disk_bounds(disk4: DomainMesh) -> None:
    with pytest.raises(InvalidInputError):
        LocalDisk(disk4, 1.5 + 0j)
    disk = LocalDisk(disk4, 0.5 + 0j)
    assert disk.reach == pytest.approx(0.5)
    assert max(default_radii(disk)) == pytest.approx(0.45)


def test_sphere_disk_round_trip(sphere2: DomainMesh) -> None:
    disk = LocalDisk(sphere2, 5)
    w = np.array([0.1 + 0.2j, -0.3j])
    assert disk.from_domain(disk.to_domain(w)) == pytest.approx(w)
    assert disk.to_domain(np.array([0j]))[0] == pytest.approx(sphere2.positions[5])


def test_blowup_and_fit_of_square(square) -> None:
    trace = blowup_map(square, 0j, 0.5)
    assert trace.normalization == pytest.approx(1.0)
    fit = fit_tangent_map(trace)
    assert fit.kind == "conformal"
    assert fit.ratio == 2
    assert fit.orientation == 1
    assert fit.alpha == pytest.approx(2.0, abs=0.1)
    assert fit.integral


def test_blowup_below_resolution(square) -> None:
    with pytest.raises(ResolutionError):
        blowup_map(square, 0j, 0.05)


def test_conformal_factor_of_identity(disk4: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.power_map(disk4, plane, 1)
    probe = conformal_factor_probe(u, 0j, sampler=MapSampler(u))
    assert probe.disk_mean == pytest.approx(1.0, abs=0.05)
    assert probe.circle_mean == pytest.approx(1.0, abs=0.05)
    assert probe.distance_ratio == pytest.approx(1.0, abs=0.05)
    assert probe.applicable
    assert probe.consistent


def test_high_order_cluster_at_branch_point(square) -> None:
    # 169, 181 and 193 sit on the ring of radius 1/2
    result = high_order_clusters(square, threshold=1.5, vertices=[0, 169, 181, 193])
    assert result.clusters == [[0]]
    assert set(result.orders) == {0, 169, 181, 193}


def test_order_is_upper_semicontinuous(square) -> None:
    rows = semicontinuity_probe(square, 0j, [0.05 + 0j, 0.1j], radius=0.25)
    assert len(rows) == 2
    assert all(row["bounded"] for row in rows)


def test_monotonicity_bound_follows_cell(square) -> None:
    profile = order_profile(square, 0j)
    assert profile.cell == pytest.approx(LocalDisk(square.mesh, 0j).cell)
    expected = settings.MONOTONICITY_C * profile.cell / float(np.min(profile.radii))
    assert profile.defect_bound == pytest.approx(expected)
    assert profile.defect_bound < 0.5
