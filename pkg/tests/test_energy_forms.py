import math

import numpy as np
import pytest

from app import fixtures
from app.domain_mesh import DomainMesh, cotangent_weights
from app.energy_forms import (
    MapInverter,
    PiecewiseMap,
    PullbackTensor,
    conformality_gap,
    directional_density,
    edge_distances,
    energy_report,
    hausdorff_area_estimate,
    hopf_field,
    jacobian,
    jacobian_quadrature,
    pullback_tensor,
    total_area,
    total_energy,
    vertex_energies,
)
from app.fixtures import PolarTarget
from core.exceptions import InvalidInputError


def _domain_area(mesh: DomainMesh) -> float:
    return float(np.sum(mesh.chart_areas))


def test_identity_is_conformal(disk3: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.power_map(disk3, plane, 1)
    A = _domain_area(disk3)
    assert total_energy(u) == pytest.approx(2 * A, rel=1e-6)
    assert total_area(u) == pytest.approx(A, rel=1e-6)
    assert conformality_gap(u) == pytest.approx(0.0, abs=1e-6)
    report = energy_report(u)
    assert "area_exceeds_half_energy" not in report.flags


def test_affine_stretch(disk3: DomainMesh, plane: PolarTarget) -> None:
    # z -> 1.5 z + 0.5 conj(z) is (x, y) -> (2x, y)
    u = fixtures.affine_map(disk3, plane, 1.5 + 0j, 0.5 + 0j)
    A = _domain_area(disk3)
    assert total_energy(u) == pytest.approx(5 * A, rel=1e-6)
    assert total_area(u) == pytest.approx(2 * A, rel=1e-6)
    assert conformality_gap(u) == pytest.approx(3 * A, rel=1e-6)
    hopf = hopf_field(u)
    assert hopf.l1 == pytest.approx(3 * A, rel=1e-6)
    # a constant Hopf differential is weakly holomorphic
    assert hopf.relative_residual == pytest.approx(0.0, abs=1e-6)


def test_energy_matches_cotangent_formula(disk3: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.power_map(disk3, plane, 2)
    d = edge_distances(u)
    w = cotangent_weights(disk3)
    expected = sum(w[a, b] * d[e] ** 2 for e, (a, b) in enumerate(disk3.edges))
    assert total_energy(u) == pytest.approx(expected, rel=1e-9)
    assert float(np.sum(vertex_energies(u))) == pytest.approx(total_energy(u), rel=1e-9)


def test_energy_bounds_area(disk3: DomainMesh, plane: PolarTarget) -> None:
    report = energy_report(fixtures.power_map(disk3, plane, 2))
    assert report.area <= 0.5 * report.energy * (1 + 1e-9)
    assert report.gap > 0


def test_jacobian_of_tensor() -> None:
    tensor = PullbackTensor(4.0, 1.0, 0.0)
    assert jacobian(tensor) == pytest.approx(2.0)
    assert jacobian_quadrature(tensor) == pytest.approx(2.0, rel=1e-6)
    assert tensor.singular_values() == pytest.approx((2.0, 1.0))
    assert tensor.density(math.pi / 2) == pytest.approx(1.0)
    assert jacobian(PullbackTensor(1.0, 0.0, 0.0)) == 0.0


def test_inverter_orientation(disk3: DomainMesh, plane: PolarTarget) -> None:
    q = plane.locate(0.3, 0.4)
    identity = MapInverter(fixtures.power_map(disk3, plane, 1)).preimages(q)
    assert len(identity) == 1
    x, sign = identity[0]
    assert sign == 1.0
    assert x[:2] == pytest.approx([0.3 * math.cos(0.4), 0.3 * math.sin(0.4)], abs=1e-9)

    flipped = MapInverter(fixtures.conjugate_map(disk3, plane)).preimages(q)
    assert len(flipped) == 1
    assert flipped[0][1] == -1.0


def test_covered_area_matches_jacobian(disk3: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.power_map(disk3, plane, 1)
    A = _domain_area(disk3)
    covered, integral_j = hausdorff_area_estimate(u, subdivisions=30)
    assert integral_j == pytest.approx(A, rel=1e-6)
    assert covered == pytest.approx(A, rel=0.15)


def test_evaluate_inside_face(disk3: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.power_map(disk3, plane, 1)
    rho, theta = plane.polar_of(u.evaluate_at(0.2 + 0.1j))
    assert rho == pytest.approx(abs(0.2 + 0.1j), abs=1e-9)
    assert theta == pytest.approx(math.atan2(0.1, 0.2), abs=1e-9)
    with pytest.raises(InvalidInputError):
        u.evaluate_at(2.0 + 0j)


def test_image_count_checked(disk3: DomainMesh, plane: PolarTarget) -> None:
    with pytest.raises(InvalidInputError):
        PiecewiseMap(disk3, plane.surface, [plane.locate(0.0, 0.0)] * 3)


def test_pullback_of_stretch(disk3: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.affine_map(disk3, plane, 1.5 + 0j, 0.5 + 0j)
    tensor = pullback_tensor(u, 0)
    assert (tensor.p11, tensor.p22, tensor.p12) == pytest.approx((4.0, 1.0, 0.0), abs=1e-9)
    assert directional_density(u, 0, 0.0) == pytest.approx(4.0)
    assert directional_density(u, 0, math.pi / 2) == pytest.approx(1.0)
