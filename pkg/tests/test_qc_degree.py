import math

import numpy as np
import pytest

from app import fixtures
from app.domain_mesh import DomainMesh, build_disk_mesh, build_sphere_mesh
from app.fixtures import PolarTarget
from app.qc_degree import (
    H_estimate,
    H_estimate_inverse,
    H_of_k,
    apply_mobius,
    branch_and_degree,
    energy_area_verdict,
    fiber,
    from_homogeneous,
    homogeneous,
    mobius_check,
    predicted_distortion,
    predicted_ratio,
    three_point_mobius,
    winding_number,
)
from app.tangent_analysis import TangentFit
from app.target_surface import SurfacePoint
from core.exceptions import CurvatureDomainError, DegenerateMapError, InvalidInputError


@pytest.fixture(scope="module")
def identity(disk4: DomainMesh, plane: PolarTarget):
    return fixtures.power_map(disk4, plane, 1)


@pytest.fixture(scope="module")
def stretch(disk4: DomainMesh, plane: PolarTarget):
    # (x, y) -> (2x, y)
    return fixtures.affine_map(disk4, plane, 1.5 + 0j, 0.5 + 0j)


@pytest.fixture(scope="module")
def sphere_map(sphere3: DomainMesh, round_sphere: PolarTarget):
    return fixtures.sphere_identity(sphere3, round_sphere)


@pytest.fixture(scope="module")
def stretched_square(plane: PolarTarget):
    # 1.5 z^2 + 0.5 conj(z)^2: order 2 with stretch 1/3
    return fixtures.homogeneous_map(build_disk_mesh(5), plane, 2, 1.5 + 0j, 0.5 + 0j)


def test_distortion_of_stretch_model() -> None:
    assert H_of_k(0.0) == 1.0
    assert H_of_k(1.0 / 3.0) == pytest.approx(2.0)
    for k in (1.0, -0.1):
        with pytest.raises(CurvatureDomainError):
            H_of_k(k)


def test_h_estimate_of_affine_map(stretch, identity) -> None:
    assert H_estimate(stretch, 0j, radius=0.4).value == pytest.approx(2.0, abs=1e-6)
    assert H_estimate(identity, 0j, radius=0.4).value == pytest.approx(1.0, abs=1e-6)


def test_inverse_distortion(stretch) -> None:
    estimate = H_estimate_inverse(stretch, 0j)
    assert estimate.value == pytest.approx(2.0, rel=1e-3)
    assert not estimate.infinite


@pytest.mark.parametrize("k", [0.0, 0.2, 1.0 / 3.0, 0.5])
def test_distortion_of_affine_stretches(disk4: DomainMesh, plane: PolarTarget, k: float) -> None:
    u = fixtures.affine_map(disk4, plane, 1 + 0j, complex(k))
    assert H_estimate(u, 0j, radius=0.4).value == pytest.approx(H_of_k(k), rel=0.03)
    assert H_estimate_inverse(u, 0j).value == pytest.approx(H_of_k(k), rel=0.03)


def _fit(kind: str, alpha: float, k: float) -> TangentFit:
    return TangentFit(
        kind=kind,
        alpha=alpha,
        beta=1.0,
        k=k,
        c=1.0,
        rotation=0.0,
        target_rotation=0.0,
        orientation=1,
        ratio=int(round(alpha)),
        residual=0.0,
        model_normalization=1.0,
    )


def test_predictions_follow_the_order() -> None:
    fit = _fit("stretched", 2.0, 1.0 / 3.0)
    assert predicted_ratio(fit) == pytest.approx(2.0)
    assert predicted_distortion(fit) == pytest.approx(math.sqrt(2.0))
    assert predicted_distortion(_fit("stretched", 1.0, 1.0 / 3.0)) == pytest.approx(2.0)
    assert predicted_distortion(_fit("conformal", 3.0, 0.0)) == 1.0
    assert predicted_distortion(_fit("unclassified", 2.0, 0.5)) is None
    assert predicted_ratio(_fit("degenerate", 1.0, 0.97)) is None


def test_distortion_of_stretched_square(stretched_square) -> None:
    # 24 samples land on mesh vertices of the rings at radii 1/8 and 1/4
    forward = H_estimate(stretched_square, 0j, radius=0.5, samples=24)
    assert forward.value == pytest.approx(2.0, rel=1e-6)
    inverse = H_estimate_inverse(stretched_square, 0j, radius=0.36)
    assert inverse.value == pytest.approx(math.sqrt(2.0), rel=0.05)
    fit = _fit("stretched", 2.0, 1.0 / 3.0)
    assert forward.value == pytest.approx(predicted_ratio(fit), rel=0.05)
    assert inverse.value == pytest.approx(predicted_distortion(fit), rel=0.05)


def test_winding_numbers(disk4: DomainMesh, plane: PolarTarget, identity) -> None:
    assert winding_number(identity, 0j).value == 1
    assert winding_number(fixtures.power_map(disk4, plane, 2), 0j).value == 2
    assert winding_number(fixtures.conjugate_map(disk4, plane), 0j).value == -1


def test_winding_of_constant_map(disk4: DomainMesh, plane: PolarTarget) -> None:
    point = SurfacePoint.at_vertex(plane.surface, plane.apex)
    u = fixtures.constant_map(disk4, plane.surface, point)
    with pytest.raises(DegenerateMapError):
        winding_number(u, 0j)


def test_identity_of_sphere_has_degree_one(sphere_map) -> None:
    report = branch_and_degree(sphere_map, [0, 10, 40], seed=1)
    assert report.degree is not None
    assert abs(report.degree) == 1
    assert report.verdict == "homeomorphism"
    assert report.sign_consistent
    assert report.branch_points == []


def test_square_of_sphere_is_branched(round_sphere: PolarTarget) -> None:
    u = fixtures.sphere_power(build_sphere_mesh(4), round_sphere, 2)
    poles = [[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]]
    report = branch_and_degree(u, poles + [0], seed=1)
    assert report.unresolved == []
    assert [abs(w.value) for w in report.windings] == [2, 2, 1]
    assert len(report.branch_points) == 2
    assert report.degree is not None
    assert abs(report.degree) == 2
    assert report.sign_consistent
    assert report.verdict == "branched cover (degree 2)"


def test_energy_area_verdict_of_sphere_identity(sphere_map) -> None:
    verdict = energy_area_verdict(sphere_map, samples=10, seed=0)
    assert verdict.area_bound
    assert verdict.monotone
    assert verdict.area <= verdict.half_energy
    assert verdict.covered_area <= 4 * math.pi * (1 + 1e-9)


def test_mobius_of_identical_maps(sphere_map) -> None:
    fit = mobius_check(sphere_map, sphere_map, samples=20, seed=0)
    assert fit.rms < 1e-6
    assert fit.passed


def test_mobius_of_rotated_map(sphere3: DomainMesh, round_sphere: PolarTarget, sphere_map) -> None:
    R = fixtures.rotation_matrix((1.0, 1.0, 0.5), 0.7)
    rotated = fixtures.rotated_identity(sphere3, round_sphere, R)
    fit = mobius_check(sphere_map, rotated, samples=20, seed=0, tolerance=0.05)
    assert fit.rms < 0.05


def test_mobius_rejects_other_inputs(sphere3: DomainMesh, sphere_map, identity) -> None:
    other = fixtures.sphere_identity(sphere3, fixtures.rugby_ball(1.5))
    with pytest.raises(InvalidInputError):
        mobius_check(sphere_map, other)
    with pytest.raises(InvalidInputError):
        mobius_check(identity, identity)


def test_homogeneous_coordinates() -> None:
    x = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.6, 0.0, 0.8], [0.0, -0.6, 0.8]])
    assert from_homogeneous(homogeneous(x)) == pytest.approx(x)


def test_three_point_mobius() -> None:
    src = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]])
    dst = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.6, -0.8]])
    M = three_point_mobius(src, dst)
    assert apply_mobius(M, src) == pytest.approx(dst, abs=1e-9)


def test_fiber_of_identity(identity, plane: PolarTarget) -> None:
    found = fiber(identity, plane.locate(0.3, 0.4))
    assert len(found) == 1
    assert found[0][1] == 1.0
