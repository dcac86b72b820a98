import math

import numpy as np
import pytest

from app.geom_kernel import (
    ConeChart,
    ModelTriangle,
    Quadruple,
    angular_separation,
    cat_comparison_test,
    cone_distance,
    encloses_apex,
    model_angle,
    model_distance,
    model_interpolate,
    sample_cone_triangle,
    signed_offset,
    triangle_area,
)
from core.exceptions import CurvatureDomainError, InvalidInputError, InvalidTriangleError


def test_model_angle_equilateral_plane() -> None:
    assert model_angle(1.0, 1.0, 1.0) == pytest.approx(math.pi / 3)


def test_model_angle_octant_is_right() -> None:
    q = 0.5 * math.pi
    tri = ModelTriangle(q, q, q, kappa=1.0)
    assert tri.angles() == pytest.approx((q, q, q))


def test_model_angle_degenerate_triangle() -> None:
    assert model_angle(1.0, 2.0, 3.0) == pytest.approx(math.pi)
    assert model_angle(1.0, 2.0, 1.0) == pytest.approx(0.0, abs=1e-7)


def test_triangle_area_plane_and_sphere() -> None:
    assert triangle_area(3.0, 4.0, 5.0) == pytest.approx(6.0)
    q = 0.5 * math.pi
    assert triangle_area(q, q, q, kappa=1.0) == pytest.approx(math.pi / 2)


def test_model_distance_law_of_cosines() -> None:
    assert model_distance(1.0, 1.0, math.pi / 2) == pytest.approx(math.sqrt(2.0))
    # on the unit sphere two points on the equator a quarter turn apart
    q = 0.5 * math.pi
    assert model_distance(q, q, q, kappa=1.0) == pytest.approx(q)


def test_triangle_inequality_violation() -> None:
    with pytest.raises(InvalidTriangleError):
        ModelTriangle(1.0, 1.0, 3.0)


def test_spherical_perimeter_bound() -> None:
    with pytest.raises(CurvatureDomainError):
        ModelTriangle(2.2, 2.2, 2.2, kappa=1.0)


def test_negative_curvature_rejected() -> None:
    with pytest.raises(CurvatureDomainError):
        model_angle(1.0, 1.0, 1.0, kappa=-1.0)


def test_cone_chart_rejects_positive_curvature() -> None:
    with pytest.raises(CurvatureDomainError):
        ConeChart(0.5)
    assert ConeChart(0.5, audit=True).total_angle == pytest.approx(math.pi)


def test_angular_separation_wraps() -> None:
    assert angular_separation(0.1, 3 * math.pi - 0.1, 1.5) == pytest.approx(0.2)
    assert signed_offset(3 * math.pi - 0.1, 0.1, 1.5) == pytest.approx(-0.2)


def test_cone_distance_through_apex() -> None:
    chart = ConeChart(1.5)
    assert cone_distance((1.0, 0.0), (1.0, math.pi), chart) == pytest.approx(2.0)
    assert cone_distance((1.0, 0.0), (1.0, math.pi / 2), chart) == pytest.approx(math.sqrt(2.0))


def test_model_interpolate_midpoint() -> None:
    rho, theta = model_interpolate((1.0, 0.0), (1.0, math.pi / 2), 0.5, ConeChart(1.0))
    assert rho == pytest.approx(math.sqrt(0.5))
    assert theta == pytest.approx(math.pi / 4)


def test_flat_triangle_passes_comparison() -> None:
    chart = ConeChart(1.0)
    sample = sample_cone_triangle([(1.0, 0.0), (2.0, 1.0), (1.5, 2.0)], chart, points=5)
    result = cat_comparison_test(sample, 0.0)
    assert result.passed
    assert result.defect <= result.tolerance


def test_large_cone_triangle_around_apex_passes() -> None:
    chart = ConeChart(1.5)
    vertices = [(1.0, 0.0), (1.0, math.pi), (1.0, 2 * math.pi)]
    assert encloses_apex(vertices, chart)
    assert cat_comparison_test(sample_cone_triangle(vertices, chart, points=5)).passed


def test_small_cone_triangle_around_apex_fails() -> None:
    chart = ConeChart(0.5, audit=True)
    vertices = [(1.0, 0.0), (1.0, math.pi / 3), (1.0, 2 * math.pi / 3)]
    assert encloses_apex(vertices, chart)
    result = cat_comparison_test(sample_cone_triangle(vertices, chart, points=3))
    assert not result.passed
    # the side midpoints alone are sqrt(3)/2 apart instead of 1/2
    assert result.defect >= math.sqrt(3.0) / 2 - 0.5 - 1e-9


def test_quadruple_comparison() -> None:
    # right triangle P=(0,0), Q=(4,0), R=(0,3); S is the midpoint of QR
    good = Quadruple(pq=4.0, pr=3.0, qr=5.0, ps=2.5, qs=2.5, rs=2.5)
    assert cat_comparison_test(good).passed
    bad = Quadruple(pq=4.0, pr=3.0, qr=5.0, ps=3.0, qs=2.5, rs=2.5)
    result = cat_comparison_test(bad)
    assert not result.passed
    assert result.defect == pytest.approx(0.5)


def test_quadruple_data_is_checked() -> None:
    off_side = Quadruple(pq=4.0, pr=3.0, qr=5.0, ps=2.5, qs=3.0, rs=3.0)
    with pytest.raises(InvalidInputError):
        cat_comparison_test(off_side)
    not_metric = Quadruple(pq=4.0, pr=3.0, qr=5.0, ps=9.0, qs=2.5, rs=2.5)
    with pytest.raises(InvalidInputError):
        cat_comparison_test(not_metric)


def test_vectorised_model_distance() -> None:
    out = model_distance(np.array([1.0, 2.0]), np.array([1.0, 2.0]), np.array([0.0, math.pi]))
    assert out == pytest.approx([0.0, 4.0])
