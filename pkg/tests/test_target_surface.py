import json
import math

import pytest

from app import fixtures
from app.fixtures import PolarTarget
from app.target_surface import (
    DistanceEngine,
    SurfacePoint,
    TangentConeChart,
    frechet_mean,
    geodesic_extend,
    interpolate,
    load_surface,
    local_distance,
    to_target_spec,
    vertex_total_angle,
)
from core.config import settings
from core.exceptions import (
    CurvatureDomainError,
    InvalidInputError,
    SpecParseError,
    SurfaceValidationError,
)

OCTAHEDRON = [(0, 1, 2), (1, 3, 2), (3, 4, 2), (4, 0, 2), (1, 0, 5), (3, 1, 5), (4, 3, 5), (0, 4, 5)]


def _spec_document(spec) -> dict:
    return spec.model_dump(by_alias=True, mode="json")


def test_local_distance_in_apex_star(plane: PolarTarget) -> None:
    p, q = plane.locate(1.0, 0.0), plane.locate(1.0, math.pi / 2)
    assert local_distance(plane.surface, p, q) == pytest.approx(math.sqrt(2.0))


def test_local_distance_on_cone(cone15: PolarTarget) -> None:
    p, q = cone15.locate(1.0, 0.0), cone15.locate(1.0, math.pi)
    assert local_distance(cone15.surface, p, q) == pytest.approx(2.0)


def test_interpolate_midpoint(plane: PolarTarget) -> None:
    p, q = plane.locate(1.0, 0.0), plane.locate(1.0, math.pi / 2)
    rho, theta = plane.polar_of(interpolate(plane.surface, p, q, 0.5))
    assert rho == pytest.approx(math.sqrt(0.5))
    assert theta == pytest.approx(math.pi / 4)


def test_frechet_mean_of_two_points(plane: PolarTarget) -> None:
    p, q = plane.locate(1.0, 0.0), plane.locate(1.0, math.pi / 2)
    result = frechet_mean(plane.surface, [p, q], [1.0, 1.0])
    rho, theta = plane.polar_of(result.point)
    assert rho == pytest.approx(math.sqrt(0.5), abs=1e-6)
    assert theta == pytest.approx(math.pi / 4, abs=1e-6)


def test_frechet_mean_rejects_zero_weights(plane: PolarTarget) -> None:
    p = plane.locate(1.0, 0.0)
    with pytest.raises(InvalidInputError):
        frechet_mean(plane.surface, [p], [0.0])


def test_distance_engine_error_bound(plane: PolarTarget) -> None:
    engine = DistanceEngine(plane.surface)
    a, b = (1.0, 0.0), (4.0, 2.0)
    exact = plane.cone_distance(a, b)
    d = engine.distance(plane.locate(*a), plane.locate(*b))
    assert exact - 1e-9 <= d <= exact + engine.error_bound


def test_distance_engine_row_cache_is_bounded(plane: PolarTarget) -> None:
    engine = DistanceEngine(plane.surface)
    p, q = plane.locate(1.0, 0.0), plane.locate(4.0, 2.0)
    first = engine.distance(p, q)
    assert engine.distance(p, q) == first
    info = engine._source_rows.cache_info()
    assert info.maxsize == settings.DISTANCE_CACHE_ROWS
    assert info.currsize == 1
    assert info.hits >= 1


def test_distance_engine_same_face(plane: PolarTarget) -> None:
    engine = DistanceEngine(plane.surface)
    p, q = plane.locate(1.0, 0.1), plane.locate(1.2, 0.2)
    assert engine.distance(p, q) == pytest.approx(plane.cone_distance((1.0, 0.1), (1.2, 0.2)))


def test_tangent_chart_at_cone_apex(cone15: PolarTarget) -> None:
    chart = TangentConeChart(cone15.surface, SurfacePoint.at_vertex(cone15.surface, cone15.apex))
    assert chart.beta == pytest.approx(1.5)
    r, direction = chart.log(chart.exp(0.7, 2.0))
    assert r == pytest.approx(0.7)
    assert direction == pytest.approx(2.0)
    z = 0.5 + 0.3j
    assert chart.to_model(chart.from_model(z)) == pytest.approx(z)


def test_tangent_chart_off_vertex(plane: PolarTarget) -> None:
    chart = TangentConeChart(plane.surface, plane.locate(1.0, 0.3))
    r, direction = chart.log(plane.locate(1.5, 0.3))
    assert r == pytest.approx(0.5)
    assert direction == pytest.approx(0.0, abs=1e-9)


def test_load_obj_square() -> None:
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n"
    surface = load_surface(text, name="square")
    assert surface.topology == "disk"
    assert surface.n_vertices == 4
    assert surface.total_area == pytest.approx(1.0)


def test_spherical_spec_is_rescaled() -> None:
    lengths = {}
    for face in OCTAHEDRON:
        for k in range(3):
            a, b = sorted((face[k], face[(k + 1) % 3]))
            lengths[f"{a}-{b}"] = math.pi / 4
    document = {"topology": "sphere", "kappa": 4.0, "vertices": 6, "faces": OCTAHEDRON, "edge_lengths": lengths}
    surface = load_surface(json.dumps(document))
    assert surface.kappa == 1.0
    assert surface.max_edge == pytest.approx(math.pi / 2)
    assert surface.total_area == pytest.approx(4 * math.pi)


def test_round_trip_through_spec(round_sphere: PolarTarget) -> None:
    spec = to_target_spec(round_sphere.surface)
    again = load_surface(_spec_document(spec))
    assert again.n_vertices == round_sphere.surface.n_vertices
    assert again.total_area == pytest.approx(round_sphere.surface.total_area)


def test_bad_documents() -> None:
    with pytest.raises(SpecParseError):
        load_surface("{not json")
    with pytest.raises(SpecParseError):
        load_surface({"topology": "sphere"})


@pytest.mark.parametrize(
    "spec",
    [fixtures.tetrahedron_spec(), fixtures.doubled_square_spec(), fixtures.umbrella_spec(5)],
    ids=["tetrahedron", "doubled_square", "umbrella_5"],
)
def test_link_condition_failures(spec) -> None:
    with pytest.raises(SurfaceValidationError) as info:
        load_surface(_spec_document(spec))
    assert "link_condition" in {v["kind"] for v in info.value.violations}
    assert info.value.exit_code == 1


def test_flat_umbrella_is_admissible() -> None:
    surface = load_surface(_spec_document(fixtures.umbrella_spec(6)))
    assert surface.topology == "disk"
    assert surface.vertex_beta(0) == pytest.approx(1.0)


def test_cone_points(cone15: PolarTarget) -> None:
    assert cone15.surface.cone_points() == [cone15.apex]


def test_negative_barycentric_rejected() -> None:
    with pytest.raises(InvalidInputError):
        SurfacePoint(0, (-0.5, 1.0, 0.5))


def test_vertex_total_angle(cone15: PolarTarget) -> None:
    surface = cone15.surface
    assert vertex_total_angle(surface, cone15.apex) == pytest.approx(3 * math.pi)
    rim = next(v for v, star in enumerate(surface.stars) if not star.closed)
    with pytest.raises(CurvatureDomainError):
        vertex_total_angle(surface, rim)


def test_geodesic_extend_straight(plane: PolarTarget) -> None:
    q0, q = plane.locate(1.0, 0.3), plane.locate(1.5, 0.3)
    rho, theta = plane.polar_of(geodesic_extend(plane.surface, q0, q, 0.7))
    assert rho == pytest.approx(1.7, abs=1e-6)
    assert theta == pytest.approx(0.3, abs=1e-6)


def test_geodesic_extend_from_apex(cone15: PolarTarget) -> None:
    apex = SurfacePoint.at_vertex(cone15.surface, cone15.apex)
    q = cone15.locate(1.0, 0.2)
    rho, theta = cone15.polar_of(geodesic_extend(cone15.surface, apex, q, 2.0))
    assert rho == pytest.approx(2.0, abs=1e-6)
    assert theta == pytest.approx(0.2, abs=1e-6)


def test_geodesic_extend_through_cone_point(cone15: PolarTarget) -> None:
    # the continuation leaves the apex along the bisector of the far angle
    q0 = cone15.locate(1.0, 0.2)
    apex = SurfacePoint.at_vertex(cone15.surface, cone15.apex)
    end = cone15.polar_of(geodesic_extend(cone15.surface, q0, apex, 1.5))
    assert end[0] == pytest.approx(0.5, abs=1e-6)
    assert cone15.cone_distance((1.0, 0.2), end) == pytest.approx(1.5, abs=1e-6)
    with pytest.raises(InvalidInputError):
        geodesic_extend(cone15.surface, q0, apex, -1.0)
