import math

import numpy as np
import pytest

from app.domain_mesh import (
    DomainMesh,
    align_rotation,
    build_disk_mesh,
    build_mesh,
    build_sphere_mesh,
    chart0,
    chart0_inverse,
    chart1,
    chart_coordinates,
    cotangent_weights,
    export_mesh,
    locate,
)
from core.exceptions import InvalidInputError


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_sphere_counts(level: int) -> None:
    mesh = build_sphere_mesh(level)
    assert mesh.n_vertices == 4**level + 2
    assert mesh.n_faces == 2 * 4**level
    assert mesh.euler_characteristic == 2
    assert np.allclose(np.linalg.norm(mesh.positions, axis=1), 1.0)


def test_level_one_sphere_lies_on_equator() -> None:
    mesh = build_sphere_mesh(1)
    assert np.allclose(mesh.positions[:, 2], 0.0)


def test_sphere_faces_are_positively_oriented(sphere3: DomainMesh) -> None:
    assert np.all(sphere3.chart_areas > 0)
    assert set(sphere3.face_chart.tolist()) == {0, 1}


def test_sphere_faces_tile_the_sphere(sphere2: DomainMesh) -> None:
    assert float(np.sum(sphere2.metric_areas)) == pytest.approx(4 * math.pi, rel=1e-9)


def test_sphere_pins_on_equator(sphere2: DomainMesh) -> None:
    assert len(sphere2.pins) == 3
    assert np.allclose(sphere2.positions[list(sphere2.pins), 2], 0.0)


def test_nested_parents(sphere2: DomainMesh, sphere3: DomainMesh) -> None:
    parents = sphere3.parents
    assert parents is not None
    assert parents.max() < sphere2.n_vertices
    same = parents[:, 0] == parents[:, 1]
    assert np.allclose(sphere3.positions[same], sphere2.positions[parents[same, 0]])


@pytest.mark.parametrize("level", [1, 2, 3])
def test_disk_counts(level: int) -> None:
    mesh = build_disk_mesh(level)
    K = 2**level
    assert mesh.n_vertices == 1 + 3 * K * (K + 1)
    assert len(mesh.boundary) == 6 * K
    assert mesh.euler_characteristic == 1
    assert np.allclose(np.linalg.norm(mesh.positions[mesh.boundary], axis=1), 1.0)


def test_disk_area_is_inscribed_polygon(disk3: DomainMesh) -> None:
    K = 8
    polygon = 3 * K * math.sin(2 * math.pi / (6 * K))
    assert np.all(disk3.chart_areas > 0)
    assert float(np.sum(disk3.chart_areas)) == pytest.approx(polygon, rel=1e-12)


def test_charts_are_reciprocal() -> None:
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert np.allclose(chart0(x) * chart1(x), 1.0)
    assert np.allclose(chart0_inverse(chart0(x)), x)


def test_cotangent_weights_give_dirichlet_energy(disk3: DomainMesh) -> None:
    w = cotangent_weights(disk3)
    assert abs(w - w.T).max() < 1e-12
    coo = w.tocoo()
    x = disk3.positions[:, 0]
    energy = 0.5 * float(np.sum(coo.data * (x[coo.row] - x[coo.col]) ** 2))
    assert energy == pytest.approx(float(np.sum(disk3.chart_areas)), rel=1e-9)


def test_locate_recovers_point(disk3: DomainMesh) -> None:
    face, bary = locate(disk3, 0.3 + 0.2j)
    z = complex(np.dot(bary, disk3.chart_coords[face]))
    assert z == pytest.approx(0.3 + 0.2j)
    assert locate(disk3, 1.5 + 0j) is None


def test_locate_on_sphere(sphere3: DomainMesh) -> None:
    x = np.array([0.3, -0.4, 0.5])
    face, bary = locate(sphere3, x)
    chart = int(sphere3.face_chart[face])
    z = complex(np.dot(bary, sphere3.chart_coords[face]))
    assert z == pytest.approx(sphere3.point_in_chart(x / np.linalg.norm(x), chart))


def test_align_rotation() -> None:
    p = np.array([0.0, 0.6, 0.8])
    q = np.array([1.0, 0.0, 0.0])
    assert align_rotation(p, q) @ p == pytest.approx(q)
    assert align_rotation(q, -q) @ q == pytest.approx(-q)


def test_export_mesh(sphere2: DomainMesh) -> None:
    lines = export_mesh(sphere2).splitlines()
    assert sum(1 for ln in lines if ln.startswith("v ")) == sphere2.n_vertices
    assert sum(1 for ln in lines if ln.startswith("f ")) == sphere2.n_faces


def test_unknown_domain() -> None:
    with pytest.raises(InvalidInputError):
        build_mesh("torus", 2)
    with pytest.raises(InvalidInputError):
        build_disk_mesh(-1)


def test_chart_coordinates_of_face(disk3: DomainMesh) -> None:
    z = chart_coordinates(disk3, 0)
    assert z == pytest.approx(disk3.chart_coords[0])
    with pytest.raises(InvalidInputError):
        chart_coordinates(disk3, disk3.n_faces)
