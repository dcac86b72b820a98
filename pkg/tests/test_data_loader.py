import json

import pytest
from pydantic import ValidationError

from app import fixtures
from app.data_loader import (
    load_config,
    load_manifest,
    load_map,
    load_report,
    load_target,
    save_map,
    save_report,
)
from app.domain_mesh import DomainMesh
from app.energy_forms import total_energy
from app.fixtures import PolarTarget
from core.exceptions import DocumentLoadError, InvalidInputError, SpecParseError
from schemas.map_document import MapDocument
from schemas.reports import Predicate, ReportDocument
from schemas.run_manifest import RunManifest


@pytest.fixture(scope="module")
def sphere_map(sphere3: DomainMesh, round_sphere: PolarTarget):
    return fixtures.sphere_identity(sphere3, round_sphere)


def _write(tmp_path, name: str, payload) -> str:
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def test_map_by_fixture_reference(tmp_path, sphere_map) -> None:
    path = save_map(sphere_map, tmp_path / "map.json", "fixture:round_sphere")
    stored = json.loads(path.read_text(encoding="utf-8"))
    assert stored["schema"] == "catuni/1"
    assert stored["target_path"] == "fixture:round_sphere"
    assert stored["target"] is None

    again = load_map(path)
    assert again.mesh.kind == "sphere"
    assert again.mesh.level == 3
    assert [p.face for p in again.images] == [p.face for p in sphere_map.images]
    for p, q in zip(again.images, sphere_map.images):
        assert p.bary == pytest.approx(q.bary, abs=1e-12)
    assert total_energy(again) == pytest.approx(total_energy(sphere_map), rel=1e-9)


def test_map_with_embedded_target(tmp_path, disk3: DomainMesh, cone15: PolarTarget) -> None:
    u = fixtures.cone_model_map(disk3, cone15)
    path = save_map(u, tmp_path / "map.json")
    assert json.loads(path.read_text(encoding="utf-8"))["target"] is not None
    again = load_map(path)
    assert len(again.images) == disk3.n_vertices
    assert again.surface.n_vertices == cone15.surface.n_vertices


def test_missing_target_path(tmp_path) -> None:
    path = _write(
        tmp_path,
        "map.json",
        {
            "schema": "catuni/1",
            "domain": {"kind": "disk", "level": 0},
            "target_path": str(tmp_path / "absent.json"),
            "images": [],
        },
    )
    with pytest.raises(DocumentLoadError):
        load_map(path)


def test_image_count_mismatch(tmp_path) -> None:
    path = _write(
        tmp_path,
        "map.json",
        {
            "schema": "catuni/1",
            "domain": {"kind": "disk", "level": 1},
            "target_path": "fixture:flat_plane",
            "images": [[0, 1.0, 0.0, 0.0]],
        },
    )
    with pytest.raises(DocumentLoadError):
        load_map(path)


def test_unknown_schema(tmp_path) -> None:
    path = _write(
        tmp_path,
        "map.json",
        {
            "schema": "catuni/0",
            "domain": {"kind": "disk", "level": 1},
            "target_path": "fixture:flat_plane",
            "images": [],
        },
    )
    with pytest.raises(SpecParseError):
        load_map(path)
    with pytest.raises(DocumentLoadError):
        load_map(tmp_path / "nothing.json")


def test_map_document_needs_a_target() -> None:
    with pytest.raises(ValidationError):
        MapDocument(domain={"kind": "disk", "level": 1}, images=[])
    with pytest.raises(ValidationError):
        MapDocument(domain={"kind": "torus", "level": 1}, target_path="x", images=[])


def test_load_target_names() -> None:
    surface, ref = load_target("round_sphere")
    assert ref == "fixture:round_sphere"
    assert surface.topology == "sphere"
    _, ref = load_target("fixture:flat_cone")
    assert ref == "fixture:flat_cone"
    with pytest.raises(InvalidInputError):
        load_target("fixture:klein_bottle")


def test_load_config(tmp_path) -> None:
    updated = load_config(_write(tmp_path, "config.json", {"solver_max_iterations": 7}))
    assert updated.SOLVER_MAX_ITERATIONS == 7
    assert load_config(None).SOLVER_MAX_ITERATIONS == 500
    with pytest.raises(InvalidInputError):
        load_config(_write(tmp_path, "bad.json", {"no_such_setting": 1}))
    with pytest.raises(SpecParseError):
        load_config(_write(tmp_path, "list.json", [1, 2]))


def test_manifest_defaults(tmp_path) -> None:
    manifest = load_manifest(_write(tmp_path, "run.json", {"target": "fixture:round_sphere"}))
    assert manifest.levels == [3, 4, 5]
    assert manifest.seed == 0
    assert manifest.probes.random_vertices == 20
    with pytest.raises(SpecParseError):
        load_manifest(_write(tmp_path, "low.json", {"target": "x", "levels": [1]}))
    with pytest.raises(SpecParseError):
        load_manifest(_write(tmp_path, "extra.json", {"target": "x", "colour": "red"}))


def test_manifest_forbids_extra_fields() -> None:
    with pytest.raises(ValidationError):
        RunManifest(target="x", sweeps=3)


def test_report_round_trip(tmp_path) -> None:
    report = ReportDocument(
        command="validate",
        target="fixture:round_sphere",
        predicates=[Predicate(name="link_condition", passed=True, value=0.0)],
        verdict="valid",
    )
    again = load_report(save_report(report, tmp_path / "report.json"))
    assert again == report
    assert again.passed is True


def test_report_outcome_is_tri_state() -> None:
    report = ReportDocument(command="analyze")
    assert report.passed is True
    report.predicates.append(Predicate(name="degree_defined", passed=None))
    assert report.passed is None
    report.predicates.append(Predicate(name="area_bound", passed=False))
    assert report.passed is False
