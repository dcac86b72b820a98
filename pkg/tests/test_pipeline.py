import json
import math

import pytest

from app import fixtures
from app.data_loader import save_map, save_report
from app.domain_mesh import DomainMesh
from app.fixtures import PolarTarget
from app.harmonic_solver import SolverConfig
from app.main import main
from app.pipeline import (
    cmd_analyze,
    cmd_dirichlet,
    cmd_mobius,
    cmd_report,
    cmd_uniformize,
    cmd_validate,
    dirichlet_fixture,
    exit_status,
)
from app.tangent_analysis import order_profile
from core.config import settings
from core.exceptions import InvalidInputError
from schemas.reports import LevelRow, Measurement, PointReport, Predicate, ReportDocument
from schemas.run_manifest import RunManifest
from services.report_service import report_service


def _report() -> ReportDocument:
    return ReportDocument(
        command="analyze",
        target="fixture:flat_plane",
        levels=[
            LevelRow(
                level=3,
                vertices=100,
                energy=2.5,
                area=1.2,
                gap=0.1,
                hopf_l1=0.1,
                hopf_residual=0.01,
                sweeps=12,
                converged=True,
            )
        ],
        points=[
            PointReport(point=[0.0, 0.0], order=Measurement(value=2.01, tolerance=0.1), winding=2),
            PointReport(point=5, notes=["tangent_analysis: below mesh resolution"]),
        ],
        predicates=[Predicate(name="order_monotonicity", passed=True, value=0.02, tolerance=0.1)],
        verdict="analyzed",
    )


def test_exit_status() -> None:
    report = _report()
    assert exit_status(report) == 0
    report.predicates.append(Predicate(name="degree_defined", passed=None))
    assert exit_status(report) == 2
    report.predicates.append(Predicate(name="area_bound", passed=False))
    assert exit_status(report) == 1


def test_validate_rejects_tetrahedron() -> None:
    result = cmd_validate("tetrahedron")
    assert result.exit_code == 1
    assert result.report.verdict == "invalid"
    assert result.report.flags["violations"]


@pytest.mark.parametrize("target", ["round_sphere", "flat_cone"])
def test_validate_accepts_fixtures(target: str) -> None:
    result = cmd_validate(target, samples=5)
    assert result.exit_code == 0
    assert result.report.verdict == "valid"
    assert result.report.target == f"fixture:{target}"


def test_dirichlet_fixture_orders() -> None:
    _, expected = dirichlet_fixture("cone", 2, beta=1.5)
    assert expected == 1.5
    _, expected = dirichlet_fixture("affine", 2)
    assert expected == 1.0
    with pytest.raises(InvalidInputError):
        dirichlet_fixture("spiral", 2)


def test_dirichlet_power(tmp_path) -> None:
    result = cmd_dirichlet("power", 3, 0, out_dir=str(tmp_path), config=SolverConfig(max_iterations=30))
    assert result.exit_code in (0, 1, 2)
    assert result.report.flags["max_error"] < 0.05
    assert result.report.levels[0].level == 3
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "map.json").exists()


def test_mobius_command(tmp_path, sphere3: DomainMesh, round_sphere: PolarTarget) -> None:
    R = fixtures.rotation_matrix((0.0, 1.0, 1.0), 0.4)
    a = save_map(fixtures.sphere_identity(sphere3, round_sphere), tmp_path / "a.json", "fixture:round_sphere")
    b = save_map(
        fixtures.rotated_identity(sphere3, round_sphere, R), tmp_path / "b.json", "fixture:round_sphere"
    )
    result = cmd_mobius(str(a), str(b), tolerance=0.05, seed=0, samples=20)
    assert result.report.mobius_residual.value < 0.05
    assert result.exit_code == 0


def test_report_command(tmp_path) -> None:
    path = save_report(_report(), tmp_path / "report.json")
    text, result = cmd_report(str(path), out_dir=str(tmp_path / "tables"))
    assert text.startswith("catuni report: analyze (analyzed)")
    assert result.exit_code == 0
    assert {p.name for p in result.written} == {"levels.csv", "points.csv", "predicates.csv"}


def test_report_frames() -> None:
    report = _report()
    assert report_service.levels_frame(report).height == 1
    points = report_service.points_frame(report)
    assert points.height == 2
    assert points["order"].to_list() == [2.01, None]
    assert points["notes"].to_list()[1] == "tangent_analysis: below mesh resolution"
    assert report_service.predicates_frame(report)["name"].to_list() == ["order_monotonicity"]
    assert report_service.profile_frame([]).is_empty()


def test_write_tables_skips_empty(tmp_path) -> None:
    written = report_service.write_tables(ReportDocument(command="mobius"), tmp_path)
    assert written == []


def test_cli_validate(tmp_path) -> None:
    assert main(["--out", str(tmp_path), "validate", "--target", "tetrahedron", "--samples", "0"]) == 1
    payload = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    assert payload["verdict"] == "invalid"


def test_cli_input_errors(tmp_path) -> None:
    assert main(["analyze", str(tmp_path / "missing.json")]) == 3
    assert main(["uniformize"]) == 3


@pytest.mark.slow
def test_uniformize_round_sphere(tmp_path) -> None:
    manifest = RunManifest(
        target="fixture:round_sphere",
        levels=[3],
        solver={"max_iterations": 200},
        probes={"random_vertices": 4},
        out_dir=str(tmp_path),
    )
    result = cmd_uniformize(manifest)
    report = result.report
    assert [row.level for row in report.levels] == [3]
    finest = report.levels[-1]
    # coarse mesh: flat faces lose a few percent of the sphere's area
    assert 0.8 <= finest.energy / (8 * math.pi) <= 1.2
    assert 0.8 <= finest.area / (4 * math.pi) <= 1.1
    assert finest.gap < 0.25 * finest.energy
    assert report.branch is not None
    assert report.branch.branch_points == []
    assert report.branch.verdict == "homeomorphism"
    assert report.verdict == "uniformized (degree 1)"
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "map.json").exists()


def test_analyze_stored_disk_map(tmp_path, disk4: DomainMesh, plane: PolarTarget) -> None:
    path = save_map(fixtures.power_map(disk4, plane, 2), tmp_path / "map.json")
    result = cmd_analyze(str(path), points=[[0.0, 0.0]], seed=0, out_dir=str(tmp_path / "out"))
    assert result.report.verdict == "analyzed"
    assert len(result.report.points) == 1
    origin = result.report.points[0]
    assert origin.winding == 2
    assert 1.7 <= origin.order.value <= 2.3
    assert result.exit_code in (0, 1, 2)
    assert (tmp_path / "out" / "report.json").exists()
    assert origin.H_ratio_predicted == pytest.approx(1.0, rel=0.1)
    assert origin.H_predicted == pytest.approx(1.0, rel=0.1)
    assert origin.monotonicity_bound == pytest.approx(order_profile(result.map, 0j).defect_bound)
    monotonicity = next(p for p in result.report.predicates if p.name == "order_monotonicity")
    assert monotonicity.tolerance == 1.0


@pytest.mark.slow
def test_dirichlet_cone_is_conformal() -> None:
    result = cmd_dirichlet("cone", 4, 0, config=SolverConfig(max_iterations=100))
    origin = result.report.points[0]
    assert 1.35 <= origin.order.value <= 1.65
    assert origin.k is not None and origin.k < 0.1
    assert abs(origin.alpha / origin.beta - 1.0) <= 0.15
    names = {p.name for p in result.report.predicates}
    assert {"order_at_origin", "cone_stretch", "ratio_integral"} <= names
