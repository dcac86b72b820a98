import pytest

from core.exceptions import (
    EXIT_FAIL,
    EXIT_INPUT_ERROR,
    EXIT_SOLVER_ABORT,
    EXIT_UNRESOLVED,
    DegenerateMapError,
    InvalidInputError,
    LocalityError,
    ResolutionError,
    SurfaceValidationError,
)
from core.telemetry_config import Settings, TelemetryConfig
from utils.telemetry.decorators import traceable
from utils.telemetry.otel_setup import OpenTelemetrySetup


def test_error_payload() -> None:
    exc = InvalidInputError("bad level", "domain_mesh")
    assert exc.to_dict() == {
        "error": "InvalidInputError",
        "module": "domain_mesh",
        "detail": "bad level",
        "exit_code": EXIT_INPUT_ERROR,
    }
    assert str(exc) == "[domain_mesh] bad level"


def test_exit_codes() -> None:
    assert DegenerateMapError().exit_code == EXIT_SOLVER_ABORT
    assert ResolutionError().exit_code == EXIT_UNRESOLVED
    assert ResolutionError().detail == "below mesh resolution"


def test_locality_error_names_face() -> None:
    exc = LocalityError("edge too long", face=12)
    assert exc.detail == "edge too long (refine domain face 12)"
    assert exc.face == 12
    assert exc.exit_code == EXIT_UNRESOLVED


def test_validation_error_lists_violations() -> None:
    violations = [
        {"kind": "link_condition", "simplex": [3], "detail": "cone angle below 2 pi"},
        {"kind": "link_condition", "simplex": [4], "detail": "cone angle below 2 pi"},
    ]
    exc = SurfaceValidationError(violations)
    payload = exc.to_dict()
    assert payload["exit_code"] == EXIT_FAIL
    assert payload["violations"] == violations
    assert exc.detail == "2 violation(s): link_condition"


def test_traceable_passes_results_and_errors() -> None:
    @traceable("analysis.test_probe")
    def probe(x: float) -> float:
        if x < 0:
            raise ResolutionError("negative radius", "tangent_analysis")
        return 2 * x

    assert probe(1.5) == 3.0
    with pytest.raises(ResolutionError):
        probe(-1.0)


def test_otel_setup_installs_tracer_provider() -> None:
    config = Settings(
        TELEMETRY=TelemetryConfig(enabled=True, otel_enabled=True, prometheus_enabled=False)
    )
    setup = OpenTelemetrySetup()
    setup.setup(config)
    assert setup.tracer_provider is not None
    assert setup.meter_provider is None


def test_otel_setup_disabled_by_default() -> None:
    setup = OpenTelemetrySetup()
    setup.setup()
    assert setup.tracer_provider is None
