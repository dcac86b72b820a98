from typing import Any, Dict, List, Optional

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_UNRESOLVED = 2
EXIT_INPUT_ERROR = 3
EXIT_SOLVER_ABORT = 4


class CatuniError(Exception):
    """Base application exception."""

    exit_code: int = EXIT_INPUT_ERROR
    default_detail: str = "catuni error"

    def __init__(self, detail: Optional[str] = None, module: str = "catuni"):
        self.detail = detail or self.default_detail
        self.module = module
        super().__init__(f"[{module}] {self.detail}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "module": self.module,
            "detail": self.detail,
            "exit_code": self.exit_code,
        }


class InvalidTriangleError(CatuniError):
    """Side lengths violate the triangle inequality or are negative."""

    default_detail = "triangle inequality violated"


class CurvatureDomainError(CatuniError):
    """Input outside the admissible domain of an operation."""

    default_detail = "argument outside the admissible domain"


class InvalidInputError(CatuniError):
    """Malformed or inconsistent numeric input."""

    default_detail = "invalid input"


class SpecParseError(CatuniError):
    """A document could not be parsed."""

    default_detail = "document does not parse"


class DocumentLoadError(CatuniError):
    """A document parsed but references something that cannot be resolved."""

    default_detail = "document could not be loaded"


class SurfaceValidationError(CatuniError):
    """The target violates the admissibility conditions."""

    exit_code = EXIT_FAIL
    default_detail = "target surface failed validation"

    def __init__(
        self,
        violations: List[Dict[str, Any]],
        detail: Optional[str] = None,
        module: str = "target_surface",
    ):
        self.violations = violations
        if detail is None:
            kinds = sorted({v["kind"] for v in violations})
            detail = f"{len(violations)} violation(s): {', '.join(kinds)}"
        super().__init__(detail, module)

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["violations"] = self.violations
        return payload


class LocalityError(CatuniError):
    """Points do not lie in a common convex ball; the caller must refine."""

    exit_code = EXIT_UNRESOLVED
    default_detail = "points are not in a common convex ball"

    def __init__(
        self,
        detail: Optional[str] = None,
        module: str = "energy_forms",
        face: Optional[int] = None,
    ):
        self.face = face
        if face is not None and detail is not None:
            detail = f"{detail} (refine domain face {face})"
        super().__init__(detail, module)


class BoundaryHitError(CatuniError):
    """A geodesic continuation left the surface."""

    default_detail = "geodesic extension reached the boundary"


class ConstructionError(CatuniError):
    """The initial map could not be built from the given correspondence."""

    exit_code = EXIT_SOLVER_ABORT
    default_detail = "initial map construction failed"


class DegenerateMapError(CatuniError):
    """The map has no energy to minimise or its analysis is undefined."""

    exit_code = EXIT_SOLVER_ABORT
    default_detail = "degenerate map"


class BubblingError(CatuniError):
    """Energy concentrates in a vanishing portion of the domain."""

    exit_code = EXIT_SOLVER_ABORT
    default_detail = "energy concentration detected"


class ResolutionError(CatuniError):
    """A requested quantity is below the resolution of the mesh."""

    exit_code = EXIT_UNRESOLVED
    default_detail = "below mesh resolution"


class NonInvertibleError(CatuniError):
    """A map could not be inverted at a sampled point."""

    exit_code = EXIT_UNRESOLVED
    default_detail = "map is not invertible at a sampled point"
