"""Reading and writing catuni documents."""

import json
from pathlib import Path
from typing import Any, Optional, Tuple

import structlog
from pydantic import BaseModel, ValidationError

from app.domain_mesh import build_mesh
from app.energy_forms import PiecewiseMap
from app.fixtures import TARGETS, fixture_surface
from app.target_surface import ConeSurface, SurfacePoint, load_surface, to_target_spec
from core.config import Settings, settings
from core.exceptions import CatuniError, DocumentLoadError, InvalidInputError, SpecParseError
from schemas.map_document import DomainRef, MapDocument
from schemas.reports import ReportDocument
from schemas.run_manifest import RunManifest

logger = structlog.get_logger()

MODULE = "uniformize_cli"
FIXTURE_PREFIX = "fixture:"


def _read(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DocumentLoadError(f"cannot read {path}: {exc.strerror}", MODULE) from exc


def _parse_json(text: str, what: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"{what} is not valid JSON: {exc}", MODULE) from exc


def load_target(reference: str) -> Tuple[ConeSurface, str]:
    """Surface for a path or a bundled fixture name (``fixture:<name>`` or bare)."""
    name = reference[len(FIXTURE_PREFIX) :] if reference.startswith(FIXTURE_PREFIX) else None
    if name is None and not Path(reference).exists() and reference in TARGETS:
        name = reference
    if name is not None:
        logger.info("target_fixture", name=name)
        return fixture_surface(name), FIXTURE_PREFIX + name
    path = Path(reference)
    surface = load_surface(_read(path), name=path.stem)
    logger.info("target_loaded", path=str(path), vertices=surface.n_vertices)
    return surface, str(path)


def load_manifest(path: str | Path) -> RunManifest:
    try:
        return RunManifest.model_validate(_parse_json(_read(path), "run manifest"))
    except ValidationError as exc:
        raise SpecParseError(f"run manifest is invalid: {exc.error_count()} error(s)", MODULE) from exc


def load_config(path: Optional[str | Path]) -> Settings:
    """Settings with the keys of a JSON config document applied on top."""
    if path is None:
        return settings
    overrides = _parse_json(_read(path), "config document")
    if not isinstance(overrides, dict):
        raise SpecParseError("config document must be an object", MODULE)
    known = set(Settings.model_fields)
    unknown = sorted(k for k in overrides if k.upper() not in known)
    if unknown:
        raise InvalidInputError(f"unknown settings: {', '.join(unknown)}", MODULE)
    try:
        return Settings(**{**settings.model_dump(), **{k.upper(): v for k, v in overrides.items()}})
    except ValidationError as exc:
        raise InvalidInputError(f"config document is invalid: {exc.error_count()} error(s)", MODULE) from exc


def apply_config(updated: Settings) -> None:
    """Copy overridden values onto the process-wide settings object."""
    for key in Settings.model_fields:
        setattr(settings, key, getattr(updated, key))


def map_document(u: PiecewiseMap, target_ref: Optional[str] = None) -> MapDocument:
    embed = target_ref is None or not (
        target_ref.startswith(FIXTURE_PREFIX) or Path(target_ref).exists()
    )
    return MapDocument(
        domain=DomainRef(kind=u.mesh.kind, level=u.mesh.level),
        target_path=None if embed else target_ref,
        target=to_target_spec(u.surface) if embed else None,
        images=[(p.face, *p.bary) for p in u.images],
        flags=_json_safe(u.flags),
    )


def save_map(u: PiecewiseMap, path: str | Path, target_ref: Optional[str] = None) -> Path:
    return _write_model(map_document(u, target_ref), path)


def load_map(path: str | Path, surface: Optional[ConeSurface] = None) -> PiecewiseMap:
    """Rebuild a stored map; its domain mesh and target are resolved from references."""
    try:
        doc = MapDocument.model_validate(_parse_json(_read(path), "map document"))
    except ValidationError as exc:
        raise SpecParseError(f"map document is invalid: {exc.error_count()} error(s)", MODULE) from exc
    if surface is None:
        if doc.target is not None:
            surface = load_surface(doc.target.model_dump(by_alias=True, mode="json"))
        else:
            assert doc.target_path is not None
            ref = doc.target_path
            if not ref.startswith(FIXTURE_PREFIX) and not Path(ref).exists():
                raise DocumentLoadError(f"map references missing target {ref}", MODULE)
            surface, _ = load_target(ref)
    mesh = build_mesh(doc.domain.kind, doc.domain.level)
    if len(doc.images) != mesh.n_vertices:
        raise DocumentLoadError(
            f"{len(doc.images)} images for a {doc.domain.kind} mesh of {mesh.n_vertices} vertices",
            MODULE,
        )
    images = []
    for face, *bary in doc.images:
        if not 0 <= face < len(surface.face_list):
            raise DocumentLoadError(f"image references missing target face {face}", MODULE)
        try:
            images.append(SurfacePoint(face, tuple(bary)))
        except CatuniError as exc:
            raise DocumentLoadError(exc.detail, MODULE) from exc
    return PiecewiseMap(mesh, surface, images, dict(doc.flags))


def save_report(report: ReportDocument, path: str | Path) -> Path:
    return _write_model(report, path)


def load_report(path: str | Path) -> ReportDocument:
    try:
        return ReportDocument.model_validate(_parse_json(_read(path), "report document"))
    except ValidationError as exc:
        raise SpecParseError(f"report document is invalid: {exc.error_count()} error(s)", MODULE) from exc


def _write_model(model: BaseModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = model.model_dump(mode="json", by_alias=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("document_written", path=str(path))
    return path


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "tolist"):
        return _json_safe(value.tolist())
    if isinstance(value, (bool, int, str)) or value is None:
        return value
    if isinstance(value, float):
        return value if value == value and abs(value) != float("inf") else str(value)
    return str(value)
