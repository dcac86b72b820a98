from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from core.config import settings
from schemas.target_spec import TargetSpec


class DomainRef(BaseModel):
    """Domain meshes are rebuilt from their kind and refinement level."""

    model_config = ConfigDict(extra="forbid")

    kind: str = Field(pattern="^(sphere|disk)$")
    level: int = Field(ge=0, le=9)


class MapDocument(BaseModel):
    """Stored discrete map: vertex images as (target face, barycentric weights)."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    schema_version: str = Field(default=settings.SCHEMA_VERSION, alias="schema")
    domain: DomainRef
    target_path: Optional[str] = None
    target: Optional[TargetSpec] = None
    images: List[Tuple[int, float, float, float]]
    flags: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, value: str) -> str:
        if value != settings.SCHEMA_VERSION:
            raise ValueError(f"unsupported schema {value!r}")
        return value

    @model_validator(mode="after")
    def _has_target(self) -> "MapDocument":
        if self.target is None and self.target_path is None:
            raise ValueError("a map document names its target by path or embeds it")
        return self
