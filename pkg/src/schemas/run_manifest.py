from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.config import settings

PointSpec = Union[int, List[float]]

MIN_SPHERE_LEVEL = 2


class ProbePolicy(BaseModel):
    """Which domain points the analyses visit."""

    model_config = ConfigDict(extra="forbid")

    order_threshold: float = Field(default_factory=lambda: settings.PROBE_ORDER_THRESHOLD)
    random_vertices: int = Field(default_factory=lambda: settings.PROBE_RANDOM_VERTICES, ge=0)
    points: List[PointSpec] = Field(default_factory=list)


class RunManifest(BaseModel):
    """Inputs of one pipeline run; a fixed seed gives identical reports."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    schema_version: str = Field(default=settings.SCHEMA_VERSION, alias="schema")
    target: str
    levels: List[int] = Field(default_factory=lambda: [3, 4, 5], min_length=1)
    solver: Dict[str, Any] = Field(default_factory=dict)
    probes: ProbePolicy = Field(default_factory=ProbePolicy)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    out_dir: str = "out"
    pins: Optional[List[int]] = None

    @field_validator("levels")
    @classmethod
    def _sphere_levels(cls, levels: List[int]) -> List[int]:
        # level-1 sphere meshes have every vertex on the equator
        if min(levels) < MIN_SPHERE_LEVEL:
            raise ValueError(f"sphere levels start at {MIN_SPHERE_LEVEL}")
        return levels
