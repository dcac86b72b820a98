from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from core.config import settings


class TopologyEnum(str, Enum):
    SPHERE = "sphere"
    DISK = "disk"


class TargetSpec(BaseModel):
    """Target-spec document: combinatorics plus edge lengths."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    schema_version: str = Field(default=settings.SCHEMA_VERSION, alias="schema")
    name: Optional[str] = None
    topology: TopologyEnum
    kappa: float = Field(default=0.0, ge=0.0)
    vertices: int = Field(ge=3)
    faces: List[Tuple[int, int, int]]
    edge_lengths: Dict[str, float]

    @field_validator("edge_lengths")
    @classmethod
    def _edge_keys(cls, value: Dict[str, float]) -> Dict[str, float]:
        for key, length in value.items():
            parts = key.split("-")
            if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
                raise ValueError(f"edge key {key!r} is not of the form 'i-j'")
            if not length > 0:
                raise ValueError(f"edge {key} has non-positive length {length}")
        return value

    def edge_map(self) -> Dict[Tuple[int, int], float]:
        out: Dict[Tuple[int, int], float] = {}
        for key, length in self.edge_lengths.items():
            i, j = (int(p) for p in key.split("-"))
            out[(min(i, j), max(i, j))] = float(length)
        return out
