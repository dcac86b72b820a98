from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from core.config import settings


class Provenance(str, Enum):
    COMPUTED = "computed"
    EXTRAPOLATED = "extrapolated"


class Measurement(BaseModel):
    value: Optional[float]
    tolerance: Optional[float] = None
    provenance: Provenance = Provenance.COMPUTED


class LevelRow(BaseModel):
    """Energy table entry of one refinement level."""

    level: int
    vertices: int
    energy: float
    area: float
    gap: float
    hopf_l1: float
    hopf_residual: float
    sweeps: int
    converged: bool
    lipschitz: Optional[float] = None
    spread: Optional[float] = None


class PointReport(BaseModel):
    point: Any
    order: Optional[Measurement] = None
    monotonicity_defect: Optional[float] = None
    monotonicity_bound: Optional[float] = None
    fit_kind: Optional[str] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    k: Optional[float] = None
    c: Optional[float] = None
    fit_residual: Optional[float] = None
    H: Optional[Measurement] = None
    H_ratio_predicted: Optional[float] = None
    H_inverse: Optional[Measurement] = None
    H_predicted: Optional[float] = None
    winding: Optional[int] = None
    conformal_factor: Optional[Measurement] = None
    notes: List[str] = Field(default_factory=list)


class BranchSummary(BaseModel):
    degree: Optional[int]
    branch_points: List[Any]
    fiber_counts: List[int]
    sign_consistent: bool
    verdict: str
    diagnostics: List[str] = Field(default_factory=list)


class EnergyAreaSummary(BaseModel):
    covered_area: Measurement
    half_energy: float
    jacobian_area: float
    area: float
    gap: float
    monotone: bool
    classification: str


class Predicate(BaseModel):
    name: str
    passed: Optional[bool]
    value: Optional[float] = None
    tolerance: Optional[float] = None
    detail: Optional[str] = None


class ReportDocument(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: str = Field(default=settings.SCHEMA_VERSION, alias="schema")
    command: str
    target: Optional[str] = None
    seed: Optional[int] = None
    levels: List[LevelRow] = Field(default_factory=list)
    points: List[PointReport] = Field(default_factory=list)
    branch: Optional[BranchSummary] = None
    energy_area: Optional[EnergyAreaSummary] = None
    mobius_residual: Optional[Measurement] = None
    predicates: List[Predicate] = Field(default_factory=list)
    verdict: str = "unknown"
    flags: Dict[str, Any] = Field(default_factory=dict)

    @property
    def passed(self) -> Optional[bool]:
        outcomes = [p.passed for p in self.predicates]
        if any(o is False for o in outcomes):
            return False
        if any(o is None for o in outcomes):
            return None
        return True
