from pathlib import Path
from typing import Any, Dict, List, Sequence

import polars as pl
import structlog

from schemas.reports import Measurement, ReportDocument

logger = structlog.get_logger()

FLOAT_FORMAT = 17


class ReportService:
    """Plot-ready columnar tables of a report document."""

    @staticmethod
    def levels_frame(report: ReportDocument) -> pl.DataFrame:
        rows = [row.model_dump() for row in report.levels]
        return pl.DataFrame(rows) if rows else pl.DataFrame()

    @staticmethod
    def points_frame(report: ReportDocument) -> pl.DataFrame:
        rows: List[Dict[str, Any]] = []
        for p in report.points:
            row = p.model_dump(exclude={"order", "H", "H_inverse", "conformal_factor", "notes", "point"})
            row["point"] = str(p.point)
            for key in ("order", "H", "H_inverse", "conformal_factor"):
                m: Measurement | None = getattr(p, key)
                row[key] = None if m is None else m.value
                row[f"{key}_tolerance"] = None if m is None else m.tolerance
                row[f"{key}_provenance"] = None if m is None else m.provenance.value
            row["notes"] = "; ".join(p.notes)
            rows.append(row)
        return pl.DataFrame(rows, infer_schema_length=None) if rows else pl.DataFrame()

    @staticmethod
    def profile_frame(profiles: Sequence[Dict[str, Any]]) -> pl.DataFrame:
        """Long table of order profiles: one row per (point, radius)."""
        if not profiles:
            return pl.DataFrame()
        return pl.DataFrame(list(profiles), infer_schema_length=None).sort(["point", "sigma"])

    @staticmethod
    def predicates_frame(report: ReportDocument) -> pl.DataFrame:
        rows = [p.model_dump() for p in report.predicates]
        return pl.DataFrame(rows, infer_schema_length=None) if rows else pl.DataFrame()

    @classmethod
    def write_tables(
        cls,
        report: ReportDocument,
        out_dir: str | Path,
        profiles: Sequence[Dict[str, Any]] = (),
    ) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written: List[Path] = []
        tables = {
            "levels": cls.levels_frame(report),
            "points": cls.points_frame(report),
            "profiles": cls.profile_frame(profiles),
            "predicates": cls.predicates_frame(report),
        }
        for name, frame in tables.items():
            if frame.is_empty():
                continue
            path = out / f"{name}.csv"
            frame.write_csv(path, float_precision=FLOAT_FORMAT)
            written.append(path)
        logger.info("report_tables_written", out_dir=str(out), tables=[p.name for p in written])
        return written

    @classmethod
    def render(cls, report: ReportDocument) -> str:
        """Human-readable tables for the terminal."""
        parts = [f"catuni report: {report.command} ({report.verdict})"]
        with pl.Config(tbl_rows=200, tbl_cols=30, fmt_str_lengths=60):
            for title, frame in (
                ("levels", cls.levels_frame(report)),
                ("points", cls.points_frame(report)),
                ("predicates", cls.predicates_frame(report)),
            ):
                if not frame.is_empty():
                    parts.append(f"\n[{title}]\n{frame}")
        if report.branch is not None:
            b = report.branch
            parts.append(
                f"\n[branch] degree={b.degree} branch_points={len(b.branch_points)} verdict={b.verdict}"
            )
        if report.energy_area is not None:
            e = report.energy_area
            parts.append(
                f"\n[energy_area] covered={e.covered_area.value} half_energy={e.half_energy} "
                f"class={e.classification}"
            )
        return "\n".join(parts)


report_service = ReportService()
