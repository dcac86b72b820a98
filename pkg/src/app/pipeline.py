"""Pipeline stages behind the command line: validate, solve, analyse, report."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app import fixtures
from app.data_loader import (
    FIXTURE_PREFIX,
    load_map,
    load_report,
    load_target,
    save_map,
    save_report,
)
from app.domain_mesh import build_disk_mesh, build_sphere_mesh
from app.energy_forms import MapInverter, PiecewiseMap, energy_report
from app.geom_kernel import cat_comparison_test
from app.harmonic_solver import (
    DirichletProblem,
    SolverConfig,
    adjacent_image_spread,
    initial_map,
    interior_lipschitz,
    prolong,
    solve_closed,
    solve_dirichlet,
)
from app.qc_degree import (
    BranchReport,
    EnergyAreaVerdict,
    H_estimate,
    H_estimate_inverse,
    H_of_k,
    branch_and_degree,
    energy_area_verdict,
    mobius_check,
    predicted_distortion,
    predicted_ratio,
    winding_number,
)
from app.tangent_analysis import (
    Center,
    MapSampler,
    blowup_map,
    conformal_factor_probe,
    fit_tangent_map,
    order_profile,
    vertex_orders,
)
from app.target_surface import (
    ConeSurface,
    SurfacePoint,
    local_distance,
    sample_surface_triangle,
)
from core.config import settings
from core.exceptions import (
    EXIT_FAIL,
    EXIT_PASS,
    EXIT_UNRESOLVED,
    CatuniError,
    InvalidInputError,
    SurfaceValidationError,
)
from schemas.reports import (
    BranchSummary,
    EnergyAreaSummary,
    LevelRow,
    Measurement,
    PointReport,
    Predicate,
    Provenance,
    ReportDocument,
)
from schemas.run_manifest import MIN_SPHERE_LEVEL, PointSpec, ProbePolicy, RunManifest
from services.report_service import report_service
from utils.telemetry.decorators import traceable
from utils.telemetry.solver_metrics import solver_metrics

logger = structlog.get_logger()

MODULE = "uniformize_cli"
GAP_RATIO_TOL = 0.02
ORDER_TOL = 0.05
H_TOL = 0.03
DISTORTION_AGREEMENT = 0.05


@dataclass
class RunResult:
    report: ReportDocument
    exit_code: int
    map: Optional[PiecewiseMap] = None
    written: List[Path] = field(default_factory=list)


def exit_status(report: ReportDocument) -> int:
    passed = report.passed
    if passed is None:
        return EXIT_UNRESOLVED
    return EXIT_PASS if passed else EXIT_FAIL


def _center(point: PointSpec, kind: str) -> Center:
    if isinstance(point, int):
        return point
    coords = [float(x) for x in point]
    if kind == "disk":
        if len(coords) != 2:
            raise InvalidInputError(f"disk points have two coordinates: {point}", MODULE)
        return complex(coords[0], coords[1])
    if len(coords) != 3:
        raise InvalidInputError(f"sphere points are 3-vectors: {point}", MODULE)
    return coords


def _label(point: Center) -> Any:
    if isinstance(point, (int, np.integer)):
        return int(point)
    if isinstance(point, complex):
        return [point.real, point.imag]
    return [float(x) for x in point]


def _predicate(name: str, passed: Optional[bool], **kw: Any) -> Predicate:
    if passed is not None:
        solver_metrics.track_verdict(name, passed)
    return Predicate(name=name, passed=passed, **kw)


# --- validate ---


def audit_triangles(surface: ConeSurface, samples: int, seed: int) -> Tuple[int, float]:
    """Comparison test on small random triangles; returns failures and worst defect."""
    rng = np.random.default_rng(seed)
    interior = [v for v, star in enumerate(surface.stars) if star.closed]
    failures, worst = 0, 0.0
    reach = min(0.5 * surface.locality_radius, 0.25 * surface.min_edge)
    for _ in range(samples):
        h = int(rng.choice(interior))
        star = surface.stars[h]
        corners: List[SurfacePoint] = []
        for rho, theta in zip(rng.uniform(0.2, 1.0, 3) * reach, rng.uniform(0.0, star.total, 3)):
            p = surface.point_at(h, float(rho), float(theta))
            if p is not None:
                corners.append(p)
        if len(corners) < 3:
            continue
        try:
            sample = sample_surface_triangle(surface, corners, points=5)
            result = cat_comparison_test(sample, surface.kappa)
        except CatuniError as exc:
            logger.debug("audit_triangle_skipped", detail=exc.detail)
            continue
        worst = max(worst, result.defect)
        failures += 0 if result.passed else 1
    return failures, worst


@traceable("pipeline.validate")
def cmd_validate(reference: str, samples: int = 100, seed: Optional[int] = None) -> RunResult:
    seed = settings.DEFAULT_SEED if seed is None else seed
    report = ReportDocument(command="validate", target=reference, seed=seed)
    try:
        surface, ref = load_target(reference)
    except SurfaceValidationError as exc:
        report.flags["violations"] = exc.violations
        report.predicates.append(
            _predicate("link_condition", False, value=float(len(exc.violations)), detail=exc.detail)
        )
        report.verdict = "invalid"
        return RunResult(report, EXIT_FAIL)
    report.target = ref
    report.predicates.append(_predicate("link_condition", True, value=0.0))
    if samples > 0 and any(star.closed for star in surface.stars):
        failures, worst = audit_triangles(surface, samples, seed)
        report.predicates.append(
            _predicate(
                "comparison_audit",
                failures == 0,
                value=worst,
                tolerance=settings.COMPARISON_TOL_FACTOR,
                detail=f"{failures} of {samples} sampled triangles fail",
            )
        )
    report.flags.update(
        vertices=surface.n_vertices,
        cone_points=surface.cone_points(),
        max_beta=max(s.beta for s in surface.stars),
    )
    report.verdict = "valid" if report.passed else "invalid"
    return RunResult(report, exit_status(report))


# --- analysis of a frozen map ---


def select_probes(u: PiecewiseMap, policy: ProbePolicy, seed: int) -> List[Center]:
    """High-order vertices, random vertices and user points, without repeats."""
    mesh = u.mesh
    rng = np.random.default_rng(seed)
    sampler = MapSampler(u)
    interior = np.flatnonzero(~mesh.is_boundary)
    orders, _ = vertex_orders(u, interior.tolist(), sampler=sampler)
    chosen: List[Center] = [v for v, o in sorted(orders.items()) if o > policy.order_threshold]
    high = len(chosen)
    count = min(policy.random_vertices, len(interior))
    for v in sorted(rng.choice(interior, size=count, replace=False).tolist()):
        if v not in chosen:
            chosen.append(int(v))
    chosen.extend(_center(p, mesh.kind) for p in policy.points)
    logger.info("probes_selected", probes=len(chosen), high_order=high)
    return chosen


def analyze_point(
    u: PiecewiseMap,
    p: Center,
    sampler: MapSampler,
    inverter: Optional[MapInverter] = None,
) -> Tuple[PointReport, List[Dict[str, Any]]]:
    row = PointReport(point=_label(p))
    profile_rows: List[Dict[str, Any]] = []
    try:
        profile = order_profile(u, p, sampler=sampler)
    except CatuniError as exc:
        row.notes.append(f"{exc.module}: {exc.detail}")
        return row, profile_rows
    row.order = Measurement(
        value=profile.extrapolated,
        tolerance=ORDER_TOL * profile.extrapolated,
        provenance=Provenance.EXTRAPOLATED,
    )
    row.monotonicity_defect = profile.monotonicity_defect
    row.monotonicity_bound = profile.defect_bound
    profile_rows = [{"point": str(row.point), **r} for r in profile.rows()]

    fit = None
    try:
        trace = blowup_map(u, p, float(profile.radii.max()), sampler=sampler)
        fit = fit_tangent_map(trace)
        row.fit_kind, row.alpha, row.beta = fit.kind, fit.alpha, fit.beta
        row.k, row.c, row.fit_residual = fit.k, fit.c, fit.residual
    except CatuniError as exc:
        row.notes.append(f"{exc.module}: {exc.detail}")
    try:
        h = H_estimate(u, p, sampler=sampler)
        row.H = Measurement(
            value=None if h.infinite else h.value, tolerance=H_TOL, provenance=Provenance.EXTRAPOLATED
        )
        if fit is not None:
            row.H_ratio_predicted = predicted_ratio(fit)
    except CatuniError as exc:
        row.notes.append(f"{exc.module}: {exc.detail}")
    if fit is not None:
        row.H_predicted = predicted_distortion(fit)
        try:
            h_inv = H_estimate_inverse(u, p, inverter=inverter)
            row.H_inverse = Measurement(
                value=None if h_inv.infinite else h_inv.value,
                tolerance=H_TOL,
                provenance=Provenance.EXTRAPOLATED,
            )
        except CatuniError as exc:
            row.notes.append(f"{exc.module}: {exc.detail}")
    try:
        row.winding = winding_number(u, p, sampler=sampler).value
    except CatuniError as exc:
        row.notes.append(f"{exc.module}: {exc.detail}")
    if profile.extrapolated < settings.PROBE_ORDER_THRESHOLD:
        try:
            probe = conformal_factor_probe(u, p, sampler=sampler)
            row.conformal_factor = Measurement(
                value=probe.disk_mean, tolerance=0.1, provenance=Provenance.EXTRAPOLATED
            )
            if not probe.applicable:
                row.notes.append("conformal factor probe inapplicable: local gap too large")
            elif not probe.consistent:
                row.notes.append("conformal factor estimates disagree")
        except CatuniError as exc:
            row.notes.append(f"{exc.module}: {exc.detail}")
    return row, profile_rows


def branch_summary(branch: BranchReport) -> BranchSummary:
    return BranchSummary(
        degree=branch.degree,
        branch_points=branch.branch_points,
        fiber_counts=branch.fiber_counts,
        sign_consistent=branch.sign_consistent,
        verdict=branch.verdict,
        diagnostics=branch.diagnostics,
    )


def energy_area_summary(v: EnergyAreaVerdict) -> EnergyAreaSummary:
    return EnergyAreaSummary(
        covered_area=Measurement(value=v.covered_area, tolerance=v.tolerance * v.half_energy),
        half_energy=v.half_energy,
        jacobian_area=v.jacobian_area,
        area=v.area,
        gap=v.gap,
        monotone=v.monotone,
        classification=v.classification,
    )


def level_row(u: PiecewiseMap) -> LevelRow:
    rep = energy_report(u)
    return LevelRow(
        level=u.mesh.level,
        vertices=u.mesh.n_vertices,
        energy=rep.energy,
        area=rep.area,
        gap=rep.gap,
        hopf_l1=rep.hopf_l1,
        hopf_residual=rep.hopf_residual,
        sweeps=int(u.flags.get("iterations", 0)),
        converged=bool(u.flags.get("converged", True)),
        lipschitz=interior_lipschitz(u),
        spread=adjacent_image_spread(u),
    )


@traceable("pipeline.analyze")
def analyze_map(
    u: PiecewiseMap,
    probes: Sequence[Center],
    seed: int,
    report: ReportDocument,
) -> List[Dict[str, Any]]:
    """Fills per-point tables and global verdicts into ``report``."""
    sampler = MapSampler(u)
    inverter = MapInverter(u)
    profiles: List[Dict[str, Any]] = []
    for p in probes:
        row, rows = analyze_point(u, p, sampler, inverter)
        report.points.append(row)
        profiles.extend(rows)

    excess = [
        r.monotonicity_defect / r.monotonicity_bound
        for r in report.points
        if r.monotonicity_defect is not None and r.monotonicity_bound
    ]
    if excess:
        report.predicates.append(
            _predicate(
                "order_monotonicity",
                max(excess) <= 1.0,
                value=max(excess),
                tolerance=1.0,
                detail=f"defect / ({settings.MONOTONICITY_C} h / sigma_min)",
            )
        )
    agree = [
        abs(m.value - predicted) <= DISTORTION_AGREEMENT * predicted
        for r in report.points
        for m, predicted in ((r.H, r.H_ratio_predicted), (r.H_inverse, r.H_predicted))
        if m is not None and m.value is not None and predicted is not None
    ]
    if agree:
        report.predicates.append(
            _predicate(
                "distortion_agreement",
                all(agree),
                value=float(sum(agree)),
                tolerance=DISTORTION_AGREEMENT,
            )
        )

    if u.mesh.kind == "sphere":
        branch = branch_and_degree(u, probes, seed=seed)
        report.branch = branch_summary(branch)
        report.predicates.append(_predicate("winding_sign", branch.sign_consistent))
        report.predicates.append(
            _predicate(
                "degree_defined",
                None if branch.degree is None else True,
                value=None if branch.degree is None else float(branch.degree),
                detail="; ".join(branch.diagnostics) or None,
            )
        )
        verdict = energy_area_verdict(u, seed=seed)
        report.energy_area = energy_area_summary(verdict)
        report.predicates.append(
            _predicate("area_bound", verdict.area_bound and verdict.covered_bound, value=verdict.area)
        )
    return profiles


def _uniformize_verdict(report: ReportDocument) -> str:
    branch = report.branch
    if branch is None or branch.degree is None:
        return "failed (degree undetermined)"
    if branch.verdict == "homeomorphism":
        return "uniformized (degree 1)"
    if abs(branch.degree) >= 2:
        return f"branched cover (degree {abs(branch.degree)})"
    return f"failed ({'; '.join(branch.diagnostics) or branch.verdict})"


# --- uniformize ---


def builtin_correspondence(reference: str, level: int) -> Dict[int, SurfacePoint]:
    """Coarse correspondence for the bundled sphere targets."""
    if not reference.startswith(FIXTURE_PREFIX):
        raise InvalidInputError(
            f"no built-in correspondence for {reference}; use a bundled sphere target", MODULE
        )
    target = fixtures.fixture_target(reference[len(FIXTURE_PREFIX) :])
    if not isinstance(target, fixtures.PolarTarget) or target.pole is None:
        raise InvalidInputError(f"{reference} is not a bundled sphere target", MODULE)
    coarse = build_sphere_mesh(level)
    return dict(enumerate(fixtures.sphere_identity(coarse, target).images))


@traceable("pipeline.uniformize")
def cmd_uniformize(manifest: RunManifest, write: bool = True) -> RunResult:
    surface, ref = load_target(manifest.target)
    if surface.topology != "sphere":
        raise InvalidInputError("uniformization needs a sphere target", MODULE)
    config = SolverConfig(**manifest.solver)
    levels = sorted(set(manifest.levels))
    report = ReportDocument(command="uniformize", target=ref, seed=manifest.seed)

    if levels[0] < MIN_SPHERE_LEVEL:
        raise InvalidInputError(f"sphere levels start at {MIN_SPHERE_LEVEL}", MODULE)
    coarse_level = MIN_SPHERE_LEVEL
    correspondence = builtin_correspondence(ref, coarse_level)
    u = initial_map(build_sphere_mesh(levels[0]), surface, correspondence, coarse_level)
    report.flags["initial_lipschitz"] = u.flags.get("lipschitz")
    for i, level in enumerate(levels):
        if i > 0:
            u = prolong(u, build_sphere_mesh(level))
        u = solve_closed(u, config, pins=manifest.pins)
        report.levels.append(level_row(u))
        logger.info("level_done", level=level, energy=report.levels[-1].energy)

    finest = report.levels[-1]
    report.predicates.append(_predicate("converged", finest.converged, value=float(finest.sweeps)))
    report.predicates.append(
        _predicate(
            "gap_ratio",
            finest.gap <= GAP_RATIO_TOL * finest.energy,
            value=finest.gap / finest.energy,
            tolerance=GAP_RATIO_TOL,
        )
    )
    probes = select_probes(u, manifest.probes, manifest.seed)
    profiles = analyze_map(u, probes, manifest.seed, report)
    report.verdict = _uniformize_verdict(report)
    result = RunResult(report, exit_status(report), map=u)
    if write:
        result.written = _write_outputs(report, manifest.out_dir, profiles, u, ref)
    return result


# --- dirichlet fixtures ---


DIRICHLET_FIXTURES = ("power", "cone", "affine")


def dirichlet_fixture(
    name: str,
    level: int,
    m: float = 2.0,
    beta: float = 1.5,
    a: complex = 1.5 + 0j,
    b: complex = 0.5 + 0j,
) -> Tuple[PiecewiseMap, float]:
    """Closed-form map on the disk and the order expected at the origin."""
    mesh = build_disk_mesh(level)
    if name == "power":
        return fixtures.power_map(mesh, fixtures.flat_plane(), m), float(m)
    if name == "cone":
        return fixtures.cone_model_map(mesh, fixtures.flat_cone(beta)), float(beta)
    if name == "affine":
        return fixtures.affine_map(mesh, fixtures.flat_plane(), a, b), 1.0
    raise InvalidInputError(f"unknown Dirichlet fixture {name!r}", MODULE)


@traceable("pipeline.dirichlet")
def cmd_dirichlet(
    name: str,
    level: int,
    seed: int,
    out_dir: Optional[str] = None,
    config: Optional[SolverConfig] = None,
    **params: Any,
) -> RunResult:
    exact, expected = dirichlet_fixture(name, level, **params)
    mesh, surface = exact.mesh, exact.surface
    problem = DirichletProblem(
        mesh=mesh,
        surface=surface,
        trace=[exact.images[int(v)] for v in mesh.boundary],
        center=SurfacePoint.at_vertex(surface, 0),
    )
    u = solve_dirichlet(problem, config)
    report = ReportDocument(command="dirichlet", target=f"{name}:{surface.name}", seed=seed)
    report.levels.append(level_row(u))
    error = max(local_distance(surface, p, q) for p, q in zip(u.images, exact.images))
    report.flags["max_error"] = error

    profiles = analyze_map(u, [0j], seed, report)
    origin = report.points[0]
    order = origin.order.value if origin.order is not None else None
    report.predicates.append(
        _predicate(
            "order_at_origin",
            None if order is None else abs(order - expected) <= ORDER_TOL * expected,
            value=order,
            tolerance=ORDER_TOL * expected,
        )
    )
    if name == "cone" and origin.k is not None:
        report.predicates.append(
            _predicate("cone_stretch", origin.k < settings.CONFORMAL_K_TOL, value=origin.k)
        )
        ratio = (origin.alpha or math.nan) / (origin.beta or math.nan)
        report.predicates.append(
            _predicate(
                "ratio_integral",
                abs(ratio - round(ratio)) <= settings.INTEGRALITY_TOL if math.isfinite(ratio) else None,
                value=ratio,
                tolerance=settings.INTEGRALITY_TOL,
            )
        )
    if name == "affine":
        k = abs(params.get("b", 0.5 + 0j)) / abs(params.get("a", 1.5 + 0j))
        h = origin.H.value if origin.H is not None else None
        target = H_of_k(k)
        report.predicates.append(
            _predicate(
                "distortion",
                None if h is None else abs(h - target) <= H_TOL * target,
                value=h,
                tolerance=H_TOL * target,
            )
        )
    report.verdict = "pass" if report.passed else ("unresolved" if report.passed is None else "fail")
    result = RunResult(report, exit_status(report), map=u)
    if out_dir is not None:
        result.written = _write_outputs(report, out_dir, profiles, u, None)
    return result


# --- analyze / mobius / report ---


@traceable("pipeline.analyze_command")
def cmd_analyze(
    map_path: str,
    points: Sequence[PointSpec] = (),
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    policy: Optional[ProbePolicy] = None,
) -> RunResult:
    seed = settings.DEFAULT_SEED if seed is None else seed
    u = load_map(map_path)
    if points:
        probes = [_center(p, u.mesh.kind) for p in points]
    else:
        probes = select_probes(u, policy or ProbePolicy(), seed)
    report = ReportDocument(command="analyze", target=u.surface.name, seed=seed)
    report.levels.append(level_row(u))
    profiles = analyze_map(u, probes, seed, report)
    report.verdict = _uniformize_verdict(report) if u.mesh.kind == "sphere" else "analyzed"
    result = RunResult(report, exit_status(report), map=u)
    if out_dir is not None:
        result.written = _write_outputs(report, out_dir, profiles, None, None)
    return result


@traceable("pipeline.mobius")
def cmd_mobius(
    path_a: str,
    path_b: str,
    tolerance: Optional[float] = None,
    seed: Optional[int] = None,
    samples: int = 60,
) -> RunResult:
    u = load_map(path_a)
    v = load_map(path_b)
    fit = mobius_check(u, v, samples=samples, seed=seed, tolerance=tolerance)
    report = ReportDocument(command="mobius", target=u.surface.name, seed=seed)
    report.mobius_residual = Measurement(value=fit.rms, tolerance=fit.tolerance)
    report.flags["max_error"] = fit.max_error
    report.flags["matrix"] = [[str(complex(z)) for z in row] for row in fit.matrix]
    report.predicates.append(
        Predicate(name="mobius_residual", passed=fit.passed, value=fit.rms, tolerance=fit.tolerance)
    )
    report.verdict = "unique up to Moebius" if fit.passed else "not Moebius related"
    return RunResult(report, exit_status(report))


def cmd_report(report_path: str, out_dir: Optional[str] = None) -> Tuple[str, RunResult]:
    report = load_report(report_path)
    result = RunResult(report, exit_status(report))
    if out_dir is not None:
        result.written = report_service.write_tables(report, out_dir)
    return report_service.render(report), result


def _write_outputs(
    report: ReportDocument,
    out_dir: str,
    profiles: Sequence[Dict[str, Any]],
    u: Optional[PiecewiseMap],
    target_ref: Optional[str],
) -> List[Path]:
    out = Path(out_dir)
    written = [save_report(report, out / "report.json")]
    if u is not None:
        written.append(save_map(u, out / "map.json", target_ref))
    written.extend(report_service.write_tables(report, out, profiles))
    return written
