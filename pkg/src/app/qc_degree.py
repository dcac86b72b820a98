"""Distortion, degree and uniqueness checks for frozen maps."""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.optimize import least_squares
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from app.domain_mesh import chart0
from app.energy_forms import (
    MapInverter,
    PiecewiseMap,
    conformality_gap,
    domain_point,
    edge_distances,
    hausdorff_area_estimate,
    pullback_field,
    total_area,
    total_energy,
)
from app.geom_kernel import TWO_PI, signed_offset
from app.tangent_analysis import Center, MapSampler, TangentFit
from app.target_surface import SurfacePoint, TangentConeChart, to_target_spec
from core.config import settings
from core.exceptions import (
    CurvatureDomainError,
    DegenerateMapError,
    InvalidInputError,
    LocalityError,
    NonInvertibleError,
    ResolutionError,
)
from utils.telemetry.decorators import traceable
from utils.telemetry.solver_metrics import solver_metrics

logger = structlog.get_logger()

MODULE = "qc_degree"


def H_of_k(k: float) -> float:
    """Distortion ``(1 + k) / (1 - k)`` of the stretched homogeneous model."""
    if not 0.0 <= k < 1.0:
        raise CurvatureDomainError(f"stretch {k} outside [0, 1)", MODULE)
    return (1.0 + k) / (1.0 - k)


# --- distortion ---


@dataclass
class HEstimate:
    point: Any
    radii: List[float]
    big: List[float]
    small: List[float]
    ratios: List[float]
    value: float
    infinite: bool = False
    predicted: Optional[float] = None

    @property
    def agrees(self) -> Optional[bool]:
        if self.predicted is None or self.infinite:
            return None
        return abs(self.value - self.predicted) <= 0.05 * self.predicted


@dataclass
class QCReport:
    estimates: List[HEstimate]
    sup_k: float
    global_H: float


def _ladder(radius: float) -> List[float]:
    return [radius, radius / 2.0, radius / 4.0]


def _ratio_value(big: List[float], small: List[float]) -> Tuple[List[float], float, bool]:
    ratios = [L / l if l > 0 else math.inf for L, l in zip(big, small)]
    # the two finest rungs of the ladder
    value = max(ratios[-2:])
    return ratios, value, not math.isfinite(value)


@traceable("analysis.h_estimate")
def H_estimate(
    u: PiecewiseMap,
    p: Center,
    radius: Optional[float] = None,
    samples: Optional[int] = None,
    sampler: Optional[MapSampler] = None,
) -> HEstimate:
    """Ratio of largest to smallest image distance over shrinking circles."""
    sampler = sampler or MapSampler(u)
    disk = sampler.disk(p)
    radius = radius or min(0.5 * disk.reach, 16.0 * disk.cell)
    ladder = _ladder(radius)
    if ladder[-1] < disk.cell:
        raise ResolutionError(f"radius {radius} too small for the mesh", MODULE)
    n = samples or settings.CIRCLE_SAMPLES
    base = sampler.evaluate(disk, np.array([0j]))[0]
    big, small = [], []
    for r in ladder:
        _, pts = sampler.circle(disk, r, n)
        d = np.array([sampler.distance(base, q) for q in pts])
        big.append(float(d.max()))
        small.append(float(d.min()))
    ratios, value, infinite = _ratio_value(big, small)
    if infinite:
        logger.warning("h_estimate_infinite", point=str(p))
    return HEstimate(p, ladder, big, small, ratios, value, infinite)


@traceable("analysis.h_estimate_inverse")
def H_estimate_inverse(
    u: PiecewiseMap,
    p: Center,
    radius: Optional[float] = None,
    samples: Optional[int] = None,
    inverter: Optional[MapInverter] = None,
) -> HEstimate:
    """Distortion of the inverse map at ``u(p)``, by preimages of target circles."""
    sampler = MapSampler(u)
    disk = sampler.disk(p)
    base = sampler.evaluate(disk, np.array([0j]))[0]
    chart = TangentConeChart(u.surface, base)
    inverter = inverter or MapInverter(u)
    if radius is None:
        radius = 4.0 * float(np.median(edge_distances(u)))
    n = samples or settings.CIRCLE_SAMPLES
    ladder = _ladder(radius)
    big, small = [], []
    for r in ladder:
        dist = []
        for t in np.arange(n) * (TWO_PI * chart.beta / n):
            try:
                q = chart.exp(r, float(t))
            except LocalityError as exc:
                raise ResolutionError(f"target circle {r} leaves the chart", MODULE) from exc
            found = inverter.preimages(q)
            if not found:
                raise NonInvertibleError(f"no preimage of a circle point at radius {r}", MODULE)
            w = disk.from_domain(np.array([x for x, _ in found]))
            dist.append(float(np.min(np.abs(w))))
        big.append(max(dist))
        small.append(min(dist))
    ratios, value, infinite = _ratio_value(big, small)
    return HEstimate(p, ladder, big, small, ratios, value, infinite)


def predicted_distortion(fit: TangentFit) -> Optional[float]:
    """Distortion ``H(k) ** (1 / alpha)`` of the fitted tangent map.

    Preimage radii of a target circle under ``c r^alpha amp(theta)`` scale
    as ``amp ** (-1 / alpha)``, so this is the value ``H_estimate_inverse``
    measures.
    """
    if fit.kind in ("unclassified", "degenerate"):
        return None
    return H_of_k(fit.k) ** (1.0 / fit.alpha)


def predicted_ratio(fit: TangentFit) -> Optional[float]:
    """Image-distance ratio ``H(k)`` on domain circles, the value ``H_estimate`` measures."""
    if fit.kind in ("unclassified", "degenerate"):
        return None
    return H_of_k(fit.k)


def qc_report(estimates: Sequence[HEstimate], fits: Sequence[TangentFit]) -> QCReport:
    ks = [f.k for f in fits if f.kind in ("conformal", "stretched")]
    sup_k = max(ks) if ks else 0.0
    return QCReport(list(estimates), sup_k, H_of_k(sup_k))


# --- winding and degree ---


@dataclass
class Winding:
    point: Any
    radius: float
    sweep: float
    value: int
    defect: float


@traceable("analysis.winding")
def winding_number(
    u: PiecewiseMap,
    p: Center,
    radius: Optional[float] = None,
    samples: Optional[int] = None,
    sampler: Optional[MapSampler] = None,
) -> Winding:
    """Signed turns of the image of a small circle around ``u(p)``."""
    sampler = sampler or MapSampler(u)
    disk = sampler.disk(p)
    radius = radius or settings.MIN_RADIUS_CELLS * disk.cell
    if not disk.fits(radius):
        raise ResolutionError(f"circle of radius {radius} leaves the domain", MODULE)
    base = sampler.evaluate(disk, np.array([0j]))[0]
    chart = TangentConeChart(u.surface, base)
    _, pts = sampler.circle(disk, radius, samples or settings.CIRCLE_SAMPLES)
    try:
        logs = np.array([chart.log(q) for q in pts])
    except LocalityError as exc:
        raise ResolutionError(f"image circle leaves the chart at radius {radius}", MODULE) from exc
    rho, direction = logs[:, 0], logs[:, 1]
    if np.all(rho <= 1e-14):
        raise DegenerateMapError("constant map has no winding number", MODULE)
    if np.any(rho <= 1e-14):
        raise ResolutionError("image circle passes through the centre image", MODULE)
    steps = signed_offset(np.roll(direction, -1), direction, chart.beta)
    sweep = float(np.sum(steps))
    turns = sweep / (TWO_PI * chart.beta)
    value = int(round(turns))
    defect = abs(turns - value)
    if defect > settings.WINDING_TOL:
        raise ResolutionError(f"sweep of {turns:.3f} turns is not an integer", MODULE)
    return Winding(p, radius, sweep, value, defect)


@dataclass
class BranchReport:
    windings: List[Winding]
    branch_points: List[Any]
    degree: Optional[int]
    fiber_counts: List[int]
    sign_consistent: bool
    verdict: str
    unresolved: List[Any] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"point": _label(w.point), "radius": w.radius, "winding": w.value, "defect": w.defect}
            for w in self.windings
        ]


def _label(p: Any) -> Any:
    if isinstance(p, (int, np.integer)):
        return int(p)
    if np.ndim(p) == 0:
        return str(complex(p))
    return [float(x) for x in np.asarray(p)]


def random_face_points(u: PiecewiseMap, count: int, rng: np.random.Generator) -> List[Tuple[int, np.ndarray]]:
    """Faces and strictly interior barycentric weights, chosen uniformly."""
    faces = rng.integers(0, u.mesh.n_faces, size=count)
    bary = rng.dirichlet(np.ones(3), size=count)
    bary = 0.9 * bary + 0.1 / 3.0
    return [(int(f), b) for f, b in zip(faces, bary)]


def fiber(u: PiecewiseMap, q: SurfacePoint, inverter: Optional[MapInverter] = None):
    """Domain points mapped to ``q`` with their orientation signs."""
    return (inverter or MapInverter(u)).preimages(q)


@traceable("analysis.branch_and_degree")
def branch_and_degree(
    u: PiecewiseMap,
    probes: Sequence[Center],
    seed: Optional[int] = None,
    fibers: int = 3,
    radius: Optional[float] = None,
) -> BranchReport:
    """Winding numbers at the probes, the branch set and the degree."""
    sampler = MapSampler(u)
    windings: List[Winding] = []
    unresolved: List[Any] = []
    for p in probes:
        try:
            windings.append(winding_number(u, p, radius, sampler=sampler))
        except (ResolutionError, InvalidInputError) as exc:
            logger.debug("winding_unresolved", point=_label(p), detail=exc.detail)
            unresolved.append(_label(p))
    signs = {int(np.sign(w.value)) for w in windings if w.value != 0}
    sign_consistent = len(signs) <= 1
    branch = [w.point for w in windings if abs(w.value) >= 2]
    diagnostics: List[str] = []
    if not sign_consistent:
        diagnostics.append("winding numbers change sign")

    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    inverter = MapInverter(u)
    cell = float(np.median(edge_distances(u)))
    separation = settings.FIBER_SEPARATION_CELLS * cell
    branch_values = [sampler.evaluate(sampler.disk(p), np.array([0j]))[0] for p in branch]
    counts: List[int] = []
    attempts = 0
    while len(counts) < fibers and attempts < 20 * fibers:
        attempts += 1
        f, b = random_face_points(u, 1, rng)[0]
        q = u.evaluate(f, b)
        if any(sampler.distance(q, v) < separation for v in branch_values):
            continue
        found = inverter.preimages(q)
        if not found:
            diagnostics.append(f"empty fiber over the image of face {f}")
            continue
        counts.append(int(round(sum(s for _, s in found))))
    degree: Optional[int] = None
    if counts and len(set(counts)) == 1:
        degree = counts[0]
    elif counts:
        diagnostics.append(f"fiber counts disagree: {counts}")
    else:
        diagnostics.append("no generic fiber found")

    if degree is None or not sign_consistent:
        verdict = "inconsistent"
    elif abs(degree) == 1 and not branch:
        verdict = "homeomorphism"
    elif abs(degree) >= 2:
        verdict = f"branched cover (degree {abs(degree)})"
    else:
        verdict = "inconsistent"
        diagnostics.append("degree one with branch points")
    logger.info(
        "branch_and_degree",
        probes=len(probes),
        branch_points=len(branch),
        degree=degree,
        verdict=verdict,
    )
    return BranchReport(
        windings=windings,
        branch_points=[_label(p) for p in branch],
        degree=degree,
        fiber_counts=counts,
        sign_consistent=sign_consistent,
        verdict=verdict,
        unresolved=unresolved,
        diagnostics=diagnostics,
    )


# --- energy and area ---


@dataclass
class MonotonicityReport:
    samples: int
    disconnected: int
    empty: int

    @property
    def monotone(self) -> bool:
        return self.disconnected == 0


def _face_graph(u: PiecewiseMap) -> Dict[int, List[int]]:
    adjacency: Dict[int, List[int]] = {}
    owners: Dict[int, List[int]] = {}
    for f, edges in enumerate(u.mesh.face_edges):
        for e in edges:
            owners.setdefault(int(e), []).append(f)
    for faces in owners.values():
        for a in faces:
            adjacency.setdefault(a, []).extend(b for b in faces if b != a)
    return adjacency


def monotonicity_test(
    u: PiecewiseMap,
    samples: Optional[int] = None,
    seed: Optional[int] = None,
    inverter: Optional[MapInverter] = None,
) -> MonotonicityReport:
    """Checks that preimages of random target points are edge-connected."""
    inverter = inverter or MapInverter(u)
    adjacency = _face_graph(u)
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    count = samples or settings.MONOTONICITY_SAMPLES
    disconnected = empty = 0
    for f, b in random_face_points(u, count, rng):
        faces = sorted({hit[0] for hit in inverter.fiber(u.evaluate(f, b))})
        if not faces:
            empty += 1
            continue
        if len(faces) == 1:
            continue
        slot = {g: i for i, g in enumerate(faces)}
        rows = [slot[a] for a in faces for c in adjacency.get(a, []) if c in slot]
        cols = [slot[c] for a in faces for c in adjacency.get(a, []) if c in slot]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(faces), len(faces)))
        n, _ = connected_components(graph, directed=False)
        if n > 1:
            disconnected += 1
    return MonotonicityReport(count, disconnected, empty)


@dataclass
class EnergyAreaVerdict:
    covered_area: float
    half_energy: float
    jacobian_area: float
    area: float
    gap: float
    tolerance: float
    area_bound: bool
    covered_bound: bool
    equality: bool
    monotone: bool
    classification: str


@traceable("analysis.energy_area")
def energy_area_verdict(
    u: PiecewiseMap, samples: Optional[int] = None, seed: Optional[int] = None
) -> EnergyAreaVerdict:
    """Compares the covered target area with half the energy."""
    forms = pullback_field(u)
    energy = total_energy(u, forms)
    half = 0.5 * energy
    area = total_area(u, forms)
    covered, jac = hausdorff_area_estimate(u)
    tol = settings.EQUALITY_TOL
    area_bound = area <= half + 1e-12 + 1e-9 * half
    covered_bound = covered <= half * (1.0 + tol)
    equality = abs(covered - half) <= tol * half
    monotone = monotonicity_test(u, samples, seed).monotone
    if not (area_bound and covered_bound):
        classification = "bound violated"
    elif equality and monotone:
        classification = "conformal monotone equality"
    elif equality:
        classification = "equality without monotonicity"
    else:
        classification = "strict inequality"
    solver_metrics.track_verdict("energy_area", area_bound and covered_bound)
    logger.info(
        "energy_area_verdict",
        covered=covered,
        half_energy=half,
        area=area,
        classification=classification,
    )
    return EnergyAreaVerdict(
        covered_area=covered,
        half_energy=half,
        jacobian_area=jac,
        area=area,
        gap=conformality_gap(u, forms),
        tolerance=tol,
        area_bound=area_bound,
        covered_bound=covered_bound,
        equality=equality,
        monotone=monotone,
        classification=classification,
    )


# --- Moebius uniqueness ---


@dataclass
class MobiusFit:
    matrix: np.ndarray
    rms: float
    max_error: float
    samples: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rms < self.tolerance


def homogeneous(x: np.ndarray) -> np.ndarray:
    """Homogeneous coordinates ``(Z1, Z2)`` with ``Z1 / Z2 = chart0(x)``."""
    x = np.asarray(x, dtype=float)
    a = np.stack([x[..., 0] - 1j * x[..., 1], (1.0 - x[..., 2]) + 0j], axis=-1)
    b = np.stack([(1.0 + x[..., 2]) + 0j, x[..., 0] + 1j * x[..., 1]], axis=-1)
    pick = np.linalg.norm(a, axis=-1) >= np.linalg.norm(b, axis=-1)
    return np.where(pick[..., None], a, b)


def from_homogeneous(Z: np.ndarray) -> np.ndarray:
    z1, z2 = Z[..., 0], Z[..., 1]
    m = np.abs(z1) ** 2 + np.abs(z2) ** 2
    c = z1 * np.conj(z2)
    return np.stack([2.0 * c.real, -2.0 * c.imag, np.abs(z1) ** 2 - np.abs(z2) ** 2], axis=-1) / m[..., None]


def apply_mobius(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    return from_homogeneous(homogeneous(x) @ M.T)


def _to_standard(z: np.ndarray) -> np.ndarray:
    """Matrix sending ``z[0], z[1], z[2]`` to ``0, 1, inf``."""
    z1, z2, z3 = z
    return np.array([[z2 - z3, -z1 * (z2 - z3)], [z2 - z1, -z3 * (z2 - z1)]], dtype=complex)


def three_point_mobius(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact transformation of three sphere points, in the lower chart."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a, b = chart0(src), chart0(dst)
    M = np.linalg.solve(_to_standard(b), _to_standard(a))
    return M / np.sqrt(np.linalg.det(M))


@traceable("analysis.mobius_check")
def mobius_check(
    u: PiecewiseMap,
    v: PiecewiseMap,
    samples: int = 60,
    seed: Optional[int] = None,
    tolerance: Optional[float] = None,
) -> MobiusFit:
    """Best Moebius transformation ``M`` with ``v(M(p)) = u(p)`` at sampled ``p``."""
    if u.mesh.kind != "sphere" or v.mesh.kind != "sphere":
        raise InvalidInputError("uniqueness is checked for sphere domains", MODULE)
    if u.surface is not v.surface and to_target_spec(u.surface) != to_target_spec(v.surface):
        raise InvalidInputError("maps have different targets", MODULE)
    rng = np.random.default_rng(settings.DEFAULT_SEED if seed is None else seed)
    inverter = MapInverter(v)
    src, dst = [], []
    for f, b in random_face_points(u, samples, rng):
        found = inverter.preimages(u.evaluate(f, b))
        if not found:
            raise NonInvertibleError(f"no preimage under the second map for face {f}", MODULE)
        src.append(domain_point(u.mesh, f, b))
        dst.append(found[0][0] / np.linalg.norm(found[0][0]))
    P, Q = np.array(src), np.array(dst)

    # spread the three initialisation points
    i0 = 0
    i1 = int(np.argmax(np.linalg.norm(P - P[i0], axis=1)))
    i2 = int(np.argmax(np.linalg.norm(np.cross(P - P[i0], P[i1] - P[i0]), axis=1)))
    M0 = three_point_mobius(P[[i0, i1, i2]], Q[[i0, i1, i2]])

    def residuals(params: np.ndarray) -> np.ndarray:
        M = (params[:4] + 1j * params[4:]).reshape(2, 2)
        det = np.linalg.det(M)
        return np.concatenate([(apply_mobius(M, P) - Q).ravel(), [det.real - 1.0, det.imag]])

    start = np.concatenate([M0.ravel().real, M0.ravel().imag])
    result = least_squares(residuals, start, method="lm", xtol=1e-14, ftol=1e-14)
    M = (result.x[:4] + 1j * result.x[4:]).reshape(2, 2)
    chords = np.linalg.norm(apply_mobius(M, P) - Q, axis=1)
    errors = 2.0 * np.arcsin(np.clip(chords / 2.0, 0.0, 1.0))
    tol = settings.MOBIUS_TOL if tolerance is None else tolerance
    fit = MobiusFit(
        matrix=M,
        rms=float(np.sqrt(np.mean(errors**2))),
        max_error=float(errors.max()),
        samples=samples,
        tolerance=tol,
    )
    solver_metrics.track_verdict("mobius", fit.passed)
    logger.info("mobius_check", rms=fit.rms, max_error=fit.max_error, passed=fit.passed)
    return fit
