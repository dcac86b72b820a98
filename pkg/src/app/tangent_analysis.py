"""Blow-up analysis of a map at a domain point.

Disks around the point are taken in conformal coordinates: the plane itself
for disk domains, a rotated stereographic chart for the sphere. The order
``ord(s) = s E(s) / I(s)`` compares the energy inside the disk of radius
``s`` with the squared distances to the centre image along its boundary.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from scipy.optimize import minimize_scalar
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from app.domain_mesh import (
    DomainMesh,
    align_rotation,
    chart0,
    chart0_inverse,
    chart1_inverse,
    locate,
)
from app.energy_forms import PiecewiseMap, pullback_field, subdivision_cells
from app.geom_kernel import TWO_PI, cone_distances
from app.target_surface import (
    DistanceEngine,
    SurfacePoint,
    TangentConeChart,
    local_distance,
)
from core.config import settings
from core.exceptions import (
    DegenerateMapError,
    InvalidInputError,
    LocalityError,
    ResolutionError,
)
from utils.telemetry.decorators import traceable

logger = structlog.get_logger()

MODULE = "tangent_analysis"
ENERGY_CELLS = 8
BLOWUP_RADII = (0.25, 0.5, 1.0)

Center = Union[int, complex, Sequence[float]]


class LocalDisk:
    """Conformal coordinates ``w`` centred at a domain point."""

    def __init__(self, mesh: DomainMesh, center: Center):
        self.mesh = mesh
        lengths = np.linalg.norm(
            mesh.positions[mesh.edges[:, 0]] - mesh.positions[mesh.edges[:, 1]], axis=1
        )
        if mesh.kind == "disk":
            if isinstance(center, (int, np.integer)):
                x = mesh.positions[int(center)]
                self.center = complex(x[0], x[1])
            elif np.ndim(center) == 0:
                self.center = complex(center)
            else:
                self.center = complex(center[0], center[1])
            if abs(self.center) > 1.0 + 1e-12:
                raise InvalidInputError(f"centre {self.center} lies outside the disk", MODULE)
            self.rotation = None
            self.cell = float(np.median(lengths))
            self.reach = 1.0 - abs(self.center)
        else:
            if isinstance(center, (int, np.integer)):
                x = mesh.positions[int(center)]
            else:
                x = np.asarray(center, dtype=float)
                if x.shape != (3,):
                    raise InvalidInputError("sphere centres are unit 3-vectors", MODULE)
                x = x / np.linalg.norm(x)
            self.center = x
            self.rotation = align_rotation(x, np.array([0.0, 0.0, -1.0]))
            # chart0 doubles lengths at its centre
            self.cell = 0.5 * float(np.median(lengths))
            self.reach = 1.0

    def to_domain(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        if self.rotation is None:
            z = self.center + w
            return np.stack([z.real, z.imag, np.zeros_like(z.real)], axis=-1)
        return chart0_inverse(w) @ self.rotation

    def from_domain(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.rotation is None:
            return x[..., 0] + 1j * x[..., 1] - self.center
        y = x @ self.rotation.T
        with np.errstate(divide="ignore", invalid="ignore"):
            return chart0(y)

    def fits(self, radius: float) -> bool:
        return radius <= self.reach + 1e-12


class MapSampler:
    """Shared evaluation state for analyses of one frozen map."""

    def __init__(self, u: PiecewiseMap):
        self.map = u
        mesh = u.mesh
        forms = pullback_field(u)
        self.forms = forms
        self.density = forms.trace * forms.areas
        self.gap_density = (np.abs(forms.p11 - forms.p22) + 2.0 * np.abs(forms.p12)) * forms.areas
        centers, _ = subdivision_cells(ENERGY_CELLS)
        w = mesh.chart_coords @ centers.T
        if mesh.kind == "disk":
            pts = np.stack([w.real, w.imag, np.zeros_like(w.real)], axis=-1)
        else:
            pts = np.where(
                (mesh.face_chart == 0)[:, None, None], chart0_inverse(w), chart1_inverse(w)
            )
        self.cell_points = pts
        self._engine: Optional[DistanceEngine] = None

    def disk(self, center: Center) -> LocalDisk:
        return LocalDisk(self.map.mesh, center)

    def face_fractions(self, disk: LocalDisk, radius: float) -> np.ndarray:
        r = np.abs(disk.from_domain(self.cell_points))
        return np.mean(np.nan_to_num(r, nan=np.inf) < radius, axis=1)

    def energy_in(self, disk: LocalDisk, radius: float) -> float:
        return float(np.sum(self.density * self.face_fractions(disk, radius)))

    def gap_in(self, disk: LocalDisk, radius: float) -> float:
        return float(np.sum(self.gap_density * self.face_fractions(disk, radius)))

    def evaluate(self, disk: LocalDisk, w: np.ndarray) -> List[SurfacePoint]:
        out = []
        for x in disk.to_domain(np.atleast_1d(w)):
            hit = locate(self.map.mesh, x)
            if hit is None:
                raise InvalidInputError(f"sample {x} lies outside the domain", MODULE)
            out.append(self.map.evaluate(*hit))
        return out

    def distance(self, p: SurfacePoint, q: SurfacePoint) -> float:
        try:
            return local_distance(self.map.surface, p, q)
        except LocalityError:
            if self._engine is None:
                self._engine = DistanceEngine(self.map.surface)
            return self._engine.distance(p, q)

    def circle_density(self, disk: LocalDisk, radius: float, n: int) -> float:
        """Mean of ``|du|^2 / 2`` on a circle, in the disk's own coordinate."""
        mesh = self.map.mesh
        w = radius * np.exp(1j * TWO_PI * np.arange(n) / n)
        h = 1e-6 * max(radius, 1e-3)
        values = []
        for x, y in zip(disk.to_domain(w), disk.to_domain(w + h)):
            hit = locate(mesh, x)
            if hit is None:
                raise InvalidInputError(f"sample {x} lies outside the domain", MODULE)
            f = hit[0]
            chart = int(mesh.face_chart[f])
            scale = abs(mesh.point_in_chart(y, chart) - mesh.point_in_chart(x, chart)) / h
            values.append(0.5 * float(self.forms.trace[f]) * scale**2)
        return float(np.mean(values))

    def circle(self, disk: LocalDisk, radius: float, n: int) -> Tuple[np.ndarray, List[SurfacePoint]]:
        theta = TWO_PI * np.arange(n) / n
        return theta, self.evaluate(disk, radius * np.exp(1j * theta))


# --- order ---


@dataclass
class OrderProfile:
    center: Any
    radii: np.ndarray
    energy: np.ndarray
    boundary_integral: np.ndarray
    order: np.ndarray
    mu: np.ndarray
    extrapolated: float
    rate: Optional[float]
    monotonicity_defect: float
    cell: float = 0.0
    dropped: List[float] = field(default_factory=list)

    @property
    def defect_bound(self) -> float:
        """Allowed decrease of the order between radii, ``C h / sigma_min``."""
        return settings.MONOTONICITY_C * self.cell / float(np.min(self.radii))

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"sigma": float(s), "energy": float(e), "boundary_integral": float(i), "order": float(o), "mu": float(m)}
            for s, e, i, o, m in zip(self.radii, self.energy, self.boundary_integral, self.order, self.mu)
        ]


def default_radii(disk: LocalDisk, count: int = 6) -> List[float]:
    top = min(0.9 * disk.reach, 0.8)
    return [top * 0.75**i for i in range(count)]


def richardson(radii: Sequence[float], values: Sequence[float]) -> Tuple[float, Optional[float]]:
    """Limit at zero radius from the three smallest radii, fitting the rate."""
    if len(values) == 0:
        raise ResolutionError("no resolved radius", MODULE)
    order = np.argsort(radii)
    s = np.asarray(radii, dtype=float)[order]
    v = np.asarray(values, dtype=float)[order]
    if len(v) < 3:
        return float(v[0]), None
    d1, d2 = v[1] - v[0], v[2] - v[1]
    q1, q2 = s[1] / s[0], s[2] / s[1]
    if abs(d1) < 1e-14 or d2 / d1 <= 0 or abs(q1 - q2) > 1e-9 * q1:
        return float(v[0]), None
    gamma = math.log(d2 / d1) / math.log(q1)
    if not gamma > 0:
        return float(v[0]), None
    limit = v[0] - d1 / (q1**gamma - 1.0)
    if abs(limit - v[0]) > 3.0 * abs(v[2] - v[0]):
        return float(v[0]), gamma
    return float(limit), gamma


@traceable("analysis.order_profile")
def order_profile(
    u: PiecewiseMap,
    center: Center,
    radii: Optional[Sequence[float]] = None,
    sampler: Optional[MapSampler] = None,
) -> OrderProfile:
    sampler = sampler or MapSampler(u)
    disk = sampler.disk(center)
    radii = sorted(default_radii(disk) if radii is None else radii, reverse=True)
    floor = settings.MIN_RADIUS_CELLS * disk.cell
    kept: List[float] = []
    dropped: List[float] = []
    for s in radii:
        (kept if s >= floor and disk.fits(s) else dropped).append(float(s))
    if dropped:
        logger.warning("radii_dropped", radii=dropped, floor=floor, reach=disk.reach)
    if not kept:
        raise ResolutionError(f"every radius is below {floor:.4g} or leaves the domain", MODULE)

    base = sampler.evaluate(disk, np.array([0j]))[0]
    n = settings.CIRCLE_SAMPLES
    energy, integral = [], []
    for s in kept:
        _, pts = sampler.circle(disk, s, n)
        d2 = np.array([sampler.distance(base, p) ** 2 for p in pts])
        integral.append(s * TWO_PI * float(d2.mean()))
        energy.append(sampler.energy_in(disk, s))
    energy_a, integral_a = np.array(energy), np.array(integral)
    if np.any(integral_a <= 0):
        raise DegenerateMapError("map is constant on a sampled circle", MODULE)
    sig = np.array(kept)
    order = sig * energy_a / integral_a
    mu = np.sqrt(integral_a / sig)

    ascending = np.argsort(sig)
    o = order[ascending]
    defect = float(max(0.0, np.max(o[:-1] - o[1:]))) if len(o) > 1 else 0.0
    limit, rate = richardson(sig, order)
    logger.debug(
        "order_profile",
        radii=len(kept),
        order_min_radius=float(o[0]),
        extrapolated=limit,
        defect=defect,
    )
    return OrderProfile(
        center=center,
        radii=sig,
        energy=energy_a,
        boundary_integral=integral_a,
        order=order,
        mu=mu,
        extrapolated=limit,
        rate=rate,
        monotonicity_defect=defect,
        cell=disk.cell,
        dropped=dropped,
    )


# --- blow-ups ---


@dataclass
class BlowupTrace:
    sigma: float
    mu: float
    beta: float
    radii: Tuple[float, ...]
    theta: np.ndarray
    rho: np.ndarray
    direction: np.ndarray
    normalization: float
    scaling_exponent: float


@traceable("analysis.blowup")
def blowup_map(
    u: PiecewiseMap,
    center: Center,
    sigma: float,
    samples: Optional[int] = None,
    sampler: Optional[MapSampler] = None,
) -> BlowupTrace:
    """Normalised traces of ``u(sigma x)`` on circles of radius 1/4, 1/2 and 1."""
    sampler = sampler or MapSampler(u)
    disk = sampler.disk(center)
    if not disk.fits(sigma):
        raise ResolutionError(f"sigma {sigma} leaves the domain", MODULE)
    if sigma * BLOWUP_RADII[0] < disk.cell:
        raise ResolutionError(f"sigma {sigma} is below the mesh resolution", MODULE)
    n = samples or settings.TRACE_POINTS
    base = sampler.evaluate(disk, np.array([0j]))[0]
    chart = TangentConeChart(u.surface, base)
    rho = np.zeros((len(BLOWUP_RADII), n))
    direction = np.zeros((len(BLOWUP_RADII), n))
    theta = TWO_PI * np.arange(n) / n
    for i, r in enumerate(BLOWUP_RADII):
        for j, p in enumerate(sampler.evaluate(disk, sigma * r * np.exp(1j * theta))):
            try:
                rho[i, j], direction[i, j] = chart.log(p)
            except LocalityError as exc:
                raise ResolutionError(
                    f"sigma {sigma} too large: the image leaves the tangent chart ({exc.detail})", MODULE
                ) from exc
    mu = math.sqrt(TWO_PI * float(np.mean(rho[-1] ** 2)))
    if mu <= 0:
        raise DegenerateMapError("blow-up of a constant map", MODULE)
    rho = rho / mu
    normalization = TWO_PI * float(np.mean(rho[-1] ** 2))
    rms = np.sqrt(np.mean(rho**2, axis=1))
    slopes = [
        math.log(rms[i + 1] / rms[i]) / math.log(BLOWUP_RADII[i + 1] / BLOWUP_RADII[i])
        for i in range(len(BLOWUP_RADII) - 1)
        if rms[i] > 0
    ]
    exponent = float(np.mean(slopes)) if slopes else math.nan
    return BlowupTrace(
        sigma=sigma,
        mu=mu,
        beta=chart.beta,
        radii=BLOWUP_RADII,
        theta=theta,
        rho=rho,
        direction=direction,
        normalization=normalization,
        scaling_exponent=exponent,
    )


# --- homogeneous model fit ---


@dataclass
class TangentFit:
    kind: str
    alpha: float
    beta: float
    k: float
    c: float
    rotation: float
    target_rotation: float
    orientation: int
    ratio: int
    residual: float
    model_normalization: float
    flags: Dict[str, Any] = field(default_factory=dict)

    @property
    def integral(self) -> bool:
        return abs(self.alpha / self.beta - round(self.alpha / self.beta)) <= settings.INTEGRALITY_TOL


def _model_shape(alpha_model: float, s: int, k: float, phi0: float, theta: np.ndarray):
    psi = s * alpha_model * theta + phi0
    re, im = (1.0 + k) * np.cos(psi), (1.0 - k) * np.sin(psi)
    amp = np.hypot(re, im)
    wrapped = np.mod(np.arctan2(im, re) - psi + math.pi, TWO_PI) - math.pi
    return amp, psi + wrapped


def _fit_given(
    trace: BlowupTrace, alpha: float, n: int, s: int, k: float, phi0: float
) -> Tuple[float, float, float]:
    """Residual, amplitude and target rotation for fixed shape parameters."""
    beta = trace.beta
    radial = np.asarray(trace.radii)[:, None] ** alpha
    amp, ang = _model_shape(n * beta, s, k, phi0, trace.theta)
    shape = radial * amp[None, :]
    C = float(np.sum(trace.rho * shape) / max(np.sum(shape**2), 1e-300))
    weights = trace.rho**2
    phase = np.sum(weights * np.exp(1j * (trace.direction - ang[None, :]) / beta))
    omega = beta * math.atan2(phase.imag, phase.real)
    pred_dir = ang[None, :] + omega
    d = cone_distances(trace.rho, trace.direction, C * shape, pred_dir, beta)
    residual = math.sqrt(float(np.sum(d**2)) / max(float(np.sum(trace.rho**2)), 1e-300))
    return residual, C, omega


@traceable("analysis.fit_tangent_map")
def fit_tangent_map(trace: BlowupTrace) -> TangentFit:
    """Fit the homogeneous models ``c z^(a/b)`` and their stretched variants.

    The integer ``a/b`` is enumerated with both orientations; the stretch
    ``k`` is found by bounded scalar search on a grid of domain rotations.
    """
    beta = trace.beta
    alpha = trace.scaling_exponent
    if not math.isfinite(alpha) or alpha <= 0:
        raise DegenerateMapError("blow-up traces do not scale", MODULE)
    best: Optional[Tuple[float, int, int, float, float]] = None
    grid = math.pi * np.arange(settings.ROTATION_GRID) / settings.ROTATION_GRID
    step = math.pi / settings.ROTATION_GRID

    def best_k(n: int, s: int, phi0: float) -> Tuple[float, float]:
        res = minimize_scalar(
            lambda k: _fit_given(trace, alpha, n, s, k, phi0)[0],
            bounds=(0.0, 0.999),
            method="bounded",
            options={"xatol": 1e-6},
        )
        k0 = _fit_given(trace, alpha, n, s, 0.0, phi0)[0]
        return (float(res.x), float(res.fun)) if res.fun < k0 else (0.0, k0)

    for n in range(1, settings.MAX_ORDER_RATIO + 1):
        for s in (1, -1):
            scores = [(best_k(n, s, phi0), phi0) for phi0 in grid]
            (k, res), phi0 = min(scores, key=lambda item: item[0][1])
            refined = minimize_scalar(
                lambda p: best_k(n, s, p)[1],
                bounds=(phi0 - step, phi0 + step),
                method="bounded",
                options={"xatol": 1e-6},
            )
            if refined.fun < res:
                phi0 = float(refined.x)
                k, res = best_k(n, s, phi0)
            if best is None or res < best[0] - 1e-12:
                best = (res, n, s, k, phi0)

    assert best is not None
    residual, n, s, k, phi0 = best
    _, C, omega = _fit_given(trace, alpha, n, s, k, phi0)
    amp, _ = _model_shape(n * beta, s, k, phi0, trace.theta)
    normalization = TWO_PI * float(np.mean((C * amp) ** 2))

    flags: Dict[str, Any] = {}
    if residual > settings.FIT_TOL:
        kind = "unclassified"
        flags["residual_above_tolerance"] = True
    elif k > settings.DEGENERATE_K:
        kind = "degenerate"
        flags["possibly_degenerate"] = True
    elif k < settings.CONFORMAL_K_TOL:
        kind = "conformal"
    else:
        kind = "stretched"
    c = C ** (1.0 / beta) if kind == "conformal" else (2.0 * C * math.sqrt(k)) ** (1.0 / beta)
    if abs(alpha / beta - n) > settings.INTEGRALITY_TOL:
        flags["non_integral_ratio"] = alpha / beta
    logger.info(
        "tangent_fit",
        kind=kind,
        alpha=alpha,
        beta=beta,
        ratio=n,
        k=k,
        residual=residual,
    )
    return TangentFit(
        kind=kind,
        alpha=alpha,
        beta=beta,
        k=k if kind != "conformal" else 0.0,
        c=c,
        rotation=phi0,
        target_rotation=omega,
        orientation=s,
        ratio=n,
        residual=residual,
        model_normalization=normalization,
        flags=flags,
    )


# --- conformal factor ---


@dataclass
class ConformalFactorProbe:
    center: Any
    radii: np.ndarray
    disk_means: np.ndarray
    circle_means: np.ndarray
    distance_ratios: np.ndarray
    disk_mean: float
    circle_mean: float
    distance_ratio: float
    order: float
    local_gap: float
    applicable: bool
    consistent: bool


def _limit_in_square(radii: np.ndarray, values: np.ndarray) -> float:
    """Value at zero radius assuming ``v(s) = v0 + A s^2``."""
    order = np.argsort(radii)
    s, v = radii[order], values[order]
    if len(v) < 2:
        return float(v[0])
    return float((v[0] * s[1] ** 2 - v[1] * s[0] ** 2) / (s[1] ** 2 - s[0] ** 2))


@traceable("analysis.conformal_factor")
def conformal_factor_probe(
    u: PiecewiseMap,
    center: Center,
    radii: Optional[Sequence[float]] = None,
    gap_tol: float = 0.1,
    consistency_tol: float = 0.1,
    sampler: Optional[MapSampler] = None,
) -> ConformalFactorProbe:
    """Three estimates of the conformal factor at a point."""
    sampler = sampler or MapSampler(u)
    profile = order_profile(u, center, radii, sampler)
    disk = sampler.disk(center)
    base = sampler.evaluate(disk, np.array([0j]))[0]
    sig = profile.radii
    disk_means = profile.energy / (2.0 * math.pi * sig**2)
    circle_means = np.array([sampler.circle_density(disk, float(s), settings.CIRCLE_SAMPLES) for s in sig])
    ratios = []
    for s in sig:
        _, pts = sampler.circle(disk, float(s), settings.CIRCLE_SAMPLES)
        ratios.append(float(np.mean([sampler.distance(base, p) ** 2 for p in pts])) / s**2)
    ratio_a = np.array(ratios)
    top = float(sig.max())
    energy = sampler.energy_in(disk, top)
    local_gap = sampler.gap_in(disk, top) / energy if energy > 0 else 0.0
    estimates = (
        _limit_in_square(sig, disk_means),
        _limit_in_square(sig, circle_means),
        _limit_in_square(sig, ratio_a),
    )
    scale = max(max(abs(e) for e in estimates), 1e-12)
    consistent = (max(estimates) - min(estimates)) <= consistency_tol * scale
    applicable = local_gap <= gap_tol
    if not applicable:
        logger.warning("conformal_probe_inapplicable", local_gap=local_gap)
    return ConformalFactorProbe(
        center=center,
        radii=sig,
        disk_means=disk_means,
        circle_means=circle_means,
        distance_ratios=ratio_a,
        disk_mean=estimates[0],
        circle_mean=estimates[1],
        distance_ratio=estimates[2],
        order=profile.extrapolated,
        local_gap=local_gap,
        applicable=applicable,
        consistent=consistent,
    )


# --- global structure of the order function ---


@dataclass
class HighOrderClusters:
    threshold: float
    radius: float
    orders: Dict[int, float]
    clusters: List[List[int]]


def vertex_orders(
    u: PiecewiseMap,
    vertices: Optional[Sequence[int]] = None,
    radius: Optional[float] = None,
    sampler: Optional[MapSampler] = None,
) -> Tuple[Dict[int, float], float]:
    """``ord`` at a single radius for every vertex whose disk fits."""
    sampler = sampler or MapSampler(u)
    mesh = u.mesh
    if vertices is None:
        vertices = range(mesh.n_vertices)
    out: Dict[int, float] = {}
    for v in vertices:
        disk = sampler.disk(int(v))
        sigma = radius or (settings.MIN_RADIUS_CELLS + 1.0) * disk.cell
        if not disk.fits(sigma):
            continue
        try:
            out[int(v)] = float(order_profile(u, int(v), [sigma], sampler).order[0])
        except (ResolutionError, DegenerateMapError, InvalidInputError, LocalityError) as exc:
            logger.debug("vertex_order_skipped", vertex=int(v), detail=str(exc))
    used = radius if radius is not None else (settings.MIN_RADIUS_CELLS + 1.0) * LocalDisk(mesh, 0).cell
    return out, used


def high_order_clusters(
    u: PiecewiseMap,
    threshold: float = 1.5,
    radius: Optional[float] = None,
    vertices: Optional[Sequence[int]] = None,
) -> HighOrderClusters:
    """Vertices with ``ord >= threshold`` grouped by mesh adjacency."""
    orders, used = vertex_orders(u, vertices, radius)
    high = sorted(v for v, o in orders.items() if o >= threshold)
    clusters: List[List[int]] = []
    if high:
        slot = {v: i for i, v in enumerate(high)}
        rows, cols = [], []
        for a, b in u.mesh.edges:
            if int(a) in slot and int(b) in slot:
                rows.append(slot[int(a)])
                cols.append(slot[int(b)])
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(high), len(high)))
        count, labels = connected_components(graph, directed=False)
        clusters = [[high[i] for i in np.flatnonzero(labels == c)] for c in range(count)]
    logger.info("high_order_clusters", threshold=threshold, clusters=len(clusters), probed=len(orders))
    return HighOrderClusters(threshold=threshold, radius=used, orders=orders, clusters=clusters)


def semicontinuity_probe(
    u: PiecewiseMap,
    p0: Center,
    points: Sequence[Center],
    radius: float,
    tol: float = 0.1,
) -> List[Dict[str, Any]]:
    """``ord`` at points approaching ``p0`` next to ``ord(p0)``."""
    sampler = MapSampler(u)
    reference = float(order_profile(u, p0, [radius], sampler).order[0])
    origin = sampler.disk(p0)
    rows = []
    for p in points:
        disk = sampler.disk(p)
        x = disk.to_domain(np.array([0j]))[0]
        gap = float(abs(origin.from_domain(x)))
        order = float(order_profile(u, p, [radius], sampler).order[0])
        rows.append(
            {
                "point": p if np.ndim(p) == 0 else list(np.asarray(p, dtype=float)),
                "distance": gap,
                "order": order,
                "reference_order": reference,
                "bounded": order <= reference + tol,
            }
        )
    return rows
