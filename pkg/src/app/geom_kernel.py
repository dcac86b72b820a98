"""Constant-curvature trigonometry and comparison primitives.

Curvature is restricted to ``kappa >= 0``. A positive ``kappa`` is handled by
rescaling lengths onto the unit sphere, so two trigonometric backends (plane
and unit sphere) cover every case. All functions are pure.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import structlog

from core.config import settings
from core.exceptions import CurvatureDomainError, InvalidInputError, InvalidTriangleError

logger = structlog.get_logger()

TWO_PI = 2.0 * math.pi
MODULE = "geom_kernel"

Polar = Tuple[float, float]
ArrayLike = Union[float, np.ndarray]


def _curvature_scale(kappa: float) -> float:
    if kappa < 0:
        raise CurvatureDomainError(
            f"kappa={kappa} < 0: only plane and sphere model spaces are supported",
            MODULE,
        )
    return math.sqrt(kappa) if kappa > 0 else 0.0


def _check_triangle(a: float, b: float, c: float, kappa: float) -> None:
    if min(a, b, c) < 0 or not all(math.isfinite(x) for x in (a, b, c)):
        raise InvalidTriangleError(f"sides ({a}, {b}, {c}) must be finite and >= 0", MODULE)
    perimeter = a + b + c
    slack = 1e-12 * max(perimeter, 1.0)
    if a > b + c + slack or b > a + c + slack or c > a + b + slack:
        raise InvalidTriangleError(f"sides ({a}, {b}, {c}) violate the triangle inequality", MODULE)
    scale = _curvature_scale(kappa)
    if scale > 0 and perimeter * scale >= TWO_PI - slack:
        raise CurvatureDomainError(
            f"perimeter {perimeter} >= 2*pi/sqrt(kappa) for kappa={kappa}", MODULE
        )


@dataclass(frozen=True)
class ModelTriangle:
    a: float
    b: float
    c: float
    kappa: float = 0.0

    def __post_init__(self):
        _check_triangle(self.a, self.b, self.c, self.kappa)

    @property
    def perimeter(self) -> float:
        return self.a + self.b + self.c

    def angles(self) -> Tuple[float, float, float]:
        """Angles opposite the sides ``a``, ``b``, ``c``."""
        return (
            model_angle(self.b, self.c, self.a, self.kappa),
            model_angle(self.c, self.a, self.b, self.kappa),
            model_angle(self.a, self.b, self.c, self.kappa),
        )

    def area(self) -> float:
        return triangle_area(self.a, self.b, self.c, self.kappa)


@dataclass(frozen=True)
class ConeChart:
    """Flat cone of total angle ``2*pi*beta``.

    ``audit=True`` admits ``beta < 1`` so that positively curved cones can be
    used as counterexamples; such charts never describe a valid target.
    """

    beta: float
    audit: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise CurvatureDomainError(f"cone parameter {self.beta} must be positive", MODULE)
        if self.beta < 1.0 - settings.ANGLE_TOL and not self.audit:
            raise CurvatureDomainError(
                f"cone parameter {self.beta} < 1 violates the upper curvature bound",
                MODULE,
            )

    @property
    def total_angle(self) -> float:
        return TWO_PI * self.beta

    def reduce(self, theta: ArrayLike) -> ArrayLike:
        return np.mod(theta, self.total_angle)

    def separation(self, theta1: ArrayLike, theta2: ArrayLike) -> ArrayLike:
        return angular_separation(theta1, theta2, self.beta)


@dataclass(frozen=True)
class Direction:
    theta: float
    chart: ConeChart = field(default_factory=lambda: ConeChart(1.0))

    def __post_init__(self):
        object.__setattr__(self, "theta", float(self.chart.reduce(self.theta)))

    def distance(self, other: "Direction") -> float:
        return float(self.chart.separation(self.theta, other.theta))


def angular_separation(theta1: ArrayLike, theta2: ArrayLike, beta: float) -> ArrayLike:
    """Distance between directions on a circle of length ``2*pi*beta``."""
    total = TWO_PI * beta
    delta = np.mod(np.abs(np.asarray(theta1) - np.asarray(theta2)), total)
    sep = np.minimum(delta, total - delta)
    return float(sep) if np.ndim(sep) == 0 else sep


def signed_offset(theta: ArrayLike, reference: ArrayLike, beta: float) -> ArrayLike:
    """``theta - reference`` wrapped into ``[-pi*beta, pi*beta)``."""
    total = TWO_PI * beta
    out = np.mod(np.asarray(theta) - np.asarray(reference) + 0.5 * total, total) - 0.5 * total
    return float(out) if np.ndim(out) == 0 else out


def model_angle(a: float, b: float, c: float, kappa: float = 0.0) -> float:
    """Angle between the sides ``a`` and ``b``, opposite ``c``, in the model space.

    Uses the half-angle form of the (spherical) law of cosines, which keeps
    full precision for thin and degenerate triangles.
    """
    _check_triangle(a, b, c, kappa)
    scale = _curvature_scale(kappa)
    s = 0.5 * (a + b + c)
    if scale == 0:
        num = max((s - a) * (s - b), 0.0)
        den = max(s * (s - c), 0.0)
    else:
        num = max(math.sin(scale * (s - a)) * math.sin(scale * (s - b)), 0.0)
        den = max(math.sin(scale * s) * math.sin(scale * (s - c)), 0.0)
    return 2.0 * math.atan2(math.sqrt(num), math.sqrt(den))


def model_distance(rho1: ArrayLike, rho2: ArrayLike, angle: ArrayLike, kappa: float = 0.0):
    """Third side of a model triangle from two sides and the included angle."""
    scale = _curvature_scale(kappa)
    r1 = np.asarray(rho1, dtype=float)
    r2 = np.asarray(rho2, dtype=float)
    ang = np.asarray(angle, dtype=float)
    half = np.sin(0.5 * ang) ** 2
    if scale == 0:
        sq = (r1 - r2) ** 2 + 4.0 * r1 * r2 * half
        out = np.sqrt(np.maximum(sq, 0.0))
    else:
        hav = np.sin(0.5 * scale * (r1 - r2)) ** 2 + np.sin(scale * r1) * np.sin(
            scale * r2
        ) * half
        out = 2.0 * np.arcsin(np.sqrt(np.clip(hav, 0.0, 1.0))) / scale
    return float(out) if out.ndim == 0 else out


def cone_distances(
    rho1: ArrayLike,
    theta1: ArrayLike,
    rho2: ArrayLike,
    theta2: ArrayLike,
    beta: float,
    kappa: float = 0.0,
):
    """Vectorised intrinsic distance on a (spherical) cone."""
    sep = np.asarray(angular_separation(theta1, theta2, beta))
    r1 = np.asarray(rho1, dtype=float)
    r2 = np.asarray(rho2, dtype=float)
    direct = np.asarray(model_distance(r1, r2, np.minimum(sep, math.pi), kappa))
    out = np.where(sep >= math.pi, r1 + r2, direct)
    return float(out) if out.ndim == 0 else out


def cone_distance(p1: Polar, p2: Polar, chart: ConeChart, kappa: float = 0.0) -> float:
    rho1, theta1 = p1
    rho2, theta2 = p2
    if rho1 < 0 or rho2 < 0:
        raise InvalidInputError("polar radius must be >= 0", MODULE)
    return float(cone_distances(rho1, theta1, rho2, theta2, chart.beta, kappa))


def model_interpolate(
    p1: Polar, p2: Polar, t: float, chart: ConeChart, kappa: float = 0.0
) -> Polar:
    """Point at fraction ``t`` along the cone geodesic from ``p1`` to ``p2``."""
    rho1, theta1 = p1
    rho2, theta2 = p2
    delta = float(signed_offset(theta2, theta1, chart.beta))
    rho, phi = unrolled_interpolate(rho1, rho2, delta, t, kappa)
    return (rho, float(chart.reduce(theta1 + phi)))


def unrolled_interpolate(
    rho1: float, rho2: float, delta: float, t: float, kappa: float = 0.0
) -> Polar:
    """Interpolate between ``(rho1, 0)`` and ``(rho2, delta)`` in a cone sheet.

    Returns the radius and the angle relative to the first point. When
    ``|delta| >= pi`` the geodesic runs through the apex.
    """
    if abs(delta) >= math.pi:
        s = t * (rho1 + rho2)
        if s <= rho1:
            return (rho1 - s, 0.0)
        return (s - rho1, delta)

    scale = _curvature_scale(kappa)
    if scale == 0:
        bx, by = rho2 * math.cos(delta), rho2 * math.sin(delta)
        px, py = rho1 + t * (bx - rho1), t * by
        rho = math.hypot(px, py)
        return (rho, math.atan2(py, px) if rho > 0 else 0.0)

    a = np.array([math.sin(scale * rho1), 0.0, math.cos(scale * rho1)])
    b = np.array(
        [
            math.sin(scale * rho2) * math.cos(delta),
            math.sin(scale * rho2) * math.sin(delta),
            math.cos(scale * rho2),
        ]
    )
    omega = math.atan2(float(np.linalg.norm(np.cross(a, b))), float(a @ b))
    if omega < 1e-12:
        p = a + t * (b - a)
    else:
        p = (math.sin((1.0 - t) * omega) * a + math.sin(t * omega) * b) / math.sin(omega)
    rho = math.atan2(math.hypot(p[0], p[1]), p[2]) / scale
    phi = math.atan2(p[1], p[0]) if math.hypot(p[0], p[1]) > 0 else 0.0
    return (rho, phi)


def triangle_area(a: float, b: float, c: float, kappa: float = 0.0) -> float:
    _check_triangle(a, b, c, kappa)
    scale = _curvature_scale(kappa)
    if scale == 0:
        x, y, z = sorted((a, b, c), reverse=True)
        prod = (x + (y + z)) * (z - (x - y)) * (z + (x - y)) * (x + (y - z))
        return 0.25 * math.sqrt(max(prod, 0.0))
    x, y, z = scale * a, scale * b, scale * c
    s = 0.5 * (x + y + z)
    prod = (
        math.tan(0.5 * s)
        * math.tan(0.5 * (s - x))
        * math.tan(0.5 * (s - y))
        * math.tan(0.5 * (s - z))
    )
    return 4.0 * math.atan(math.sqrt(max(prod, 0.0))) / (scale * scale)


def comparison_grid(points: int | None = None) -> np.ndarray:
    """Fractions ``0 .. 1`` along a side; endpoints included."""
    return np.linspace(0.0, 1.0, points or settings.COMPARISON_GRID)


@dataclass
class ComparisonSample:
    """Measured distances between points on two sides of a geodesic triangle.

    ``sides[i, j]`` holds the distance between the vertices ``i`` and ``j``.
    ``measured[i][s, t]`` is the distance between the point at fraction
    ``grid[s]`` from vertex ``i`` towards ``i+1`` and the point at fraction
    ``grid[t]`` from vertex ``i`` towards ``i+2``.
    """

    sides: np.ndarray
    measured: Dict[int, np.ndarray]
    grid: np.ndarray


@dataclass(frozen=True)
class Quadruple:
    """Triangle ``P, Q, R`` with a fourth point ``S`` on the side ``QR``."""

    pq: float
    pr: float
    qr: float
    ps: float
    qs: float
    rs: float


@dataclass
class ComparisonResult:
    passed: bool
    defect: float
    tolerance: float
    worst: Tuple[int, float, float] | None = None


def _check_metric(d: np.ndarray, tol: float) -> None:
    n = d.shape[0]
    if not np.allclose(d, d.T, atol=tol) or np.any(np.abs(np.diag(d)) > tol) or np.any(d < -tol):
        raise InvalidInputError("distance data is not a symmetric nonnegative matrix", MODULE)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if d[i, j] > d[i, k] + d[k, j] + tol:
                    raise InvalidInputError(
                        f"distance data violates the triangle inequality at ({i}, {j}, {k})",
                        MODULE,
                    )


def _quadruple_sides(q: Quadruple) -> np.ndarray:
    """Side lengths of PQR after checking the four-point distance data."""
    d = np.array(
        [
            [0.0, q.pq, q.pr, q.ps],
            [q.pq, 0.0, q.qr, q.qs],
            [q.pr, q.qr, 0.0, q.rs],
            [q.ps, q.qs, q.rs, 0.0],
        ]
    )
    tol = 1e-9 * max(float(d.max()), 1.0)
    _check_metric(d, tol)
    if abs(q.qs + q.rs - q.qr) > tol:
        raise InvalidInputError("the fourth point does not lie on the side QR", MODULE)
    return d[:3, :3]


def cat_comparison_test(
    sample: ComparisonSample | Quadruple,
    kappa: float = 0.0,
    tolerance: float | None = None,
) -> ComparisonResult:
    """Thin-triangle check against the model space of curvature ``kappa``."""
    if isinstance(sample, Quadruple):
        sides = _quadruple_sides(sample)
        measured_pairs = [(1, 0, 1.0, sample.qs / sample.qr if sample.qr > 0 else 0.0, sample.ps)]
        grid = None
    else:
        sides = np.asarray(sample.sides, dtype=float)
        grid = np.asarray(sample.grid, dtype=float)
        measured_pairs = []

    scale_tol = 1e-9 * max(float(np.max(sides)), 1.0)
    _check_metric(sides, scale_tol)
    perimeter = float(sides[0, 1] + sides[1, 2] + sides[0, 2])
    scale = _curvature_scale(kappa)
    if scale > 0 and perimeter * scale >= TWO_PI:
        raise CurvatureDomainError(
            f"triangle perimeter {perimeter} >= 2*pi/sqrt(kappa)", MODULE
        )
    tol = tolerance if tolerance is not None else settings.COMPARISON_TOL_FACTOR * perimeter

    defect = -math.inf
    worst = None
    if grid is not None:
        for i, values in sorted(sample.measured.items()):
            j, k = (i + 1) % 3, (i + 2) % 3
            a, b, c = sides[i, j], sides[i, k], sides[j, k]
            values = np.asarray(values, dtype=float)
            ends = (values[-1, 0] - a, values[0, -1] - b, values[-1, -1] - c)
            if max(abs(e) for e in ends) > max(1e-6 * perimeter, 1e-12):
                raise InvalidInputError(
                    f"measured distances at vertex {i} disagree with the side lengths",
                    MODULE,
                )
            angle = model_angle(a, b, c, kappa)
            s_grid, t_grid = np.meshgrid(grid * a, grid * b, indexing="ij")
            model = np.asarray(model_distance(s_grid, t_grid, angle, kappa))
            if np.any(values > s_grid + t_grid + max(1e-9 * perimeter, 1e-12)):
                raise InvalidInputError(
                    f"measured distances at vertex {i} violate the triangle inequality",
                    MODULE,
                )
            excess = values - model
            idx = np.unravel_index(int(np.argmax(excess)), excess.shape)
            if excess[idx] > defect:
                defect = float(excess[idx])
                worst = (i, float(grid[idx[0]]), float(grid[idx[1]]))
    else:
        for i, j, s_frac, t_frac, value in measured_pairs:
            k = 3 - i - j
            a, b, c = sides[i, j], sides[i, k], sides[j, k]
            angle = model_angle(a, b, c, kappa)
            model = model_distance(s_frac * a, t_frac * b, angle, kappa)
            defect = float(value - model)
            worst = (i, s_frac, t_frac)

    defect = max(defect, 0.0)
    return ComparisonResult(passed=defect <= tol, defect=defect, tolerance=tol, worst=worst)


def sample_cone_triangle(
    vertices: Sequence[Polar],
    chart: ConeChart,
    kappa: float = 0.0,
    points: int | None = None,
) -> ComparisonSample:
    """Comparison sample on a cone, measured by unfolding the cone geodesics."""
    grid = comparison_grid(points)
    sides = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if i != j:
                sides[i, j] = cone_distance(vertices[i], vertices[j], chart, kappa)
    measured: Dict[int, np.ndarray] = {}
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        side_j = [model_interpolate(vertices[i], vertices[j], s, chart, kappa) for s in grid]
        side_k = [model_interpolate(vertices[i], vertices[k], t, chart, kappa) for t in grid]
        rj = np.array([p[0] for p in side_j])[:, None]
        tj = np.array([p[1] for p in side_j])[:, None]
        rk = np.array([p[0] for p in side_k])[None, :]
        tk = np.array([p[1] for p in side_k])[None, :]
        measured[i] = np.asarray(cone_distances(rj, tj, rk, tk, chart.beta, kappa))
    return ComparisonSample(sides=sides, measured=measured, grid=grid)


def encloses_apex(vertices: Sequence[Polar], chart: ConeChart) -> bool:
    """Whether the geodesic triangle winds once around the cone apex."""
    total = 0.0
    for i in range(3):
        a = vertices[i][1]
        b = vertices[(i + 1) % 3][1]
        total += float(signed_offset(b, a, chart.beta))
    return abs(abs(total) - chart.total_angle) < 1e-9
