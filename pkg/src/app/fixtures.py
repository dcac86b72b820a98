"""Bundled targets and closed-form maps.

Polar targets are built from a cone of total angle ``2*pi*beta`` cut into
sectors of angle ``< pi``: an apex, rings of vertices at fixed radii and, for
spherical spindles, a pole. Every face is an exact triangle of one sector's
development, so points can be placed by their cone coordinates and closed-form
maps can be sampled without approximation.
"""

import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.domain_mesh import DomainMesh, chart0, chart0_inverse
from app.energy_forms import PiecewiseMap
from app.geom_kernel import TWO_PI, ConeChart, cone_distance, model_distance
from app.target_surface import ConeSurface, SurfacePoint, combine, lift, load_surface, unlift
from core.exceptions import InvalidInputError
from schemas.target_spec import TargetSpec

MODULE = "fixtures"

Polar = Tuple[float, float]


@dataclass
class PolarTarget:
    surface: ConeSurface
    kappa: float
    beta: float
    radii: Tuple[float, ...]
    sectors: int
    pole: Optional[float]
    vertex_polar: List[Polar]
    face_sector: List[int]

    @property
    def total(self) -> float:
        return TWO_PI * self.beta

    @property
    def sector_angle(self) -> float:
        return self.total / self.sectors

    @property
    def apex(self) -> int:
        return 0

    def _wedge(self, f: int) -> List[Tuple[float, float, float]]:
        i = self.face_sector[f]
        out = []
        for v in self.surface.face_list[f]:
            rho, theta = self.vertex_polar[v]
            if v == self.apex or (self.pole is not None and v == self.surface.n_vertices - 1):
                phi = 0.5 * self.sector_angle
            else:
                phi = (theta - i * self.sector_angle) % self.total
                if phi > self.sector_angle + 1e-9:
                    phi = 0.0
            out.append(lift(rho, phi, self.kappa))
        return out

    def locate(self, rho: float, theta: float) -> SurfacePoint:
        """Surface point with cone coordinates ``(rho, theta)``."""
        if rho <= 1e-15:
            return SurfacePoint.at_vertex(self.surface, self.apex)
        if self.pole is not None and rho >= self.pole - 1e-12:
            return SurfacePoint.at_vertex(self.surface, self.surface.n_vertices - 1)
        theta = theta % self.total
        i = min(int(theta // self.sector_angle), self.sectors - 1)
        p = lift(rho, theta - i * self.sector_angle, self.kappa)
        best, best_score = None, -math.inf
        for f, sector in enumerate(self.face_sector):
            if sector != i:
                continue
            m = np.array(self._wedge(f)).T
            b = np.linalg.solve(m, np.array(p))
            if b.sum() <= 0:
                continue
            b = b / b.sum()
            if b.min() > best_score:
                best, best_score = (f, b), float(b.min())
        if best is None or best_score < -1e-9:
            raise InvalidInputError(f"({rho}, {theta}) lies outside the target", MODULE)
        f, b = best
        b = np.clip(b, 0.0, None)
        return SurfacePoint(f, tuple(b / b.sum()))

    def polar_of(self, p: SurfacePoint) -> Polar:
        """Cone coordinates of a surface point."""
        i = self.face_sector[p.face]
        rho, phi = unlift(combine(self._wedge(p.face), p.bary, self.kappa), self.kappa)
        if rho <= 1e-15:
            return 0.0, 0.0
        return rho, (i * self.sector_angle + phi) % self.total

    def cone_distance(self, a: Polar, b: Polar) -> float:
        return cone_distance(a, b, ConeChart(self.beta), self.kappa)


def polar_target(
    kappa: float,
    beta: float,
    radii: Sequence[float],
    sectors: int,
    pole: Optional[float] = None,
    name: str = "polar",
) -> PolarTarget:
    total = TWO_PI * beta
    delta = total / sectors
    if delta >= math.pi:
        raise InvalidInputError("sectors must have angle < pi", MODULE)
    rings = len(radii)

    def ring(j: int, i: int) -> int:
        return 1 + j * sectors + (i % sectors)

    vertex_polar: List[Polar] = [(0.0, 0.0)]
    for j in range(rings):
        vertex_polar.extend((radii[j], i * delta) for i in range(sectors))
    if pole is not None:
        vertex_polar.append((pole, 0.0))
    pole_id = len(vertex_polar) - 1

    faces: List[Tuple[int, int, int]] = []
    face_sector: List[int] = []
    for i in range(sectors):
        faces.append((0, ring(0, i), ring(0, i + 1)))
        face_sector.append(i)
        for j in range(rings - 1):
            faces.append((ring(j, i), ring(j + 1, i), ring(j + 1, i + 1)))
            faces.append((ring(j, i), ring(j + 1, i + 1), ring(j, i + 1)))
            face_sector.extend([i, i])
        if pole is not None:
            faces.append((ring(rings - 1, i), pole_id, ring(rings - 1, i + 1)))
            face_sector.append(i)

    def wedge_polar(v: int, i: int) -> Polar:
        if v == 0 or (pole is not None and v == pole_id):
            return vertex_polar[v][0], 0.5 * delta
        rho, theta = vertex_polar[v]
        return rho, 0.0 if round(theta / delta) % sectors == i else delta

    lengths: Dict[Tuple[int, int], float] = {}
    for face, i in zip(faces, face_sector):
        for k in range(3):
            a, b = face[k], face[(k + 1) % 3]
            (r1, p1), (r2, p2) = wedge_polar(a, i), wedge_polar(b, i)
            if a == 0 or b == 0 or (pole is not None and pole_id in (a, b)):
                length = abs(r1 - r2)
            else:
                length = float(model_distance(r1, r2, abs(p1 - p2), kappa))
            lengths[(min(a, b), max(a, b))] = length

    surface = ConeSurface(
        faces,
        lengths,
        kappa=kappa,
        topology="sphere" if pole is not None else "disk",
        n_vertices=len(vertex_polar),
        name=name,
    )
    return PolarTarget(
        surface=surface,
        kappa=kappa,
        beta=beta,
        radii=tuple(radii),
        sectors=sectors,
        pole=pole,
        vertex_polar=vertex_polar,
        face_sector=face_sector,
    )


def flat_plane() -> PolarTarget:
    return polar_target(0.0, 1.0, [3.0, 4.5], 12, name="flat_plane")


def flat_cone(beta: float = 1.5) -> PolarTarget:
    sectors = max(12, math.ceil(12 * beta))
    return polar_target(0.0, beta, [3.0, 4.5], sectors, name=f"flat_cone_{beta:g}")


def round_sphere() -> PolarTarget:
    return polar_target(1.0, 1.0, [0.5 * math.pi], 4, pole=math.pi, name="round_sphere")


def rugby_ball(beta: float = 1.5) -> PolarTarget:
    sectors = max(4, math.ceil(4 * beta))
    return polar_target(1.0, beta, [0.5 * math.pi], sectors, pole=math.pi, name=f"rugby_ball_{beta:g}")


def geodesic_sphere(n: int = 1) -> ConeSurface:
    """Octahedron subdivided ``2**n`` times and projected to the unit sphere."""
    corners = np.array(
        [[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float
    )
    octa = [(0, 1, 2), (1, 3, 2), (3, 4, 2), (4, 0, 2), (1, 0, 5), (3, 1, 5), (4, 3, 5), (0, 4, 5)]
    N = 2**n
    keys: Dict[Tuple[int, int, int], int] = {}
    points: List[np.ndarray] = []

    def vertex(p: np.ndarray) -> int:
        p = p / np.linalg.norm(p)
        key = tuple(int(round(x * 1e9)) for x in p)
        if key not in keys:
            keys[key] = len(points)
            points.append(p)
        return keys[key]

    faces: List[Tuple[int, int, int]] = []
    for a, b, c in octa:
        A, B, C = corners[a], corners[b], corners[c]

        def at(i: int, j: int) -> int:
            return vertex(A + (B - A) * i / N + (C - A) * j / N)

        for i in range(N):
            for j in range(N - i):
                faces.append((at(i, j), at(i + 1, j), at(i, j + 1)))
                if i + j < N - 1:
                    faces.append((at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)))
    pts = np.array(points)
    lengths: Dict[Tuple[int, int], float] = {}
    for face in faces:
        for k in range(3):
            a, b = face[k], face[(k + 1) % 3]
            cross = float(np.linalg.norm(np.cross(pts[a], pts[b])))
            lengths[(min(a, b), max(a, b))] = math.atan2(cross, float(pts[a] @ pts[b]))
    return ConeSurface(faces, lengths, kappa=1.0, topology="sphere", n_vertices=len(pts), name=f"geodesic_sphere_{n}")


# --- target-spec documents (some deliberately inadmissible) ---


def _spec(name: str, topology: str, kappa: float, n: int, faces, lengths) -> TargetSpec:
    return TargetSpec(
        name=name,
        topology=topology,
        kappa=kappa,
        vertices=n,
        faces=faces,
        edge_lengths={f"{min(a, b)}-{max(a, b)}": L for (a, b), L in lengths.items()},
    )


def tetrahedron_spec() -> TargetSpec:
    faces = [(0, 1, 2), (0, 2, 3), (0, 3, 1), (1, 3, 2)]
    lengths = {(a, b): 1.0 for a in range(4) for b in range(a + 1, 4)}
    return _spec("tetrahedron", "sphere", 0.0, 4, faces, lengths)


def doubled_square_spec() -> TargetSpec:
    faces = [(0, 1, 2), (0, 2, 3), (1, 0, 3), (1, 3, 2)]
    lengths = {(0, 1): 1.0, (1, 2): 1.0, (2, 3): 1.0, (0, 3): 1.0, (0, 2): math.sqrt(2.0), (1, 3): math.sqrt(2.0)}
    return _spec("doubled_square", "sphere", 0.0, 4, faces, lengths)


def umbrella_spec(triangles: int = 6) -> TargetSpec:
    """Equilateral unit triangles around a central vertex."""
    faces = [(0, 1 + i, 1 + (i + 1) % triangles) for i in range(triangles)]
    lengths: Dict[Tuple[int, int], float] = {}
    for face in faces:
        for k in range(3):
            lengths[(face[k], face[(k + 1) % 3])] = 1.0
    return _spec(f"umbrella_{triangles}", "disk", 0.0, triangles + 1, faces, lengths)


def polar_spec(target: PolarTarget) -> TargetSpec:
    s = target.surface
    return _spec(s.name, s.topology, s.kappa, s.n_vertices, [tuple(f) for f in s.face_list], s.edge_lengths)


TARGETS: Dict[str, Callable[..., Any]] = {
    "flat_plane": flat_plane,
    "flat_cone": flat_cone,
    "round_sphere": round_sphere,
    "rugby_ball": rugby_ball,
    "geodesic_sphere": geodesic_sphere,
    "tetrahedron": tetrahedron_spec,
    "doubled_square": doubled_square_spec,
    "umbrella": umbrella_spec,
}


def fixture_target(name: str, **params: Any) -> Any:
    """Bundled target by name: a ``PolarTarget``, ``ConeSurface`` or ``TargetSpec``."""
    try:
        factory = TARGETS[name]
    except KeyError:
        raise InvalidInputError(f"unknown target fixture {name!r}", MODULE) from None
    return factory(**params)


def fixture_surface(name: str, **params: Any) -> ConeSurface:
    target = fixture_target(name, **params)
    if isinstance(target, PolarTarget):
        return target.surface
    if isinstance(target, TargetSpec):
        return load_surface(target.model_dump(by_alias=True, mode="json"))
    return target


# --- closed-form maps ---


def polar_map(mesh: DomainMesh, target: PolarTarget, fn: Callable[[np.ndarray], Polar]) -> PiecewiseMap:
    images = [target.locate(*fn(x)) for x in mesh.positions]
    return PiecewiseMap(mesh, target.surface, images)


def power_polar(m: float) -> Callable[[np.ndarray], Polar]:
    def fn(x: np.ndarray) -> Polar:
        r = math.hypot(x[0], x[1])
        return r**m, m * math.atan2(x[1], x[0])

    return fn


def cone_model_polar(beta: float) -> Callable[[np.ndarray], Polar]:
    """``z -> (|z|**beta, beta * arg z)``: the conformal model of a cone."""
    return power_polar(beta)


def homogeneous_polar(m: int, a: complex, b: complex) -> Callable[[np.ndarray], Polar]:
    """``z -> a z**m + b conj(z)**m``, stretched by ``|b / a|`` at the origin."""

    def fn(x: np.ndarray) -> Polar:
        z = complex(x[0], x[1]) ** m
        w = a * z + b * z.conjugate()
        return abs(w), math.atan2(w.imag, w.real)

    return fn


def affine_polar(a: complex, b: complex) -> Callable[[np.ndarray], Polar]:
    return homogeneous_polar(1, a, b)


def power_map(mesh: DomainMesh, target: PolarTarget, m: float = 2) -> PiecewiseMap:
    return polar_map(mesh, target, power_polar(m))


def cone_model_map(mesh: DomainMesh, target: PolarTarget) -> PiecewiseMap:
    return polar_map(mesh, target, cone_model_polar(target.beta))


def affine_map(mesh: DomainMesh, target: PolarTarget, a: complex, b: complex = 0j) -> PiecewiseMap:
    return polar_map(mesh, target, affine_polar(a, b))


def homogeneous_map(
    mesh: DomainMesh, target: PolarTarget, m: int, a: complex, b: complex = 0j
) -> PiecewiseMap:
    return polar_map(mesh, target, homogeneous_polar(m, a, b))


def conjugate_map(mesh: DomainMesh, target: PolarTarget) -> PiecewiseMap:
    return affine_map(mesh, target, 0j, 1 + 0j)


def sphere_polar(beta: float = 1.0) -> Callable[[np.ndarray], Polar]:
    """Polar coordinates about the north pole, angles stretched by ``beta``."""

    def fn(x: np.ndarray) -> Polar:
        rho = math.atan2(math.hypot(x[0], x[1]), x[2])
        return rho, beta * (math.atan2(x[1], x[0]) % TWO_PI)

    return fn


def sphere_identity(mesh: DomainMesh, target: PolarTarget) -> PiecewiseMap:
    return polar_map(mesh, target, sphere_polar(target.beta))


def rotated_identity(mesh: DomainMesh, target: PolarTarget, rotation: np.ndarray) -> PiecewiseMap:
    rotation = np.asarray(rotation, dtype=float)
    fn = sphere_polar(target.beta)
    return polar_map(mesh, target, lambda x: fn(rotation @ x))


def sphere_power(mesh: DomainMesh, target: PolarTarget, m: int = 2) -> PiecewiseMap:
    """``z -> z**m`` in the chart centred at the south pole."""
    fn = sphere_polar(target.beta)

    def mapped(x: np.ndarray) -> Polar:
        if x[2] > 1.0 - 1e-12:
            return 0.0, 0.0
        w = complex(chart0(x)) ** m
        return fn(np.asarray(chart0_inverse(np.array(w)), dtype=float))

    return polar_map(mesh, target, mapped)


def constant_map(mesh: DomainMesh, surface: ConeSurface, point: SurfacePoint) -> PiecewiseMap:
    return PiecewiseMap(mesh, surface, [point] * mesh.n_vertices)


def rotation_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
