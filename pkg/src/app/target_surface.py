"""Triangulated cone surfaces with an upper curvature bound.

Faces are constant-curvature triangles (plane or unit sphere) given by their
edge lengths. Every vertex carries a star chart: its corners in
counter-clockwise order, laid out around the vertex with angular offsets that
tile ``[0, 2*pi*beta)``. Points are located in a star by polar coordinates
``(rho, theta)``; the cone distance of the model space then gives the local
intrinsic distance.

Model-space points live in R^3: flat points are lifted to ``(x, y, 1)``,
spherical points are unit vectors. In both cases the chart apex is
``(0, 0, 1)``.
"""

import json
import math
import re
from bisect import bisect_right
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import ValidationError
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from app.geom_kernel import (
    TWO_PI,
    ComparisonSample,
    ConeChart,
    comparison_grid,
    model_angle,
    signed_offset,
    triangle_area,
    unrolled_interpolate,
)
from core.config import settings
from core.exceptions import (
    BoundaryHitError,
    CatuniError,
    CurvatureDomainError,
    InvalidInputError,
    LocalityError,
    SpecParseError,
    SurfaceValidationError,
)
from schemas.target_spec import TargetSpec

logger = structlog.get_logger()

MODULE = "target_surface"
BARY_EPS = 1e-12
INSIDE_TOL = 1e-9
LINK_TOL = 1e-7
APEX_SCAN = 720

Vec = Tuple[float, float, float]
EdgeKey = Tuple[int, int]


# --- model-space vector helpers ---


def _dot(a: Vec, b: Vec) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _cross(a: Vec, b: Vec) -> Vec:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _add(a: Vec, b: Vec) -> Vec:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _sub(a: Vec, b: Vec) -> Vec:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _mul(a: Vec, s: float) -> Vec:
    return (a[0] * s, a[1] * s, a[2] * s)


def _norm(a: Vec) -> float:
    return math.sqrt(_dot(a, a))


def lift(rho: float, phi: float, kappa: float) -> Vec:
    """Model point at polar coordinates ``(rho, phi)`` about the apex."""
    if kappa == 0:
        return (rho * math.cos(phi), rho * math.sin(phi), 1.0)
    s = math.sin(rho)
    return (s * math.cos(phi), s * math.sin(phi), math.cos(rho))


def unlift(p: Vec, kappa: float) -> Tuple[float, float]:
    h = math.hypot(p[0], p[1])
    rho = h if kappa == 0 else math.atan2(h, p[2])
    return rho, (math.atan2(p[1], p[0]) if h > 0 else 0.0)


def separation(a: Vec, b: Vec, kappa: float) -> float:
    """Model-space distance between two lifted points."""
    if kappa == 0:
        return math.hypot(a[0] - b[0], a[1] - b[1])
    return math.atan2(_norm(_cross(a, b)), _dot(a, b))


def combine(points: Sequence[Vec], bary: Sequence[float], kappa: float) -> Vec:
    x = (0.0, 0.0, 0.0)
    for p, w in zip(points, bary):
        x = _add(x, _mul(p, w))
    if kappa == 0:
        return x
    n = _norm(x)
    return _mul(x, 1.0 / n) if n > 0 else x


def model_log(x: Vec, y: Vec, kappa: float) -> Vec:
    """Tangent vector at ``x`` pointing to ``y`` with length ``separation``."""
    if kappa == 0:
        return (y[0] - x[0], y[1] - x[1], 0.0)
    c = _dot(x, y)
    w = _sub(y, _mul(x, c))
    n = _norm(w)
    if n < 1e-15:
        return (0.0, 0.0, 0.0)
    return _mul(w, math.atan2(n, c) / n)


def model_exp(x: Vec, v: Vec, kappa: float) -> Vec:
    if kappa == 0:
        return (x[0] + v[0], x[1] + v[1], 1.0)
    n = _norm(v)
    if n < 1e-15:
        return x
    return _add(_mul(x, math.cos(n)), _mul(v, math.sin(n) / n))


def _chord(r1: float, r2: float, angle: float, kappa: float) -> float:
    half = math.sin(0.5 * angle) ** 2
    if kappa == 0:
        return math.sqrt(max((r1 - r2) ** 2 + 4.0 * r1 * r2 * half, 0.0))
    hav = math.sin(0.5 * (r1 - r2)) ** 2 + math.sin(r1) * math.sin(r2) * half
    return 2.0 * math.asin(math.sqrt(min(max(hav, 0.0), 1.0)))


def _solve3(m: Sequence[Sequence[float]], p: Vec) -> Vec:
    return (
        m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
        m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
        m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
    )


def _bary_in(points: Sequence[Vec], p: Vec) -> Optional[Vec]:
    """Barycentric coordinates of ``p`` against three model points."""
    m = np.array(points, dtype=float).T
    try:
        b = np.linalg.solve(m, np.array(p, dtype=float))
    except np.linalg.LinAlgError:
        return None
    s = float(b.sum())
    if s <= 0:
        return None
    return (float(b[0]) / s, float(b[1]) / s, float(b[2]) / s)


def edge_key(i: int, j: int) -> EdgeKey:
    return (i, j) if i < j else (j, i)


# --- points ---


@dataclass(frozen=True)
class SurfacePoint:
    """A point of a target surface, normalised to ``(face, barycentric)``."""

    face: int
    bary: Tuple[float, float, float]

    def __post_init__(self):
        b = tuple(float(x) for x in self.bary)
        if len(b) != 3 or not all(math.isfinite(x) for x in b):
            raise InvalidInputError(f"bad barycentric triple {self.bary}", MODULE)
        if min(b) < -INSIDE_TOL:
            raise InvalidInputError(f"negative barycentric triple {self.bary}", MODULE)
        b = tuple(max(x, 0.0) for x in b)
        s = sum(b)
        if s <= 0:
            raise InvalidInputError("barycentric triple sums to zero", MODULE)
        object.__setattr__(self, "bary", (b[0] / s, b[1] / s, b[2] / s))

    @classmethod
    def at_vertex(cls, surface: "ConeSurface", v: int) -> "SurfacePoint":
        f, k = surface.vertex_corner[v]
        bary = [0.0, 0.0, 0.0]
        bary[k] = 1.0
        return cls(f, tuple(bary))

    @classmethod
    def on_edge(cls, surface: "ConeSurface", i: int, j: int, t: float) -> "SurfacePoint":
        """Point at fraction ``t`` from vertex ``i`` to vertex ``j``."""
        if not 0.0 <= t <= 1.0:
            raise InvalidInputError(f"edge parameter {t} outside [0, 1]", MODULE)
        for a, b, s in ((i, j, t), (j, i, 1.0 - t)):
            hit = surface.directed_edges.get((a, b))
            if hit is not None:
                f, k = hit
                bary = [0.0, 0.0, 0.0]
                bary[(k + 1) % 3] = 1.0 - s
                bary[(k + 2) % 3] = s
                return cls(f, tuple(bary))
        raise InvalidInputError(f"({i}, {j}) is not an edge", MODULE)

    def vertex_slot(self) -> Optional[int]:
        k = max(range(3), key=lambda i: self.bary[i])
        return k if self.bary[k] >= 1.0 - BARY_EPS else None


@dataclass(frozen=True)
class VertexStar:
    """Corners around a vertex in counter-clockwise order."""

    vertex: int
    corners: Tuple[Tuple[int, int], ...]
    offsets: Tuple[float, ...]
    angles: Tuple[float, ...]
    closed: bool

    @property
    def total(self) -> float:
        return self.offsets[-1] + self.angles[-1]

    @property
    def beta(self) -> float:
        return self.total / TWO_PI

    def separation(self, t1: float, t2: float) -> float:
        if not self.closed:
            return abs(t1 - t2)
        d = math.fmod(abs(t1 - t2), self.total)
        return min(d, self.total - d)

    def offset(self, theta: float, reference: float) -> float:
        """Signed angle from ``reference`` to ``theta`` without crossing a seam."""
        if not self.closed:
            return theta - reference
        return float(signed_offset(theta, reference, self.beta))

    def locate(self, theta: float) -> Optional[Tuple[int, float]]:
        """Corner index and in-corner angle of a direction."""
        if self.closed:
            theta = theta % self.total
        elif theta < -INSIDE_TOL or theta > self.total + INSIDE_TOL:
            return None
        theta = min(max(theta, 0.0), self.total)
        idx = max(bisect_right(self.offsets, theta) - 1, 0)
        phi = min(max(theta - self.offsets[idx], 0.0), self.angles[idx])
        return idx, phi


# --- validation ---


def _violation(kind: str, detail: str, **simplex: Any) -> Dict[str, Any]:
    return {"kind": kind, "simplex": simplex, "detail": detail}


def validate_surface(
    faces: Sequence[Sequence[int]],
    edge_lengths: Mapping[EdgeKey, float],
    kappa: float,
    topology: str,
    n_vertices: int,
) -> List[Dict[str, Any]]:
    """Collect every admissibility violation of a candidate target."""
    violations: List[Dict[str, Any]] = []
    if kappa not in (0.0, 1.0):
        violations.append(_violation("curvature", f"kappa={kappa} must be 0 or 1 after rescaling"))
        return violations
    if topology not in ("sphere", "disk"):
        violations.append(_violation("topology", f"unknown topology {topology!r}"))
        return violations

    # 1. Incidence
    directed: Dict[EdgeKey, int] = {}
    undirected: Dict[EdgeKey, int] = {}
    used = set()
    for f, face in enumerate(faces):
        if len(face) != 3 or len(set(face)) != 3:
            violations.append(_violation("bad_face", f"face {list(face)} is not a triangle", face=f))
            continue
        if any(v < 0 or v >= n_vertices for v in face):
            violations.append(_violation("bad_face", f"face {list(face)} references a missing vertex", face=f))
            continue
        used.update(face)
        for k in range(3):
            a, b = face[k], face[(k + 1) % 3]
            directed[(a, b)] = directed.get((a, b), 0) + 1
            undirected[edge_key(a, b)] = undirected.get(edge_key(a, b), 0) + 1
            if edge_key(a, b) not in edge_lengths:
                violations.append(_violation("missing_edge_length", f"edge {a}-{b} has no length", edge=[a, b]))
    for (a, b), count in directed.items():
        if count > 1:
            violations.append(_violation("orientation", f"directed edge {a}->{b} used {count} times", edge=[a, b]))
    for (a, b), count in undirected.items():
        if count > 2:
            violations.append(_violation("non_manifold_edge", f"edge {a}-{b} in {count} faces", edge=[a, b]))
    for v in range(n_vertices):
        if v not in used:
            violations.append(_violation("isolated_vertex", f"vertex {v} is in no face", vertex=v))
    if violations:
        return violations

    # 2. Topology
    boundary = [(a, b) for (a, b) in directed if (b, a) not in directed]
    chi = n_vertices - len(undirected) + len(faces)
    expected = 2 if topology == "sphere" else 1
    if chi != expected:
        violations.append(_violation("euler_characteristic", f"chi={chi}, {topology} needs {expected}"))
    if topology == "sphere" and boundary:
        violations.append(_violation("boundary", f"closed surface has {len(boundary)} boundary edges"))
    if topology == "disk":
        nxt = dict(boundary)
        if not boundary or len(nxt) != len(boundary):
            violations.append(_violation("boundary", "disk needs exactly one boundary cycle"))
        else:
            start = boundary[0][0]
            v, steps = nxt[start], 1
            while v != start and steps <= len(boundary):
                v, steps = nxt.get(v, start), steps + 1
            if steps != len(boundary):
                violations.append(_violation("boundary", "disk needs exactly one boundary cycle"))

    # 3. Faces
    for f, face in enumerate(faces):
        a = edge_lengths[edge_key(face[1], face[2])]
        b = edge_lengths[edge_key(face[2], face[0])]
        c = edge_lengths[edge_key(face[0], face[1])]
        try:
            area = triangle_area(a, b, c, kappa)
        except CatuniError as exc:
            kind = "perimeter_bound" if isinstance(exc, CurvatureDomainError) else "triangle_inequality"
            violations.append(_violation(kind, exc.detail, face=f))
            continue
        if area <= 1e-14 * max(a, b, c) ** 2:
            violations.append(_violation("degenerate_face", f"face {f} has zero area", face=f))
    if violations:
        return violations

    # 4. Vertex links
    boundary_vertices = {a for a, _ in boundary}
    totals = np.zeros(n_vertices)
    for face in faces:
        a = edge_lengths[edge_key(face[1], face[2])]
        b = edge_lengths[edge_key(face[2], face[0])]
        c = edge_lengths[edge_key(face[0], face[1])]
        sides = (a, b, c)
        for k in range(3):
            totals[face[k]] += model_angle(sides[(k + 1) % 3], sides[(k + 2) % 3], sides[k], kappa)
    for v in range(n_vertices):
        if v in boundary_vertices:
            continue
        if totals[v] < TWO_PI - LINK_TOL:
            violations.append(
                _violation(
                    "link_condition",
                    f"total angle {totals[v]:.9f} < 2*pi at vertex {v}",
                    vertex=v,
                )
            )
    return violations


# --- the surface ---


class ConeSurface:
    """A validated target: immutable after construction."""

    def __init__(
        self,
        faces: Sequence[Sequence[int]],
        edge_lengths: Mapping[EdgeKey, float],
        kappa: float = 0.0,
        topology: str = "sphere",
        n_vertices: Optional[int] = None,
        name: str = "target",
    ):
        self.faces = np.asarray(faces, dtype=int).reshape(-1, 3)
        self.n_vertices = int(n_vertices if n_vertices is not None else self.faces.max() + 1)
        self.kappa = float(kappa)
        self.topology = str(topology)
        self.name = name
        self.edge_lengths = {edge_key(int(i), int(j)): float(L) for (i, j), L in edge_lengths.items()}

        violations = validate_surface(
            self.faces.tolist(), self.edge_lengths, self.kappa, self.topology, self.n_vertices
        )
        if violations:
            logger.warning("surface_rejected", name=name, violations=len(violations))
            raise SurfaceValidationError(violations)
        self._build()
        logger.debug(
            "surface_built",
            name=name,
            vertices=self.n_vertices,
            faces=len(self.faces),
            kappa=self.kappa,
            max_beta=max(s.beta for s in self.stars),
        )

    def _build(self) -> None:
        F = len(self.faces)
        kappa = self.kappa
        fl = self.faces.tolist()
        self.face_list: List[Tuple[int, int, int]] = [tuple(f) for f in fl]
        lengths = np.zeros((F, 3))
        for f, (v0, v1, v2) in enumerate(fl):
            lengths[f] = (
                self.edge_lengths[edge_key(v1, v2)],
                self.edge_lengths[edge_key(v2, v0)],
                self.edge_lengths[edge_key(v0, v1)],
            )
        self.lengths = lengths

        angles = np.zeros((F, 3))
        layouts: List[List[Tuple[Vec, Vec, Vec]]] = []
        inverses: List[List[List[List[float]]]] = []
        for f in range(F):
            row, inv_row = [], []
            for k in range(3):
                opp = lengths[f, k]
                b = lengths[f, (k + 1) % 3]  # to the predecessor
                c = lengths[f, (k + 2) % 3]  # to the successor
                angles[f, k] = model_angle(b, c, opp, kappa)
                layout = (lift(0.0, 0.0, kappa), lift(c, 0.0, kappa), lift(b, angles[f, k], kappa))
                row.append(layout)
                inv_row.append(np.linalg.inv(np.array(layout).T).tolist())
            layouts.append(row)
            inverses.append(inv_row)
        self.corner_angles = angles
        self.corner_layouts = layouts
        self._corner_inverse = inverses
        # face frame: corner-0 layout in face vertex order
        self.face_frames: List[Tuple[Vec, Vec, Vec]] = [layouts[f][0] for f in range(F)]
        self.face_areas = np.array(
            [triangle_area(lengths[f, 0], lengths[f, 1], lengths[f, 2], kappa) for f in range(F)]
        )

        self.directed_edges: Dict[EdgeKey, Tuple[int, int]] = {}
        for f, face in enumerate(fl):
            for k in range(3):
                self.directed_edges[(face[(k + 1) % 3], face[(k + 2) % 3])] = (f, k)
        self.across: List[List[Optional[Tuple[int, int]]]] = []
        for f, face in enumerate(fl):
            row_across: List[Optional[Tuple[int, int]]] = []
            for k in range(3):
                row_across.append(self.directed_edges.get((face[(k + 2) % 3], face[(k + 1) % 3])))
            self.across.append(row_across)
        self.boundary_edges = [
            (a, b) for (a, b) in self.directed_edges if (b, a) not in self.directed_edges
        ]
        self.boundary_vertices = sorted({a for a, _ in self.boundary_edges})

        corners_of: List[List[Tuple[int, int]]] = [[] for _ in range(self.n_vertices)]
        for f, face in enumerate(fl):
            for k in range(3):
                corners_of[face[k]].append((f, k))
        self.stars: List[VertexStar] = []
        self.corner_offsets = np.zeros((F, 3))
        self.vertex_corner: List[Tuple[int, int]] = []
        for v in range(self.n_vertices):
            star = self._chain_star(v, corners_of[v])
            self.stars.append(star)
            self.vertex_corner.append(star.corners[0])
            for (f, k), off in zip(star.corners, star.offsets):
                self.corner_offsets[f, k] = off

    def _chain_star(self, v: int, corners: List[Tuple[int, int]]) -> VertexStar:
        fl = self.face_list
        by_successor = {fl[f][(k + 1) % 3]: (f, k) for f, k in corners}
        predecessors = {fl[f][(k + 2) % 3] for f, k in corners}
        open_starts = [c for s, c in by_successor.items() if s not in predecessors]
        closed = not open_starts
        start = open_starts[0] if open_starts else min(corners)
        chain = [start]
        while True:
            f, k = chain[-1]
            nxt = by_successor.get(fl[f][(k + 2) % 3])
            if nxt is None or nxt == start:
                break
            chain.append(nxt)
        if len(chain) != len(corners):
            raise SurfaceValidationError(
                [_violation("non_manifold_vertex", f"vertex {v} has a disconnected link", vertex=v)]
            )
        offsets, angles, acc = [], [], 0.0
        for f, k in chain:
            offsets.append(acc)
            angles.append(float(self.corner_angles[f, k]))
            acc += self.corner_angles[f, k]
        return VertexStar(v, tuple(chain), tuple(offsets), tuple(angles), closed)

    # --- derived quantities ---

    @property
    def is_flat(self) -> bool:
        return self.kappa == 0.0

    @property
    def convexity_radius(self) -> float:
        return 0.5 * math.pi if self.kappa > 0 else math.inf

    @property
    def locality_radius(self) -> float:
        return settings.LOCALITY_FRACTION * self.convexity_radius

    @property
    def min_edge(self) -> float:
        return min(self.edge_lengths.values())

    @property
    def max_edge(self) -> float:
        return max(self.edge_lengths.values())

    @property
    def total_area(self) -> float:
        return float(self.face_areas.sum())

    def vertex_beta(self, v: int) -> float:
        return self.stars[v].beta

    def cone_points(self, tol: float = 1e-9) -> List[int]:
        return [v for v, s in enumerate(self.stars) if s.closed and s.beta > 1.0 + tol]

    def diameter_estimate(self) -> float:
        """Edge-graph double sweep; an upper-end estimate of the diameter."""
        rows, cols, vals = [], [], []
        for (i, j), L in self.edge_lengths.items():
            rows.append(i)
            cols.append(j)
            vals.append(L)
        graph = coo_matrix((vals, (rows, cols)), shape=(self.n_vertices,) * 2).tocsr()
        d0 = dijkstra(graph, directed=False, indices=0)
        far = int(np.argmax(d0))
        d1 = dijkstra(graph, directed=False, indices=far)
        return float(d1.max())

    # --- points ---

    def position(self, p: SurfacePoint) -> Vec:
        """Model position of ``p`` in the frame of its face."""
        return combine(self.face_frames[p.face], p.bary, self.kappa)

    def incident_faces(self, p: SurfacePoint) -> List[Tuple[int, Tuple[float, float, float]]]:
        """Every ``(face, barycentric)`` representation of ``p``."""
        b = p.bary
        zeros = [i for i in range(3) if b[i] <= BARY_EPS]
        if not zeros:
            return [(p.face, b)]
        if len(zeros) == 1:
            k = zeros[0]
            reps = [(p.face, b)]
            hit = self.across[p.face][k]
            if hit is not None:
                g, kg = hit
                bg = [0.0, 0.0, 0.0]
                bg[(kg + 1) % 3] = b[(k + 2) % 3]
                bg[(kg + 2) % 3] = b[(k + 1) % 3]
                reps.append((g, (bg[0], bg[1], bg[2])))
            return reps
        v = self.face_list[p.face][max(range(3), key=lambda i: b[i])]
        reps = []
        for g, kg in self.stars[v].corners:
            bg = [0.0, 0.0, 0.0]
            bg[kg] = 1.0
            reps.append((g, (bg[0], bg[1], bg[2])))
        return reps

    def vertex_of(self, p: SurfacePoint) -> Optional[int]:
        k = p.vertex_slot()
        return None if k is None else self.face_list[p.face][k]

    def on_boundary(self, p: SurfacePoint) -> bool:
        if not self.boundary_edges:
            return False
        v = self.vertex_of(p)
        if v is not None:
            return not self.stars[v].closed
        return any(
            p.bary[k] <= BARY_EPS and self.across[p.face][k] is None for k in range(3)
        )

    def host_vertices(self, p: SurfacePoint) -> List[int]:
        """Vertices whose star contains ``p``."""
        out: List[int] = []
        for g, _ in self.incident_faces(p):
            for v in self.face_list[g]:
                if v not in out:
                    out.append(v)
        return out

    def common_hosts(self, points: Sequence[SurfacePoint]) -> List[int]:
        hosts = self.host_vertices(points[0])
        for q in points[1:]:
            allowed = set(self.host_vertices(q))
            hosts = [h for h in hosts if h in allowed]
        return hosts

    def corner_polar(self, f: int, k: int, bary: Sequence[float]) -> Tuple[float, float]:
        b = (bary[k], bary[(k + 1) % 3], bary[(k + 2) % 3])
        rho, phi = unlift(combine(self.corner_layouts[f][k], b, self.kappa), self.kappa)
        if rho <= 1e-15:
            return 0.0, 0.0
        phi = min(max(phi, 0.0), float(self.corner_angles[f, k]))
        return rho, float(self.corner_offsets[f, k]) + phi

    def polar(self, h: int, p: SurfacePoint) -> Optional[Tuple[float, float]]:
        """Polar coordinates of ``p`` in the star of vertex ``h``."""
        for g, bary in self.incident_faces(p):
            face = self.face_list[g]
            for k in range(3):
                if face[k] == h:
                    return self.corner_polar(g, k, bary)
        return None

    def point_at(self, h: int, rho: float, theta: float) -> Optional[SurfacePoint]:
        """Point with polar coordinates ``(rho, theta)`` in the star of ``h``."""
        if rho <= 1e-15:
            return SurfacePoint.at_vertex(self, h)
        star = self.stars[h]
        hit = star.locate(theta)
        if hit is None:
            return None
        idx, phi = hit
        f, k = star.corners[idx]
        b = _solve3(self._corner_inverse[f][k], lift(rho, phi, self.kappa))
        s = b[0] + b[1] + b[2]
        if s <= 0:
            return None
        b = (b[0] / s, b[1] / s, b[2] / s)
        if min(b) < -INSIDE_TOL:
            return None
        bary = [0.0, 0.0, 0.0]
        for m in range(3):
            bary[(k + m) % 3] = max(b[m], 0.0)
        return SurfacePoint(f, (bary[0], bary[1], bary[2]))

    def star_distance(self, h: int, p1: Tuple[float, float], p2: Tuple[float, float]) -> float:
        sep = self.stars[h].separation(p1[1], p2[1])
        if sep >= math.pi:
            return p1[0] + p2[0]
        return _chord(p1[0], p2[0], sep, self.kappa)

    def chart(self, v: int) -> ConeChart:
        return ConeChart(self.stars[v].beta, audit=not self.stars[v].closed)


# --- loading and saving ---


def _surface_from_spec(spec: TargetSpec) -> ConeSurface:
    lengths = spec.edge_map()
    kappa = spec.kappa
    if kappa > 0 and kappa != 1.0:
        scale = math.sqrt(kappa)
        lengths = {e: L * scale for e, L in lengths.items()}
        logger.info("target_rescaled", kappa=kappa, scale=scale)
        kappa = 1.0
    return ConeSurface(
        [list(f) for f in spec.faces],
        lengths,
        kappa=kappa,
        topology=spec.topology.value,
        n_vertices=spec.vertices,
        name=spec.name or "target",
    )


def _mesh_lengths(
    coords: np.ndarray, faces: List[List[int]], kappa: float
) -> Dict[EdgeKey, float]:
    if kappa > 0:
        coords = coords / np.linalg.norm(coords, axis=1, keepdims=True)
    out: Dict[EdgeKey, float] = {}
    for face in faces:
        for k in range(3):
            a, b = face[k], face[(k + 1) % 3]
            if kappa > 0:
                cross = np.linalg.norm(np.cross(coords[a], coords[b]))
                length = math.atan2(float(cross), float(coords[a] @ coords[b])) / math.sqrt(kappa)
            else:
                length = float(np.linalg.norm(coords[a] - coords[b]))
            out[edge_key(a, b)] = length
    return out


def _parse_mesh_text(text: str) -> Tuple[np.ndarray, List[List[int]], float]:
    kappa = 0.0
    lines = [ln.strip() for ln in text.splitlines()]
    for ln in lines:
        m = re.match(r"#\s*kappa\s+([-+0-9.eE]+)", ln)
        if m:
            kappa = float(m.group(1))
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    coords: List[List[float]] = []
    faces: List[List[int]] = []
    if body and body[0].upper().startswith("OFF"):
        head = body[0][3:].split() or body[1].split()
        rest = body[1:] if body[0][3:].split() else body[2:]
        nv, nf = int(head[0]), int(head[1])
        coords = [[float(x) for x in rest[i].split()[:3]] for i in range(nv)]
        for i in range(nf):
            parts = [int(x) for x in rest[nv + i].split()]
            if parts[0] != 3:
                raise SpecParseError("only triangle faces are supported", MODULE)
            faces.append(parts[1:4])
    else:
        for ln in body:
            parts = ln.split()
            if parts[0] == "v":
                coords.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise SpecParseError("only triangle faces are supported", MODULE)
                faces.append(idx)
        if not coords or not faces:
            raise SpecParseError("mesh text has no vertices or faces", MODULE)
    return np.asarray(coords, dtype=float), faces, kappa


def load_surface(document: str | Mapping[str, Any], name: Optional[str] = None) -> ConeSurface:
    """Parse and validate a target-spec document or OBJ/OFF triangle mesh."""
    if isinstance(document, Mapping):
        payload: Any = dict(document)
    else:
        text = document.strip()
        if text.startswith("{"):
            try:
                payload = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SpecParseError(f"target spec is not valid JSON: {exc}", MODULE) from exc
        else:
            try:
                coords, faces, kappa = _parse_mesh_text(text)
            except (ValueError, IndexError) as exc:
                raise SpecParseError(f"triangle mesh text does not parse: {exc}", MODULE) from exc
            boundary = _count_boundary_edges(faces)
            payload = {
                "name": name,
                "topology": "disk" if boundary else "sphere",
                "kappa": kappa,
                "vertices": len(coords),
                "faces": faces,
                "edge_lengths": {
                    f"{i}-{j}": L for (i, j), L in _mesh_lengths(coords, faces, kappa).items()
                },
            }
    try:
        spec = TargetSpec.model_validate(payload)
    except ValidationError as exc:
        raise SpecParseError(f"target spec is incomplete: {exc.error_count()} error(s)", MODULE) from exc
    if name and not spec.name:
        spec = spec.model_copy(update={"name": name})
    return _surface_from_spec(spec)


def _count_boundary_edges(faces: List[List[int]]) -> int:
    directed = {(f[k], f[(k + 1) % 3]) for f in faces for k in range(3)}
    return sum(1 for a, b in directed if (b, a) not in directed)


def to_target_spec(surface: ConeSurface) -> TargetSpec:
    return TargetSpec(
        name=surface.name,
        topology=surface.topology,
        kappa=surface.kappa,
        vertices=surface.n_vertices,
        faces=[tuple(f) for f in surface.face_list],
        edge_lengths={f"{i}-{j}": L for (i, j), L in sorted(surface.edge_lengths.items())},
    )


# --- operations ---


def vertex_total_angle(surface: ConeSurface, v: int) -> float:
    star = surface.stars[v]
    if not star.closed:
        raise CurvatureDomainError(f"vertex {v} lies on the boundary", MODULE)
    return star.total


def local_distance(surface: ConeSurface, p: SurfacePoint, q: SurfacePoint) -> float:
    """Intrinsic distance between points sharing a vertex star."""
    best = math.inf
    for h in surface.common_hosts([p, q]):
        pp, pq = surface.polar(h, p), surface.polar(h, q)
        if pp is None or pq is None:
            continue
        best = min(best, surface.star_distance(h, pp, pq))
    if best == math.inf:
        raise LocalityError(f"faces {p.face} and {q.face} share no vertex star", MODULE)
    return best


def interpolate(surface: ConeSurface, p: SurfacePoint, q: SurfacePoint, t: float) -> SurfacePoint:
    """Point at fraction ``t`` along the local geodesic from ``p`` to ``q``."""
    kappa = surface.kappa
    if p.face == q.face:
        frame = surface.face_frames[p.face]
        a, b = combine(frame, p.bary, kappa), combine(frame, q.bary, kappa)
        x = model_exp(a, _mul(model_log(a, b, kappa), t), kappa)
        bary = _bary_in(frame, x)
        if bary is not None and min(bary) >= -INSIDE_TOL:
            return SurfacePoint(p.face, bary)
    hosts = sorted(surface.common_hosts([p, q]), key=lambda h: -surface.stars[h].beta)
    for h in hosts:
        pp, pq = surface.polar(h, p), surface.polar(h, q)
        if pp is None or pq is None:
            continue
        if pp[0] <= 1e-14:
            rho, theta = t * pq[0], pq[1]
        elif pq[0] <= 1e-14:
            rho, theta = (1.0 - t) * pp[0], pp[1]
        else:
            delta = surface.stars[h].offset(pq[1], pp[1])
            rho, phi = unrolled_interpolate(pp[0], pq[0], delta, t, kappa)
            theta = pp[1] + phi
        out = surface.point_at(h, rho, theta)
        if out is not None:
            return out
    raise LocalityError(f"faces {p.face} and {q.face} share no vertex star", MODULE)


@dataclass(frozen=True)
class UnrolledTriangle:
    """Points laid out in the sheet of a star, cut opposite ``reference``."""

    host: int
    reference: float
    model: Tuple[Vec, ...]


def unroll(
    surface: ConeSurface,
    points: Sequence[SurfacePoint],
    hosts: Optional[Sequence[int]] = None,
) -> Optional[UnrolledTriangle]:
    """Lay points out in the common star of largest cone angle.

    A star qualifies when the points' directions span less than ``pi``;
    returns ``None`` when no common star does.
    """
    kappa = surface.kappa
    if hosts is None:
        hosts = surface.common_hosts(points)
    for h in sorted(hosts, key=lambda v: (-surface.stars[v].beta, v)):
        star = surface.stars[h]
        polars = [surface.polar(h, p) for p in points]
        if any(pp is None for pp in polars):
            continue
        angled = [pp for pp in polars if pp[0] > 1e-14]
        ref = angled[0][1] if angled else 0.0
        deltas = [star.offset(pp[1], ref) if pp[0] > 1e-14 else 0.0 for pp in polars]
        spread = [d for pp, d in zip(polars, deltas) if pp[0] > 1e-14]
        if spread and max(spread) - min(spread) >= math.pi:
            continue
        model = tuple(lift(pp[0], d, kappa) for pp, d in zip(polars, deltas))
        return UnrolledTriangle(h, ref, model)
    return None


def barycentric_point(
    surface: ConeSurface,
    points: Sequence[SurfacePoint],
    weights: Sequence[float],
    hosts: Optional[Sequence[int]] = None,
) -> Optional[SurfacePoint]:
    """Barycentric combination of points unrolled in a common star.

    Affine for flat targets, normalised linear for spherical ones.
    """
    frame = unroll(surface, points, hosts)
    if frame is None:
        return None
    rho, phi = unlift(combine(frame.model, weights, surface.kappa), surface.kappa)
    return surface.point_at(frame.host, rho, frame.reference + phi)


@dataclass
class FrechetResult:
    point: SurfacePoint
    objective: float
    host: int
    iterations: int


def _apex_descent(
    surface: ConeSurface, h: int, ys: List[Tuple[float, float]], weights: Sequence[float]
) -> Optional[Tuple[float, float]]:
    """Steepest descent direction of the weighted objective at a cone apex."""
    star = surface.stars[h]
    best_d, best_psi = 0.0, None
    for i in range(APEX_SCAN):
        psi = star.total * i / APEX_SCAN
        d = 0.0
        for (rho, theta), w in zip(ys, weights):
            d -= 2.0 * w * rho * math.cos(min(star.separation(psi, theta), math.pi))
        if d < best_d - 1e-15:
            best_d, best_psi = d, psi
    if best_psi is None:
        return None
    return best_d, best_psi


def frechet_mean(
    surface: ConeSurface,
    points: Sequence[SurfacePoint],
    weights: Sequence[float],
    start: Optional[SurfacePoint] = None,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> FrechetResult:
    """Minimise ``sum w_j d(x, y_j)^2`` over ``x`` in a common vertex star."""
    tol = settings.SOLVER_INNER_TOL if tol is None else tol
    max_iter = settings.SOLVER_INNER_MAX_ITER if max_iter is None else max_iter
    total_w = float(sum(weights))
    if not total_w > 0:
        raise InvalidInputError("Fréchet weights must have a positive sum", MODULE)
    if start is None:
        start = points[int(np.argmax(weights))]
    kappa = surface.kappa

    candidates = surface.common_hosts([start, *points])
    if not candidates:
        raise LocalityError("points share no vertex star", MODULE)
    x_polars = {h: surface.polar(h, start) for h in candidates}
    h = min(candidates, key=lambda v: (x_polars[v][0], -surface.stars[v].beta))
    star = surface.stars[h]
    ys = [surface.polar(h, y) for y in points]

    def objective(xp: Tuple[float, float]) -> float:
        return sum(w * surface.star_distance(h, xp, yp) ** 2 for w, yp in zip(weights, ys))

    xp = x_polars[h]
    x = start
    fx = objective(xp)
    cone = star.beta > 1.0 + settings.ANGLE_TOL or not star.closed
    iterations = 0
    for iterations in range(1, max_iter + 1):
        candidate: Optional[Tuple[SurfacePoint, Tuple[float, float], float]] = None
        if xp[0] <= 1e-14 and cone:
            descent = _apex_descent(surface, h, ys, weights)
            if descent is None:
                break
            slope, psi = descent
            step = -slope / (2.0 * total_w)
            for _ in range(40):
                trial = surface.point_at(h, step, psi)
                if trial is not None:
                    tp = (step, psi)
                    ft = objective(tp)
                    if ft < fx:
                        candidate = (trial, tp, ft)
                        break
                step *= 0.5
        else:
            xm = lift(xp[0], 0.0, kappa)
            toward_apex: Vec = (-1.0, 0.0, 0.0) if kappa == 0 else (-math.cos(xp[0]), 0.0, math.sin(xp[0]))
            g = (0.0, 0.0, 0.0)
            for w, yp in zip(weights, ys):
                delta = star.offset(yp[1], xp[1]) if yp[0] > 1e-14 else 0.0
                if abs(delta) >= math.pi and cone:
                    v = _mul(toward_apex, xp[0] + yp[0])
                else:
                    v = model_log(xm, lift(yp[0], delta, kappa), kappa)
                g = _add(g, _mul(v, w / total_w))
            tau = 1.0
            for _ in range(40):
                rho, phi = unlift(model_exp(xm, _mul(g, tau), kappa), kappa)
                trial = surface.point_at(h, rho, xp[1] + phi)
                if trial is not None:
                    tp = surface.polar(h, trial) or (rho, xp[1] + phi)
                    ft = objective(tp)
                    if ft < fx:
                        candidate = (trial, tp, ft)
                        break
                tau *= 0.5
        if cone:
            f_apex = sum(w * yp[0] ** 2 for w, yp in zip(weights, ys))
            best = candidate[2] if candidate else fx
            if f_apex < best and xp[0] > 1e-14:
                candidate = (SurfacePoint.at_vertex(surface, h), (0.0, 0.0), f_apex)
        if candidate is None:
            break
        moved = surface.star_distance(h, xp, candidate[1])
        x, xp, fx = candidate
        if moved < tol:
            break
    return FrechetResult(point=x, objective=fx, host=h, iterations=iterations)


# --- tangent cone charts ---


class TangentConeChart:
    """Polar chart of the tangent cone at a surface point.

    At a vertex the directions are the star angles. Elsewhere the chart is
    hosted by the star of the nearest vertex of the base face, unrolled around
    the base; direction ``0`` points away from that vertex.
    """

    def __init__(self, surface: ConeSurface, base: SurfacePoint):
        if surface.on_boundary(base):
            raise CurvatureDomainError("tangent chart requested at a boundary point", MODULE)
        self.surface = surface
        self.base = base
        vertex = surface.vertex_of(base)
        self.at_vertex = vertex is not None
        if vertex is not None:
            self.host = vertex
            self.base_polar = (0.0, 0.0)
            self.beta = surface.stars[vertex].beta
        else:
            polars = {h: surface.polar(h, base) for h in surface.host_vertices(base)}
            interior = [h for h in polars if surface.stars[h].closed] or list(polars)
            self.host = min(interior, key=lambda h: polars[h][0])
            self.base_polar = polars[self.host]
            self.beta = 1.0
        self.cone = ConeChart(self.beta)
        star = surface.stars[self.host]
        self._host_cone = star.beta > 1.0 + settings.ANGLE_TOL

    @property
    def corner_intervals(self) -> List[Tuple[int, float, float]]:
        """``(face, start, end)`` direction intervals tiling the circle."""
        if self.at_vertex:
            star = self.surface.stars[self.host]
            return [
                (f, off, off + ang)
                for (f, _), off, ang in zip(star.corners, star.offsets, star.angles)
            ]
        return [(self.base.face, 0.0, TWO_PI)]

    def _frame(self) -> Tuple[Vec, Vec, Vec]:
        rho = self.base_polar[0]
        if self.surface.kappa == 0:
            return lift(rho, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
        return lift(rho, 0.0, 1.0), (math.cos(rho), 0.0, -math.sin(rho)), (0.0, 1.0, 0.0)

    def log(self, q: SurfacePoint) -> Tuple[float, float]:
        """Distance and direction of ``q`` seen from the base."""
        surface = self.surface
        qp = surface.polar(self.host, q)
        if qp is None:
            raise LocalityError(f"face {q.face} is outside the chart at face {self.base.face}", MODULE)
        if self.at_vertex:
            return qp[0], qp[1]
        star = surface.stars[self.host]
        delta = star.offset(qp[1], self.base_polar[1]) if qp[0] > 1e-14 else 0.0
        if abs(delta) >= math.pi and self._host_cone:
            return self.base_polar[0] + qp[0], math.pi
        xm, e_r, e_t = self._frame()
        v = model_log(xm, lift(qp[0], delta, surface.kappa), surface.kappa)
        r = _norm(v)
        if r < 1e-15:
            return 0.0, 0.0
        return r, math.atan2(_dot(v, e_t), _dot(v, e_r)) % TWO_PI

    def exp(self, r: float, direction: float) -> SurfacePoint:
        surface = self.surface
        if self.at_vertex:
            out = surface.point_at(self.host, r, direction)
        else:
            xm, e_r, e_t = self._frame()
            v = _add(_mul(e_r, r * math.cos(direction)), _mul(e_t, r * math.sin(direction)))
            rho, phi = unlift(model_exp(xm, v, surface.kappa), surface.kappa)
            out = surface.point_at(self.host, rho, self.base_polar[1] + phi)
        if out is None:
            raise LocalityError(f"radius {r} leaves the chart at face {self.base.face}", MODULE)
        return out

    def to_model(self, q: SurfacePoint) -> complex:
        """Orientation-preserving identification with the conformal model."""
        r, direction = self.log(q)
        if r == 0:
            return 0j
        return (r ** (1.0 / self.beta)) * complex(
            math.cos(direction / self.beta), math.sin(direction / self.beta)
        )

    def from_model(self, z: complex) -> SurfacePoint:
        r = abs(z) ** self.beta
        direction = self.beta * (math.atan2(z.imag, z.real) % TWO_PI)
        return self.exp(r, direction)


def tangent_chart(surface: ConeSurface, p: SurfacePoint) -> TangentConeChart:
    return TangentConeChart(surface, p)


# --- geodesic continuation ---


def _ray(x: Vec, t: Vec, s: float, kappa: float) -> Vec:
    if kappa == 0:
        return (x[0] + s * t[0], x[1] + s * t[1], 1.0)
    return _add(_mul(x, math.cos(s)), _mul(t, math.sin(s)))


def _rigid_unfold(
    src: Tuple[Vec, Vec, Vec], a: int, b: int, pa: Vec, pb: Vec, kappa: float
) -> List[Vec]:
    """Move a face frame so that its slots ``a`` and ``b`` land on ``pa``, ``pb``."""
    ga, gb = src[a], src[b]
    if kappa == 0:
        rot = math.atan2(pb[1] - pa[1], pb[0] - pa[0]) - math.atan2(gb[1] - ga[1], gb[0] - ga[0])
        c, s = math.cos(rot), math.sin(rot)
        out = []
        for g in src:
            dx, dy = g[0] - ga[0], g[1] - ga[1]
            out.append((pa[0] + c * dx - s * dy, pa[1] + s * dx + c * dy, 1.0))
        return out

    def frame(u: Vec, w: Vec) -> Tuple[Vec, Vec, Vec]:
        e2 = _sub(w, _mul(u, _dot(u, w)))
        e2 = _mul(e2, 1.0 / _norm(e2))
        return u, e2, _cross(u, e2)

    fs, ft = frame(ga, gb), frame(pa, pb)
    out = []
    for g in src:
        coords = [_dot(g, e) for e in fs]
        p = (0.0, 0.0, 0.0)
        for c_, e in zip(coords, ft):
            p = _add(p, _mul(e, c_))
        out.append(p)
    return out


def _march(
    surface: ConeSurface,
    f: int,
    pos: List[Vec],
    x: Vec,
    t: Vec,
    remaining: float,
    entry: Optional[int],
) -> SurfacePoint:
    kappa = surface.kappa
    for _ in range(20 * len(surface.face_list) + 20):
        best: Optional[Tuple[float, int, Vec]] = None
        for c in range(3):
            if c == entry:
                continue
            m = _cross(pos[(c + 1) % 3], pos[(c + 2) % 3])
            mx, mt = _dot(m, x), _dot(m, t)
            if abs(mt) < 1e-15:
                continue
            if kappa == 0:
                s = -mx / mt
            else:
                s = math.atan2(-mx, mt)
                if s <= 1e-12:
                    s += math.pi
            if s <= 1e-12:
                continue
            y = _ray(x, t, s, kappa)
            b = _bary_in(pos, y)
            if b is None or min(b[(c + 1) % 3], b[(c + 2) % 3]) < -INSIDE_TOL:
                continue
            if best is None or s < best[0]:
                best = (s, c, y)
        if best is None:
            raise LocalityError(f"geodesic lost inside face {f}", MODULE)
        s, c, y = best
        if remaining <= s:
            end = _ray(x, t, remaining, kappa)
            bary = _bary_in(pos, end)
            if bary is None:
                raise LocalityError(f"geodesic lost inside face {f}", MODULE)
            return SurfacePoint(f, bary)
        b = _bary_in(pos, y)
        along = b[(c + 2) % 3] / max(b[(c + 1) % 3] + b[(c + 2) % 3], 1e-300)
        face = surface.face_list[f]
        if along < 1e-9 or along > 1.0 - 1e-9:
            v = face[(c + 1) % 3] if along < 1e-9 else face[(c + 2) % 3]
            back_bary = _bary_in(pos, x)
            back = surface.polar(v, SurfacePoint(f, back_bary)) if back_bary else None
            if back is None:
                raise LocalityError(f"geodesic lost at vertex {v}", MODULE)
            star = surface.stars[v]
            return _march_from_vertex(surface, v, back[1] + 0.5 * star.total, remaining - s)
        hit = surface.across[f][c]
        if hit is None:
            raise BoundaryHitError(f"geodesic from face {f} crosses the boundary", MODULE)
        g, kg = hit
        a_slot, b_slot = (kg + 1) % 3, (kg + 2) % 3
        # slot a of g is vertex face[(c+2)%3], slot b is face[(c+1)%3]
        pos = _rigid_unfold(
            surface.face_frames[g], a_slot, b_slot, pos[(c + 2) % 3], pos[(c + 1) % 3], kappa
        )
        if kappa > 0:
            t = _add(_mul(x, -math.sin(s)), _mul(t, math.cos(s)))
        x, f, entry, remaining = y, g, kg, remaining - s
    raise LocalityError("geodesic did not terminate", MODULE)


def _march_from_vertex(surface: ConeSurface, v: int, theta: float, remaining: float) -> SurfacePoint:
    star = surface.stars[v]
    if remaining <= 0:
        return SurfacePoint.at_vertex(surface, v)
    hit = star.locate(theta)
    if hit is None:
        raise BoundaryHitError(f"continuation through vertex {v} leaves the surface", MODULE)
    idx, phi = hit
    f, k = star.corners[idx]
    layout = surface.corner_layouts[f][k]
    pos: List[Vec] = [layout[0], layout[0], layout[0]]
    for m in range(3):
        pos[(k + m) % 3] = layout[m]
    return _march(surface, f, pos, layout[0], (math.cos(phi), math.sin(phi), 0.0), remaining, None)


def geodesic_extend(surface: ConeSurface, q0: SurfacePoint, q: SurfacePoint, r: float) -> SurfacePoint:
    """Point at distance ``r`` from ``q0`` on the geodesic through ``q``.

    Straight in unfoldings; a geodesic hitting a vertex continues along the
    bisector of the complementary angle.
    """
    if r < 0:
        raise InvalidInputError("extension length must be >= 0", MODULE)
    if r == 0:
        return q0
    kappa = surface.kappa
    v0 = surface.vertex_of(q0)
    if v0 is not None:
        qp = surface.polar(v0, q)
        if qp is None:
            raise LocalityError("q is outside the star of q0", MODULE)
        return _march_from_vertex(surface, v0, qp[1], r)

    for h in surface.common_hosts([q0, q]):
        star = surface.stars[h]
        p0, pq = surface.polar(h, q0), surface.polar(h, q)
        delta = star.offset(pq[1], p0[1]) if pq[0] > 1e-14 else 0.0
        if abs(delta) >= math.pi:
            if r <= p0[0]:
                return surface.point_at(h, p0[0] - r, p0[1]) or q0
            return _march_from_vertex(surface, h, p0[1] + 0.5 * star.total, r - p0[0])
        for g, bary in surface.incident_faces(q0):
            face = surface.face_list[g]
            if h not in face:
                continue
            k = face.index(h)
            layout = surface.corner_layouts[g][k]
            pos: List[Vec] = [layout[0], layout[0], layout[0]]
            for m in range(3):
                pos[(k + m) % 3] = layout[m]
            x = combine(pos, bary, kappa)
            phi0 = p0[1] - float(surface.corner_offsets[g, k])
            target = lift(pq[0], phi0 + delta, kappa)
            v = model_log(x, target, kappa)
            n = _norm(v)
            if n < 1e-15:
                raise InvalidInputError("q coincides with q0", MODULE)
            t = _mul(v, 1.0 / n)
            probe = _bary_in(pos, _ray(x, t, 1e-9 * max(surface.min_edge, 1e-9), kappa))
            if probe is None or min(probe) < -INSIDE_TOL:
                continue
            return _march(surface, g, pos, x, t, r, None)
    raise LocalityError("q0 and q share no vertex star", MODULE)


# --- global distances ---


class DistanceEngine:
    """Shortest paths on a Steiner-refined graph of the surface.

    Each edge carries ``2**m`` segments with ``m = ceil(log2(L / h))``, so point
    sets are nested under halving ``h`` and distances never increase. Within
    a face all pairs of boundary points are joined by their exact chord.
    """

    def __init__(self, surface: ConeSurface, h: Optional[float] = None):
        self.surface = surface
        if h is None:
            h = surface.min_edge / settings.STEINER_DIVISOR
            if surface.kappa > 0:
                h *= 0.5
        self.h = float(h)
        self.error_bound = 2.0 * self.h
        self._build()
        self._source_rows = lru_cache(maxsize=settings.DISTANCE_CACHE_ROWS)(self._dijkstra_rows)
        logger.debug("distance_engine_built", nodes=self.n_nodes, h=self.h)

    def _build(self) -> None:
        surface = self.surface
        kappa = surface.kappa
        next_id = surface.n_vertices
        self._edge_nodes: Dict[EdgeKey, List[Tuple[int, float]]] = {}
        for (a, b), L in sorted(surface.edge_lengths.items()):
            m = max(0, math.ceil(math.log2(L / self.h))) if L > self.h else 0
            n = 2**m
            nodes = [(a, 0.0)]
            for i in range(1, n):
                nodes.append((next_id, i / n))
                next_id += 1
            nodes.append((b, 1.0))
            self._edge_nodes[(a, b)] = nodes
        self.n_nodes = next_id

        weights: Dict[Tuple[int, int], float] = {}
        self._face_nodes: List[List[Tuple[int, Vec]]] = []
        for f, face in enumerate(surface.face_list):
            frame = surface.face_frames[f]
            entries: List[Tuple[int, Vec, frozenset]] = []
            seen: Dict[int, int] = {}
            for k in range(3):
                i, j = (k + 1) % 3, (k + 2) % 3
                a, b = face[i], face[j]
                nodes = self._edge_nodes[edge_key(a, b)]
                pa, pb = frame[i], frame[j]
                if a > b:
                    pa, pb = pb, pa
                for node, s in nodes:
                    if kappa == 0:
                        p = _add(_mul(pa, 1.0 - s), _mul(pb, s))
                    else:
                        p = model_exp(pa, _mul(model_log(pa, pb, kappa), s), kappa)
                    if node in seen:
                        idx = seen[node]
                        entries[idx] = (node, entries[idx][1], entries[idx][2] | {k})
                    else:
                        seen[node] = len(entries)
                        entries.append((node, p, frozenset({k})))
            for ia in range(len(entries)):
                na, pa_, ea = entries[ia]
                for ib in range(ia + 1, len(entries)):
                    nb, pb_, eb = entries[ib]
                    if ea & eb:
                        continue
                    key = (min(na, nb), max(na, nb))
                    d = separation(pa_, pb_, kappa)
                    if d < weights.get(key, math.inf):
                        weights[key] = d
            self._face_nodes.append([(n, p) for n, p, _ in entries])
        for nodes in self._edge_nodes.values():
            (a, _), (b, _) = nodes[0], nodes[-1]
            L = surface.edge_lengths[edge_key(a, b)]
            for (n1, s1), (n2, s2) in zip(nodes, nodes[1:]):
                key = (min(n1, n2), max(n1, n2))
                weights[key] = min(weights.get(key, math.inf), (s2 - s1) * L)
        keys = list(weights)
        rows = [k[0] for k in keys]
        cols = [k[1] for k in keys]
        self.graph = coo_matrix(
            ([weights[k] for k in keys], (rows, cols)), shape=(self.n_nodes, self.n_nodes)
        ).tocsr()

    def _dijkstra_rows(self, sources: Tuple[int, ...]) -> np.ndarray:
        rows = dijkstra(self.graph, directed=False, indices=list(sources))
        rows.setflags(write=False)
        return rows

    def _attach(self, p: SurfacePoint) -> Dict[int, float]:
        out: Dict[int, float] = {}
        kappa = self.surface.kappa
        for g, bary in self.surface.incident_faces(p):
            x = combine(self.surface.face_frames[g], bary, kappa)
            for node, pos in self._face_nodes[g]:
                d = separation(x, pos, kappa)
                if d < out.get(node, math.inf):
                    out[node] = d
        return out

    def _unfolded(self, p: SurfacePoint, q: SurfacePoint) -> float:
        surface = self.surface
        best = math.inf
        for f, bp in surface.incident_faces(p):
            for k in range(3):
                hit = surface.across[f][k]
                if hit is None:
                    continue
                g, kg = hit
                for g2, bq in surface.incident_faces(q):
                    if g2 != g:
                        continue
                    frame = surface.face_frames[f]
                    pos_g = _rigid_unfold(
                        surface.face_frames[g], (kg + 1) % 3, (kg + 2) % 3,
                        frame[(k + 2) % 3], frame[(k + 1) % 3], 0.0,
                    )
                    x, y = combine(frame, bp, 0.0), combine(pos_g, bq, 0.0)
                    # the chord must cross the shared edge
                    a, b = frame[(k + 1) % 3], frame[(k + 2) % 3]
                    den = (y[0] - x[0]) * (b[1] - a[1]) - (y[1] - x[1]) * (b[0] - a[0])
                    if abs(den) < 1e-15:
                        continue
                    s = ((a[0] - x[0]) * (b[1] - a[1]) - (a[1] - x[1]) * (b[0] - a[0])) / den
                    u = ((a[0] - x[0]) * (y[1] - x[1]) - (a[1] - x[1]) * (y[0] - x[0])) / den
                    if -1e-12 <= s <= 1 + 1e-12 and -1e-12 <= u <= 1 + 1e-12:
                        best = min(best, separation(x, y, 0.0))
        return best

    def distance(self, p: SurfacePoint, q: SurfacePoint) -> float:
        surface = self.surface
        kappa = surface.kappa
        qfaces = dict(surface.incident_faces(q))
        for f, bp in surface.incident_faces(p):
            if f in qfaces:
                frame = surface.face_frames[f]
                return separation(combine(frame, bp, kappa), combine(frame, qfaces[f], kappa), kappa)
        best = self._unfolded(p, q) if kappa == 0 else math.inf
        src, dst = self._attach(p), self._attach(q)
        sources = tuple(sorted(src))
        rows = self._source_rows(sources)
        s_off = np.array([src[s] for s in sources])[:, None]
        t_idx = np.array(sorted(dst))
        t_off = np.array([dst[t] for t in t_idx])[None, :]
        return float(min(best, np.min(s_off + rows[:, t_idx] + t_off)))


def distance(engine: DistanceEngine, p: SurfacePoint, q: SurfacePoint) -> float:
    return engine.distance(p, q)


def sample_surface_triangle(
    surface: ConeSurface, vertices: Sequence[SurfacePoint], points: Optional[int] = None
) -> ComparisonSample:
    """Comparison sample of a small geodesic triangle, measured locally."""
    grid = comparison_grid(points)
    sides = np.zeros((3, 3))
    for i in range(3):
        for j in range(i + 1, 3):
            sides[i, j] = sides[j, i] = local_distance(surface, vertices[i], vertices[j])
    measured: Dict[int, np.ndarray] = {}
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        side_j = [interpolate(surface, vertices[i], vertices[j], s) for s in grid]
        side_k = [interpolate(surface, vertices[i], vertices[k], s) for s in grid]
        values = np.zeros((len(grid), len(grid)))
        for a, pa in enumerate(side_j):
            for b, pb in enumerate(side_k):
                values[a, b] = local_distance(surface, pa, pb)
        measured[i] = values
    return ComparisonSample(sides=sides, measured=measured, grid=grid)
