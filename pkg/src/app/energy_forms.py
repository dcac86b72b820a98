"""Discrete energy of maps from a domain mesh into a cone surface.

A map is given by the images of the domain vertices. On each face the three
squared image distances determine a constant pullback form ``pi`` in chart
coordinates; energy, area, Hopf differential and Jacobian are read off it.
The energy equals the cotangent-weighted sum ``sum w_ij d(u_i, u_j)^2``.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from app.domain_mesh import DomainMesh, chart0_inverse, chart1_inverse, face_cotangents, locate
from app.target_surface import (
    ConeSurface,
    SurfacePoint,
    barycentric_point,
    frechet_mean,
    local_distance,
    unroll,
)
from core.config import settings
from core.exceptions import InvalidInputError, LocalityError

logger = structlog.get_logger()

MODULE = "energy_forms"


@dataclass(frozen=True)
class PullbackTensor:
    p11: float
    p22: float
    p12: float

    def density(self, omega: float) -> float:
        c, s = math.cos(omega), math.sin(omega)
        return self.p11 * c * c + 2.0 * self.p12 * c * s + self.p22 * s * s

    @property
    def trace(self) -> float:
        return self.p11 + self.p22

    @property
    def det(self) -> float:
        return self.p11 * self.p22 - self.p12 * self.p12

    @property
    def hopf(self) -> complex:
        return complex(self.p11 - self.p22, -2.0 * self.p12)

    @property
    def conformal_factor(self) -> float:
        return 0.5 * self.trace

    def singular_values(self) -> Tuple[float, float]:
        eig = np.linalg.eigvalsh(np.array([[self.p11, self.p12], [self.p12, self.p22]]))
        return float(math.sqrt(max(eig[1], 0.0))), float(math.sqrt(max(eig[0], 0.0)))


class PiecewiseMap:
    """Vertex images of a map from a domain mesh into a target surface."""

    def __init__(
        self,
        mesh: DomainMesh,
        surface: ConeSurface,
        images: Sequence[SurfacePoint],
        flags: Optional[Dict[str, Any]] = None,
    ):
        if len(images) != mesh.n_vertices:
            raise InvalidInputError(
                f"{len(images)} images for {mesh.n_vertices} domain vertices", MODULE
            )
        self.mesh = mesh
        self.surface = surface
        self.images: List[SurfacePoint] = list(images)
        self.fixed = np.zeros(mesh.n_vertices, dtype=bool)
        self.flags: Dict[str, Any] = dict(flags or {})

    def copy(self) -> "PiecewiseMap":
        out = PiecewiseMap(self.mesh, self.surface, self.images, self.flags)
        out.fixed = self.fixed.copy()
        return out

    def face_images(self, face: int) -> List[SurfacePoint]:
        return [self.images[v] for v in self.mesh.faces[face]]

    def evaluate(self, face: int, bary: Sequence[float]) -> SurfacePoint:
        """Image of a point of a domain face given by barycentric weights."""
        points = self.face_images(face)
        out = barycentric_point(self.surface, points, bary)
        if out is not None:
            return out
        try:
            return frechet_mean(self.surface, points, bary).point
        except LocalityError as exc:
            raise LocalityError(exc.detail, MODULE, face=face) from exc

    def evaluate_at(self, point) -> SurfacePoint:
        hit = locate(self.mesh, point)
        if hit is None:
            raise InvalidInputError(f"point {point} is outside the domain", MODULE)
        return self.evaluate(*hit)


@dataclass
class FaceForms:
    p11: np.ndarray
    p22: np.ndarray
    p12: np.ndarray
    areas: np.ndarray

    @property
    def trace(self) -> np.ndarray:
        return self.p11 + self.p22

    @property
    def det(self) -> np.ndarray:
        return self.p11 * self.p22 - self.p12**2

    @property
    def hopf(self) -> np.ndarray:
        return (self.p11 - self.p22) - 2j * self.p12

    def tensor(self, face: int) -> PullbackTensor:
        return PullbackTensor(float(self.p11[face]), float(self.p22[face]), float(self.p12[face]))


@dataclass
class HopfField:
    phi: np.ndarray
    residual: float
    relative_residual: float
    l1: float


@dataclass
class EnergyReport:
    energy: float
    area: float
    gap: float
    hopf_l1: float
    hopf_residual: float
    flags: Dict[str, Any] = field(default_factory=dict)


def edge_distances(u: PiecewiseMap) -> np.ndarray:
    """Target distance between the images of every domain edge."""
    mesh, surface = u.mesh, u.surface
    limit = 2.0 * surface.locality_radius
    out = np.zeros(len(mesh.edges))
    for e, (a, b) in enumerate(mesh.edges):
        try:
            d = local_distance(surface, u.images[a], u.images[b])
        except LocalityError as exc:
            face = int(np.argwhere(mesh.face_edges == e)[0, 0])
            raise LocalityError(exc.detail, MODULE, face=face) from exc
        if d > limit:
            face = int(np.argwhere(mesh.face_edges == e)[0, 0])
            raise LocalityError(
                f"image edge {a}-{b} of length {d:.4g} exceeds the convex ball", MODULE, face=face
            )
        out[e] = d
    return out


def pullback_field(u: PiecewiseMap, distances: Optional[np.ndarray] = None) -> FaceForms:
    """Per-face pullback forms from squared image distances."""
    mesh = u.mesh
    if distances is None:
        distances = edge_distances(u)
    z = mesh.chart_coords
    d2 = distances[mesh.face_edges] ** 2
    rows = []
    for k in range(3):
        e = z[:, (k + 2) % 3] - z[:, (k + 1) % 3]
        rows.append(np.stack([e.real**2, e.imag**2, 2.0 * e.real * e.imag], axis=1))
    m = np.stack(rows, axis=1)
    sol = np.linalg.solve(m, d2[..., None])[..., 0]
    return FaceForms(sol[:, 0], sol[:, 1], sol[:, 2], np.abs(mesh.chart_areas))


def pullback_tensor(u: PiecewiseMap, face: int) -> PullbackTensor:
    mesh = u.mesh
    d = [
        local_distance(u.surface, u.images[mesh.faces[face, (k + 1) % 3]], u.images[mesh.faces[face, (k + 2) % 3]])
        for k in range(3)
    ]
    z = mesh.chart_coords[face]
    m = np.zeros((3, 3))
    for k in range(3):
        e = z[(k + 2) % 3] - z[(k + 1) % 3]
        m[k] = (e.real**2, e.imag**2, 2.0 * e.real * e.imag)
    p11, p22, p12 = np.linalg.solve(m, np.square(d))
    return PullbackTensor(float(p11), float(p22), float(p12))


def directional_density(u: PiecewiseMap, face: int, omega: float) -> float:
    return pullback_tensor(u, face).density(omega)


def total_energy(u: PiecewiseMap, forms: Optional[FaceForms] = None) -> float:
    forms = forms or pullback_field(u)
    return float(np.sum(forms.trace * forms.areas))


def total_area(u: PiecewiseMap, forms: Optional[FaceForms] = None) -> float:
    forms = forms or pullback_field(u)
    return float(np.sum(np.sqrt(np.maximum(forms.det, 0.0)) * forms.areas))


def conformality_gap(u: PiecewiseMap, forms: Optional[FaceForms] = None) -> float:
    forms = forms or pullback_field(u)
    return float(np.sum((np.abs(forms.p11 - forms.p22) + 2.0 * np.abs(forms.p12)) * forms.areas))


def vertex_energies(u: PiecewiseMap, distances: Optional[np.ndarray] = None) -> np.ndarray:
    """Energy attributed to each vertex: half of its incident edge terms."""
    mesh = u.mesh
    if distances is None:
        distances = edge_distances(u)
    cot = face_cotangents(mesh)
    out = np.zeros(mesh.n_vertices)
    d2 = distances[mesh.face_edges] ** 2
    for k in range(3):
        term = 0.5 * cot[:, k] * d2[:, k]
        np.add.at(out, mesh.faces[:, (k + 1) % 3], 0.5 * term)
        np.add.at(out, mesh.faces[:, (k + 2) % 3], 0.5 * term)
    return out


def hopf_field(u: PiecewiseMap, forms: Optional[FaceForms] = None) -> HopfField:
    """Hopf differential per face with its weak holomorphy residual.

    The residual tests ``phi`` against the hat function of every interior
    vertex whose faces share one chart; constant ``phi`` gives zero.
    """
    mesh = u.mesh
    forms = forms or pullback_field(u)
    phi = forms.hopf
    z = mesh.chart_coords
    acc = np.zeros(mesh.n_vertices, dtype=complex)
    for k in range(3):
        np.add.at(acc, mesh.faces[:, k], phi * (z[:, (k + 1) % 3] - z[:, (k + 2) % 3]) / 4j)
    usable = ~mesh.is_boundary
    if mesh.kind == "sphere":
        for v in range(mesh.n_vertices):
            if len(set(mesh.face_chart[mesh.vertex_faces[v]].tolist())) > 1:
                usable[v] = False
    residual = float(np.sum(np.abs(acc[usable])))
    energy = float(np.sum(forms.trace * forms.areas))
    l1 = float(np.sum(np.abs(phi) * forms.areas))
    return HopfField(
        phi=phi,
        residual=residual,
        relative_residual=residual / energy if energy > 0 else 0.0,
        l1=l1,
    )


def conformal_factor(u: PiecewiseMap, forms: Optional[FaceForms] = None) -> np.ndarray:
    forms = forms or pullback_field(u)
    return 0.5 * forms.trace


def jacobian(tensor: PullbackTensor, rel_tol: float = 1e-12) -> float:
    """Product of singular values; zero for rank-deficient forms."""
    det = tensor.det
    if det <= rel_tol * max(tensor.trace, 1e-300) ** 2:
        return 0.0
    return math.sqrt(det)


def jacobian_quadrature(tensor: PullbackTensor, samples: int = 720) -> float:
    """Harmonic mean of the directional density over the circle."""
    omega = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    c, s = np.cos(omega), np.sin(omega)
    q = tensor.p11 * c * c + 2.0 * tensor.p12 * c * s + tensor.p22 * s * s
    if np.any(q <= 0):
        return 0.0
    return float(1.0 / np.mean(1.0 / q))


def energy_report(u: PiecewiseMap) -> EnergyReport:
    forms = pullback_field(u)
    energy = total_energy(u, forms)
    area = total_area(u, forms)
    hopf = hopf_field(u, forms)
    flags: Dict[str, Any] = {}
    if area > 0.5 * energy * (1.0 + 1e-9) + 1e-12:
        flags["area_exceeds_half_energy"] = True
        logger.warning("area_bound_violated", energy=energy, area=area)
    min_det = float(np.min(forms.det / np.maximum(forms.trace, 1e-300) ** 2))
    if min_det < -1e-6:
        flags["indefinite_faces"] = int(np.sum(forms.det < -1e-6 * forms.trace**2))
    return EnergyReport(
        energy=energy,
        area=area,
        gap=conformality_gap(u, forms),
        hopf_l1=hopf.l1,
        hopf_residual=hopf.residual,
        flags=flags,
    )


# --- inversion and coverage ---


def _lift_many(rho: np.ndarray, phi: np.ndarray, kappa: float) -> np.ndarray:
    if kappa == 0:
        return np.stack([rho * np.cos(phi), rho * np.sin(phi), np.ones_like(rho)], axis=-1)
    s = np.sin(rho)
    return np.stack([s * np.cos(phi), s * np.sin(phi), np.cos(rho)], axis=-1)


@dataclass
class _HostGroup:
    faces: np.ndarray
    reference: np.ndarray
    inverse: np.ndarray
    low: np.ndarray
    high: np.ndarray
    sign: np.ndarray


class MapInverter:
    """Finds the domain faces whose image triangle contains a target point.

    Uses the same sheet as map evaluation, so inversion is consistent with
    ``PiecewiseMap.evaluate``.
    """

    def __init__(self, u: PiecewiseMap):
        self.map = u
        surface = u.surface
        grouped: Dict[int, List[Tuple[int, float, np.ndarray, float, float, float]]] = {}
        self.unresolved: List[int] = []
        for f in range(u.mesh.n_faces):
            frame = unroll(surface, u.face_images(f))
            if frame is None:
                self.unresolved.append(f)
                continue
            m = np.array(frame.model, dtype=float).T
            det = float(np.linalg.det(m))
            if abs(det) < 1e-14:
                continue
            angles = [math.atan2(x[1], x[0]) for x in frame.model if math.hypot(x[0], x[1]) > 1e-14]
            low = min(angles) if angles else -math.pi
            high = max(angles) if angles else math.pi
            grouped.setdefault(frame.host, []).append(
                (f, frame.reference, np.linalg.inv(m), low, high, math.copysign(1.0, det))
            )
        self.groups: Dict[int, _HostGroup] = {}
        for h, rows in grouped.items():
            self.groups[h] = _HostGroup(
                faces=np.array([r[0] for r in rows], dtype=int),
                reference=np.array([r[1] for r in rows]),
                inverse=np.array([r[2] for r in rows]),
                low=np.array([r[3] for r in rows]),
                high=np.array([r[4] for r in rows]),
                sign=np.array([r[5] for r in rows]),
            )
        if self.unresolved:
            logger.debug("inverter_unresolved_faces", count=len(self.unresolved))

    def _test(
        self, h: int, rho: np.ndarray, theta: np.ndarray, tol: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Barycentric coordinates ``(faces, points, 3)`` and inside mask."""
        surface = self.map.surface
        star = surface.stars[h]
        g = self.groups[h]
        delta = theta[None, :] - g.reference[:, None]
        if star.closed:
            total = star.total
            delta = np.mod(delta + 0.5 * total, total) - 0.5 * total
        pts = _lift_many(np.broadcast_to(rho[None, :], delta.shape), delta, surface.kappa)
        bary = np.einsum("fij,fpj->fpi", g.inverse, pts)
        s = bary.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            bary = bary / s[..., None]
        near_apex = rho[None, :] <= 1e-14
        window = near_apex | ((delta >= g.low[:, None] - 1e-9) & (delta <= g.high[:, None] + 1e-9))
        inside = (s > 0) & window & np.all(bary >= -tol, axis=2)
        return bary, inside

    def fiber(self, q: SurfacePoint, tol: float = 1e-9) -> List[Tuple[int, np.ndarray, float]]:
        """``(face, barycentric, orientation sign)`` of every face covering ``q``."""
        surface = self.map.surface
        hits: List[Tuple[int, np.ndarray, float]] = []
        for h, g in self.groups.items():
            pq = surface.polar(h, q)
            if pq is None:
                continue
            bary, inside = self._test(h, np.array([pq[0]]), np.array([pq[1]]), tol)
            for i in np.flatnonzero(inside[:, 0]):
                b = np.clip(bary[i, 0], 0.0, None)
                hits.append((int(g.faces[i]), b / b.sum(), float(g.sign[i])))
        return hits

    def preimages(self, q: SurfacePoint, tol: float = 1e-9) -> List[Tuple[np.ndarray, float]]:
        """Distinct domain points mapped to ``q`` with local orientation signs."""
        out: List[Tuple[np.ndarray, float]] = []
        sep = 1e-7
        for f, b, sign in self.fiber(q, tol):
            x = domain_point(self.map.mesh, f, b)
            if all(np.linalg.norm(x - y) > sep for y, _ in out):
                out.append((x, sign))
        return out

    def covered(self, h: int, rho: np.ndarray, theta: np.ndarray) -> np.ndarray:
        if h not in self.groups:
            return np.zeros(len(rho), dtype=bool)
        _, inside = self._test(h, rho, theta, 1e-12)
        return inside.any(axis=0)


def domain_point(mesh: DomainMesh, face: int, bary: Sequence[float]) -> np.ndarray:
    """Domain position (plane point or unit vector) of a face point."""
    w = complex(np.dot(np.asarray(bary, dtype=float), mesh.chart_coords[face]))
    if mesh.kind == "disk":
        return np.array([w.real, w.imag, 0.0])
    inv = chart0_inverse if mesh.face_chart[face] == 0 else chart1_inverse
    return np.asarray(inv(np.array(w)), dtype=float)


def subdivision_cells(subdivisions: int) -> Tuple[np.ndarray, np.ndarray]:
    """Centroids and corner triples (barycentric) of a subdivided triangle."""
    s = subdivisions
    centers, corners = [], []
    for i in range(s):
        for j in range(s - i):
            k = s - 1 - i - j
            tri = np.array([[i + 1, j, k], [i, j + 1, k], [i, j, k + 1]], dtype=float) / s
            corners.append(tri)
            centers.append(tri.mean(axis=0))
    for i in range(s - 1):
        for j in range(s - 1 - i):
            k = s - 2 - i - j
            tri = np.array([[i, j + 1, k + 1], [i + 1, j, k + 1], [i + 1, j + 1, k]], dtype=float) / s
            corners.append(tri)
            centers.append(tri.mean(axis=0))
    return np.array(centers), np.array(corners)


def hausdorff_area_estimate(
    u: PiecewiseMap, subdivisions: Optional[int] = None
) -> Tuple[float, float]:
    """Covered target area and the integral of the Jacobian.

    Target faces are rasterised into cells; a cell counts as covered when its
    centre lies in the image of some domain face.
    """
    surface = u.surface
    kappa = surface.kappa
    forms = pullback_field(u)
    integral_j = float(
        sum(jacobian(forms.tensor(f)) * forms.areas[f] for f in range(u.mesh.n_faces))
    )
    inverter = MapInverter(u)
    centers, corners = subdivision_cells(subdivisions or settings.RASTER_SUBDIVISIONS)
    covered_area = 0.0
    for t, face in enumerate(surface.face_list):
        frame = np.array(surface.face_frames[t])
        pts = corners @ frame
        if kappa > 0:
            pts = pts / np.linalg.norm(pts, axis=2, keepdims=True)
            a, b, c = pts[:, 0], pts[:, 1], pts[:, 2]
            triple = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
            den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
            cell_area = 2.0 * np.arctan2(triple, den)
        else:
            cell_area = np.full(len(corners), surface.face_areas[t] / len(corners))
        hit = np.zeros(len(centers), dtype=bool)
        for k, h in enumerate(face):
            layout = np.array(surface.corner_layouts[t][k])
            reordered = centers[:, [k, (k + 1) % 3, (k + 2) % 3]]
            p = reordered @ layout
            if kappa > 0:
                p = p / np.linalg.norm(p, axis=1, keepdims=True)
                rho = np.arctan2(np.hypot(p[:, 0], p[:, 1]), p[:, 2])
            else:
                rho = np.hypot(p[:, 0], p[:, 1])
            theta = surface.corner_offsets[t, k] + np.arctan2(p[:, 1], p[:, 0])
            hit |= inverter.covered(h, rho, theta)
        covered_area += float(np.sum(cell_area[hit]))
    return covered_area, integral_j
