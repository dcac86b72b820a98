"""Triangulated conformal domains: the round sphere and the unit disk.

Sphere meshes follow a nested refinement: an equilateral triangle inscribed
in the unit disk is subdivided ``2**n`` times, pushed radially onto the disk,
lifted to the lower hemisphere by the inverse stereographic chart and
reflected across the equator. Energies are computed per face in conformal
chart coordinates, so every face records the chart it is drawn in.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
import structlog
from scipy.sparse import coo_matrix, csr_matrix
from scipy.spatial import Delaunay

from core.exceptions import InvalidInputError

logger = structlog.get_logger()

MODULE = "domain_mesh"
CORNERS = np.array(
    [[0.0, 1.0], [-math.sqrt(3.0) / 2.0, -0.5], [math.sqrt(3.0) / 2.0, -0.5]]
)
LOWER, UPPER = 0, 1


def chart0(x: np.ndarray) -> np.ndarray:
    """Orientation-preserving chart of the lower hemisphere (pole at north)."""
    x = np.asarray(x, dtype=float)
    return (x[..., 0] - 1j * x[..., 1]) / (1.0 - x[..., 2])


def chart1(x: np.ndarray) -> np.ndarray:
    """Chart of the upper hemisphere; ``chart1 = 1 / chart0``."""
    x = np.asarray(x, dtype=float)
    return (x[..., 0] + 1j * x[..., 1]) / (1.0 + x[..., 2])


def chart0_inverse(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    m = np.abs(z) ** 2
    return np.stack([2.0 * z.real, -2.0 * z.imag, m - 1.0], axis=-1) / (1.0 + m)[..., None]


def chart1_inverse(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=complex)
    m = np.abs(w) ** 2
    return np.stack([2.0 * w.real, 2.0 * w.imag, 1.0 - m], axis=-1) / (1.0 + m)[..., None]


def radial_push(p: np.ndarray) -> np.ndarray:
    """Map the inscribed triangle onto the unit disk, linearly on rays."""
    p = np.asarray(p, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    gauge = 2.0 * np.max(-(p @ CORNERS.T), axis=-1)
    scale = np.divide(gauge, r, out=np.zeros_like(r), where=r > 0)
    return p * scale[..., None]


@dataclass
class DomainMesh:
    """Triangulated domain; immutable after construction."""

    kind: str
    level: int
    positions: np.ndarray
    faces: np.ndarray
    face_chart: np.ndarray
    boundary: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    parents: Optional[np.ndarray] = None
    grid: Optional[np.ndarray] = None
    hemisphere: Optional[np.ndarray] = None
    pins: Tuple[int, ...] = ()

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def face_edges(self) -> np.ndarray:
        """Index into ``edges`` of the edge opposite each corner, ``(F, 3)``."""
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}
        out = np.zeros(self.faces.shape, dtype=int)
        for f, face in enumerate(self.faces):
            for k in range(3):
                a, b = int(face[(k + 1) % 3]), int(face[(k + 2) % 3])
                out[f, k] = lookup[(min(a, b), max(a, b))]
        return out

    @property
    def euler_characteristic(self) -> int:
        # each interior edge borders two faces; corner pockets on the sphere
        # share a vertex triple, so unique vertex pairs undercount edges
        n_edges = (3 * self.n_faces + len(self.boundary)) // 2
        return self.n_vertices - n_edges + self.n_faces

    @cached_property
    def neighbors(self) -> List[np.ndarray]:
        adj: List[set] = [set() for _ in range(self.n_vertices)]
        for a, b in self.edges:
            adj[a].add(int(b))
            adj[b].add(int(a))
        return [np.array(sorted(s), dtype=int) for s in adj]

    @cached_property
    def vertex_faces(self) -> List[np.ndarray]:
        out: List[List[int]] = [[] for _ in range(self.n_vertices)]
        for f, face in enumerate(self.faces):
            for v in face:
                out[v].append(f)
        return [np.array(x, dtype=int) for x in out]

    @cached_property
    def is_boundary(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.boundary] = True
        return flags

    @cached_property
    def chart_coords(self) -> np.ndarray:
        """``(F, 3)`` complex chart coordinates of each face's vertices."""
        if self.kind == "disk":
            z = self.positions[:, 0] + 1j * self.positions[:, 1]
            return z[self.faces]
        z0 = chart0(np.where(self.positions[:, 2:3] > 1 - 1e-15, np.nan, self.positions))
        z1 = chart1(np.where(self.positions[:, 2:3] < -1 + 1e-15, np.nan, self.positions))
        return np.where(self.face_chart[:, None] == 0, z0[self.faces], z1[self.faces])

    @cached_property
    def chart_areas(self) -> np.ndarray:
        z = self.chart_coords
        return 0.5 * np.imag(np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0]))

    @cached_property
    def metric_areas(self) -> np.ndarray:
        """Face areas in the round (sphere) or flat (disk) metric."""
        if self.kind == "disk":
            return self.chart_areas
        a, b, c = (self.positions[self.faces[:, k]] for k in range(3))
        triple = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
        den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum(
            "ij,ij->i", c, a
        )
        return 2.0 * np.arctan2(triple, den)

    def point_in_chart(self, x: np.ndarray, chart: int) -> complex:
        if self.kind == "disk":
            return complex(x[0], x[1])
        return complex(chart0(x) if chart == 0 else chart1(x))

    def vertex_distance(self, a: int, b: int) -> float:
        """Distance of two domain vertices in the domain metric."""
        pa, pb = self.positions[a], self.positions[b]
        if self.kind == "disk":
            return float(np.linalg.norm(pa - pb))
        return float(math.atan2(np.linalg.norm(np.cross(pa, pb)), float(pa @ pb)))


def _grid_index(N: int) -> Dict[Tuple[int, int, int], int]:
    out: Dict[Tuple[int, int, int], int] = {}
    for i in range(N, -1, -1):
        for j in range(N - i, -1, -1):
            out[(i, j, N - i - j)] = len(out)
    return out


def grid_lookup(n: int) -> Dict[Tuple[int, Tuple[int, int, int]], int]:
    """Vertex index of ``(hemisphere, grid key)`` in the level-``n`` sphere mesh.

    Keys on the equator resolve to their lower-hemisphere vertex.
    """
    N = 2**n
    lower = _grid_index(N)
    G = len(lower)
    out: Dict[Tuple[int, Tuple[int, int, int]], int] = {}
    slot = G
    for key, idx in lower.items():
        out[(LOWER, key)] = idx
        if min(key) > 0:
            out[(UPPER, key)] = slot
            slot += 1
        else:
            out[(UPPER, key)] = idx
    return out


def build_sphere_mesh(n: int) -> DomainMesh:
    """Nested geodesic triangulation of the round sphere at level ``n``."""
    if n < 0:
        raise InvalidInputError("refinement level must be >= 0", MODULE)
    N = 2**n
    lower = _grid_index(N)
    keys = list(lower)

    # 1. Vertex numbering: lower grid, then the interior of the upper copy
    index = grid_lookup(n)
    upper_keys = [key for key in keys if min(key) > 0]

    # 2. Positions
    bary = np.array(keys, dtype=float) / N
    disk = radial_push(bary @ CORNERS)
    z = disk[:, 0] + 1j * disk[:, 1]
    lower_pos = chart0_inverse(z)
    on_circle = np.isclose(np.abs(z), 1.0)
    lower_pos[on_circle, 2] = 0.0
    upper_pos = lower_pos[[lower[key] for key in upper_keys]] * np.array([1.0, 1.0, -1.0])
    positions = np.concatenate([lower_pos, upper_pos.reshape(-1, 3)])
    positions /= np.linalg.norm(positions, axis=1, keepdims=True)

    # 3. Faces: lower in chart 0, upper (reflected, winding flipped) in chart 1
    tri: List[Tuple[Tuple[int, int, int], ...]] = []
    for i in range(N):
        for j in range(N - i):
            k = N - 1 - i - j
            tri.append(((i + 1, j, k), (i, j + 1, k), (i, j, k + 1)))
    for i in range(N - 1):
        for j in range(N - 1 - i):
            k = N - 2 - i - j
            tri.append(((i, j + 1, k + 1), (i + 1, j, k + 1), (i + 1, j + 1, k)))
    faces, charts = [], []
    for a, b, c in tri:
        faces.append((index[(LOWER, a)], index[(LOWER, b)], index[(LOWER, c)]))
        charts.append(0)
    for a, b, c in tri:
        faces.append((index[(UPPER, a)], index[(UPPER, c)], index[(UPPER, b)]))
        charts.append(1)

    # 4. Bookkeeping for refinement and pinning
    V = len(positions)
    grid = np.zeros((V, 3), dtype=int)
    hemisphere = np.zeros(V, dtype=int)
    for (hemi, key), idx in index.items():
        if hemi == UPPER and min(key) == 0:
            continue
        grid[idx] = key
        hemisphere[idx] = hemi
    parents = None
    if n > 0:
        parents = np.zeros((V, 2), dtype=int)
        coarse = grid_lookup(n - 1)

        def coarse_index(hemi: int, key: Tuple[int, int, int]) -> int:
            return coarse[(hemi, key)]

        for v in range(V):
            key, hemi = tuple(int(x) for x in grid[v]), int(hemisphere[v])
            odd = [m for m in range(3) if key[m] % 2]
            if not odd:
                p = coarse_index(hemi, tuple(x // 2 for x in key))
                parents[v] = (p, p)
                continue
            lo, hi = list(key), list(key)
            lo[odd[0]] -= 1
            lo[odd[1]] += 1
            hi[odd[0]] += 1
            hi[odd[1]] -= 1
            parents[v] = (
                coarse_index(hemi, tuple(x // 2 for x in lo)),
                coarse_index(hemi, tuple(x // 2 for x in hi)),
            )
    pins = tuple(lower[key] for key in ((N, 0, 0), (0, N, 0), (0, 0, N)))
    mesh = DomainMesh(
        kind="sphere",
        level=n,
        positions=positions,
        faces=np.array(faces, dtype=int),
        face_chart=np.array(charts, dtype=int),
        parents=parents,
        grid=grid,
        hemisphere=hemisphere,
        pins=pins,
    )
    logger.debug("sphere_mesh_built", level=n, vertices=V, faces=len(faces))
    return mesh


def build_disk_mesh(n: int) -> DomainMesh:
    """Concentric-ring Delaunay triangulation of the closed unit disk."""
    if n < 0:
        raise InvalidInputError("refinement level must be >= 0", MODULE)
    K = 2**n
    pts = [(0.0, 0.0)]
    for k in range(1, K + 1):
        r = k / K
        m = 6 * k
        pts.extend((r * math.cos(2 * math.pi * i / m), r * math.sin(2 * math.pi * i / m)) for i in range(m))
    xy = np.array(pts)
    faces = Delaunay(xy).simplices.astype(int)
    a, b, c = xy[faces[:, 0]], xy[faces[:, 1]], xy[faces[:, 2]]
    signed = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    faces[signed < 0] = faces[signed < 0][:, [0, 2, 1]]
    faces = faces[np.abs(signed) > 1e-14]
    boundary = np.arange(len(xy) - 6 * K, len(xy))
    positions = np.column_stack([xy, np.zeros(len(xy))])
    mesh = DomainMesh(
        kind="disk",
        level=n,
        positions=positions,
        faces=faces,
        face_chart=np.zeros(len(faces), dtype=int),
        boundary=boundary,
    )
    logger.debug("disk_mesh_built", level=n, vertices=len(xy), faces=len(faces))
    return mesh


def build_mesh(kind: str, n: int) -> DomainMesh:
    if kind == "sphere":
        return build_sphere_mesh(n)
    if kind == "disk":
        return build_disk_mesh(n)
    raise InvalidInputError(f"unknown domain {kind!r}", MODULE)


def chart_coordinates(mesh: DomainMesh, face: int) -> np.ndarray:
    if not 0 <= face < mesh.n_faces:
        raise InvalidInputError(f"face {face} does not exist", MODULE)
    return mesh.chart_coords[face]


def face_cotangents(mesh: DomainMesh) -> np.ndarray:
    """Cotangent of the chart angle at every corner, shape ``(F, 3)``."""
    z = mesh.chart_coords
    out = np.zeros(z.shape)
    for k in range(3):
        e1 = z[:, (k + 1) % 3] - z[:, k]
        e2 = z[:, (k + 2) % 3] - z[:, k]
        prod = np.conj(e1) * e2
        out[:, k] = prod.real / prod.imag
    return out


def cotangent_weights(mesh: DomainMesh) -> csr_matrix:
    """Symmetric edge weights ``w_ij = (cot a + cot b) / 2``."""
    cot = face_cotangents(mesh)
    rows, cols, vals = [], [], []
    for k in range(3):
        i = mesh.faces[:, (k + 1) % 3]
        j = mesh.faces[:, (k + 2) % 3]
        rows.extend([i, j])
        cols.extend([j, i])
        vals.extend([0.5 * cot[:, k]] * 2)
    V = mesh.n_vertices
    return coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(V, V)
    ).tocsr()


def max_edge_length(mesh: DomainMesh) -> float:
    """Largest domain-metric distance between adjacent vertices."""
    a, b = mesh.positions[mesh.edges[:, 0]], mesh.positions[mesh.edges[:, 1]]
    if mesh.kind == "disk":
        return float(np.max(np.linalg.norm(a - b, axis=1)))
    cross = np.linalg.norm(np.cross(a, b), axis=1)
    return float(np.max(np.arctan2(cross, np.einsum("ij,ij->i", a, b))))


def locate(mesh: DomainMesh, point, tol: float = 1e-9) -> Optional[Tuple[int, np.ndarray]]:
    """Face and barycentric coordinates of a domain point, in chart coordinates."""
    z = mesh.chart_coords
    if mesh.kind == "disk":
        w = complex(point) if np.ndim(point) == 0 else complex(point[0], point[1])
        q = np.full(mesh.n_faces, w)
    else:
        x = np.asarray(point, dtype=float)
        x = x / np.linalg.norm(x)
        q0 = chart0(x) if x[2] < 1 - 1e-12 else complex(1e12)
        q1 = chart1(x) if x[2] > -1 + 1e-12 else complex(1e12)
        q = np.where(mesh.face_chart == 0, q0, q1)
    area = np.imag(np.conj(z[:, 1] - z[:, 0]) * (z[:, 2] - z[:, 0]))
    b0 = np.imag(np.conj(z[:, 1] - q) * (z[:, 2] - q)) / area
    b1 = np.imag(np.conj(z[:, 2] - q) * (z[:, 0] - q)) / area
    b2 = 1.0 - b0 - b1
    bary = np.stack([b0, b1, b2], axis=1)
    score = np.nan_to_num(bary.min(axis=1), nan=-np.inf)
    f = int(np.argmax(score))
    if score[f] < -tol:
        return None
    b = np.clip(bary[f], 0.0, None)
    return f, b / b.sum()


def export_mesh(mesh: DomainMesh) -> str:
    """OBJ text of the mesh for inspection."""
    lines = [f"# catuni domain {mesh.kind} level {mesh.level}"]
    lines.extend(f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in mesh.positions)
    lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces)
    return "\n".join(lines) + "\n"


def align_rotation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rotation matrix taking the unit vector ``p`` to the unit vector ``q``."""
    p = np.asarray(p, dtype=float) / np.linalg.norm(p)
    q = np.asarray(q, dtype=float) / np.linalg.norm(q)
    axis = np.cross(p, q)
    s, c = float(np.linalg.norm(axis)), float(p @ q)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # half turn about any axis orthogonal to p
        other = np.array([1.0, 0.0, 0.0]) if abs(p[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        axis = np.cross(p, other)
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    axis /= s
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)
