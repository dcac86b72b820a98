"""Energy minimisation by vertex relaxation.

Every free vertex is moved to the weighted Fréchet mean of its neighbours'
images, the weights being the cotangent weights of the domain mesh. A move
is kept only when it does not increase the vertex's share of the discrete
energy, so the energy is monotone across sweeps.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse import csr_matrix, diags
from scipy.sparse.linalg import splu

from app.domain_mesh import DomainMesh, build_sphere_mesh, cotangent_weights, grid_lookup, locate
from app.energy_forms import (
    PiecewiseMap,
    conformality_gap,
    edge_distances,
    hopf_field,
    pullback_field,
    total_energy,
    vertex_energies,
)
from app.target_surface import (
    ConeSurface,
    SurfacePoint,
    TangentConeChart,
    frechet_mean,
    interpolate,
    local_distance,
)
from core.config import settings
from core.exceptions import (
    BubblingError,
    ConstructionError,
    DegenerateMapError,
    InvalidInputError,
    LocalityError,
)
from utils.telemetry.decorators import traceable
from utils.telemetry.solver_metrics import solver_metrics

logger = structlog.get_logger()

MODULE = "harmonic_solver"

Checkpoint = Callable[[PiecewiseMap, int], None]


class RelaxationOrder(str, Enum):
    SWEEP = "sweep"
    COLORED = "colored-parallel"


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_iterations: int = Field(default_factory=lambda: settings.SOLVER_MAX_ITERATIONS, gt=0)
    energy_tol: float = Field(default_factory=lambda: settings.SOLVER_ENERGY_TOL, gt=0)
    displacement_tol: float = Field(
        default_factory=lambda: settings.SOLVER_DISPLACEMENT_TOL,
        gt=0,
        description="Relative to the target diameter",
    )
    relaxation: RelaxationOrder = Field(
        default_factory=lambda: RelaxationOrder(settings.SOLVER_RELAXATION)
    )
    inner_tol: float = Field(default_factory=lambda: settings.SOLVER_INNER_TOL, gt=0)
    inner_max_iter: int = Field(default_factory=lambda: settings.SOLVER_INNER_MAX_ITER, gt=0)
    workers: int = Field(default_factory=lambda: settings.SOLVER_WORKERS, ge=1)
    log_every: int = Field(default_factory=lambda: settings.SOLVER_LOG_EVERY, ge=1)
    free_sweeps: int = Field(default=0, ge=0, description="Closed problems: sweeps before pinning")


@dataclass
class DirichletProblem:
    """Boundary trace on a disk mesh, constrained to a closed ball.

    ``trace`` is aligned with ``mesh.boundary``. A ``radius`` of ``None``
    leaves the interior unconstrained.
    """

    mesh: DomainMesh
    surface: ConeSurface
    trace: Sequence[SurfacePoint]
    center: SurfacePoint
    radius: Optional[float] = None

    def __post_init__(self):
        if self.mesh.kind != "disk":
            raise InvalidInputError("Dirichlet problems live on disk meshes", MODULE)
        if len(self.trace) != len(self.mesh.boundary):
            raise InvalidInputError(
                f"{len(self.trace)} trace points for {len(self.mesh.boundary)} boundary vertices",
                MODULE,
            )
        if self.radius is not None and not self.radius > 0:
            raise InvalidInputError("constraint radius must be positive", MODULE)
        limit = 2.0 * self.surface.locality_radius
        n = len(self.trace)
        for i in range(n):
            a, b = self.trace[i], self.trace[(i + 1) % n]
            try:
                gap = local_distance(self.surface, a, b)
            except LocalityError:
                gap = math.inf
            if gap > limit:
                raise InvalidInputError(
                    f"trace jumps between boundary vertices {i} and {(i + 1) % n}", MODULE
                )
        if self.radius is not None:
            for i, p in enumerate(self.trace):
                try:
                    d = local_distance(self.surface, self.center, p)
                except LocalityError:
                    d = math.inf
                if d > self.radius * (1.0 + 1e-9):
                    raise InvalidInputError(
                        f"trace point {i} lies outside the constraint ball", MODULE
                    )


@dataclass
class VertexUpdate:
    vertex: int
    point: SurfacePoint
    moved: float
    before: float
    after: float
    noop: Optional[str] = None
    projected: bool = False


# --- neighbourhood data ---


def _weight_rows(mesh: DomainMesh) -> List[Tuple[np.ndarray, np.ndarray]]:
    w: csr_matrix = cotangent_weights(mesh)
    rows = []
    for v in range(mesh.n_vertices):
        lo, hi = w.indptr[v], w.indptr[v + 1]
        rows.append((w.indices[lo:hi].copy(), w.data[lo:hi].copy()))
    return rows


def greedy_coloring(mesh: DomainMesh) -> List[np.ndarray]:
    """Vertex classes with no edge inside a class, largest degree first."""
    colors = np.full(mesh.n_vertices, -1, dtype=int)
    order = sorted(range(mesh.n_vertices), key=lambda v: -len(mesh.neighbors[v]))
    for v in order:
        used = {int(colors[n]) for n in mesh.neighbors[v]}
        c = 0
        while c in used:
            c += 1
        colors[v] = c
    return [np.flatnonzero(colors == c) for c in range(int(colors.max()) + 1)]


def _local_energy(
    surface: ConeSurface, x: SurfacePoint, images: Sequence[SurfacePoint], weights: np.ndarray
) -> float:
    return float(sum(w * local_distance(surface, x, y) ** 2 for w, y in zip(weights, images)))


def _project(
    surface: ConeSurface, problem: Optional[DirichletProblem], x: SurfacePoint
) -> Tuple[SurfacePoint, bool]:
    if problem is None or problem.radius is None:
        return x, False
    d = local_distance(surface, problem.center, x)
    if d <= problem.radius * (1.0 + 1e-12):
        return x, False
    return interpolate(surface, problem.center, x, problem.radius / d), True


def _vertex_update(
    u: PiecewiseMap,
    v: int,
    row: Tuple[np.ndarray, np.ndarray],
    config: SolverConfig,
    problem: Optional[DirichletProblem] = None,
) -> VertexUpdate:
    surface = u.surface
    start = u.images[v]
    nbrs, weights = row
    images = [u.images[j] for j in nbrs]
    if not weights.sum() > 0:
        return VertexUpdate(v, start, 0.0, 0.0, 0.0, noop="weights")
    try:
        before = _local_energy(surface, start, images, weights)
        result = frechet_mean(
            surface,
            images,
            weights,
            start=start,
            tol=config.inner_tol,
            max_iter=config.inner_max_iter,
        )
        x, projected = _project(surface, problem, result.point)
        after = _local_energy(surface, x, images, weights)
        if after > before:
            return VertexUpdate(v, start, 0.0, before, before)
        moved = local_distance(surface, start, x)
    except LocalityError as exc:
        logger.debug("frechet_step_noop", vertex=v, detail=exc.detail)
        return VertexUpdate(v, start, 0.0, 0.0, 0.0, noop="locality")
    return VertexUpdate(v, x, moved, before, after, projected=projected)


def frechet_step(
    u: PiecewiseMap, vertex: int, config: Optional[SolverConfig] = None
) -> SurfacePoint:
    """Relaxed image of one vertex; the map itself is left unchanged.

    A locality failure leaves the image where it is and is counted in
    ``u.flags["frechet_noops"]``.
    """
    if u.fixed[vertex]:
        return u.images[vertex]
    config = config or SolverConfig()
    nbrs = u.mesh.neighbors[vertex]
    rows = _weight_rows(u.mesh)
    update = _vertex_update(u, vertex, rows[vertex], config)
    if update.noop is not None:
        u.flags["frechet_noops"] = u.flags.get("frechet_noops", 0) + 1
    logger.debug("frechet_step", vertex=vertex, neighbors=len(nbrs), moved=update.moved)
    return update.point


# --- relaxation loop ---


def _sweep(
    u: PiecewiseMap,
    rows: List[Tuple[np.ndarray, np.ndarray]],
    classes: List[np.ndarray],
    config: SolverConfig,
    problem: Optional[DirichletProblem],
    pool: Optional[ThreadPoolExecutor],
) -> Tuple[float, int, int]:
    max_moved, noops, projected = 0.0, 0, 0

    def absorb(update: VertexUpdate) -> None:
        nonlocal max_moved, noops, projected
        if update.noop is not None:
            noops += 1
            return
        if update.moved > 0:
            u.images[update.vertex] = update.point
            max_moved = max(max_moved, update.moved)
        projected += int(update.projected)

    for cls in classes:
        free = [int(v) for v in cls if not u.fixed[v]]
        if config.relaxation == RelaxationOrder.SWEEP:
            for v in free:
                absorb(_vertex_update(u, v, rows[v], config, problem))
            continue
        # vertices of one class share no edge, so proposals read a settled map
        if pool is not None:
            updates = list(pool.map(lambda v: _vertex_update(u, v, rows[v], config, problem), free))
        else:
            updates = [_vertex_update(u, v, rows[v], config, problem) for v in free]
        for update in updates:
            absorb(update)
    return max_moved, noops, projected


def _vertex_areas(mesh: DomainMesh) -> np.ndarray:
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        np.add.at(out, mesh.faces[:, k], np.abs(mesh.metric_areas) / 3.0)
    return out


def check_bubbling(u: PiecewiseMap, distances: Optional[np.ndarray] = None) -> None:
    """Raise when most of the energy sits on a vanishing part of the domain."""
    energy = np.clip(vertex_energies(u, distances), 0.0, None)
    areas = _vertex_areas(u.mesh)
    total_e, total_a = float(energy.sum()), float(areas.sum())
    if total_e <= 0:
        raise DegenerateMapError("map has zero energy", MODULE)
    order = np.argsort(-energy / np.maximum(areas, 1e-300))
    cum_e = np.cumsum(energy[order])
    cum_a = np.cumsum(areas[order])
    idx = int(np.searchsorted(cum_e, settings.BUBBLING_ENERGY_FRACTION * total_e))
    idx = min(idx, len(cum_a) - 1)
    share = float(cum_a[idx] / total_a)
    if share < settings.BUBBLING_AREA_FRACTION:
        raise BubblingError(
            f"{settings.BUBBLING_ENERGY_FRACTION:.0%} of the energy sits on {share:.2%} of the domain",
            MODULE,
        )


def _relax(
    u: PiecewiseMap,
    config: SolverConfig,
    problem_kind: str,
    problem: Optional[DirichletProblem] = None,
    checkpoint: Optional[Checkpoint] = None,
    bubbling: bool = False,
    release: Optional[np.ndarray] = None,
) -> PiecewiseMap:
    started = time.perf_counter()
    mesh, surface = u.mesh, u.surface
    rows = _weight_rows(mesh)
    if config.relaxation == RelaxationOrder.COLORED:
        classes = greedy_coloring(mesh)
    else:
        classes = [np.arange(mesh.n_vertices)]
    diameter = surface.diameter_estimate()
    displacement_limit = config.displacement_tol * diameter

    energy = total_energy(u)
    history = [energy]
    total_noops = total_projected = 0
    converged = False
    max_moved = math.inf
    pinned = None
    if release is not None and config.free_sweeps > 0:
        pinned = u.fixed.copy()
        u.fixed = release.copy()

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    iteration = 0
    try:
        for iteration in range(1, config.max_iterations + 1):
            if pinned is not None and iteration > config.free_sweeps:
                u.fixed = pinned
                pinned = None
            max_moved, noops, projected = _sweep(u, rows, classes, config, problem, pool)
            total_noops += noops
            total_projected += projected
            distances = edge_distances(u)
            forms = pullback_field(u, distances)
            new_energy = total_energy(u, forms)
            if new_energy > energy * (1.0 + 1e-12) + 1e-300:
                logger.warning("energy_increase", iteration=iteration, before=energy, after=new_energy)
            rel = (energy - new_energy) / energy if energy > 0 else 0.0
            energy = new_energy
            history.append(energy)
            if bubbling:
                check_bubbling(u, distances)
            if iteration % config.log_every == 0 or iteration == 1:
                logger.info(
                    "solver_sweep",
                    problem=problem_kind,
                    iteration=iteration,
                    energy=energy,
                    gap=conformality_gap(u, forms),
                    max_displacement=max_moved,
                    noops=noops,
                )
                if checkpoint is not None:
                    checkpoint(u, iteration)
            if pinned is None and rel < config.energy_tol and max_moved < displacement_limit:
                converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
        if pinned is not None:
            u.fixed = pinned

    duration = time.perf_counter() - started
    u.flags.update(
        converged=converged,
        iterations=iteration,
        energy=energy,
        energy_history=history,
        max_displacement=max_moved,
        frechet_noops=total_noops,
        projected=total_projected,
    )
    if not converged:
        u.flags["partial"] = True
        logger.warning(
            "solver_not_converged",
            problem=problem_kind,
            iterations=iteration,
            energy=energy,
            max_displacement=max_moved,
        )
    if total_projected:
        logger.warning("constraint_projection", problem=problem_kind, count=total_projected)
    solver_metrics.track_solve(
        problem_kind,
        "converged" if converged else "partial",
        iteration,
        noops=total_noops,
        duration=duration,
    )
    logger.info(
        "solver_finished",
        problem=problem_kind,
        converged=converged,
        iterations=iteration,
        energy=energy,
        duration=duration,
    )
    return u


# --- Dirichlet problems ---


def harmonic_extension(problem: DirichletProblem) -> PiecewiseMap:
    """Extend the trace harmonically in the conformal model at the ball centre."""
    mesh, surface = problem.mesh, problem.surface
    boundary = mesh.boundary
    free = np.flatnonzero(~mesh.is_boundary)
    images: List[SurfacePoint] = [problem.center] * mesh.n_vertices
    for v, p in zip(boundary, problem.trace):
        images[int(v)] = p
    u = PiecewiseMap(mesh, surface, images)
    u.fixed[boundary] = True

    try:
        chart = TangentConeChart(surface, problem.center)
        values = np.zeros(mesh.n_vertices, dtype=complex)
        values[boundary] = [chart.to_model(p) for p in problem.trace]
    except LocalityError as exc:
        logger.warning("harmonic_extension_fallback", detail=exc.detail)
        u.flags["extension_fallback"] = True
        return u

    # 1. Cotangent Laplacian split into free and fixed blocks
    w = cotangent_weights(mesh)
    lap = (diags(np.asarray(w.sum(axis=1)).ravel()) - w).tocsr()
    lap_ff = lap[free][:, free].tocsc()
    rhs = -(lap[free][:, boundary] @ values[boundary])

    # 2. Solve real and imaginary parts
    lu = splu(lap_ff)
    values[free] = lu.solve(np.ascontiguousarray(rhs.real)) + 1j * lu.solve(
        np.ascontiguousarray(rhs.imag)
    )

    # 3. Back to the surface
    misses = 0
    for v in free:
        try:
            x = chart.from_model(complex(values[v]))
            u.images[v], _ = _project(surface, problem, x)
        except LocalityError:
            misses += 1
    if misses:
        u.flags["extension_misses"] = misses
        logger.warning("harmonic_extension_misses", count=misses)
    return u


@traceable("solver.dirichlet")
def solve_dirichlet(
    problem: DirichletProblem,
    config: Optional[SolverConfig] = None,
    initial: Optional[PiecewiseMap] = None,
    checkpoint: Optional[Checkpoint] = None,
) -> PiecewiseMap:
    config = config or SolverConfig()
    if initial is None:
        u = harmonic_extension(problem)
    else:
        if initial.mesh is not problem.mesh:
            raise InvalidInputError("initial map lives on another mesh", MODULE)
        u = initial.copy()
        for v, p in zip(problem.mesh.boundary, problem.trace):
            u.images[int(v)] = p
        u.fixed[:] = False
        u.fixed[problem.mesh.boundary] = True
    logger.info(
        "dirichlet_started",
        vertices=problem.mesh.n_vertices,
        boundary=len(problem.mesh.boundary),
        radius=problem.radius,
    )
    u = _relax(u, config, "dirichlet", problem=problem, checkpoint=checkpoint)
    u.flags["lipschitz"] = interior_lipschitz(u)
    return u


# --- closed problems ---


@traceable("solver.closed")
def solve_closed(
    initial: PiecewiseMap,
    config: Optional[SolverConfig] = None,
    pins: Optional[Sequence[int]] = None,
    checkpoint: Optional[Checkpoint] = None,
) -> PiecewiseMap:
    """Minimise energy over maps of the sphere with three pinned vertices."""
    config = config or SolverConfig()
    mesh = initial.mesh
    if mesh.kind != "sphere":
        raise InvalidInputError("closed problems live on sphere meshes", MODULE)
    u = initial.copy()
    energy = total_energy(u)
    if energy <= 0:
        raise DegenerateMapError("initial map is constant", MODULE)
    check_bubbling(u)

    pins = tuple(mesh.pins if pins is None else pins)
    release = u.fixed.copy()
    u.fixed[list(pins)] = True
    logger.info("closed_started", vertices=mesh.n_vertices, pins=pins, energy=energy)
    u = _relax(u, config, "closed", checkpoint=checkpoint, bubbling=True, release=release)
    hopf = hopf_field(u)
    u.flags.update(
        pins=list(pins),
        hopf_l1=hopf.l1,
        hopf_residual=hopf.residual,
        gap=conformality_gap(u),
    )
    return u


# --- multilevel continuation and the explicit initial map ---


def prolong(u: PiecewiseMap, finer: DomainMesh) -> PiecewiseMap:
    """Carry a map to the next refinement level."""
    mesh, surface = u.mesh, u.surface
    if finer.kind != mesh.kind:
        raise InvalidInputError(f"cannot prolong a {mesh.kind} map to a {finer.kind} mesh", MODULE)
    images: List[SurfacePoint] = []
    if finer.kind == "sphere":
        if finer.parents is None or finer.level != mesh.level + 1:
            raise InvalidInputError(
                f"level {finer.level} does not refine level {mesh.level}", MODULE
            )
        for a, b in finer.parents:
            if a == b:
                images.append(u.images[a])
            else:
                images.append(interpolate(surface, u.images[a], u.images[b], 0.5))
    else:
        for x in finer.positions:
            hit = locate(mesh, x, tol=1.0)
            if hit is None:
                raise InvalidInputError(f"point {x} is outside the coarse mesh", MODULE)
            images.append(u.evaluate(*hit))
    out = PiecewiseMap(finer, surface, images)
    logger.debug("map_prolonged", level=finer.level, vertices=finer.n_vertices)
    return out


def _check_triangle(
    surface: ConeSurface, points: Sequence[SurfacePoint], domain_area: float, face: int
) -> None:
    try:
        d = [local_distance(surface, points[a], points[b]) for a, b in ((1, 2), (2, 0), (0, 1))]
    except LocalityError as exc:
        raise ConstructionError(
            f"coarse face {face}: {exc.detail}; refine the correspondence", MODULE
        ) from exc
    if max(d) >= surface.convexity_radius:
        raise ConstructionError(
            f"coarse face {face} exceeds the convexity radius; refine the correspondence", MODULE
        )
    perimeter = sum(d)
    slack = min(d[0] + d[1] - d[2], d[1] + d[2] - d[0], d[2] + d[0] - d[1])
    if domain_area > 1e-12 and slack <= 1e-9 * perimeter + 1e-15:
        raise ConstructionError(f"coarse face {face} maps to a degenerate triangle", MODULE)


def _step3_point(
    surface: ConeSurface, corners: Sequence[SurfacePoint], bary: Sequence[float]
) -> SurfacePoint:
    b0, b1, b2 = bary
    if b1 + b2 <= 1e-15:
        return corners[0]
    if b2 <= 1e-15:
        e = corners[1]
    elif b1 <= 1e-15:
        e = corners[2]
    else:
        e = interpolate(surface, corners[1], corners[2], b2 / (b1 + b2))
    if b0 <= 1e-15:
        return e
    return interpolate(surface, corners[0], e, b1 + b2)


@traceable("solver.initial_map")
def initial_map(
    mesh: DomainMesh,
    surface: ConeSurface,
    correspondence: Mapping[int, SurfacePoint],
    level: int,
) -> PiecewiseMap:
    """Explicit map from a coarse vertex correspondence.

    ``correspondence`` sends every vertex of the level-``level`` sphere mesh
    to a target point; each coarse face is filled along geodesics issuing
    from its first corner towards constant-speed points of the opposite edge.
    """
    if mesh.kind != "sphere" or mesh.grid is None or mesh.hemisphere is None:
        raise InvalidInputError("the initial map is built on sphere meshes", MODULE)
    if not 0 <= level <= mesh.level:
        raise InvalidInputError(f"coarse level {level} is not below level {mesh.level}", MODULE)
    coarse = build_sphere_mesh(level)
    missing = [v for v in range(coarse.n_vertices) if v not in correspondence]
    if missing:
        raise InvalidInputError(f"correspondence misses coarse vertices {missing[:5]}", MODULE)

    # 1. Every coarse face must map into a convex ball, non-degenerately
    for f, face in enumerate(coarse.faces):
        points = [correspondence[int(v)] for v in face]
        _check_triangle(surface, points, float(coarse.metric_areas[f]), f)

    # 2. Fill each coarse face
    lookup = grid_lookup(level)
    s = 2 ** (mesh.level - level)
    images: List[SurfacePoint] = []
    try:
        for v in range(mesh.n_vertices):
            key = [int(x) for x in mesh.grid[v]]
            hemi = int(mesh.hemisphere[v])
            q = [x // s for x in key]
            r = [x % s for x in key]
            if sum(r) == 0:
                images.append(correspondence[lookup[(hemi, tuple(q))]])
                continue
            if sum(r) == s:
                keys = [(q[0] + 1, q[1], q[2]), (q[0], q[1] + 1, q[2]), (q[0], q[1], q[2] + 1)]
                bary = [x / s for x in r]
            else:
                keys = [(q[0], q[1] + 1, q[2] + 1), (q[0] + 1, q[1], q[2] + 1), (q[0] + 1, q[1] + 1, q[2])]
                bary = [1.0 - x / s for x in r]
            corners = [correspondence[lookup[(hemi, k)]] for k in keys]
            images.append(_step3_point(surface, corners, bary))
    except LocalityError as exc:
        raise ConstructionError(f"{exc.detail}; refine the correspondence", MODULE) from exc

    u = PiecewiseMap(mesh, surface, images)
    distances = edge_distances(u)
    ratios = distances / np.maximum(_domain_lengths(mesh), 1e-300)
    face_lipschitz = ratios[mesh.face_edges].max(axis=1)
    u.flags.update(
        lipschitz=float(face_lipschitz.max()),
        face_lipschitz=face_lipschitz.tolist(),
        coarse_level=level,
    )
    logger.info(
        "initial_map_built",
        level=mesh.level,
        coarse_level=level,
        energy=total_energy(u),
        lipschitz=float(face_lipschitz.max()),
    )
    return u


# --- monitors ---


def _domain_lengths(mesh: DomainMesh) -> np.ndarray:
    a, b = mesh.positions[mesh.edges[:, 0]], mesh.positions[mesh.edges[:, 1]]
    if mesh.kind == "disk":
        return np.linalg.norm(a - b, axis=1)
    return np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.einsum("ij,ij->i", a, b))


def interior_lipschitz(u: PiecewiseMap, radius: float = 0.5) -> float:
    """Largest image-to-domain length ratio over edges inside the disk of ``radius``.

    Sphere maps use every edge.
    """
    mesh = u.mesh
    distances = edge_distances(u)
    ratios = distances / np.maximum(_domain_lengths(mesh), 1e-300)
    if mesh.kind == "disk":
        norms = np.linalg.norm(mesh.positions[:, :2], axis=1)
        inside = (norms[mesh.edges[:, 0]] <= radius + 1e-12) & (norms[mesh.edges[:, 1]] <= radius + 1e-12)
        ratios = ratios[inside]
    return float(ratios.max()) if len(ratios) else 0.0


def adjacent_image_spread(u: PiecewiseMap) -> float:
    """Largest target distance between images of adjacent vertices."""
    return float(edge_distances(u).max())


def solver_summary(u: PiecewiseMap) -> Dict[str, Any]:
    keys = ("converged", "iterations", "energy", "max_displacement", "frechet_noops", "projected")
    return {k: u.flags.get(k) for k in keys}
