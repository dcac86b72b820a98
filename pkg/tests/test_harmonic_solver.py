import math

import numpy as np
import pytest

from app import fixtures
from app.domain_mesh import DomainMesh, build_disk_mesh
from app.energy_forms import hopf_field, total_energy
from app.fixtures import PolarTarget
from app.harmonic_solver import (
    DirichletProblem,
    SolverConfig,
    adjacent_image_spread,
    frechet_step,
    greedy_coloring,
    harmonic_extension,
    initial_map,
    interior_lipschitz,
    prolong,
    solve_closed,
    solve_dirichlet,
)
from app.qc_degree import mobius_check
from app.tangent_analysis import order_profile
from app.target_surface import SurfacePoint, local_distance
from core.exceptions import DegenerateMapError, InvalidInputError


def _problem(mesh: DomainMesh, target: PolarTarget, exact) -> DirichletProblem:
    return DirichletProblem(
        mesh=mesh,
        surface=target.surface,
        trace=[exact.images[int(v)] for v in mesh.boundary],
        center=SurfacePoint.at_vertex(target.surface, target.apex),
    )


def _non_increasing(history) -> bool:
    return all(b <= a * (1 + 1e-9) for a, b in zip(history, history[1:]))


def test_coloring_separates_neighbours(disk3: DomainMesh) -> None:
    classes = greedy_coloring(disk3)
    color = np.empty(disk3.n_vertices, dtype=int)
    for c, members in enumerate(classes):
        color[members] = c
    a, b = disk3.edges[:, 0], disk3.edges[:, 1]
    assert np.all(color[a] != color[b])


def test_extension_of_linear_trace_is_exact(disk3: DomainMesh, plane: PolarTarget) -> None:
    exact = fixtures.power_map(disk3, plane, 1)
    u = harmonic_extension(_problem(disk3, plane, exact))
    error = max(local_distance(plane.surface, p, q) for p, q in zip(u.images, exact.images))
    assert error < 1e-9


def test_dirichlet_power_map(disk3: DomainMesh, plane: PolarTarget) -> None:
    exact = fixtures.power_map(disk3, plane, 2)
    u = solve_dirichlet(_problem(disk3, plane, exact), SolverConfig(max_iterations=30))
    error = max(local_distance(plane.surface, p, q) for p, q in zip(u.images, exact.images))
    assert error < 0.05
    assert _non_increasing(u.flags["energy_history"])
    assert u.flags["iterations"] <= 30
    assert all(u.images[int(v)] == exact.images[int(v)] for v in disk3.boundary)


def test_dirichlet_problem_validation(disk3: DomainMesh, sphere2: DomainMesh, plane: PolarTarget) -> None:
    exact = fixtures.power_map(disk3, plane, 2)
    center = SurfacePoint.at_vertex(plane.surface, plane.apex)
    with pytest.raises(InvalidInputError):
        DirichletProblem(mesh=sphere2, surface=plane.surface, trace=[], center=center)
    with pytest.raises(InvalidInputError):
        DirichletProblem(mesh=disk3, surface=plane.surface, trace=exact.images[:5], center=center)
    with pytest.raises(InvalidInputError):
        DirichletProblem(
            mesh=disk3,
            surface=plane.surface,
            trace=[exact.images[int(v)] for v in disk3.boundary],
            center=center,
            radius=0.5,
        )


def test_config_rejects_unknown_keys() -> None:
    with pytest.raises(ValueError):
        SolverConfig(sweeps=3)


def test_constant_map_is_degenerate(sphere2: DomainMesh, round_sphere: PolarTarget) -> None:
    point = SurfacePoint.at_vertex(round_sphere.surface, round_sphere.apex)
    u = fixtures.constant_map(sphere2, round_sphere.surface, point)
    with pytest.raises(DegenerateMapError):
        solve_closed(u)


def test_initial_map_from_identity(
    sphere2: DomainMesh, sphere3: DomainMesh, round_sphere: PolarTarget
) -> None:
    coarse = fixtures.sphere_identity(sphere2, round_sphere)
    correspondence = {v: coarse.images[v] for v in range(sphere2.n_vertices)}
    u = initial_map(sphere3, round_sphere.surface, correspondence, 2)
    ratio = total_energy(u) / (8 * math.pi)
    assert 0.7 < ratio < 1.6
    assert u.flags["coarse_level"] == 2


def test_initial_map_needs_full_correspondence(sphere2: DomainMesh, round_sphere: PolarTarget) -> None:
    with pytest.raises(InvalidInputError):
        initial_map(sphere2, round_sphere.surface, {}, 2)


def test_closed_relaxation_keeps_pins(sphere3: DomainMesh, round_sphere: PolarTarget) -> None:
    start = fixtures.sphere_identity(sphere3, round_sphere)
    u = solve_closed(start, SolverConfig(max_iterations=5))
    assert _non_increasing(u.flags["energy_history"])
    for v in sphere3.pins:
        assert u.images[v] == start.images[v]
    assert u.flags["pins"] == list(sphere3.pins)


def test_prolong_to_finer_sphere(
    sphere2: DomainMesh, sphere3: DomainMesh, round_sphere: PolarTarget
) -> None:
    u = prolong(fixtures.sphere_identity(sphere2, round_sphere), sphere3)
    assert len(u.images) == sphere3.n_vertices
    assert u.mesh is sphere3
    with pytest.raises(InvalidInputError):
        prolong(fixtures.sphere_identity(sphere3, round_sphere), sphere2)


def test_frechet_step_keeps_linear_map(disk3: DomainMesh, plane: PolarTarget) -> None:
    u = fixtures.affine_map(disk3, plane, 1.5 + 0j, 0.5 + 0j)
    p = frechet_step(u, 0)
    assert local_distance(plane.surface, p, u.images[0]) < 1e-6
    assert u.flags.get("frechet_noops", 0) == 0


def test_lipschitz_and_spread(disk3: DomainMesh, plane: PolarTarget) -> None:
    identity = fixtures.power_map(disk3, plane, 1)
    stretch = fixtures.affine_map(disk3, plane, 1.5 + 0j, 0.5 + 0j)
    assert interior_lipschitz(identity) == pytest.approx(1.0, abs=1e-9)
    assert 1.0 <= interior_lipschitz(stretch) <= 2.0 + 1e-9
    spread = adjacent_image_spread(identity)
    assert 0 < spread <= adjacent_image_spread(stretch) <= 2 * spread + 1e-12


@pytest.mark.slow
def test_dirichlet_cubic_recovers_order(plane: PolarTarget) -> None:
    mesh = build_disk_mesh(5)
    u = solve_dirichlet(_problem(mesh, plane, fixtures.power_map(mesh, plane, 3)))
    profile = order_profile(u, 0j)
    assert 2.55 <= profile.extrapolated <= 3.45


@pytest.mark.slow
def test_hopf_residual_shrinks_with_refinement(plane: PolarTarget) -> None:
    residuals = []
    for level in (3, 4, 5):
        mesh = build_disk_mesh(level)
        u = solve_dirichlet(_problem(mesh, plane, fixtures.power_map(mesh, plane, 2)))
        residuals.append(hopf_field(u).residual)
    # O(h) in total, so each halving of h should roughly halve it
    assert all(fine <= 0.7 * coarse for coarse, fine in zip(residuals, residuals[1:]))


def test_closed_solutions_agree_up_to_mobius(sphere3: DomainMesh, round_sphere: PolarTarget) -> None:
    config = SolverConfig(max_iterations=10)
    R = fixtures.rotation_matrix((1.0, 1.0, 0.5), 0.7)
    u = solve_closed(fixtures.sphere_identity(sphere3, round_sphere), config)
    v = solve_closed(fixtures.rotated_identity(sphere3, round_sphere, R), config, pins=(5, 20, 50))
    assert v.flags["pins"] != u.flags["pins"]
    fit = mobius_check(u, v, samples=20, seed=0, tolerance=0.1)
    assert fit.rms < 0.1
    assert fit.passed
