import numpy as np
import pytest

from twsar.bem import (
    CauchyTraces,
    FieldPointError,
    ResolutionError,
    TransmissionSolver,
    assemble_calderon,
    complex_wavenumber,
    evaluate_representation,
    factorization_count,
    point_source_moments,
    scattered_field_point_source,
)
from twsar.constants import C0, EPS0
from twsar.geometry import build_sphere_mesh, merge_meshes
from twsar.oracle import SphereSeriesConfig, sphere_series_field

OMEGA = 2 * np.pi * 150e6


@pytest.fixture(scope="module")
def sphere():
    return build_sphere_mesh(0.2, (0.0, 0.0, 0.0), 0.1)


def test_complex_wavenumber_examples():
    assert complex_wavenumber(OMEGA) == pytest.approx(OMEGA / C0)
    assert complex_wavenumber(OMEGA, 4.0) == pytest.approx(2 * OMEGA / C0)
    k = complex_wavenumber(OMEGA, 3.0, 0.01)
    assert k.imag > 0
    assert k ** 2 == pytest.approx((OMEGA / C0) ** 2 * complex(3.0, 0.01 / (OMEGA * EPS0)))
    with pytest.raises(ValueError):
        complex_wavenumber(0.0)


def test_calderon_block_symmetries(sphere):
    b = assemble_calderon(sphere, complex_wavenumber(OMEGA))
    scale = np.abs(b.V).max()
    assert np.abs(b.V - b.V.T).max() <= 1e-10 * scale
    assert np.abs(b.W - b.W.T).max() <= 1e-10 * np.abs(b.W).max()
    assert np.array_equal(b.Kp, b.K.T)


def test_resolution_check(sphere):
    with pytest.raises(ResolutionError):
        assemble_calderon(sphere, complex_wavenumber(2 * np.pi * 3e9, 3.0))


def test_zero_contrast_scatters_nothing(sphere):
    k0 = complex_wavenumber(OMEGA)
    u = scattered_field_point_source(sphere, k0, k0, np.array([1.0, 0.3, 0.2]), np.array([[0.0, 0.9, 0.1]]))
    assert np.abs(u).max() <= 1e-10


def test_zero_traces_give_zero_field(sphere):
    t = CauchyTraces(np.zeros(sphere.n_vertices, complex), np.zeros(sphere.n_triangles, complex))
    assert np.all(evaluate_representation(sphere, t, complex_wavenumber(OMEGA), np.array([[1.0, 0, 0]])) == 0)


def test_field_point_checks(sphere):
    k0 = complex_wavenumber(OMEGA)
    t = CauchyTraces(np.zeros(sphere.n_vertices, complex), np.zeros(sphere.n_triangles, complex))
    with pytest.raises(FieldPointError):
        evaluate_representation(sphere, t, k0, np.array([[0.0, 0.0, 0.05]]))
    with pytest.raises(FieldPointError):
        evaluate_representation(sphere, t, k0, np.array([[0.0, 0.0, 0.21]]))


def test_one_factorisation_per_frequency(sphere):
    solver = TransmissionSolver(sphere, 2.0)
    before = factorization_count()
    k0 = complex_wavenumber(OMEGA)
    for src in ([1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]):
        solver.system(OMEGA).solve(point_source_moments(sphere, k0, np.array(src)))
    # exterior and combined systems: two LU factorisations in total
    assert factorization_count() - before == 2


def test_reciprocity(sphere):
    k0, kD = complex_wavenumber(OMEGA), complex_wavenumber(OMEGA, 3.0)
    a, b = np.array([0.9, 0.2, 0.1]), np.array([-0.3, 0.8, -0.2])
    u_ab = scattered_field_point_source(sphere, k0, kD, a, b[None])[0]
    u_ba = scattered_field_point_source(sphere, k0, kD, b, a[None])[0]
    assert abs(u_ab - u_ba) <= 1e-3 * abs(u_ab)


def test_sphere_matches_series(sphere):
    k0, kD = complex_wavenumber(OMEGA), complex_wavenumber(OMEGA, 3.0)
    src = np.array([0.0, 0.0, 1.2])
    pts = np.array([[0.6, 0.0, 0.0], [0.0, -0.7, 0.3], [0.4, 0.4, -0.4], [0.0, 0.0, -0.8]])
    u = scattered_field_point_source(sphere, k0, kD, src, pts)
    ref = sphere_series_field(SphereSeriesConfig(0.2, k0, kD, source="point", position=tuple(src)), pts)
    assert np.linalg.norm(u - ref) <= 0.1 * np.linalg.norm(ref)


def test_two_bodies_with_own_materials():
    a = build_sphere_mesh(0.1, (0.0, 0.0, 0.0), 0.08)
    b = build_sphere_mesh(0.1, (0.5, 0.0, 0.0), 0.08)
    both = merge_meshes([a, b])
    k0 = complex_wavenumber(OMEGA)
    solver = TransmissionSolver(both, (3.0, 1.0))
    sys_ = solver.system(OMEGA)
    src, pts = np.array([0.0, 0.8, 0.0]), np.array([[0.0, -0.6, 0.0]])
    u2 = evaluate_representation(both, sys_.solve(point_source_moments(both, k0, src)), k0, pts)
    u1 = scattered_field_point_source(a, k0, complex_wavenumber(OMEGA, 3.0), src, pts)
    # the second body is transparent, so only the first one scatters
    assert np.allclose(u2, u1, rtol=1e-6, atol=1e-12)
