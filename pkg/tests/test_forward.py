import numpy as np
import pytest

from twsar.bem import complex_wavenumber, scattered_field_point_source
from twsar.constants import C0
from twsar.forward import (
    PhaseHistory,
    PointMismatchError,
    ThroughWallModel,
    apply_adjoint,
    assemble_A,
    direct_wall_response,
    freespace_operator,
    greens_free,
    predict,
    spectrum_weight,
)
from twsar.geometry import AcquisitionConfig, build_corner_wall, make_acquisition, make_image_grid


def test_greens_free_examples():
    x, y = np.zeros(3), np.array([1.0, 0, 0])
    assert greens_free(x, y, 1e-300) == pytest.approx(1 / (4 * np.pi))
    omega = 2 * np.pi * 3e8
    lam = 2 * np.pi * C0 / omega
    g = greens_free(x, np.array([0, lam, 0]), omega)
    assert abs(g) == pytest.approx(1 / (4 * np.pi * lam))
    assert np.angle(g) == pytest.approx(0.0, abs=1e-9)
    a, b = np.array([0.1, 0.2, 0.3]), np.array([-1.0, 2.0, 0.5])
    assert greens_free(a, b, omega) == greens_free(b, a, omega)
    with pytest.raises(ValueError):
        greens_free(a, a, omega)


def test_spectrum_weight_examples():
    assert spectrum_weight(1.0) == 1.0
    assert spectrum_weight(3.0) / spectrum_weight(2.0) == pytest.approx(9 / 4)
    assert spectrum_weight(2.0, 5.0) == 5.0 * spectrum_weight(2.0)
    assert spectrum_weight(2.0, lambda w: w) == 8.0


def test_freespace_phase_at_reference_point():
    acq = make_acquisition(AcquisitionConfig(n_freq=4, n_slow=5))
    op = freespace_operator(acq, np.zeros((1, 3)))
    mono = acq.sample_index()[:, 0] == 0
    assert np.allclose(np.angle(op.matrix[mono, 0]), 0.0, atol=1e-9)


def test_freespace_range_phase_difference():
    cfg = AcquisitionConfig(n_freq=3, n_slow=1, bistatic_angles=(0.0,))
    acq = make_acquisition(cfg)
    u = acq.look_direction()
    dx = 0.07
    op = freespace_operator(acq, np.stack([np.zeros(3), dx * u]))
    ratio = op.matrix[:, 1] / op.matrix[:, 0]
    expected = np.exp(1j * acq.omegas * 2 * dx / C0)
    assert np.allclose(np.angle(ratio / expected), 0.0, atol=1e-3)


def test_adjoint_identity_and_zero_data():
    acq = make_acquisition(AcquisitionConfig(n_freq=4, n_slow=5))
    grid = make_image_grid(0.4, 0.1)
    op = freespace_operator(acq, grid)
    rng = np.random.default_rng(0)
    for _ in range(5):
        v = rng.standard_normal(grid.n_pixels) + 1j * rng.standard_normal(grid.n_pixels)
        d = rng.standard_normal(acq.n_samples) + 1j * rng.standard_normal(acq.n_samples)
        lhs, rhs = np.vdot(d, op.apply(v)), np.vdot(apply_adjoint(op, d), v)
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(op.apply(v)) * np.linalg.norm(d)
    assert np.all(op.adjoint(np.zeros(acq.n_samples)) == 0)
    with pytest.raises(ValueError):
        op.adjoint(np.zeros(3))
    with pytest.raises(ValueError):
        op.apply(np.zeros(2))


def test_backprojection_peaks_at_scatterer():
    acq = make_acquisition(AcquisitionConfig(n_freq=6, n_slow=8))
    grid = make_image_grid(0.6, 0.05)
    j = 40
    d = freespace_operator(acq, grid.points[j:j + 1]).matrix[:, 0]
    assert int(np.argmax(np.abs(freespace_operator(acq, grid).adjoint(d)))) == j


def test_phase_history_shape_checks():
    acq = make_acquisition(AcquisitionConfig(n_freq=2, n_slow=3))
    ph = PhaseHistory(np.arange(acq.n_samples), acq)
    assert ph.cube().shape == (3, 3, 2)
    with pytest.raises(ValueError):
        PhaseHistory(np.zeros(5), acq)


def test_through_wall_zero_contrast_equals_freespace(small_case):
    acq, grid, rom = small_case["acq"], small_case["grid"], small_case["rom"]
    A = assemble_A([1.0], rom, acq, grid).matrix
    F = freespace_operator(acq, grid).matrix
    assert np.abs(A - F).max() <= 1e-6 * np.abs(F).max()
    mono = acq.sample_index()[:, 0] == 0
    centre = int(np.argmin(np.linalg.norm(grid.points, axis=1)))
    assert np.allclose(np.angle(A[mono, centre]), 0.0, atol=1e-5)


def test_through_wall_adjoint(small_case):
    acq, grid, rom = small_case["acq"], small_case["grid"], small_case["rom"]
    op = ThroughWallModel(rom, acq, grid).operator([2.2])
    rng = np.random.default_rng(1)
    v = rng.standard_normal(grid.n_pixels) + 1j * rng.standard_normal(grid.n_pixels)
    d = rng.standard_normal(acq.n_samples) + 1j * rng.standard_normal(acq.n_samples)
    assert abs(np.vdot(d, op.apply(v)) - np.vdot(op.adjoint(d), v)) <= 1e-10 * np.linalg.norm(op.apply(v)) * \
        np.linalg.norm(d)


def test_through_wall_entry_matches_direct_bem(small_case):
    acq, grid, rom, base = small_case["acq"], small_case["grid"], small_case["rom"], small_case["base"]
    m = 2.0  # a training node; the ROM is trained with edge cap 0.3
    op = ThroughWallModel(rom, acq, grid).operator([m])
    i = 7
    c, s, f = acq.sample_index()[i]
    j = 4
    omega = acq.omegas[f]
    k0, kD = complex_wavenumber(omega), complex_wavenumber(omega, m)
    from twsar.rom import mesh_edge_for

    mesh = build_corner_wall(base.with_values(epsilon_r=m), mesh_edge_for(omega, small_case["pgrid"], edge_cap=0.3))
    x = grid.points[j]
    tx, rx = acq.tx_positions[s], acq.rx_positions[c, s]
    u = scattered_field_point_source(mesh, k0, kD, np.stack([tx, rx]), x[None])[:, 0]
    gt = greens_free(x, tx, omega) + u[0]
    gr = greens_free(rx, x, omega) + u[1]
    r0 = acq.reference_ranges()[i]
    ref = spectrum_weight(omega) * np.exp(-1j * omega * r0 / C0) * gt * gr
    assert abs(op.matrix[i, j] - ref) <= 0.05 * abs(ref)


def test_point_mismatch(small_case):
    with pytest.raises(PointMismatchError):
        ThroughWallModel(small_case["rom"], small_case["acq"], np.array([[0.01, 0.02, 0.0]]))


def test_predict_linearity_and_zero(small_case):
    acq, grid, rom = small_case["acq"], small_case["grid"], small_case["rom"]
    op = assemble_A([1.7], rom, acq, grid)
    v = np.random.default_rng(2).standard_normal(grid.n_pixels).astype(complex)
    assert np.all(predict(op, np.zeros(grid.n_pixels)) == 0)
    assert np.allclose(predict(op, 2.5j * v), 2.5j * predict(op, v))


def test_direct_wall_response(small_case):
    acq, rom = small_case["acq"], small_case["rom"]
    f0_zero = direct_wall_response([1.0], rom, acq).d
    f0 = direct_wall_response([2.5], rom, acq).d
    assert np.abs(f0_zero).max() <= 1e-6 * np.abs(f0).max()
    model = ThroughWallModel(rom, acq, small_case["grid"], spectrum=2.0)
    assert np.allclose(model.direct_wall_response([2.5]), 2 * f0)
    # at a training node the model reproduces the snapshot within the truncation bound
    snaps = small_case["snaps"]
    node = 3
    col = snaps.f0.D[:, node]
    assert np.linalg.norm(rom.f0.evaluate([2.5]) - col) <= rom.f0.factors.residual_bound + 1e-12 * np.linalg.norm(col)
