import warnings

import numpy as np
import pytest

from twsar.rom import (
    ClampWarning,
    EmptyPodError,
    ParameterGrid,
    PodModel,
    RomPair,
    fit_interpolant,
    pod_truncate,
    sample_parameter_grid,
)


def test_sample_parameter_grid_examples():
    g = sample_parameter_grid([(2.0, 3.0)], [5])
    assert np.allclose(g.axes[0], [2.0, 2.25, 2.5, 2.75, 3.0])
    g = sample_parameter_grid([(2.0, 3.0), (0.1, 0.3)], [4, 1], names=("epsilon_r", "thickness"))
    assert g.nodes().shape == (4, 2)
    assert np.all(g.nodes()[:, 1] == 0.1)
    with pytest.raises(ValueError):
        sample_parameter_grid([(2.0, 3.0)], [3])
    with pytest.raises(ValueError):
        ParameterGrid(("epsilon_r",), (np.array([1.0, 1.0, 2.0, 3.0]),))


def test_pod_truncate_rank_and_bound():
    rng = np.random.default_rng(0)
    D = np.outer(rng.standard_normal(20), rng.standard_normal(6)).astype(complex)
    f = pod_truncate(D)
    assert f.rank == 1 and f.residual_bound <= 1e-12 * f.sigma[0]
    D = rng.standard_normal((50, 9)) + 1j * rng.standard_normal((50, 9))
    f = pod_truncate(D, alpha=0.5)
    approx = (f.H * f.sigma) @ f.G.conj().T
    assert np.linalg.norm(D - approx, 2) <= f.residual_bound * (1 + 1e-12)
    assert pod_truncate(D, alpha=1.0).rank == 1
    with pytest.raises(EmptyPodError):
        pod_truncate(np.zeros((4, 3)))


def _model(values, axis, bc="natural"):
    D = np.asarray(values, dtype=complex)
    grid = ParameterGrid(("epsilon_r",), (np.asarray(axis, float),))
    return fit_interpolant(pod_truncate(D, 1e-12), grid, "F1", (D.shape[0], 1, 1), bc)


def test_interpolation_reproduces_nodes():
    axis = np.linspace(1.0, 3.0, 6)
    D = np.stack([np.sin(axis), np.cos(2 * axis), axis ** 2])
    m = _model(D, axis)
    for j, x in enumerate(axis):
        assert np.allclose(m.evaluate([x]), D[:, j], atol=1e-12)


def test_constant_coefficients_have_zero_gradient():
    m = _model(np.ones((3, 5)), np.linspace(0, 1, 5))
    assert np.allclose(m.gradient([0.37])[0], 0.0, atol=1e-12)


def test_cubic_reproduction_not_a_knot():
    axis = np.linspace(0.0, 2.0, 5)
    f = lambda x: 1 + x - 0.5 * x ** 2 + 0.25 * x ** 3
    m = _model(f(axis)[None], axis, "not-a-knot")
    assert m.evaluate([1.3])[0] == pytest.approx(f(1.3))
    assert m.gradient([1.3])[0][0] == pytest.approx(1 - 1.3 + 0.75 * 1.3 ** 2)


def test_gradient_matches_finite_differences():
    axis = np.linspace(1.0, 3.0, 7)
    D = np.stack([np.exp(1j * axis), axis ** 3 * (1 + 1j)])
    m = _model(D, axis)
    h, x = 1e-6, 2.13
    fd = (m.evaluate([x + h]) - m.evaluate([x - h])) / (2 * h)
    assert np.allclose(m.gradient([x])[0], fd, rtol=1e-6, atol=1e-8)


def test_clamp_warning():
    axis = np.linspace(1.0, 3.0, 5)
    m = _model(np.stack([axis, axis ** 2]), axis)
    with pytest.warns(ClampWarning):
        u = m.evaluate([3.5])
    assert np.allclose(u, m.evaluate([3.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        m.evaluate([2.0])


def test_single_node_model():
    D = np.array([[1.0 + 2j], [3.0]])
    m = _model(D, [2.0])
    assert np.allclose(m.evaluate([2.0]), D[:, 0])
    assert np.allclose(m.gradient([2.0])[0], 0)


def test_few_nodes_rejected():
    with pytest.raises(ValueError):
        _model(np.ones((2, 3)), [1.0, 2.0, 3.0])


def test_zero_contrast_snapshot(small_case):
    snaps = small_case["snaps"]
    # the first node has epsilon_r = 1: nothing scatters
    assert snaps.f1.nodes[0, 0] == 1.0
    col = snaps.f1.D[:, 0]
    assert np.abs(col).max() <= 1e-6 * np.abs(snaps.f1.D).max()


def test_rom_reproduces_training_nodes(small_case):
    rom, snaps = small_case["rom"], small_case["snaps"]
    for s, model in ((snaps.f0, rom.f0), (snaps.f1, rom.f1)):
        for j, node in enumerate(s.nodes):
            err = np.linalg.norm(model.evaluate(node) - s.D[:, j])
            assert err <= model.factors.residual_bound + 1e-10 * np.linalg.norm(s.D[:, j])


def test_save_load_roundtrip(small_case, tmp_path):
    rom = small_case["rom"]
    rom.save(tmp_path)
    back = RomPair.load(tmp_path)
    for a, b in ((rom.f0, back.f0), (rom.f1, back.f1)):
        assert a.shape == b.shape and a.kind == b.kind
        assert np.array_equal(a.evaluate([1.8]), b.evaluate([1.8]))
    assert isinstance(back.f1, PodModel)
