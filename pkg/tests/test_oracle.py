import numpy as np
import pytest

from twsar.oracle import (
    SeriesConvergenceError,
    SphereSeriesConfig,
    fd_gradient,
    prox_bruteforce,
    slab_delay_shift,
    sphere_series_field,
)

PTS = np.array([[2.0, 0.0, 0.0], [0.0, 3.0, 1.0], [-1.5, -1.5, 2.0]])


def test_zero_contrast_series_vanishes():
    cfg = SphereSeriesConfig(1.0, 1.0, 1.0)
    assert np.abs(sphere_series_field(cfg, PTS)).max() == 0


def test_small_sphere_field_vanishes():
    big = np.abs(sphere_series_field(SphereSeriesConfig(0.5, 1.0, 1.7), PTS)).max()
    small = np.abs(sphere_series_field(SphereSeriesConfig(1e-3, 1.0, 1.7), PTS)).max()
    assert small < 1e-6 * big


@pytest.mark.parametrize("source", ["plane", "point"])
def test_series_self_convergence(source):
    cfg = SphereSeriesConfig(1.0, 1.0, np.sqrt(3.0), source=source, position=(0, 0, 10.0))
    n = 20
    a = sphere_series_field(cfg, PTS, n_terms=n)
    b = sphere_series_field(cfg, PTS, n_terms=n + 10)
    assert np.linalg.norm(a - b) < 1e-10 * np.linalg.norm(b)


def test_series_rejects_interior_points_and_low_cap():
    with pytest.raises(ValueError):
        sphere_series_field(SphereSeriesConfig(1.0, 1.0, 2.0), np.array([[0.5, 0, 0]]))
    with pytest.raises(ValueError):
        SphereSeriesConfig(1.0, 5.0, 6.0, order_cap=3)


def test_series_reports_non_convergence():
    cfg = SphereSeriesConfig(1.0, 30.0, 45.0, order_cap=41)
    with pytest.raises(SeriesConvergenceError):
        sphere_series_field(cfg, np.array([[1.01, 0, 0]]))


def test_point_source_series_is_reciprocal():
    cfg_a = SphereSeriesConfig(1.0, 1.2, 2.0, source="point", position=(0, 0, 3.0))
    cfg_b = SphereSeriesConfig(1.0, 1.2, 2.0, source="point", position=(2.0, 1.0, 0.5))
    ab = sphere_series_field(cfg_a, np.array([[2.0, 1.0, 0.5]]))[0]
    ba = sphere_series_field(cfg_b, np.array([[0, 0, 3.0]]))[0]
    assert abs(ab - ba) <= 1e-8 * abs(ab)


def test_fd_gradient_examples():
    m = np.array([0.3, -1.2])
    assert np.allclose(fd_gradient(lambda x: float(x @ x), m, 1e-4), 2 * m, atol=1e-8)
    assert np.all(fd_gradient(lambda x: 5.0, m, 1e-3) == 0)
    f = lambda x: float(x[0] ** 3)  # noqa: E731
    e1 = abs(fd_gradient(f, [1.0], 1e-2)[0] - 3.0)
    e2 = abs(fd_gradient(f, [1.0], 5e-3)[0] - 3.0)
    assert e1 / e2 == pytest.approx(4.0, rel=1e-3)


def test_prox_bruteforce_examples():
    y = np.array([[0.3, -1.0], [2.0, 0.1]])
    assert np.array_equal(prox_bruteforce(y, 0.0), y)
    soft = np.sign(y) * np.maximum(np.abs(y) - 0.5, 0)
    assert np.allclose(prox_bruteforce(y, 0.5, "l1", restarts=3), soft, atol=1e-8)
    with pytest.raises(ValueError):
        prox_bruteforce(np.zeros((4, 4)), 0.1)


def test_slab_delay_shift():
    assert slab_delay_shift(0.3, 3.0) == pytest.approx(0.3 * (np.sqrt(3) - 1))
    assert slab_delay_shift(0.3, 1.0) == 0.0
