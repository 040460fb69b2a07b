import numpy as np
import pytest

from twsar.forward import ForwardOperator
from twsar.invert import (
    InnerConfig,
    OuterConfig,
    StepSizeError,
    fista,
    power_method_norm,
    prox_l1,
    prox_tv_magnitude,
    tv_norm,
)
from twsar.oracle import prox_bruteforce, tv_isotropic


def dense(A):
    A = np.asarray(A, dtype=np.complex128)
    return ForwardOperator(A, None, np.zeros(A.shape[0]), np.ones(A.shape[0]))


def test_prox_l1_examples():
    theta = 0.7
    y = np.array([0.5 * np.exp(1j), 2 * np.exp(1j * theta), -3.0])
    out = prox_l1(y, 1.0)
    assert out[0] == 0
    assert out[1] == pytest.approx(np.exp(1j * theta), abs=1e-15)
    assert out[2] == pytest.approx(-2.0)
    real = np.array([0.2, 1.5, 3.0])
    assert np.array_equal(prox_l1(real, 1.0), np.maximum(real - 1.0, 0))


def test_tv_norm_matches_oracle():
    x = np.random.default_rng(0).random((4, 5))
    assert tv_norm(x) == pytest.approx(tv_isotropic(x), rel=1e-14)


def test_prox_tv_magnitude_identity_and_constant():
    rng = np.random.default_rng(1)
    y = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    assert np.array_equal(prox_tv_magnitude(y, 0.0), y)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (3, 4)))
    const = 2.0 * phases
    out = prox_tv_magnitude(const, 0.7)
    assert np.allclose(np.abs(out), 2.0, atol=1e-12)
    assert np.allclose(np.angle(out), np.angle(const), atol=1e-12)


def test_prox_tv_magnitude_large_tau_flattens():
    y = np.random.default_rng(2).random((4, 4)) + 0.5
    out = prox_tv_magnitude(y, 100.0, inner_iter=3000)
    assert np.ptp(np.abs(out)) < 1e-3
    assert np.abs(out).mean() == pytest.approx(y.mean(), rel=1e-3)


def test_prox_tv_2x2_matches_bruteforce():
    y = np.array([[1.0, 0.2], [0.6, 1.4]])
    ours = prox_tv_magnitude(y, 0.5, inner_iter=5000).real
    ref = prox_bruteforce(y, 0.5, "tv", restarts=5)

    def obj(x):
        return 0.5 * np.sum((x - y) ** 2) + 0.5 * tv_isotropic(np.abs(x))

    assert abs(obj(ours) - obj(ref)) <= 1e-6
    assert np.allclose(ours, ref, atol=1e-3)


def test_power_method_examples():
    op = dense(np.diag([3.0, 1.0]))
    assert power_method_norm(op, 100) == pytest.approx(3.0, abs=1e-6)
    A = np.random.default_rng(3).standard_normal((6, 4))
    ests = [power_method_norm(A, k) for k in (1, 2, 5, 20)]
    assert all(b >= a - 1e-12 for a, b in zip(ests, ests[1:]))
    assert ests[-1] <= np.linalg.norm(A, 2) * (1 + 1e-12)
    assert power_method_norm(-2.5 * A, 20) == pytest.approx(2.5 * ests[-1], rel=1e-12)
    with pytest.raises(ValueError):
        power_method_norm(np.zeros((3, 3)), 5)


def test_inner_config_validation():
    with pytest.raises(ValueError):
        InnerConfig(lambda_v=-1.0)
    with pytest.raises(ValueError):
        InnerConfig(max_iter=0)
    with pytest.raises(ValueError):
        InnerConfig(regularizer="tikhonov")


def test_fista_least_squares():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8)) + 6 * np.eye(8)
    x = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    b = A @ x
    v, trace = fista(dense(A), b, InnerConfig(regularizer="none", max_iter=5000, r_tol=0, v_tol=1e-30), 0.0)
    assert np.linalg.norm(A @ v - b) / np.linalg.norm(b) <= 1e-6
    assert np.all(np.diff(trace.best_objective) <= 0)


def test_fista_warm_start_at_optimum_halts():
    A = np.eye(4)
    b = np.arange(4.0) + 1
    v, trace = fista(dense(A), b, InnerConfig(regularizer="none", r_tol=0, v_tol=1e-8), 0.0, v0=b)
    assert trace.iterations <= 2
    assert np.allclose(v, b)


def test_fista_l1_matches_soft_threshold():
    b = np.array([3.0, -0.5, 1.2j, 0.1])
    v, _ = fista(dense(np.eye(4)), b, InnerConfig(regularizer="l1", r_tol=0, v_tol=0, max_iter=50), 1.0,
                 lipschitz=1.0)
    assert np.allclose(v, prox_l1(b, 1.0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fista_bad_step_reports():
    A = 1e200 * np.eye(2)
    with pytest.raises(StepSizeError):
        fista(dense(A), np.ones(2), InnerConfig(regularizer="none", max_iter=5, r_tol=0, v_tol=0), 0.0,
              lipschitz=1e-300)


def test_outer_config_defaults():
    cfg = OuterConfig()
    assert cfg.max_bfgs_iter == 10 and cfg.armijo_c == 1e-4


def _varpro_case(small_case, m_true=1.9, noise=0.0):
    from twsar.forward import ThroughWallModel

    grid = small_case["grid"]
    model = ThroughWallModel(small_case["rom"], small_case["acq"], grid)
    v = np.zeros(grid.n_pixels, dtype=complex)
    v[4], v[1] = 1.0, 0.5j
    d = model.operator([m_true]).apply(v)
    if noise:
        d = d + noise * np.linalg.norm(d) / np.sqrt(d.size) * np.random.default_rng(0).standard_normal(d.size)
    return model, d, v


def test_varpro_gradient_with_converged_inner(small_case):
    from twsar.invert import VarProProblem
    from twsar.oracle import fd_gradient

    model, d, _ = _varpro_case(small_case, noise=0.05)
    lam = 0.2 * np.abs(model.operator([1.9]).adjoint(d)).max()
    inner = InnerConfig(regularizer="l1", lambda_v=lam, max_iter=20000, r_tol=0, v_tol=0)
    problem = VarProProblem(model, d, inner, small_case["grid"].shape)
    for m in (1.3, 2.2):
        _, g, _ = problem.value_and_gradient([m], warm_start=False)
        fd = fd_gradient(lambda x: problem.solve_inner(x, derivatives=False, warm_start=False).objective, [m], 1e-4)
        assert abs(g[0] - fd[0]) <= 1e-6 * abs(fd[0])


def test_misfit_gradient_with_fixed_reflectivity(small_case):
    from twsar.oracle import fd_gradient

    model, d, v = _varpro_case(small_case)

    def misfit(m):
        r = model.operator(m).apply(v) - d
        return 0.5 * np.vdot(r, r).real

    for m in (1.4, 2.1):
        op, dA = model.operator_and_derivatives([m])
        r = op.apply(v) - d
        g = np.vdot(dA[0] @ v, r).real
        fd = fd_gradient(misfit, [m], 1e-5)[0]
        assert abs(g - fd) <= 1e-6 * abs(fd)


def test_bfgs_at_truth_takes_no_step(small_case):
    from twsar.invert import VarProProblem, bfgs_outer

    model, d, _ = _varpro_case(small_case)
    inner = InnerConfig(regularizer="none", max_iter=20000, r_tol=0, v_tol=1e-28)
    problem = VarProProblem(model, d, inner, small_case["grid"].shape)
    m, _, trace = bfgs_outer(problem, OuterConfig(m0=(1.9,)))
    assert trace.stop_reason == "step_tol"
    assert len(trace.accepted()) == 1 and m[0] == 1.9


def test_bfgs_recovers_permittivity(small_case):
    from twsar.invert import VarProProblem, bfgs_outer

    model, d, _ = _varpro_case(small_case)
    inner = InnerConfig(regularizer="none", max_iter=3000, r_tol=1e-9, v_tol=1e-12)
    problem = VarProProblem(model, d, inner, small_case["grid"].shape)
    m, _, trace = bfgs_outer(problem, OuterConfig(m0=(2.3,)))
    acc = [r.objective for r in trace.accepted()]
    assert all(b < a for a, b in zip(acc, acc[1:]))
    assert abs(m[0] - 1.9) < 0.05
