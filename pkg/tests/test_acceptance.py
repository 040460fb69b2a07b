"""Acceptance criteria C1 to C11.

Each test prints one ``C<n> PASS|FAIL`` line with the measured numbers and
then asserts the criterion as stated.  Offline models of the desk-scale
experiments are cached under ``tests/.cache`` (or ``$TWSAR_TEST_CACHE``)
so that a rerun only repeats the online stages.
"""

from __future__ import annotations

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from twsar.bem import complex_wavenumber, plane_wave_moments, scattered_field_point_source, TransmissionSolver
from twsar.bem import evaluate_representation
from twsar.cli.config import packaged_config
from twsar.cli.experiments import run_experiment
from twsar.constants import C0
from twsar.forward import ThroughWallModel, freespace_operator, greens_free
from twsar.geometry import AcquisitionConfig, build_corner_wall, build_sphere_mesh, make_acquisition, make_image_grid
from twsar.invert import InnerConfig, VarProProblem, prox_l1, prox_tv_magnitude
from twsar.oracle import SphereSeriesConfig, fd_gradient, prox_bruteforce, sphere_series_field, tv_isotropic
from twsar.rom import ParameterGrid, build_rom, build_snapshots, sample_parameter_grid

pytestmark = pytest.mark.slow

CACHE = Path(os.environ.get("TWSAR_TEST_CACHE", Path(__file__).parent / ".cache"))


def report(number: int, ok: bool, detail: str) -> None:
    line = f"C{number:<2d} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="session")
def experiments(tmp_path_factory):
    """Run a packaged experiment once per session, reusing cached offline models."""
    done = {}

    def run(name: str) -> tuple[dict, Path]:
        if name not in done:
            cfg = packaged_config(name).override(**{"rom.dir": str(CACHE / name)})
            out = tmp_path_factory.mktemp(name)
            done[name] = (run_experiment(cfg, out), out)
        return done[name]

    return run


def fibonacci_sphere(n: int, radius: float) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return radius * np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def test_c01_sphere_against_series():
    t0 = time.perf_counter()
    a, eps = 1.0, 3.0
    omega = C0 / a  # k0 a = 1
    k0, kD = complex_wavenumber(omega), complex_wavenumber(omega, eps)
    mesh = build_sphere_mesh(a, (0.0, 0.0, 0.0), 2 * np.pi / kD.real / 6)
    points = fibonacci_sphere(50, 2.0 * a)
    fs = TransmissionSolver(mesh, eps).system(omega)
    traces = fs.solve(plane_wave_moments(mesh, k0, (0.0, 0.0, 1.0)))
    u = evaluate_representation(mesh, traces, k0, points)
    ref = sphere_series_field(SphereSeriesConfig(a, k0, kD, source="plane", direction=(0.0, 0.0, 1.0)), points)
    err = np.linalg.norm(u - ref) / np.linalg.norm(ref)
    elapsed = time.perf_counter() - t0
    report(1, err <= 0.03 and elapsed < 120,
           f"sphere relative L2 error {100 * err:.2f}% (limit 3%), {mesh.n_triangles} triangles, {elapsed:.1f} s")


def test_c02_reciprocity_on_corner_wall():
    cfg = packaged_config("known-wall")
    acq = make_acquisition(cfg.acquisition())
    wall = cfg.true_wall()
    omega = float(acq.omegas[-1])
    k0, kD = complex_wavenumber(omega), complex_wavenumber(omega, wall.epsilon_r)
    mesh = build_corner_wall(wall, 2 * np.pi / kD.real / cfg["rom.per_wavelength"])
    pts = np.stack([acq.tx_positions[0], np.array(cfg["scene.positions"][0])])
    u = scattered_field_point_source(mesh, k0, kD, pts, pts)
    g_ab = greens_free(pts[1], pts[0], omega) + u[0, 1]
    g_ba = greens_free(pts[0], pts[1], omega) + u[1, 0]
    rel = abs(g_ab - g_ba) / abs(g_ab)
    report(2, rel <= 1e-3, f"G' swap mismatch {rel:.2e} (limit 1e-3) at {omega / 2e6 / np.pi:.0f} MHz, "
                           f"{mesh.n_vertices + mesh.n_triangles} unknowns")


def test_c03_podi_fidelity():
    cfg = packaged_config("unknown-permittivity")
    acq = make_acquisition(AcquisitionConfig(**{**cfg.acquisition().__dict__, "n_freq": 2, "n_slow": 3}))
    points = np.concatenate([make_image_grid(0.4, 0.2, center=(0.25, 0.25)).points,
                             np.array(cfg["scene.positions"])])
    base = cfg.true_wall()
    train = sample_parameter_grid([(1.75, 3.25)], [7], base=base)
    rom, snaps = build_rom(train, acq, points, alpha=1e-4)
    node_excess = 0.0
    for s, model in ((snaps.f0, rom.f0), (snaps.f1, rom.f1)):
        for j, node in enumerate(s.nodes):
            err = np.linalg.norm(model.evaluate(node) - s.D[:, j])
            node_excess = max(node_excess, err - model.factors.residual_bound)
    mids = 0.5 * (train.axes[0][1:] + train.axes[0][:-1])
    # the last training node keeps the same wall mesh as the training run
    direct = build_snapshots(ParameterGrid(("epsilon_r",), (np.append(mids, 3.25),), base), acq, points)
    worst = {}
    for s, model in ((direct.f0, rom.f0), (direct.f1, rom.f1)):
        worst[s.kind] = max(np.linalg.norm(model.evaluate([m]) - s.D[:, j]) / np.linalg.norm(s.D[:, j])
                            for j, m in enumerate(mids))
    report(3, node_excess <= 1e-10 and max(worst.values()) <= 0.05,
           f"node error beyond truncation bound {node_excess:.1e}; worst midpoint relative error F0 "
           f"{100 * worst['F0']:.2f}%, F1 {100 * worst['F1']:.2f}% (limit 5%), ranks F0 {rom.f0.factors.rank} "
           f"F1 {rom.f1.factors.rank}")


def test_c04_adjoint(small_case):
    acq, grid = small_case["acq"], small_case["grid"]
    ops = {"free space": freespace_operator(acq, grid),
           "through wall": ThroughWallModel(small_case["rom"], acq, grid).operator([2.2])}
    rng = np.random.default_rng(0)
    worst = 0.0
    for op in ops.values():
        for _ in range(10):
            v = rng.standard_normal(grid.n_pixels) + 1j * rng.standard_normal(grid.n_pixels)
            d = rng.standard_normal(acq.n_samples) + 1j * rng.standard_normal(acq.n_samples)
            av = op.apply(v)
            gap = abs(np.vdot(d, av) - np.vdot(op.adjoint(d), v)) / (np.linalg.norm(av) * np.linalg.norm(d))
            worst = max(worst, gap)
    report(4, worst <= 1e-10, f"worst normalised adjoint gap {worst:.1e} over 20 pairs (limit 1e-10)")


def test_c05_prox_oracles():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    tau = 0.8
    closed = np.maximum(np.abs(y) - tau, 0) * np.exp(1j * np.angle(y))
    l1_err = np.abs(prox_l1(y, tau) - closed).max()
    gaps = []
    for shape, restarts in (((2, 2), 8), ((3, 3), 4)):
        z = rng.random(shape) + 0.2
        ours = prox_tv_magnitude(z, 0.3, inner_iter=5000).real
        ref = prox_bruteforce(z, 0.3, "tv", restarts=restarts)

        def obj(x):
            return 0.5 * np.sum((x - z) ** 2) + 0.3 * tv_isotropic(np.abs(x))

        gaps.append(obj(ours) - obj(ref))
    ok = l1_err <= 1e-12 and all(g <= 1e-6 for g in gaps)
    report(5, ok, f"prox_l1 max error {l1_err:.1e}; TV objective excess over oracle 2x2 {gaps[0]:.1e}, "
                  f"3x3 {gaps[1]:.1e} (limit 1e-6)")


def test_c06_varpro_gradient(small_case):
    grid = small_case["grid"]
    model = ThroughWallModel(small_case["rom"], small_case["acq"], grid)
    rng = np.random.default_rng(0)
    v = np.zeros(grid.n_pixels, dtype=complex)
    v[4], v[1] = 1.0, 0.5j
    d = model.operator([1.9]).apply(v)
    d = d + 0.05 * np.linalg.norm(d) / np.sqrt(d.size) * rng.standard_normal(d.size)
    lam = 0.2 * np.abs(model.operator([1.9]).adjoint(d)).max()
    inner = InnerConfig(regularizer="l1", lambda_v=lam, max_iter=100000, r_tol=1e-10, v_tol=1e-10)
    problem = VarProProblem(model, d, inner, grid.shape)
    errs = []
    for m in rng.uniform(1.0, 2.5, 5):
        _, g, _ = problem.value_and_gradient([m], warm_start=False)
        fd = fd_gradient(lambda x: problem.solve_inner(x, derivatives=False, warm_start=False).objective, [m], 1e-4)
        errs.append(abs(g[0] - fd[0]) / abs(fd[0]))
    report(6, max(errs) <= 1e-3, "relative gradient errors " + ", ".join(f"{e:.1e}" for e in errs) +
           " (limit 1e-3)")


def test_c07_known_wall(experiments):
    s, _ = experiments("known-wall")
    kw = s["known_wall"]
    tw, std = kw["misfit_tw"], kw["misfit_std"]
    peaks_ok = len(kw["peak_errors_tw"]) == 3 and max(kw["peak_errors_tw"]) <= 0.1
    shift_ok = min(kw["std_range_shift"]) >= kw["predicted_shift"]
    ok = tw <= 1e-2 and std >= 5 * tw and peaks_ok and shift_ok
    report(7, ok, f"misfit through-wall {tw:.2e}, standard {std:.2e} ({std / tw:.0f}x); through-wall peak errors "
                  + ", ".join(f"{e:.3f}" for e in kw["peak_errors_tw"]) + " m; standard down-range shifts "
                  + ", ".join(f"{e:.3f}" for e in kw["std_range_shift"])
                  + f" m vs predicted {kw['predicted_shift']:.3f} m")


def test_c08_unknown_permittivity(experiments):
    s, _ = experiments("unknown-permittivity")
    vp = s["varpro"]
    m, truth = vp["m"][0], vp["m_true"][0]
    acc = vp["accepted_objectives"]
    decreasing = all(b < a for a, b in zip(acc, acc[1:]))
    steps = len(acc) - 1
    runtime = s["offline"]["timings"]["total"] + s["timings"]["total"] - s["timings"]["offline"]
    ok = abs(m - truth) <= 0.15 and steps <= 10 and decreasing and runtime < 1800
    report(8, ok, f"recovered epsilon_r {m:.3f} (truth {truth}), {steps} accepted steps, objective "
                  f"{'strictly decreasing' if decreasing else 'NOT decreasing'}, runtime {runtime / 60:.1f} min "
                  f"(offline {s['offline']['timings']['total'] / 60:.1f} min)")


def test_c09_approximate_wall(experiments):
    s, _ = experiments("approximate-wall")
    m, truth = s["varpro"]["m"][0], s["varpro"]["m_true"][0]
    ratio = s["final"]["background_ratio"]
    ok = truth - 0.5 <= m <= truth and ratio >= 2.0
    report(9, ok, f"recovered epsilon_r {m:.3f} (truth {truth}, accepted range [{truth - 0.5:.2f}, {truth}]); "
                  f"background energy standard/through-wall {ratio:.2f} (limit 2) with fractions "
                  f"{s['final']['background_std']:.3f} / {s['final']['background_tw']:.3f}")


def test_c10_sidelobes(experiments):
    s, _ = experiments("known-wall")
    sl = s["sidelobes"]
    gain = sl["range_psl_gain_db"]
    report(10, gain >= 0.5, f"range-cut peak sidelobe through-wall {sl['range_tw_psl_db']:.2f} dB vs standard "
                            f"{sl['range_std_psl_db']:.2f} dB, gain {gain:.2f} dB (limit 0.5 dB); cross-range "
                            f"gain {sl['cross_psl_gain_db']:.2f} dB")


def test_c11_determinism(smoke_runs):
    a, b = smoke_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*.twsr"))
    same = [f for f in files if (a / f).read_bytes() == (b / f).read_bytes()]
    ok = bool(files) and len(same) == len(files) and \
        sorted(p.relative_to(b) for p in b.rglob("*.twsr")) == files
    report(11, ok, f"{len(same)}/{len(files)} TWSR arrays bitwise identical across two smoke runs")
