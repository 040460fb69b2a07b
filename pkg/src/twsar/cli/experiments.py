"""Experiment pipeline: offline models, synthetic data, reconstructions, exports."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter

from ..arrayio import read_array, write_array
from ..bem.solver import check_field_points
from ..bem import (
    TransmissionSolver,
    complex_wavenumber,
    point_source_moments,
    potential_matrices,
)
from ..forward import (
    PhaseHistory,
    ThroughWallModel,
    _sample_tables,
    freespace_operator,
)
from ..geometry import (
    AcquisitionGeometry,
    ImageGrid,
    WallParams,
    build_corner_wall,
    build_sphere_mesh,
    distance_to_mesh,
    make_acquisition,
    merge_meshes,
)
from ..invert import InnerConfig, OuterConfig, VarProProblem, bfgs_outer, fista, power_method_norm
from ..oracle import slab_delay_shift
from ..rom import RomPair, acquisition_hash, build_rom, sample_parameter_grid
from .config import ExperimentConfig
from .io import colourize_overlay, export_image, peak_sidelobe, profile_db, write_profile_csv

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; the message starts with the stage tag."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str, timings: dict | None = None):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - tagged and re-raised
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# -- noise ---------------------------------------------------------------------


def add_noise(d, fraction: float, seed: int):
    """Add complex white Gaussian noise with ``||noise|| = fraction * ||d||`` exactly.

    Accepts a :class:`PhaseHistory` or an array and returns the same kind.
    """
    if fraction < 0:
        raise ValueError("fraction must be >= 0")
    arr = d.d if isinstance(d, PhaseHistory) else np.asarray(d, dtype=np.complex128)
    out = arr.copy()
    norm = np.linalg.norm(arr)
    if fraction > 0 and norm > 0:
        rng = np.random.default_rng(seed)
        noise = rng.standard_normal(arr.shape) + 1j * rng.standard_normal(arr.shape)
        out = arr + noise * (fraction * norm / np.linalg.norm(noise))
    if isinstance(d, PhaseHistory):
        return PhaseHistory(out, d.acquisition, dict(d.meta, noise_fraction=fraction, noise_seed=seed))
    return out


# -- scene layout ---------------------------------------------------------------


@dataclass
class Layout:
    """Evaluation points of the F1 model and the slices that address them."""

    points: np.ndarray
    slices: dict = field(default_factory=dict)

    def get(self, name: str) -> np.ndarray:
        return self.points[self.slices[name]]


def cut_offsets(span, step: float) -> np.ndarray:
    lo, hi = span
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


def cut_directions(acquisition: AcquisitionGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Unit down-range and cross-range vectors in the horizontal plane."""
    u = acquisition.look_direction()
    return u, np.array([-u[1], u[0], 0.0])


def scene_layout(cfg: ExperimentConfig, acquisition: AcquisitionGeometry) -> Layout:
    parts = {"grid": cfg.grid().points}
    if cfg["scene.kind"] == "points" and len(cfg["scene.positions"]):
        parts["scene"] = cfg.scene_points()
    if cfg["sidelobe.enabled"]:
        target = np.asarray(cfg["sidelobe.target"], dtype=float)
        u, w = cut_directions(acquisition)
        parts["target"] = target[None]
        parts["range_cut"] = target + cut_offsets(cfg["sidelobe.range_span"], cfg["sidelobe.step"])[:, None] * u
        parts["cross_cut"] = target + cut_offsets(cfg["sidelobe.cross_span"], cfg["sidelobe.step"])[:, None] * w
    slices, start = {}, 0
    for name, pts in parts.items():
        slices[name] = slice(start, start + len(pts))
        start += len(pts)
    return Layout(np.concatenate(list(parts.values())), slices)


# -- offline stage ---------------------------------------------------------------


def parameter_grid(cfg: ExperimentConfig):
    names = tuple(cfg["rom.parameters"])
    return sample_parameter_grid([tuple(b) for b in cfg["rom.bounds"]], cfg["rom.counts"], names,
                                 base=cfg.assumed_wall())


def auto_edge_cap(cfg: ExperimentConfig, points: np.ndarray) -> float:
    """``rom.edge_cap`` if set, else a fraction of the smallest point-to-wall clearance."""
    if cfg["rom.edge_cap"] > 0:
        return cfg["rom.edge_cap"]
    grid = parameter_grid(cfg)
    clearance = np.inf
    seen = set()
    for m in grid.nodes():
        p = grid.params(m)
        key = (p.thickness, p.origin_offset, p.lengths, p.height, p.corner)
        if key in seen:
            continue
        seen.add(key)
        mesh = build_corner_wall(p, 0.5 * p.thickness)
        clearance = min(clearance, float(distance_to_mesh(mesh, points).min()))
    return cfg["rom.clearance_fraction"] * clearance


def rom_fingerprint(cfg: ExperimentConfig, acquisition: AcquisitionGeometry, points: np.ndarray) -> str:
    keys = sorted(k for k in cfg.values if k.startswith("rom.") and k != "rom.dir")
    payload = {k: cfg[k] for k in keys}
    payload["base"] = repr(cfg.assumed_wall())
    payload["acquisition"] = acquisition_hash(acquisition)
    h = hashlib.sha256(json.dumps(payload, sort_keys=True).encode())
    h.update(np.ascontiguousarray(points, dtype=float).tobytes())
    return h.hexdigest()[:24]


def offline(cfg: ExperimentConfig, acquisition: AcquisitionGeometry, layout: Layout,
            rom_dir: str | Path) -> tuple[RomPair, dict]:
    """Load the F0/F1 models from ``rom_dir`` if they match the config, else build them."""
    rom_dir = Path(rom_dir)
    fingerprint = rom_fingerprint(cfg, acquisition, layout.points)
    manifest = rom_dir / "manifest.json"
    if manifest.is_file():
        info = json.loads(manifest.read_text())
        if info.get("fingerprint") == fingerprint:
            log.info("reusing offline models in %s", rom_dir)
            return RomPair.load(rom_dir), dict(info, reused=True)
    grid = parameter_grid(cfg)
    cap = auto_edge_cap(cfg, layout.points)
    log.info("offline build: %d nodes, edge cap %.3f m", len(grid.nodes()), cap)
    rom, snaps = build_rom(grid, acquisition, layout.points, alpha=cfg["rom.alpha"], bc_type=cfg["rom.bc_type"],
                           per_wavelength=cfg["rom.per_wavelength"], edge_cap=cap)
    rom_dir.mkdir(parents=True, exist_ok=True)
    rom.save(rom_dir)
    info = {"fingerprint": fingerprint, "edge_cap": cap, "timings": snaps.timings,
            "rank_f0": rom.f0.factors.rank, "rank_f1": rom.f1.factors.rank, "nodes": len(grid.nodes())}
    manifest.write_text(json.dumps(info, indent=1))
    return rom, dict(info, reused=False)


# -- data simulation ---------------------------------------------------------------


def wall_vector(cfg: ExperimentConfig, wall: WallParams) -> np.ndarray:
    return np.array([wall.get(n) for n in cfg["rom.parameters"]], dtype=float)


def _check_point_scene_walls(cfg: ExperimentConfig) -> None:
    truth, assumed = cfg.true_wall(), cfg.assumed_wall()
    names = set(cfg["rom.parameters"])
    for attr in ("epsilon_r", "sigma", "thickness", "lengths", "height", "corner", "origin_offset"):
        varied = attr in names or (attr == "origin_offset" and names & {"offset_x", "offset_y"})
        if not varied and getattr(truth, attr) != getattr(assumed, attr):
            raise ValueError(f"point scenes are simulated with the offline models, so the true and assumed "
                             f"walls may only differ in the model parameters ({attr} differs)")


def simulate_point_scene(cfg: ExperimentConfig, rom: RomPair, acquisition: AcquisitionGeometry) -> PhaseHistory:
    """``A(m_true) v (+ F0(m_true))`` at the configured scatterer positions."""
    _check_point_scene_walls(cfg)
    m_true = wall_vector(cfg, cfg.true_wall())
    pts = cfg.scene_points()
    d = np.zeros(acquisition.n_samples, dtype=np.complex128)
    if len(pts):
        model = ThroughWallModel(rom, acquisition, pts)
        d = model.operator(m_true).apply(np.asarray(cfg["scene.reflectivity"], dtype=np.complex128))
    if cfg["data.include_f0"]:
        model = ThroughWallModel(rom, acquisition, rom.f1.points[:1])
        d = d + model.direct_wall_response(m_true)
    return PhaseHistory(d, acquisition, {"kind": "points", "m_true": m_true.tolist()})


def _full_wave_fields(wall: WallParams | None, spheres: list, acquisition: AcquisitionGeometry,
                      per_wavelength: float) -> np.ndarray:
    """Scattered field at every (frequency, slow time, channel) from one multi-body solve per frequency."""
    antennas, tx_index, rx_index = acquisition.antenna_table()
    n_f, n_s, n_c = acquisition.n_freq, acquisition.n_slow, acquisition.n_channels
    out = np.zeros((n_f, n_s, n_c), dtype=np.complex128)
    if wall is None and not spheres:
        return out
    for f, omega in enumerate(acquisition.omegas):
        meshes, eps, sig = [], [], []
        if wall is not None:
            kw = complex_wavenumber(omega, wall.epsilon_r, wall.sigma)
            meshes.append(build_corner_wall(wall, 2 * np.pi / kw.real / per_wavelength))
            eps.append(wall.epsilon_r)
            sig.append(wall.sigma)
        for center, radius, e, s in spheres:
            ks = complex_wavenumber(omega, e, s)
            meshes.append(build_sphere_mesh(radius, center, 2 * np.pi / ks.real / per_wavelength))
            eps.append(e)
            sig.append(s)
        mesh = merge_meshes(meshes)
        check_field_points(mesh, antennas)
        solver = TransmissionSolver(mesh, epsilon_r=tuple(eps), sigma=tuple(sig))
        k0 = complex_wavenumber(omega)
        system = solver.system(omega)
        sc = system.solve(point_source_moments(mesh, k0, antennas[tx_index])).scattered()
        sl, dl = potential_matrices(mesh, k0, antennas)
        field_ = sc.dirichlet @ dl.T - sc.neumann @ sl.T  # (slow time, antenna)
        for c in range(n_c):
            out[f, :, c] = field_[np.arange(n_s), rx_index[c]]
        log.info("full-wave frequency %d/%d: %d unknowns", f + 1, n_f, mesh.n_vertices + mesh.n_triangles)
    return out


def simulate_sphere_scene(cfg: ExperimentConfig, acquisition: AcquisitionGeometry) -> PhaseHistory:
    """Wall and spheres meshed jointly and solved without a Born approximation.

    With ``data.include_f0`` off, the field of the wall alone is subtracted.
    """
    truth = cfg.true_wall()
    r = cfg["scene.sphere_radius"]
    spheres = [(c, r, cfg["scene.sphere_epsilon_r"], cfg["scene.sphere_sigma"]) for c in cfg.scene_points()]
    pw = cfg["scene.per_wavelength"]
    u = _full_wave_fields(truth, spheres, acquisition, pw)
    if not cfg["data.include_f0"]:
        u = u - _full_wave_fields(truth, [], acquisition, pw)
    c, s, f, _, w = _sample_tables(acquisition)
    return PhaseHistory(w * u[f, s, c], acquisition, {"kind": "spheres"})


def simulate_data(cfg: ExperimentConfig, rom: RomPair | None, acquisition: AcquisitionGeometry,
                  seed: int | None = None) -> tuple[PhaseHistory, PhaseHistory]:
    """Clean and noisy synthetic data for the configured scene."""
    if cfg["scene.kind"] == "points":
        if rom is None:
            raise ValueError("point scenes need the offline models")
        clean = simulate_point_scene(cfg, rom, acquisition)
    else:
        clean = simulate_sphere_scene(cfg, acquisition)
    seed = cfg["noise.seed"] if seed is None else seed
    return clean, add_noise(clean, cfg["noise.fraction"], seed)


# -- reconstruction helpers -------------------------------------------------------


def inner_config(cfg: ExperimentConfig, prefix: str = "inner") -> InnerConfig:
    if prefix == "final":
        return InnerConfig(lambda_v=None, regularizer=cfg["final.regularizer"], max_iter=cfg["final.max_iter"],
                           r_tol=cfg["inner.r_tol"], v_tol=cfg["inner.v_tol"],
                           tv_inner_iter=cfg["inner.tv_inner_iter"], power_iter=cfg["inner.power_iter"])
    lam = cfg["inner.lambda_v"]
    return InnerConfig(
        lambda_v=None if lam < 0 else lam,
        lambda_rel=cfg["inner.lambda_rel"],
        regularizer=cfg["inner.regularizer"],
        max_iter=cfg["inner.max_iter"],
        r_tol=cfg["inner.r_tol"],
        v_tol=cfg["inner.v_tol"],
        tv_inner_iter=cfg["inner.tv_inner_iter"],
        power_iter=cfg["inner.power_iter"],
    )


def inner_lambda(cfg: ExperimentConfig, op) -> float:
    lam = cfg["inner.lambda_v"]
    if lam >= 0 or cfg["inner.regularizer"] == "none":
        return max(lam, 0.0)
    return cfg["inner.lambda_rel"] * power_method_norm(op, cfg["inner.power_iter"])


def local_peaks(image: np.ndarray, grid: ImageGrid, count: int) -> np.ndarray:
    """Positions of the ``count`` strongest 3x3 local maxima, strongest first."""
    mag = np.abs(image).reshape(grid.shape)
    is_peak = (mag == maximum_filter(mag, size=3, mode="constant")) & (mag > 0)
    iy, ix = np.nonzero(is_peak)
    order = np.argsort(-mag[iy, ix], kind="stable")[:count]
    return np.stack([grid.x[ix[order]], grid.y[iy[order]]], axis=1)


def peak_errors(peaks: np.ndarray, truth: np.ndarray) -> list[float]:
    """Distance from each true position to its nearest detected peak."""
    if len(peaks) == 0:
        return [float("inf")] * len(truth)
    d = np.linalg.norm(truth[:, None, :2] - peaks[None, :, :], axis=-1)
    return d.min(axis=1).tolist()


def range_shift(data: np.ndarray, acquisition: AcquisitionGeometry, position: np.ndarray,
                span=(-0.5, 1.0), step: float = 0.005) -> float:
    """Down-range offset of the free-space back-projection main lobe from ``position``.

    The back-projection is sampled on a fine line through ``position``
    along the look direction; the main-lobe centre is the midpoint of its
    -3 dB interval.
    """
    u, _ = cut_directions(acquisition)
    t = cut_offsets(span, step)
    prof = np.abs(freespace_operator(acquisition, position + t[:, None] * u).adjoint(data))
    prof /= prof.max()
    i = int(np.argmax(prof))
    lo, hi = i, i
    half = 1 / np.sqrt(2)
    while lo > 0 and prof[lo - 1] >= half:
        lo -= 1
    while hi < len(prof) - 1 and prof[hi + 1] >= half:
        hi += 1
    return float(0.5 * (t[lo] + t[hi]))


def background_fraction(image: np.ndarray, grid: ImageGrid, centres: np.ndarray, radius: float) -> float:
    """Share of image energy farther than ``radius`` from every centre."""
    e = np.abs(np.asarray(image)) ** 2
    d = np.linalg.norm(grid.points[:, None, :2] - centres[None, :, :2], axis=-1).min(axis=1)
    total = e.sum()
    return float(e[d > radius].sum() / total) if total > 0 else 0.0


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _save_image(out: Path, name: str, v: np.ndarray, grid: ImageGrid) -> None:
    write_array(out / f"{name}.twsr", np.asarray(v).reshape(grid.shape))
    export_image(v, out / f"{name}.pgm", grid)


def _channel_rows(acquisition: AcquisitionGeometry, channel: int) -> np.ndarray:
    return np.nonzero(acquisition.sample_index()[:, 0] == channel)[0]


# -- experiments -------------------------------------------------------------------


@dataclass
class RunContext:
    cfg: ExperimentConfig
    out: Path
    seed: int
    timings: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    data_path: Path | None = None

    def rom_dir(self) -> Path:
        return Path(self.cfg["rom.dir"]) if self.cfg["rom.dir"] else self.out / "rom"


def prepare(ctx: RunContext):
    """Acquisition, layout, offline models and data shared by every experiment."""
    cfg = ctx.cfg
    with stage("acquisition", ctx.timings):
        acquisition = make_acquisition(cfg.acquisition())
        grid = cfg.grid()
        layout = scene_layout(cfg, acquisition)
    with stage("offline", ctx.timings):
        rom, info = offline(cfg, acquisition, layout, ctx.rom_dir())
        ctx.summary["offline"] = info
    with stage("simulate", ctx.timings):
        if ctx.data_path is not None:
            data = PhaseHistory(read_array(ctx.data_path).ravel(), acquisition, {"source": str(ctx.data_path)})
            clean = data
        else:
            clean, data = simulate_data(cfg, rom, acquisition, ctx.seed)
            write_array(ctx.out / "data_clean.twsr", clean.d)
        write_array(ctx.out / "data.twsr", data.d)
    return acquisition, grid, layout, rom, clean, data


def run_known_wall(ctx: RunContext) -> dict:
    """Known wall: standard and through-wall reconstructions of the same data."""
    cfg, out = ctx.cfg, ctx.out
    acquisition, grid, layout, rom, clean, data = prepare(ctx)
    m = wall_vector(cfg, cfg.assumed_wall())
    inner = inner_config(cfg)
    with stage("reconstruct", ctx.timings):
        ops = {"tw": ThroughWallModel(rom, acquisition, grid).operator(m),
               "std": freespace_operator(acquisition, grid)}
        traces, images = {}, {}
        for name, op in ops.items():
            lam = inner_lambda(cfg, op)
            v, trace = fista(op, data.d, inner, lam, grid.shape)
            images[name], traces[name] = v, trace
            _save_image(out, f"recon_{name}", v, grid)
            bp = op.adjoint(data.d)
            _save_image(out, f"bp_{name}", bp, grid)
        n = max(len(t.misfit) for t in traces.values())

        def col(t, k):
            return t.misfit[min(k, len(t.misfit) - 1)]

        _write_csv(out / "convergence.csv", ["iteration", "misfit_tw", "misfit_std"],
                   ([k, col(traces["tw"], k), col(traces["std"], k)] for k in range(n)))
        write_array(out / "convergence.twsr", np.array([traces["tw"].misfit, traces["std"].misfit]))
        truth = cfg.scene_points()
        res = {
            "m": m.tolist(),
            "misfit_tw": traces["tw"].misfit[-1],
            "misfit_std": traces["std"].misfit[-1],
            "best_misfit_tw": min(traces["tw"].misfit),
            "best_misfit_std": min(traces["std"].misfit),
            "iterations": traces["tw"].iterations,
        }
        if len(truth):
            peaks = local_peaks(images["tw"], grid, len(truth))
            res["peaks_tw"] = peaks.tolist()
            res["peak_errors_tw"] = peak_errors(peaks, truth)
            res["peaks_std"] = local_peaks(images["std"], grid, len(truth)).tolist()
            # single-target data per scatterer give the free-space model's range displacement
            cols = ThroughWallModel(rom, acquisition, truth).operator(m).matrix
            res["std_range_shift"] = [range_shift(cols[:, j], acquisition, p) for j, p in enumerate(truth)]
            wall = cfg.true_wall()
            res["predicted_shift"] = slab_delay_shift(wall.thickness, wall.epsilon_r)
    ctx.summary["known_wall"] = res
    if cfg["sidelobe.enabled"]:
        with stage("sidelobes", ctx.timings):
            ctx.summary["sidelobes"] = sidelobe_study(ctx, acquisition, grid, layout, rom, m)
    return ctx.summary


def sidelobe_study(ctx: RunContext, acquisition, grid, layout: Layout, rom: RomPair, m) -> dict:
    """Single point target: per-channel overlays and range/cross-range cuts of the back-projection."""
    out = ctx.out
    target = layout.get("target")
    d = ThroughWallModel(rom, acquisition, target).operator(m).matrix[:, 0]
    write_array(out / "sidelobe_data.twsr", d)
    ops = {"tw": ThroughWallModel(rom, acquisition, grid).operator(m), "std": freespace_operator(acquisition, grid)}
    for name, op in ops.items():
        _save_image(out, f"target_bp_{name}", op.adjoint(d), grid)
        chans = []
        for c in range(acquisition.n_channels):
            rows = _channel_rows(acquisition, c)
            chans.append(op.matrix[rows].conj().T @ d[rows])
        if len(chans) == 3:
            colourize_overlay(chans, out / f"overlay_{name}.ppm", grid)
    res = {}
    offsets = {"range": cut_offsets(ctx.cfg["sidelobe.range_span"], ctx.cfg["sidelobe.step"]),
               "cross": cut_offsets(ctx.cfg["sidelobe.cross_span"], ctx.cfg["sidelobe.step"])}
    for cut in ("range", "cross"):
        pts = layout.get(f"{cut}_cut")
        cut_ops = {"tw": ThroughWallModel(rom, acquisition, pts).operator(m), "std": freespace_operator(acquisition, pts)}
        for name, op in cut_ops.items():
            prof = profile_db(op.adjoint(d))
            write_profile_csv(out / f"sidelobe_{cut}_{name}.csv", offsets[cut], prof)
            write_array(out / f"sidelobe_{cut}_{name}.twsr", prof)
            res[f"{cut}_{name}_psl_db"] = peak_sidelobe(offsets[cut], prof)
            res[f"{cut}_{name}_peak_offset"] = float(offsets[cut][int(np.argmax(prof))])
        res[f"{cut}_psl_gain_db"] = res[f"{cut}_std_psl_db"] - res[f"{cut}_tw_psl_db"]
    return res


def _varpro(ctx: RunContext, acquisition, grid, rom, data) -> tuple[np.ndarray, np.ndarray, dict]:
    cfg, out = ctx.cfg, ctx.out
    model = ThroughWallModel(rom, acquisition, grid)
    inner = inner_config(cfg)
    problem = VarProProblem(model, data.d, inner, grid.shape, include_f0=cfg["data.include_f0"],
                            lam=None, m_ref=np.asarray(cfg["outer.lambda_m"], dtype=float))
    outer = OuterConfig(m0=tuple(cfg["outer.m0"]), max_bfgs_iter=cfg["outer.max_bfgs_iter"],
                        armijo_c=cfg["outer.armijo_c"], step_tol=cfg["outer.step_tol"],
                        wolfe_c2=cfg["outer.wolfe_c2"], max_expansions=cfg["outer.max_expansions"],
                        warm_start=cfg["outer.warm_start"])
    m, v, trace = bfgs_outer(problem, outer)
    names = list(cfg["rom.parameters"])
    trace.to_csv(out / "outer_trace.csv", names)
    accepted = trace.accepted()
    write_array(out / "outer_m.twsr", np.array([r.m for r in accepted]))
    write_array(out / "outer_objective.twsr", np.array([r.objective for r in accepted]))
    write_array(out / "m_final.twsr", m)
    _save_image(out, "recon_tw", v, grid)
    first = problem.solve_inner(accepted[0].m, derivatives=False, warm_start=False)
    _save_image(out, "recon_tw_first", first.v, grid)
    res = {
        "m": m.tolist(),
        "names": names,
        "objective": accepted[-1].objective,
        "lambda": problem.lam,
        "outer_iterations": len(accepted) - 1,
        "evaluations": len(trace.records),
        "stop_reason": trace.stop_reason,
        "accepted_objectives": [r.objective for r in accepted],
        "accepted_m": [r.m.tolist() for r in accepted],
    }
    return m, v, res


def _standard_images(ctx: RunContext, acquisition, grid, data) -> np.ndarray:
    op = freespace_operator(acquisition, grid)
    _save_image(ctx.out, "bp_std", op.adjoint(data.d), grid)
    v, _ = fista(op, data.d, inner_config(ctx.cfg), inner_lambda(ctx.cfg, op), grid.shape)
    _save_image(ctx.out, "recon_std", v, grid)
    return v


def run_unknown_permittivity(ctx: RunContext) -> dict:
    """Unknown wall parameters recovered by variable projection."""
    acquisition, grid, layout, rom, clean, data = prepare(ctx)
    with stage("reconstruct", ctx.timings):
        _standard_images(ctx, acquisition, grid, data)
        m, v, res = _varpro(ctx, acquisition, grid, rom, data)
        res["m_true"] = wall_vector(ctx.cfg, ctx.cfg.true_wall()).tolist()
    ctx.summary["varpro"] = res
    return ctx.summary


def run_approximate_wall(ctx: RunContext) -> dict:
    """Full-wave data, mis-specified wall, final L1 images for both models."""
    cfg, out = ctx.cfg, ctx.out
    acquisition, grid, layout, rom, clean, data = prepare(ctx)
    with stage("reconstruct", ctx.timings):
        _standard_images(ctx, acquisition, grid, data)
        m, v, res = _varpro(ctx, acquisition, grid, rom, data)
        res["m_true"] = wall_vector(cfg, cfg.true_wall()).tolist()
    ctx.summary["varpro"] = res
    if cfg["final.enabled"]:
        with stage("final", ctx.timings):
            ctx.summary["final"] = final_images(ctx, acquisition, grid, rom, data, m)
    return ctx.summary


def final_images(ctx: RunContext, acquisition, grid, rom, data, m) -> dict:
    """Back-projection and sparse reconstructions at the recovered parameters.

    The L1 weight is ``final.lambda_rel * max |A^H b|`` for each model, a
    fixed fraction of the weight above which the solution vanishes.
    """
    cfg, out = ctx.cfg, ctx.out
    model = ThroughWallModel(rom, acquisition, grid)
    b_tw = data.d - model.direct_wall_response(m) if cfg["data.include_f0"] else data.d
    ops = {"tw": (model.operator(m), b_tw), "std": (freespace_operator(acquisition, grid), data.d)}
    inner = inner_config(cfg, "final")
    centres = cfg.scene_points()
    res = {}
    for name, (op, b) in ops.items():
        bp = op.adjoint(b)
        _save_image(out, f"final_bp_{name}", bp, grid)
        lam = cfg["final.lambda_rel"] * float(np.abs(bp).max())
        v, trace = fista(op, b, inner, lam, grid.shape)
        _save_image(out, f"final_{inner.regularizer}_{name}", v, grid)
        res[f"background_{name}"] = background_fraction(v, grid, centres, cfg["final.background_radius"])
        res[f"misfit_{name}"] = trace.misfit[-1]
    tw = res["background_tw"]
    res["background_ratio"] = res["background_std"] / tw if tw > 0 else float("inf")
    return res


RUNNERS = {
    "known-wall": run_known_wall,
    "unknown-permittivity": run_unknown_permittivity,
    "approximate-wall": run_approximate_wall,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def output_dir(cfg: ExperimentConfig, out: str | Path | None = None) -> Path:
    path = Path(out or cfg["output.dir"] or f"runs/{cfg['experiment.name']}")
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None, seed: int | None = None,
                   data_path: str | Path | None = None) -> dict:
    """Run the configured experiment and write its artifacts and ``summary.json``.

    With ``data_path`` the phase history is read from a TWSR file instead
    of being simulated.
    """
    out = output_dir(cfg, out)
    ctx = RunContext(cfg, out, cfg["noise.seed"] if seed is None else seed,
                     data_path=Path(data_path) if data_path else None)
    ctx.summary = {"experiment": cfg["experiment.name"], "config": cfg.source, "seed": ctx.seed}
    t0 = time.perf_counter()
    RUNNERS[cfg["experiment.name"]](ctx)
    ctx.timings["total"] = time.perf_counter() - t0
    ctx.summary["timings"] = ctx.timings
    (out / "summary.json").write_text(json.dumps(_jsonable(ctx.summary), indent=1))
    return ctx.summary
