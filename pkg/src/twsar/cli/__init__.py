"""Command-line entry point: ``twsar <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config, packaged_config, packaged_names
from .experiments import (
    StageError,
    add_noise,
    output_dir,
    run_experiment,
    simulate_data,
)

__all__ = ["main", "run_experiment", "add_noise", "simulate_data", "ExperimentConfig", "load_config",
           "packaged_config"]


def _config(args, default_name: str | None = None) -> ExperimentConfig:
    if args.config:
        return load_config(args.config)
    return packaged_config(default_name or "known-wall")


def _cmd_mesh(args) -> dict:
    from ..geometry import build_corner_wall, build_sphere_mesh, mesh_validate, write_off
    from ..bem import complex_wavenumber

    cfg = _config(args)
    out = output_dir(cfg, args.out)
    omega = 2 * np.pi * cfg["acquisition.center_frequency"]
    pw = cfg["rom.per_wavelength"]
    report = {}
    for label, wall in (("truth", cfg.true_wall()), ("assumed", cfg.assumed_wall())):
        edge = 2 * np.pi / complex_wavenumber(omega, wall.epsilon_r, wall.sigma).real / pw
        mesh = build_corner_wall(wall, edge)
        write_off(mesh, out / f"wall_{label}.off")
        rep = mesh_validate(mesh)
        report[label] = {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles, "max_edge": mesh.max_edge,
                         "watertight": rep.watertight, "outward": rep.outward, "volume": rep.volume}
    if cfg["scene.kind"] == "spheres":
        k = complex_wavenumber(omega, cfg["scene.sphere_epsilon_r"], cfg["scene.sphere_sigma"])
        for i, c in enumerate(cfg.scene_points()):
            mesh = build_sphere_mesh(cfg["scene.sphere_radius"], c, 2 * np.pi / k.real / cfg["scene.per_wavelength"])
            write_off(mesh, out / f"sphere_{i}.off")
            report[f"sphere_{i}"] = {"vertices": mesh.n_vertices, "triangles": mesh.n_triangles}
    return report


def _prepared(args):
    from .experiments import RunContext, prepare

    cfg = _config(args)
    ctx = RunContext(cfg, output_dir(cfg, args.out), cfg["noise.seed"] if args.seed is None else args.seed,
                     data_path=Path(args.data) if getattr(args, "data", None) else None)
    return ctx, prepare(ctx)


def _cmd_offline(args) -> dict:
    from ..geometry import make_acquisition
    from .experiments import RunContext, offline, scene_layout, stage

    cfg = _config(args)
    ctx = RunContext(cfg, output_dir(cfg, args.out), 0)
    with stage("offline", ctx.timings):
        acquisition = make_acquisition(cfg.acquisition())
        _, info = offline(cfg, acquisition, scene_layout(cfg, acquisition), ctx.rom_dir())
    return dict(info, rom_dir=str(ctx.rom_dir()), timings=ctx.timings)


def _cmd_simulate(args) -> dict:
    ctx, (acquisition, grid, layout, rom, clean, data) = _prepared(args)
    return {"samples": int(data.d.size), "norm": float(np.linalg.norm(data.d)), "out": str(ctx.out / "data.twsr"),
            "timings": ctx.timings}


def _cmd_backproject(args) -> dict:
    from ..forward import ThroughWallModel, freespace_operator
    from .experiments import _save_image, wall_vector

    ctx, (acquisition, grid, layout, rom, clean, data) = _prepared(args)
    m = np.asarray(args.m, dtype=float) if args.m else wall_vector(ctx.cfg, ctx.cfg.assumed_wall())
    model = ThroughWallModel(rom, acquisition, grid)
    b = data.d - model.direct_wall_response(m) if ctx.cfg["data.include_f0"] else data.d
    _save_image(ctx.out, "bp_tw", model.operator(m).adjoint(b), grid)
    _save_image(ctx.out, "bp_std", freespace_operator(acquisition, grid).adjoint(data.d), grid)
    return {"m": m.tolist(), "out": str(ctx.out)}


def _cmd_reconstruct(args) -> dict:
    cfg = _config(args)
    return run_experiment(cfg, args.out, args.seed, data_path=args.data)


def _cmd_experiment(args) -> dict:
    if args.list:
        return {"experiments": packaged_names()}
    if not args.name:
        raise ConfigError("experiment name required (see --list)")
    cfg = load_config(args.config) if args.config else packaged_config(args.name)
    return run_experiment(cfg, args.out, args.seed)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment config (default: a packaged one)")
    common.add_argument("--seed", type=int, default=None, help="noise seed (overrides noise.seed)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, default=None, help="numba worker threads")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="twsar", description="Through-wall SAR experiments with reduced-order "
                                     "wall models.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("mesh", parents=[common], help="write and validate the wall (and sphere) meshes")
    sub.add_parser("offline", parents=[common], help="build or reuse the F0/F1 reduced-order models")
    sub.add_parser("simulate", parents=[common], help="synthesise phase-history data")
    p = sub.add_parser("backproject", parents=[common], help="standard and through-wall back-projection")
    p.add_argument("--data", help="TWSR phase history (default: simulate)")
    p.add_argument("--m", type=float, nargs="+", help="wall parameters (default: the assumed wall)")
    p = sub.add_parser("reconstruct", parents=[common], help="run the configured reconstruction")
    p.add_argument("--data", help="TWSR phase history (default: simulate)")
    p = sub.add_parser("experiment", parents=[common], help="run a complete experiment")
    p.add_argument("name", nargs="?", help="packaged experiment name")
    p.add_argument("--list", action="store_true", help="list packaged experiments")
    return parser


COMMANDS = {
    "mesh": _cmd_mesh,
    "offline": _cmd_offline,
    "simulate": _cmd_simulate,
    "backproject": _cmd_backproject,
    "reconstruct": _cmd_reconstruct,
    "experiment": _cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        result = COMMANDS[args.command](args)
    except (StageError, ConfigError, OSError) as exc:
        print(f"twsar: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=1, default=str))
    return 0
