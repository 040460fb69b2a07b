"""Experiment configuration: TOML files flattened to dotted keys.

A config file may use nested tables or dotted keys interchangeably;
``[wall.truth]`` with ``epsilon_r = 2.07`` and a top-level
``"wall.truth.epsilon_r" = 2.07`` are the same setting.  Every key must be
one of :data:`DEFAULTS`; anything else is rejected so that typos surface
immediately.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..geometry import AcquisitionConfig, ImageGrid, WallParams, make_image_grid

EXPERIMENTS = ("known-wall", "unknown-permittivity", "approximate-wall")

DEFAULTS: dict[str, Any] = {
    "experiment.name": "known-wall",
    "output.dir": "",
    # acquisition
    "acquisition.center_frequency": 349.9e6,
    "acquisition.bandwidth": 299.8e6,
    "acquisition.aperture": 0.86,
    "acquisition.tx_azimuth": -7.0 * math.pi / 12.0,
    "acquisition.bistatic_angles": [0.0, -math.pi / 6.0, -math.pi / 3.0],
    "acquisition.range": 20.0,
    "acquisition.n_slow": 12,
    "acquisition.n_freq": 12,
    "acquisition.antenna_height": 0.0,
    "acquisition.scene_center": [0.0, 0.0, 0.0],
    # image grid
    "grid.extent": [1.2, 1.2],
    "grid.spacing": 0.05,
    "grid.center": [0.25, 0.25],
    "grid.height": 0.0,
    # scene
    "scene.kind": "points",
    "scene.positions": [[-0.17, 0.23, 0.0], [0.11, -0.12, 0.0], [-0.22, -0.19, 0.0]],
    "scene.reflectivity": [1.0, 1.0, 1.0],
    "scene.sphere_radius": 0.125,
    "scene.sphere_epsilon_r": 5.0,
    "scene.sphere_sigma": 1e-6,
    "scene.per_wavelength": 5.0,
    # true wall
    "wall.truth.epsilon_r": 3.0,
    "wall.truth.sigma": 0.0,
    "wall.truth.thickness": 0.3,
    "wall.truth.offset": [0.0, 0.0],
    "wall.truth.lengths": [1.0, 1.2],
    "wall.truth.height": 0.6,
    "wall.truth.corner": [-0.8, -0.8],
    # wall assumed by the reconstruction (entries not given copy the truth)
    "wall.assumed.epsilon_r": None,
    "wall.assumed.sigma": None,
    "wall.assumed.thickness": None,
    "wall.assumed.offset": None,
    "wall.assumed.lengths": None,
    "wall.assumed.height": None,
    "wall.assumed.corner": None,
    # reduced-order model
    "rom.parameters": ["epsilon_r"],
    "rom.bounds": [[3.0, 3.0]],
    "rom.counts": [1],
    "rom.alpha": 1e-4,
    "rom.bc_type": "natural",
    "rom.per_wavelength": 5.0,
    "rom.edge_cap": 0.0,
    "rom.clearance_fraction": 0.9,
    "rom.dir": "",
    # data
    "data.include_f0": False,
    "noise.fraction": 0.0,
    "noise.seed": 0,
    # inner (image) solver
    "inner.lambda_v": -1.0,
    "inner.lambda_rel": 1e-3,
    "inner.regularizer": "tv",
    "inner.max_iter": 500,
    "inner.r_tol": 1e-6,
    "inner.v_tol": 1e-8,
    "inner.tv_inner_iter": 20,
    "inner.power_iter": 100,
    # outer (wall parameter) solver
    "outer.m0": [3.0],
    "outer.lambda_m": [3.0],
    "outer.max_bfgs_iter": 10,
    "outer.step_tol": 1e-3,
    "outer.armijo_c": 1e-4,
    "outer.wolfe_c2": 0.9,
    "outer.max_expansions": 8,
    "outer.warm_start": False,
    # final L1 reconstructions at the recovered parameters
    "final.enabled": False,
    "final.regularizer": "l1",
    "final.lambda_rel": 1e-2,
    "final.max_iter": 500,
    "final.background_radius": 0.3,
    # single-target back-projection study
    "sidelobe.enabled": False,
    "sidelobe.target": [0.0, 0.0, 0.0],
    "sidelobe.range_span": [-0.425, 2.0],
    "sidelobe.cross_span": [-0.55, 0.42],
    "sidelobe.step": 0.025,
}


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _check_type(key: str, value: Any) -> Any:
    default = DEFAULTS[key]
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        if isinstance(default, float):
            return float(value)
        if not float(value).is_integer():
            raise ConfigError(f"{key} must be an integer")
        return int(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{key} must be an array")
    return value


@dataclass
class ExperimentConfig:
    """Validated flat configuration with typed accessors."""

    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))
    source: str = "<defaults>"

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @classmethod
    def from_mapping(cls, tree: dict, source: str = "<mapping>") -> "ExperimentConfig":
        flat = flatten(tree)
        unknown = sorted(set(flat) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(DEFAULTS)
        for key, value in flat.items():
            values[key] = _check_type(key, value)
        cfg = cls(values, source)
        cfg.validate()
        return cfg

    def override(self, **dotted) -> "ExperimentConfig":
        tree = {k: v for k, v in self.values.items()}
        tree.update(dotted)
        return ExperimentConfig.from_mapping(tree, self.source)

    def validate(self) -> None:
        v = self.values
        if v["experiment.name"] not in EXPERIMENTS:
            raise ConfigError(f"experiment.name must be one of {EXPERIMENTS}")
        if v["scene.kind"] not in ("points", "spheres"):
            raise ConfigError("scene.kind must be 'points' or 'spheres'")
        if len(v["scene.reflectivity"]) != len(v["scene.positions"]):
            raise ConfigError("scene.reflectivity needs one entry per position")
        names = v["rom.parameters"]
        if not (len(names) == len(v["rom.bounds"]) == len(v["rom.counts"]) == len(v["outer.m0"])
                == len(v["outer.lambda_m"])):
            raise ConfigError("rom.parameters, rom.bounds, rom.counts, outer.m0 and outer.lambda_m must align")
        for (lo, hi), m0 in zip(v["rom.bounds"], v["outer.m0"]):
            if lo > hi or not lo <= m0 <= hi:
                raise ConfigError("outer.m0 must lie inside rom.bounds")
        if v["noise.fraction"] < 0:
            raise ConfigError("noise.fraction must be >= 0")
        if v["inner.regularizer"] not in ("tv", "l1", "none") or v["final.regularizer"] not in ("tv", "l1", "none"):
            raise ConfigError("regularizer must be 'tv', 'l1' or 'none'")
        self.assumed_wall()
        for name, (lo, hi) in zip(names, v["rom.bounds"]):
            if name == "epsilon_r" and lo < 1.0:
                raise ConfigError("epsilon_r bounds must be >= 1")
            if name in ("thickness", "height") and lo <= 0:
                raise ConfigError(f"{name} bounds must be positive")

    # typed views -----------------------------------------------------

    def acquisition(self) -> AcquisitionConfig:
        v = self.values
        return AcquisitionConfig(
            center_frequency=v["acquisition.center_frequency"],
            bandwidth=v["acquisition.bandwidth"],
            aperture=v["acquisition.aperture"],
            tx_azimuth=v["acquisition.tx_azimuth"],
            bistatic_angles=tuple(float(b) for b in v["acquisition.bistatic_angles"]),
            range=v["acquisition.range"],
            n_slow=int(v["acquisition.n_slow"]),
            n_freq=int(v["acquisition.n_freq"]),
            scene_center=tuple(v["acquisition.scene_center"]),
            antenna_height=v["acquisition.antenna_height"],
        )

    def grid(self) -> ImageGrid:
        v = self.values
        return make_image_grid(tuple(v["grid.extent"]), v["grid.spacing"], v["grid.height"],
                               center=tuple(v["grid.center"]))

    def _wall(self, prefix: str, fallback: WallParams | None = None) -> WallParams:
        v = self.values

        def get(name, attr):
            value = v[f"{prefix}.{name}"]
            if value is None:
                return getattr(fallback, attr)
            return tuple(value) if isinstance(value, list) else value

        return WallParams(
            epsilon_r=get("epsilon_r", "epsilon_r"),
            sigma=get("sigma", "sigma"),
            thickness=get("thickness", "thickness"),
            origin_offset=get("offset", "origin_offset"),
            lengths=get("lengths", "lengths"),
            height=get("height", "height"),
            corner=get("corner", "corner"),
        )

    def true_wall(self) -> WallParams:
        return self._wall("wall.truth")

    def assumed_wall(self) -> WallParams:
        return self._wall("wall.assumed", self.true_wall())

    def scene_points(self):
        import numpy as np

        return np.asarray(self.values["scene.positions"], dtype=float).reshape(-1, 3)


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        tree = tomllib.load(fh)
    return ExperimentConfig.from_mapping(tree, str(path))


def packaged_config(name: str) -> ExperimentConfig:
    """Load one of the configs shipped in ``twsar/configs`` (e.g. ``"known-wall"``)."""
    res = resources.files("twsar.configs").joinpath(f"{name}.toml")
    if not res.is_file():
        raise ConfigError(f"no packaged config named {name!r}")
    with res.open("rb") as fh:
        return ExperimentConfig.from_mapping(tomllib.load(fh), f"package:{name}")


def packaged_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("twsar.configs").iterdir() if p.name.endswith(".toml"))
