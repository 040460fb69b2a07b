"""Shared fixtures: a tiny offline model that builds in seconds."""

from __future__ import annotations

import numpy as np
import pytest

from twsar.geometry import AcquisitionConfig, WallParams, make_acquisition, make_image_grid
from twsar.rom import build_rom, sample_parameter_grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_case():
    """Low-band, coarse acquisition with a 3x3 image around the reference point.

    The permittivity axis starts at 1 so the zero-contrast node is a
    training node.
    """
    acq = make_acquisition(AcquisitionConfig(center_frequency=150e6, bandwidth=60e6, n_freq=2, n_slow=3))
    grid = make_image_grid(0.2, 0.1)
    base = WallParams(epsilon_r=2.0, thickness=0.3, corner=(-0.8, -0.8))
    pgrid = sample_parameter_grid([(1.0, 2.5)], [4], base=base)
    rom, snaps = build_rom(pgrid, acq, grid.points, edge_cap=0.3)
    return {"acq": acq, "grid": grid, "pgrid": pgrid, "rom": rom, "snaps": snaps, "base": base}


@pytest.fixture(scope="session")
def smoke_runs(tmp_path_factory):
    """Two complete runs of the packaged smoke experiment through the CLI."""
    from twsar.cli import main

    dirs = []
    for name in ("run_a", "run_b"):
        out = tmp_path_factory.mktemp(name)
        assert main(["experiment", "smoke", "--out", str(out)]) == 0
        dirs.append(out)
    return dirs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
