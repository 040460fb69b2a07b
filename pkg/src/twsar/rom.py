"""Proper orthogonal decomposition with interpolation (PODI) of wall-scattered fields.

Offline, the scattered field ``U_D^sc`` of the wall is simulated for every
node of a tensor grid in the wall parameters ``m`` and stacked into one
column per node.  A truncated SVD ``D ~ H Sigma G^*`` compresses the
snapshots and the rows of ``G`` are interpolated over the grid with cubic
splines.  Online, the field at any ``m`` costs one small matrix-vector
product and never touches the BEM.

Two stacks are kept apart:

``F1``
    fields at scene points (image pixels and any extra points) for a
    point source at every distinct antenna position, rows ordered
    ``(frequency, antenna, point)``;
``F0``
    fields at the receiver of every sample for a source at its
    transmitter, rows ordered ``(frequency, slow time, channel)``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .arrayio import read_array, write_array
from .bem import (
    QuadratureConfig,
    assemble_calderon,
    complex_wavenumber,
    factorize,
    factorize_exterior,
    point_source_moments,
    potential_matrices,
)
from .bem.solver import check_field_points
from .geometry import AcquisitionGeometry, SurfaceMesh, WallParams, build_corner_wall

log = logging.getLogger(__name__)

GEOMETRIC_FIELDS = ("thickness", "offset_x", "offset_y", "lengths", "height", "corner")
MATERIAL_FIELDS = ("epsilon_r", "sigma")


class SnapshotError(RuntimeError):
    """A BEM solve failed while building snapshots; the message names the node."""


class EmptyPodError(ValueError):
    """The snapshot matrix is identically zero, so no mode can be retained."""


class ClampWarning(UserWarning):
    """A parameter outside the trained range was clamped to the nearest bound."""


# -- parameter grid ----------------------------------------------------------


@dataclass(frozen=True)
class ParameterGrid:
    """Tensor-product grid over selected wall parameters.

    Attributes
    ----------
    names : tuple of str
        Parameter names, from :data:`MATERIAL_FIELDS` or ``thickness``,
        ``offset_x``, ``offset_y``, ``height``.
    axes : tuple of ndarray
        Sample values per parameter (length 1 for a fixed coordinate).
    base : WallParams
        Values of every parameter not listed in ``names``.
    """

    names: tuple[str, ...]
    axes: tuple[np.ndarray, ...]
    base: WallParams = field(default_factory=WallParams)

    def __post_init__(self):
        if len(self.names) != len(self.axes):
            raise ValueError("one axis per parameter name is required")
        axes = tuple(np.asarray(a, dtype=float).ravel() for a in self.axes)
        for name, a in zip(self.names, axes):
            if a.size == 0:
                raise ValueError(f"axis {name!r} is empty")
            if np.any(np.diff(a) <= 0):
                raise ValueError(f"axis {name!r} must be strictly increasing (duplicate nodes?)")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def bounds(self) -> np.ndarray:
        """Array of shape (dim, 2) with the lower and upper bound of each axis."""
        return np.array([[a[0], a[-1]] for a in self.axes])

    @property
    def varying(self) -> np.ndarray:
        return np.array([a.size > 1 for a in self.axes])

    def nodes(self) -> np.ndarray:
        """All nodes in row-major order (last parameter fastest), shape (N_obs, dim)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def params(self, m) -> WallParams:
        values = dict(zip(self.names, (float(x) for x in np.atleast_1d(m))))
        return self.base.with_values(**values)


def sample_parameter_grid(
    bounds: Sequence[tuple[float, float]],
    counts: Sequence[int],
    names: Sequence[str] = ("epsilon_r",),
    base: WallParams | None = None,
    cubic: bool = True,
) -> ParameterGrid:
    """Uniform tensor grid with ``counts[j]`` samples on ``bounds[j]``.

    A count of one fixes the coordinate at the lower bound.  With
    ``cubic`` every varying coordinate needs at least four samples.
    """
    if not (len(bounds) == len(counts) == len(names)):
        raise ValueError("bounds, counts and names must have equal length")
    axes = []
    for name, (lo, hi), n in zip(names, bounds, counts):
        if n < 1:
            raise ValueError(f"count for {name!r} must be positive")
        if n == 1:
            axes.append(np.array([float(lo)]))
            continue
        if cubic and n < 4:
            raise ValueError(f"cubic interpolation in {name!r} needs at least 4 nodes, got {n}")
        if not hi > lo:
            raise ValueError(f"empty range for {name!r}")
        a = np.linspace(lo, hi, n)
        a[0], a[-1] = lo, hi
        axes.append(a)
    return ParameterGrid(tuple(names), tuple(axes), base or WallParams())


# -- snapshots ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SnapshotMatrix:
    """Stacked snapshots, one column per parameter node.

    ``row_index`` has one row per entry of a column.  For ``kind == "F1"``
    its columns are (frequency, antenna, point) indices; for ``"F0"`` they
    are (frequency, slow time, channel).
    """

    D: np.ndarray
    row_index: np.ndarray
    nodes: np.ndarray
    kind: str
    shape: tuple[int, int, int]

    def __post_init__(self):
        if self.D.shape[1] != len(self.nodes):
            raise ValueError("one column per node is required")
        if self.D.shape[0] != len(self.row_index) or self.D.shape[0] != int(np.prod(self.shape)):
            raise ValueError("row index map does not match the snapshot rows")


def row_index(shape: tuple[int, int, int]) -> np.ndarray:
    """Row-major index triples for a stack of the given shape."""
    grids = np.meshgrid(*(np.arange(n) for n in shape), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True)
class SnapshotSet:
    f0: SnapshotMatrix
    f1: SnapshotMatrix
    points: np.ndarray
    antennas: np.ndarray
    omegas: np.ndarray
    timings: dict


def mesh_edge_for(omega: float, grid: ParameterGrid, per_wavelength: float = 5.0,
                  edge_cap: float | None = None) -> float:
    """Target edge length resolving the shortest interior wavelength on the grid."""
    eps = grid.bounds[grid.names.index("epsilon_r")][1] if "epsilon_r" in grid.names else grid.base.epsilon_r
    sig = grid.bounds[grid.names.index("sigma")][1] if "sigma" in grid.names else grid.base.sigma
    k = complex_wavenumber(omega, eps, sig)
    edge = 2 * np.pi / k.real / per_wavelength
    return min(edge, edge_cap) if edge_cap else edge


def _geometry_key(p: WallParams) -> tuple:
    return (p.thickness, p.origin_offset, p.lengths, p.height, p.corner)


def build_snapshots(
    grid: ParameterGrid,
    acquisition: AcquisitionGeometry,
    points: np.ndarray,
    mesh_builder: Callable[[WallParams, float], SurfaceMesh] = build_corner_wall,
    per_wavelength: float = 5.0,
    edge_cap: float | None = None,
    quadrature: QuadratureConfig | None = None,
) -> SnapshotSet:
    """Simulate the wall-scattered fields at every grid node.

    For each frequency the wall is meshed once per distinct geometry
    (resolving the shortest interior wavelength on the grid), the
    exterior operator and its factorisation are shared by all material
    nodes of that geometry, and one LU of the combined system per node
    serves every antenna source.

    Parameters
    ----------
    grid : ParameterGrid
    acquisition : AcquisitionGeometry
    points : ndarray, shape (P, 3)
        Scene points for the F1 stack (image pixels, possibly followed by
        extra points such as off-grid scatterers).
    mesh_builder : callable
        ``(WallParams, target_edge) -> SurfaceMesh``.
    per_wavelength, edge_cap : float
        Mesh density: edges at most ``lambda_int / per_wavelength`` and,
        if given, at most ``edge_cap``.

    Raises
    ------
    SnapshotError
        Wrapping any BEM failure, tagged with the node and frequency.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
    antennas, tx_index, rx_index = acquisition.antenna_table()
    nodes = grid.nodes()
    n_nodes = len(nodes)
    n_f, n_a, n_p = acquisition.n_freq, len(antennas), len(points)
    n_s, n_c = acquisition.n_slow, acquisition.n_channels
    D1 = np.zeros((n_f, n_a, n_p, n_nodes), dtype=np.complex128)
    D0 = np.zeros((n_f, n_s, n_c, n_nodes), dtype=np.complex128)
    params = [grid.params(m) for m in nodes]
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(params):
        groups.setdefault(_geometry_key(p), []).append(i)
    timings = {"assembly": 0.0, "factorisation": 0.0, "evaluation": 0.0}
    t_start = time.perf_counter()
    eval_pts = np.concatenate([points, antennas])
    for f, omega in enumerate(acquisition.omegas):
        k0 = complex_wavenumber(omega)
        edge = mesh_edge_for(omega, grid, per_wavelength, edge_cap)
        for members in groups.values():
            p0 = params[members[0]]
            try:
                mesh = mesh_builder(p0, edge)
                check_field_points(mesh, eval_pts)
                t0 = time.perf_counter()
                blocks0 = assemble_calderon(mesh, k0, quadrature)
                t1 = time.perf_counter()
                exterior = factorize_exterior(blocks0)
                t2 = time.perf_counter()
                moments = point_source_moments(mesh, k0, antennas)
                sl, dl = potential_matrices(mesh, k0, eval_pts)
                t3 = time.perf_counter()
                incident = exterior.incident_traces(moments)
                timings["assembly"] += t1 - t0
                timings["factorisation"] += t2 - t1
                timings["evaluation"] += t3 - t2
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise SnapshotError(f"frequency {f} ({omega / 2 / np.pi:.4g} Hz), geometry of node "
                                    f"{members[0]} {p0}: {exc}") from exc
            for i in members:
                p = params[i]
                try:
                    t0 = time.perf_counter()
                    kD = complex_wavenumber(omega, p.epsilon_r, p.sigma)
                    blocksD = assemble_calderon(mesh, kD, quadrature, couple_bodies=False, validate=False)
                    t1 = time.perf_counter()
                    system = factorize(blocks0, blocksD, float(omega), exterior=exterior)
                    del blocksD
                    t2 = time.perf_counter()
                    sc = system.solve(incident).scattered()
                    u = sc.dirichlet @ dl.T - sc.neumann @ sl.T  # (antenna, eval point)
                    t3 = time.perf_counter()
                except Exception as exc:  # noqa: BLE001
                    raise SnapshotError(f"frequency {f} ({omega / 2 / np.pi:.4g} Hz), node {i} {p}: {exc}") from exc
                timings["assembly"] += t1 - t0
                timings["factorisation"] += t2 - t1
                timings["evaluation"] += t3 - t2
                D1[f, :, :, i] = u[:, :n_p]
                u_ant = u[:, n_p:]
                for c in range(n_c):
                    D0[f, :, c, i] = u_ant[tx_index, rx_index[c]]
                del system
            log.info("frequency %d/%d: %d unknowns, %d nodes, %.0f s elapsed", f + 1, n_f,
                     mesh.n_vertices + mesh.n_triangles, len(members), time.perf_counter() - t_start)
    timings["total"] = time.perf_counter() - t_start
    shape1 = (n_f, n_a, n_p)
    shape0 = (n_f, n_s, n_c)
    f1 = SnapshotMatrix(D1.reshape(-1, n_nodes), row_index(shape1), nodes, "F1", shape1)
    f0 = SnapshotMatrix(D0.reshape(-1, n_nodes), row_index(shape0), nodes, "F0", shape0)
    return SnapshotSet(f0, f1, points, antennas, np.asarray(acquisition.omegas, dtype=float), timings)


# -- truncated SVD -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PodFactors:
    """``D ~ H diag(sigma) G^*`` with ``sigma_k >= alpha sigma_1``.

    ``residual_bound`` is the first discarded singular value (zero when
    nothing was discarded), which bounds ``||D - H Sigma G^*||_2``.
    """

    H: np.ndarray
    sigma: np.ndarray
    G: np.ndarray
    alpha: float
    residual_bound: float

    @property
    def rank(self) -> int:
        return len(self.sigma)


def pod_truncate(D, alpha: float = 1e-4) -> PodFactors:
    """Thin SVD of the snapshots truncated at ``sigma_k >= alpha sigma_1``."""
    D = D.D if isinstance(D, SnapshotMatrix) else np.asarray(D)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    U, s, Vh = np.linalg.svd(D, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise EmptyPodError("snapshot matrix is zero; no modes retained (K = 0)")
    K = int(np.count_nonzero((s >= alpha * s[0]) & (s > 0)))
    bound = float(s[K]) if K < s.size else 0.0
    return PodFactors(U[:, :K].copy(), s[:K].copy(), Vh[:K].conj().T.copy(), float(alpha), bound)


# -- interpolation -------------------------------------------------------------


def _cardinal_weights(axis: np.ndarray, x: float, bc_type: str) -> tuple[np.ndarray, np.ndarray]:
    """Weights ``w`` and ``dw`` with ``s(x) = w @ y`` and ``s'(x) = dw @ y`` for data ``y``."""
    n = axis.size
    if n == 1:
        return np.ones(1), np.zeros(1)
    spline = CubicSpline(axis, np.eye(n), bc_type=bc_type)
    return spline(x), spline(x, 1)


@dataclass(frozen=True, eq=False)
class PodModel:
    """Online PODI evaluator for one snapshot stack.

    Tensor-product cubic splines (one 1D spline per varying coordinate)
    interpolate the rows of ``G``; since a spline is linear in its data the
    evaluation reduces to cardinal weights over the nodes.
    """

    factors: PodFactors
    grid: ParameterGrid
    kind: str
    shape: tuple[int, int, int]
    bc_type: str = "natural"
    points: np.ndarray | None = None
    antennas: np.ndarray | None = None
    omegas: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.factors.G.shape[0] != int(np.prod(self.grid.counts)):
            raise ValueError("factor rows do not match the grid nodes")
        for name, a in zip(self.grid.names, self.grid.axes):
            if a.size > 1 and a.size < 4:
                raise ValueError(f"cubic interpolation in {name!r} needs at least 4 nodes")
        # H Sigma, reused by every evaluation
        object.__setattr__(self, "_HS", self.factors.H * self.factors.sigma)

    @property
    def n_rows(self) -> int:
        return self.factors.H.shape[0]

    def clamp(self, m) -> tuple[np.ndarray, bool]:
        m = np.atleast_1d(np.asarray(m, dtype=float))
        if m.shape != (self.grid.dim,):
            raise ValueError(f"expected {self.grid.dim} parameters, got shape {m.shape}")
        b = self.grid.bounds
        mc = np.clip(m, b[:, 0], b[:, 1])
        return mc, bool(np.any(mc != m))

    def _weights(self, m) -> tuple[np.ndarray, list[np.ndarray], bool]:
        mc, clamped = self.clamp(m)
        if clamped:
            warnings.warn(f"parameters {np.asarray(m)} clamped to the trained range {mc}", ClampWarning,
                          stacklevel=3)
        ws, dws = zip(*(_cardinal_weights(a, x, self.bc_type) for a, x in zip(self.grid.axes, mc)))
        w = ws[0]
        for v in ws[1:]:
            w = np.multiply.outer(w, v)
        grads = []
        for j in range(self.grid.dim):
            parts = [dws[i] if i == j else ws[i] for i in range(self.grid.dim)]
            g = parts[0]
            for v in parts[1:]:
                g = np.multiply.outer(g, v)
            grads.append(np.ravel(g))
        return np.ravel(w), grads, clamped

    def coefficients(self, m) -> np.ndarray:
        """Interpolated coefficient vector ``g(m)`` (length K)."""
        w, _, _ = self._weights(m)
        return w @ self.factors.G

    def evaluate(self, m) -> np.ndarray:
        """Snapshot-space field ``H Sigma conj(g(m))``."""
        w, _, _ = self._weights(m)
        return self._HS @ np.conj(w @ self.factors.G)

    def gradient(self, m) -> list[np.ndarray]:
        """Derivative of :meth:`evaluate` with respect to each parameter.

        Outside the trained range the parameters are clamped and the
        derivative of the spline at the clamped point is returned.
        """
        _, grads, _ = self._weights(m)
        return [self._HS @ np.conj(dw @ self.factors.G) for dw in grads]

    def evaluate_with_gradient(self, m) -> tuple[np.ndarray, list[np.ndarray], bool]:
        w, grads, clamped = self._weights(m)
        u = self._HS @ np.conj(w @ self.factors.G)
        return u, [self._HS @ np.conj(dw @ self.factors.G) for dw in grads], clamped

    def reshaped(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u).reshape(self.shape)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write ``<path>.json`` plus TWSR arrays ``<path>.<name>.twsr``."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {"H": self.factors.H, "sigma": self.factors.sigma, "G": self.factors.G,
                  "row_index": row_index(self.shape)}
        for name in ("points", "antennas", "omegas"):
            if getattr(self, name) is not None:
                arrays[name] = getattr(self, name)
        files = {}
        for name, a in arrays.items():
            fname = f"{path.name}.{name}.twsr"
            write_array(path.parent / fname, a)
            files[name] = fname
        base = asdict(self.grid.base)
        sidecar = {
            "format": "twsar-podmodel-1",
            "kind": self.kind,
            "shape": list(self.shape),
            "row_index_columns": (["frequency", "antenna", "point"] if self.kind == "F1"
                                  else ["frequency", "slow_time", "channel"]),
            "alpha": self.factors.alpha,
            "rank": self.factors.rank,
            "residual_bound": self.factors.residual_bound,
            "bc_type": self.bc_type,
            "parameters": list(self.grid.names),
            "axes": [a.tolist() for a in self.grid.axes],
            "bounds": self.grid.bounds.tolist(),
            "nodes": self.grid.nodes().tolist(),
            "base_wall": base,
            "arrays": files,
            "meta": self.meta,
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "PodModel":
        path = Path(path)
        side = json.loads(path.with_suffix(".json").read_text())
        if side.get("format") != "twsar-podmodel-1":
            raise ValueError(f"{path} is not a PodModel sidecar")
        arr = {k: read_array(path.parent / v) for k, v in side["arrays"].items()}
        factors = PodFactors(arr["H"], arr["sigma"], arr["G"], side["alpha"], side["residual_bound"])
        base = side["base_wall"]
        base = WallParams(**{k: tuple(v) if isinstance(v, list) else v for k, v in base.items()})
        grid = ParameterGrid(tuple(side["parameters"]), tuple(np.asarray(a) for a in side["axes"]), base)
        return cls(factors, grid, side["kind"], tuple(side["shape"]), side["bc_type"],
                   arr.get("points"), arr.get("antennas"), arr.get("omegas"), side.get("meta", {}))


def fit_interpolant(factors: PodFactors, grid: ParameterGrid, kind: str, shape,
                    bc_type: str = "natural", **extra) -> PodModel:
    """Wrap truncated factors with cubic interpolants over ``grid``."""
    return PodModel(factors, grid, kind, tuple(shape), bc_type, **extra)


def pod_evaluate(model: PodModel, m) -> np.ndarray:
    return model.evaluate(m)


def pod_gradient(model: PodModel, m) -> list[np.ndarray]:
    return model.gradient(m)


@dataclass(frozen=True, eq=False)
class RomPair:
    """The F0 and F1 models built from one offline run."""

    f0: PodModel
    f1: PodModel

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        self.f0.save(d / "pod_f0")
        self.f1.save(d / "pod_f1")

    @classmethod
    def load(cls, directory: str | Path) -> "RomPair":
        d = Path(directory)
        return cls(PodModel.load(d / "pod_f0"), PodModel.load(d / "pod_f1"))


def build_rom(
    grid: ParameterGrid,
    acquisition: AcquisitionGeometry,
    points: np.ndarray,
    alpha: float = 1e-4,
    bc_type: str = "natural",
    snapshots: SnapshotSet | None = None,
    **snapshot_options,
) -> tuple[RomPair, SnapshotSet]:
    """Offline stage: snapshots, truncation and interpolants for both stacks."""
    snaps = snapshots or build_snapshots(grid, acquisition, points, **snapshot_options)
    meta = {"acquisition": acquisition_hash(acquisition), "timings": snaps.timings}
    common = dict(points=snaps.points, antennas=snaps.antennas, omegas=snaps.omegas, meta=meta)
    models = []
    for s in (snaps.f0, snaps.f1):
        models.append(fit_interpolant(pod_truncate(s, alpha), grid, s.kind, s.shape, bc_type, **common))
    return RomPair(*models), snaps


def acquisition_hash(acquisition: AcquisitionGeometry) -> str:
    h = hashlib.sha256()
    for a in (acquisition.tx_positions, acquisition.rx_positions, acquisition.omegas,
              acquisition.reference_point):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]
