"""Helmholtz transmission problem for penetrable obstacles.

The exterior traces of the total field solve the combined boundary
equation ``(A0 + AD) gamma = gamma_in``, where ``A0`` and ``AD`` are the
Calderon block operators at the exterior and interior wavenumbers.  The
incident field is an interior solution for the exterior operator, so
``2 A0 gamma_in = gamma_in`` and the equation can be rewritten for the
scattered part alone,

    (A0 + AD) gamma_sc = (A0 - AD) gamma_in.

Incident fields enter through their Galerkin moments ``t`` (exact traces
tested against the basis functions) and the discrete incident traces are
``y = (2 A0)^-1 t``.  With this choice the scattered field is

    e_a^T [(A0 + AD)^-1 - (2 A0)^-1] t_b,

and since ``Q (A0 + AD)`` and ``Q A0`` are symmetric for the block swap
``Q = [[0, I], [-I, 0]]`` (``V``, ``W`` symmetric and ``K' = K^T``), while
the evaluation functional of a receiver ``e_a`` equals ``Q t_a``, the
discrete Green's function is exactly reciprocal.  The right-hand side also
vanishes identically at zero contrast.  The factorisation of ``2 A0``
depends only on the frequency and mesh and is shared between materials.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..constants import C0, EPS0
from ..geometry import SurfaceMesh, _point_triangles_distance, points_inside
from .operators import (
    CalderonBlocks,
    assemble_calderon,
    mesh_topology,
    potential_matrices,
    space_dim,
)
from .quadrature import QuadratureConfig, triangle_rule

log = logging.getLogger(__name__)

_FOUR_PI = 4.0 * np.pi


class SingularSystemError(np.linalg.LinAlgError):
    """The combined system matrix is numerically singular."""


class FieldPointError(ValueError):
    """An evaluation point lies inside or too close to the surface."""


def complex_wavenumber(omega: float, epsilon_r: float = 1.0, sigma: float = 0.0) -> complex:
    """Wavenumber of a lossy dielectric, ``(omega/c0) sqrt(eps_r + i sigma/(omega eps0))``.

    The principal square root has a non-negative imaginary part because
    the argument lies in the closed upper half plane.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    eps = complex(epsilon_r, sigma / (omega * EPS0))
    k = omega / C0 * np.sqrt(eps)
    if sigma == 0.0:
        return complex(k.real, 0.0)
    return complex(k)


@dataclass(frozen=True, eq=False)
class CauchyTraces:
    """Coefficient vectors of the Dirichlet (P1) and Neumann (P0) traces.

    Either field may carry a leading batch axis, one row per right-hand
    side.  ``incident`` optionally holds the interpolated incident traces
    that were added to the scattered part, so that :meth:`scattered` can
    recover the latter without discretisation error.
    """

    dirichlet: np.ndarray
    neumann: np.ndarray
    incident: "CauchyTraces | None" = None

    def __post_init__(self):
        if self.dirichlet.shape[:-1] != self.neumann.shape[:-1]:
            raise ValueError("trace batch shapes differ")

    def check(self, mesh: SurfaceMesh, dirichlet: str = "p1", neumann: str = "p0") -> None:
        if self.dirichlet.shape[-1] != space_dim(mesh, dirichlet):
            raise ValueError("Dirichlet coefficient count does not match the mesh")
        if self.neumann.shape[-1] != space_dim(mesh, neumann):
            raise ValueError("Neumann coefficient count does not match the mesh")

    def stacked(self) -> np.ndarray:
        """Concatenate ``[dirichlet, neumann]`` along the last axis."""
        return np.concatenate([self.dirichlet, self.neumann], axis=-1)

    def scattered(self) -> "CauchyTraces":
        if self.incident is None:
            return self
        return CauchyTraces(self.dirichlet - self.incident.dirichlet, self.neumann - self.incident.neumann)

    @classmethod
    def split(cls, x: np.ndarray, n_dirichlet: int, incident=None) -> "CauchyTraces":
        return cls(x[..., :n_dirichlet], x[..., n_dirichlet:], incident)


# -- incident fields ---------------------------------------------------------


def _triangle_points(mesh: SurfaceMesh, rule: str = "gauss6") -> tuple[np.ndarray, np.ndarray]:
    bary, w = triangle_rule(rule)
    pts = np.einsum("qc,tcd->tqd", bary, mesh.vertices[mesh.triangles])
    return pts, w


@dataclass(frozen=True, eq=False)
class IncidentMoments:
    """Galerkin moments of incident traces, ``[<chi, g0>; <phi, g1>]``.

    ``chi`` are the P0 (Neumann-space) basis functions, which test the
    Dirichlet trace ``g0``, and ``phi`` the P1 hats, which test the Neumann
    trace ``g1``; this matches the row order of the block operator.  A
    leading batch axis holds one row per incident field.
    """

    values: np.ndarray

    @property
    def batched(self) -> bool:
        return self.values.ndim == 2


def _moments(mesh: SurfaceMesh, g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Moments from trace samples at the 6-point rule, shape (..., nt, nq)."""
    bary, w = triangle_rule("gauss6")
    a = mesh.areas
    t0 = (g @ w) * a
    t1 = np.zeros(g.shape[:-2] + (mesh.n_vertices,), dtype=complex)
    for c in range(3):
        contrib = (dg * bary[:, c]) @ w * a
        np.add.at(t1, (..., mesh.triangles[:, c]), contrib)
    return np.concatenate([t0, t1], axis=-1)


def point_source_moments(mesh: SurfaceMesh, k: complex, sources) -> IncidentMoments:
    """Moments of the traces of ``G0(., y)`` for one or several sources ``y``."""
    src = np.asarray(sources, dtype=float)
    pts, _ = _triangle_points(mesh)
    d = pts[None] - np.atleast_2d(src)[:, None, None, :]
    r = np.linalg.norm(d, axis=-1)
    e = np.exp(1j * k * r)
    g = e / (_FOUR_PI * r)
    dg = e * (1j * k * r - 1.0) / (_FOUR_PI * r**3) * np.einsum("stqd,td->stq", d, mesh.normals)
    t = _moments(mesh, g, dg)
    return IncidentMoments(t[0] if src.ndim == 1 else t)


def plane_wave_moments(mesh: SurfaceMesh, k: complex, direction) -> IncidentMoments:
    """Moments of the traces of ``exp(i k d.x)``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    pts, _ = _triangle_points(mesh)
    g = np.exp(1j * k * pts @ d)
    dg = 1j * k * g * (mesh.normals @ d)[:, None]
    return IncidentMoments(_moments(mesh, g, dg))


def point_source_traces(mesh: SurfaceMesh, k: complex, sources: np.ndarray) -> CauchyTraces:
    """Interpolated traces of ``G0(., y)`` for each source ``y``.

    Dirichlet coefficients are nodal values; Neumann coefficients are
    triangle averages of the outward normal derivative.
    """
    src = np.atleast_2d(np.asarray(sources, dtype=float))
    d = mesh.vertices[None, :, :] - src[:, None, :]
    r = np.linalg.norm(d, axis=-1)
    dir_ = np.exp(1j * k * r) / (_FOUR_PI * r)
    pts, w = _triangle_points(mesh)
    dq = pts[None] - src[:, None, None, :]
    rq = np.linalg.norm(dq, axis=-1)
    f = np.exp(1j * k * rq) * (1j * k * rq - 1.0) / (_FOUR_PI * rq**3)
    dn = np.einsum("stqd,td->stq", dq, mesh.normals)
    neu = np.einsum("stq,q->st", f * dn, w)
    if np.ndim(sources) == 1:
        return CauchyTraces(dir_[0], neu[0])
    return CauchyTraces(dir_, neu)


def plane_wave_traces(mesh: SurfaceMesh, k: complex, direction) -> CauchyTraces:
    """Interpolated traces of ``exp(i k d.x)`` for a unit direction ``d``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    dir_ = np.exp(1j * k * mesh.vertices @ d)
    pts, w = _triangle_points(mesh)
    dn = mesh.normals @ d
    neu = (np.exp(1j * k * pts @ d) @ w) * 1j * k * dn
    return CauchyTraces(dir_, neu)


# -- factorised systems ------------------------------------------------------

_FACTORIZATIONS = 0


def factorization_count() -> int:
    """Number of LU factorisations performed in this process."""
    return _FACTORIZATIONS


def _lu(matrix: np.ndarray, what: str):
    global _FACTORIZATIONS
    anorm = np.abs(matrix).sum(axis=0).max()
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu, piv = sla.lu_factor(matrix, overwrite_a=True, check_finite=False)
        except sla.LinAlgWarning as exc:  # exactly zero pivot
            raise SingularSystemError(f"{what} is singular: {exc}") from exc
    _FACTORIZATIONS += 1
    rcond, info = sla.lapack.zgecon(lu, anorm, norm="1")
    if info != 0 or rcond < np.finfo(float).eps:
        raise SingularSystemError(f"{what} is numerically singular (rcond = {rcond:.3e})")
    return lu, piv, float(rcond)


@dataclass(eq=False)
class ExteriorFactorization:
    """LU factors of ``2 A0``, mapping incident moments to discrete traces."""

    lu: np.ndarray
    piv: np.ndarray
    k0: complex
    n_dirichlet: int
    rcond: float

    def incident_traces(self, incident: IncidentMoments) -> CauchyTraces:
        t = incident.values
        y = sla.lu_solve((self.lu, self.piv), t.T if incident.batched else t, check_finite=False)
        return CauchyTraces.split(y.T if incident.batched else y, self.n_dirichlet)


def factorize_exterior(blocks0: CalderonBlocks) -> ExteriorFactorization:
    """Factorise ``2 A0`` for the exterior wavenumber."""
    lu, piv, rcond = _lu(2.0 * blocks0.block(), "exterior Calderon operator")
    return ExteriorFactorization(lu, piv, blocks0.k, blocks0.W.shape[0], rcond)


@dataclass(eq=False)
class FactorizedSystem:
    """LU factors of ``A0 + AD`` together with the right-hand side operator.

    Attributes
    ----------
    lu, piv : ndarray
        Output of :func:`scipy.linalg.lu_factor`.
    rhs_operator : ndarray
        ``A0 - AD``, applied to discrete incident traces.
    exterior : ExteriorFactorization
        Factors of ``2 A0`` used to turn incident moments into traces.
    n_dirichlet : int
        Number of Dirichlet unknowns (the leading block).
    frequency : float
        Angular frequency tag.
    rcond : float
        Reciprocal 1-norm condition estimate.
    matrix : ndarray or None
        Copy of the system matrix, kept only on request (for residual checks).
    """

    lu: np.ndarray
    piv: np.ndarray
    rhs_operator: np.ndarray
    exterior: ExteriorFactorization
    n_dirichlet: int
    frequency: float
    k0: complex
    kD: complex | np.ndarray
    rcond: float
    matrix: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.lu.shape[0]

    def _scattered(self, incident: CauchyTraces) -> CauchyTraces:
        b = incident.stacked()
        batched = b.ndim == 2
        rhs = self.rhs_operator @ (b.T if batched else b)
        x = sla.lu_solve((self.lu, self.piv), rhs, check_finite=False)
        return CauchyTraces.split(x.T if batched else x, self.n_dirichlet)

    def solve(self, incident: IncidentMoments | CauchyTraces) -> CauchyTraces:
        """Total exterior traces for one or a batch of incident fields.

        ``incident`` is either a set of Galerkin moments (preferred; gives
        a reciprocal discrete Green's function) or already discretised
        traces, e.g. from :func:`point_source_traces`.  The discrete
        incident part is attached so :meth:`CauchyTraces.scattered` can
        remove it exactly.
        """
        if isinstance(incident, IncidentMoments):
            incident = self.exterior.incident_traces(incident)
        sc = self._scattered(incident)
        return CauchyTraces(sc.dirichlet + incident.dirichlet, sc.neumann + incident.neumann, incident)


def factorize(
    blocks0: CalderonBlocks,
    blocksD: CalderonBlocks,
    frequency: float = float("nan"),
    keep_matrix: bool = False,
    exterior: ExteriorFactorization | None = None,
) -> FactorizedSystem:
    """Factorise the combined system built from two sets of blocks.

    ``exterior`` may be shared between calls with the same ``blocks0``
    (for instance several wall materials at one frequency).
    """
    if blocks0.V.shape != blocksD.V.shape or blocks0.W.shape != blocksD.W.shape:
        raise ValueError("blocks were assembled on different meshes")
    if exterior is None:
        exterior = factorize_exterior(blocks0)
    b0 = blocks0.block()
    bD = blocksD.block()
    system = b0 + bD
    b0 -= bD
    del bD
    matrix = system.copy() if keep_matrix else None
    lu, piv, rcond = _lu(system, "combined system")
    return FactorizedSystem(
        lu=lu,
        piv=piv,
        rhs_operator=b0,
        exterior=exterior,
        n_dirichlet=blocks0.W.shape[0],
        frequency=frequency,
        k0=blocks0.k,
        kD=blocksD.k,
        rcond=rcond,
        matrix=matrix,
    )


@dataclass(eq=False)
class TransmissionSolver:
    """Per-mesh solver caching one factorisation per frequency.

    Parameters
    ----------
    mesh : SurfaceMesh
        Closed surface, possibly with several bodies.
    epsilon_r, sigma : float or sequence
        Material of each body (scalars apply to all bodies).
    quadrature : QuadratureConfig, optional
    cache_size : int
        Number of factorised frequencies kept in memory.
    keep_matrix : bool
        Keep a copy of each system matrix (doubles memory; for tests).
    """

    mesh: SurfaceMesh
    epsilon_r: float | tuple = 1.0
    sigma: float | tuple = 0.0
    quadrature: QuadratureConfig | None = None
    cache_size: int = 1
    keep_matrix: bool = False
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def wavenumbers(self, omega: float) -> tuple[complex, np.ndarray]:
        nb = max(self.mesh.n_bodies, 1)
        eps = np.broadcast_to(np.asarray(self.epsilon_r, dtype=float), (nb,))
        sig = np.broadcast_to(np.asarray(self.sigma, dtype=float), (nb,))
        kD = np.array([complex_wavenumber(omega, e, s) for e, s in zip(eps, sig)])
        return complex_wavenumber(omega), kD

    def system(self, omega: float, blocks0: CalderonBlocks | None = None,
               exterior: ExteriorFactorization | None = None) -> FactorizedSystem:
        """Factorised system at ``omega``, built on first use.

        Precomputed exterior blocks and their factorisation can be passed
        in when several materials share a mesh and frequency.
        """
        key = float(omega)
        if key in self._cache:
            return self._cache[key]
        k0, kD = self.wavenumbers(omega)
        t0 = time.perf_counter()
        if blocks0 is None:
            blocks0 = assemble_calderon(self.mesh, k0, self.quadrature)
        blocksD = assemble_calderon(self.mesh, kD, self.quadrature, couple_bodies=False)
        t1 = time.perf_counter()
        fs = factorize(blocks0, blocksD, key, self.keep_matrix, exterior)
        log.debug("f = %.4g Hz: %d unknowns, assembly %.1f s, LU %.1f s",
                  omega / (2 * np.pi), fs.size, t1 - t0, time.perf_counter() - t1)
        while len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = fs
        return fs

    def clear(self) -> None:
        self._cache.clear()


def solve_transmission(
    mesh: SurfaceMesh,
    k0: complex,
    kD,
    incident: IncidentMoments | CauchyTraces,
    quadrature: QuadratureConfig | None = None,
    system: FactorizedSystem | None = None,
) -> CauchyTraces:
    """Exterior Cauchy traces of the total field for given incident traces.

    Parameters
    ----------
    mesh : SurfaceMesh
    k0 : complex
        Exterior wavenumber.
    kD : complex or array_like
        Interior wavenumber (one per body allowed).
    incident : IncidentMoments or CauchyTraces
        Galerkin moments or discretised traces of the incident field,
        optionally batched.
    system : FactorizedSystem, optional
        Reuse an existing factorisation; its wavenumbers must match.

    Returns
    -------
    CauchyTraces
        Total traces with the incident part attached.
    """
    if isinstance(incident, CauchyTraces):
        incident.check(mesh)
    elif incident.values.shape[-1] != space_dim(mesh, "p0") + space_dim(mesh, "p1"):
        raise ValueError("incident moments do not match the mesh")
    if system is None:
        b0 = assemble_calderon(mesh, k0, quadrature)
        bD = assemble_calderon(mesh, kD, quadrature, couple_bodies=False)
        system = factorize(b0, bD)
    elif not (np.allclose(system.k0, k0) and np.allclose(system.kD, kD)):
        raise ValueError("factorised system belongs to a different frequency")
    return system.solve(incident)


# -- field evaluation --------------------------------------------------------


def check_field_points(mesh: SurfaceMesh, points: np.ndarray) -> None:
    """Require points outside the mesh and farther than one local edge length."""
    points = np.atleast_2d(points)
    inside = points_inside(mesh, points)
    if np.any(inside):
        raise FieldPointError(f"{int(inside.sum())} evaluation points lie inside the obstacle")
    tri = mesh.vertices[mesh.triangles]
    diam = mesh_topology(mesh).diameters
    for p in points:
        if np.any(_point_triangles_distance(p, tri) <= diam):
            raise FieldPointError(f"point {p} is within one edge length of the surface")


def evaluate_representation(
    mesh: SurfaceMesh,
    traces: CauchyTraces,
    k0: complex,
    points: np.ndarray,
    check: bool = True,
) -> np.ndarray:
    """Scattered field ``DL[phi] - SL[psi]`` at exterior points.

    ``phi`` and ``psi`` are the scattered parts of the traces (the field
    is extended by zero inside the obstacle).  Batched traces give an
    array of shape (batch, n_points).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if check:
        check_field_points(mesh, points)
    sc = traces.scattered()
    sl, dl = potential_matrices(mesh, k0, points)
    if sc.dirichlet.ndim == 2:
        return sc.dirichlet @ dl.T - sc.neumann @ sl.T
    return dl @ sc.dirichlet - sl @ sc.neumann


def scattered_field_point_source(
    mesh: SurfaceMesh,
    k0: complex,
    kD,
    source,
    eval_points: np.ndarray,
    quadrature: QuadratureConfig | None = None,
    system: FactorizedSystem | None = None,
) -> np.ndarray:
    """Field scattered by the obstacle for the incident field ``G0(., source)``.

    Several sources (shape (n_src, 3)) give an array (n_src, n_points).
    """
    src = np.asarray(source, dtype=float)
    if np.any(points_inside(mesh, np.atleast_2d(src))):
        raise FieldPointError("source lies inside the obstacle")
    inc = point_source_moments(mesh, k0, src)
    traces = solve_transmission(mesh, k0, kD, inc, quadrature, system)
    return evaluate_representation(mesh, traces, k0, eval_points)
