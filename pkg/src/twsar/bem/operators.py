"""Galerkin matrices of the Helmholtz boundary integral operators."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from ..geometry import MeshError, SurfaceMesh, mesh_validate
from . import kernels
from .quadrature import QuadratureConfig, singular_rule, triangle_rule

RESOLUTION_LIMIT = 2.0
"""Largest admissible ``|k| * max_edge`` for assembly."""


class ResolutionError(ValueError):
    """Raised when a mesh is too coarse for the requested wavenumber."""


@dataclass(frozen=True)
class MeshTopology:
    """Per-mesh data reused across assemblies at different wavenumbers."""

    centroids: np.ndarray
    diameters: np.ndarray
    curls: np.ndarray
    pairs: np.ndarray
    kinds: np.ndarray
    perms: np.ndarray


_TOPOLOGY: "weakref.WeakKeyDictionary[SurfaceMesh, MeshTopology]" = weakref.WeakKeyDictionary()


def _touching_pairs(tris: np.ndarray, nv: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coincident, edge-adjacent and vertex-adjacent triangle pairs.

    Returns pairs ``(i, j)`` with ``i <= j``, their kind (0, 1, 2) and the
    vertex permutations that put shared vertices first in both triangles.
    """
    nt = len(tris)
    inc_t = np.repeat(np.arange(nt), 3)
    inc_v = tris.ravel()
    order = np.argsort(inc_v, kind="stable")
    inc_t, inc_v = inc_t[order], inc_v[order]
    starts = np.searchsorted(inc_v, np.arange(nv + 1))
    rows = []
    for v in range(nv):
        ts = inc_t[starts[v] : starts[v + 1]]
        if len(ts) > 1:
            a, b = np.triu_indices(len(ts), 1)
            rows.append(np.stack([np.minimum(ts[a], ts[b]), np.maximum(ts[a], ts[b])], axis=1))
    shared = np.concatenate(rows) if rows else np.zeros((0, 2), dtype=np.int64)
    uniq, counts = np.unique(shared, axis=0, return_counts=True)

    pairs = [np.stack([np.arange(nt), np.arange(nt)], axis=1)]
    kinds = [np.zeros(nt, dtype=np.int64)]
    perms = [np.tile(np.array([[0, 1, 2], [0, 1, 2]]), (nt, 1, 1))]
    edge = uniq[counts == 2]
    vert = uniq[counts == 1]
    if np.any(counts > 2):
        raise MeshError("duplicate triangles detected")

    def perm_edge(ti, tj):
        common = [v for v in ti if v in tj]
        pi = [list(ti).index(common[0]), list(ti).index(common[1])]
        pj = [list(tj).index(common[0]), list(tj).index(common[1])]
        pi.append(3 - sum(pi))
        pj.append(3 - sum(pj))
        return pi, pj

    def perm_vertex(ti, tj):
        common = [v for v in ti if v in tj][0]
        a, b = list(ti).index(common), list(tj).index(common)
        return [a, (a + 1) % 3, (a + 2) % 3], [b, (b + 1) % 3, (b + 2) % 3]

    for arr, kind, fn in ((edge, 1, perm_edge), (vert, 2, perm_vertex)):
        if len(arr) == 0:
            continue
        pp = np.empty((len(arr), 2, 3), dtype=np.int64)
        for n, (i, j) in enumerate(arr):
            pp[n, 0], pp[n, 1] = fn(tris[i], tris[j])
        pairs.append(arr)
        kinds.append(np.full(len(arr), kind, dtype=np.int64))
        perms.append(pp)
    return (
        np.ascontiguousarray(np.concatenate(pairs), dtype=np.int64),
        np.ascontiguousarray(np.concatenate(kinds)),
        np.ascontiguousarray(np.concatenate(perms)),
    )


def mesh_topology(mesh: SurfaceMesh) -> MeshTopology:
    """Cached geometric preprocessing of ``mesh``."""
    topo = _TOPOLOGY.get(mesh)
    if topo is None:
        v, t = mesh.vertices, mesh.triangles
        centroids = np.ascontiguousarray(mesh.centroids())
        diameters = np.ascontiguousarray(mesh.edge_lengths().max(axis=1))
        # surface curl of the P1 hat of vertex a is -e_a / (2 area),
        # with e_a the edge opposite a in counter-clockwise order
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        opp = np.stack([p2 - p1, p0 - p2, p1 - p0], axis=1)
        curls = np.ascontiguousarray(-opp / (2.0 * mesh.areas)[:, None, None])
        pairs, kinds, perms = _touching_pairs(t, mesh.n_vertices)
        topo = MeshTopology(centroids, diameters, curls, pairs, kinds, perms)
        _TOPOLOGY[mesh] = topo
    return topo


def dof_map(mesh: SurfaceMesh, space: str) -> np.ndarray:
    """Local-to-global dof map of shape (nt, 3) for ``"p0"`` or ``"p1"``."""
    if space == "p1":
        return np.ascontiguousarray(mesh.triangles)
    if space == "p0":
        return np.ascontiguousarray(np.repeat(np.arange(mesh.n_triangles)[:, None], 3, axis=1))
    raise ValueError(f"unknown space {space!r}")


def space_dim(mesh: SurfaceMesh, space: str) -> int:
    return mesh.n_vertices if space == "p1" else mesh.n_triangles


def mass_matrix(mesh: SurfaceMesh, test: str, trial: str) -> np.ndarray:
    """Identity pairing between two trace spaces."""
    m = np.zeros((space_dim(mesh, test), space_dim(mesh, trial)))
    t, a = mesh.triangles, mesh.areas
    if test == "p0" and trial == "p0":
        m[np.arange(len(a)), np.arange(len(a))] = a
    elif test == "p0" and trial == "p1":
        for c in range(3):
            np.add.at(m, (np.arange(len(a)), t[:, c]), a / 3.0)
    elif test == "p1" and trial == "p0":
        return mass_matrix(mesh, "p0", "p1").T.copy()
    else:
        for r in range(3):
            for c in range(3):
                np.add.at(m, (t[:, r], t[:, c]), a * (2.0 if r == c else 1.0) / 12.0)
    return m


@dataclass(frozen=True, eq=False)
class CalderonBlocks:
    """Galerkin matrices of the four layer operators at one wavenumber.

    ``V`` acts on the Neumann space (tested with it), ``K`` maps the
    Dirichlet space to the Neumann test space, ``Kp`` is its transpose
    (the adjoint double layer), ``W`` acts on the Dirichlet space and
    ``M`` pairs Neumann tests with Dirichlet trials.  The block operator

        A = [[-K, V], [W, Kp]]

    acts on coefficient vectors ``[dirichlet; neumann]``.
    """

    V: np.ndarray
    K: np.ndarray
    W: np.ndarray
    M: np.ndarray
    k: complex | np.ndarray
    dirichlet: str = "p1"
    neumann: str = "p0"

    @property
    def Kp(self) -> np.ndarray:
        return self.K.T

    def block(self) -> np.ndarray:
        """The assembled block matrix ``[[-K, V], [W, Kp]]``."""
        return np.block([[-self.K, self.V], [self.W, self.K.T]])


def _as_body_wavenumbers(mesh: SurfaceMesh, k) -> np.ndarray:
    kb = np.atleast_1d(np.asarray(k, dtype=np.complex128))
    if kb.size == 1:
        kb = np.full(max(mesh.n_bodies, 1), kb[0])
    if kb.size != mesh.n_bodies:
        raise ValueError("one wavenumber per body is required")
    return np.ascontiguousarray(kb)


def check_resolution(mesh: SurfaceMesh, k) -> None:
    kb = _as_body_wavenumbers(mesh, k)
    el = mesh.edge_lengths().max(axis=1)
    for b in range(mesh.n_bodies):
        h = el[mesh.body == b].max()
        if abs(kb[b]) * h > RESOLUTION_LIMIT:
            raise ResolutionError(
                f"|k| * max_edge = {abs(kb[b]) * h:.3f} exceeds {RESOLUTION_LIMIT} on body {b}"
            )


def assemble_calderon(
    mesh: SurfaceMesh,
    k,
    quadrature: QuadratureConfig | None = None,
    dirichlet: str = "p1",
    neumann: str = "p0",
    couple_bodies: bool = True,
    validate: bool = True,
) -> CalderonBlocks:
    """Assemble the Galerkin layer-operator matrices.

    Parameters
    ----------
    mesh : SurfaceMesh
        Closed (possibly multi-body) surface.
    k : complex or array_like
        Wavenumber, or one wavenumber per body.
    quadrature : QuadratureConfig, optional
    dirichlet, neumann : {"p1", "p0"}
        Trial/test spaces for the two traces.  The hypersingular block
        requires ``dirichlet="p1"``.
    couple_bodies : bool
        When false, interactions between different bodies are omitted,
        giving the block-diagonal operator of independent interiors.
    validate : bool
        Check watertightness and the resolution guard.

    Returns
    -------
    CalderonBlocks
    """
    quad = quadrature or QuadratureConfig()
    if dirichlet != "p1":
        raise ValueError("the hypersingular weak form requires a P1 Dirichlet space")
    if validate:
        report = mesh_validate(mesh)
        if not report.watertight:
            raise MeshError("mesh is not watertight")
        check_resolution(mesh, k)
    kb = _as_body_wavenumbers(mesh, k)
    topo = mesh_topology(mesh)
    map_n = dof_map(mesh, neumann)
    map_d = dof_map(mesh, dirichlet)
    nn, nd = space_dim(mesh, neumann), space_dim(mesh, dirichlet)
    V = np.zeros((nn, nn), dtype=np.complex128)
    K = np.zeros((nn, nd), dtype=np.complex128)
    W = np.zeros((nd, nd), dtype=np.complex128)
    Kt = np.zeros((nd, nn), dtype=np.complex128)
    args = (mesh.vertices, mesh.triangles, mesh.normals, mesh.areas)
    bf, wf = triangle_rule(quad.far_rule)
    bm, wm = triangle_rule(quad.mid_rule)
    bn, wn = triangle_rule(quad.near_rule)
    kernels.assemble_regular(
        *args, topo.centroids, topo.diameters, topo.curls, mesh.body, kb, couple_bodies,
        map_n, map_d, True, True, True,
        bf, wf, bm, wm, bn, wn, quad.mid_ratio, quad.near_ratio, V, K, Kt, W,
    )
    # regular pairs were written once per unordered pair
    V += V.T
    W += W.T
    K += Kt.T
    del Kt
    rules = [singular_rule(kind, quad.singular_order) for kind in ("coincident", "edge", "vertex")]
    kernels.assemble_singular(
        *args, topo.curls, mesh.body, kb, topo.pairs, topo.kinds, topo.perms,
        map_n, map_d, True, True, True,
        *rules[0], *rules[1], *rules[2], V, K, W,
    )
    M = mass_matrix(mesh, neumann, dirichlet)
    k_out = kb[0] if len(set(kb.tolist())) == 1 else kb
    return CalderonBlocks(V=V, K=K, W=W, M=M, k=k_out, dirichlet=dirichlet, neumann=neumann)


def potential_matrices(
    mesh: SurfaceMesh,
    k: complex,
    points: np.ndarray,
    dirichlet: str = "p1",
    neumann: str = "p0",
    rules: tuple[str, str, str] = ("gauss6", "collapsed5", "collapsed10"),
    ratios: tuple[float, float] = (6.0, 2.5),
) -> tuple[np.ndarray, np.ndarray]:
    """Single- and double-layer potential evaluation matrices.

    Returns
    -------
    SL : ndarray, shape (n_points, dim neumann)
    DL : ndarray, shape (n_points, dim dirichlet)
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    topo = mesh_topology(mesh)
    SL = np.zeros((len(points), space_dim(mesh, neumann)), dtype=np.complex128)
    DL = np.zeros((len(points), space_dim(mesh, dirichlet)), dtype=np.complex128)
    bf, wf = triangle_rule(rules[0])
    bm, wm = triangle_rule(rules[1])
    bn, wn = triangle_rule(rules[2])
    kernels.potentials(
        points, mesh.vertices, mesh.triangles, mesh.normals, mesh.areas, topo.centroids, topo.diameters,
        complex(k), dof_map(mesh, neumann), dof_map(mesh, dirichlet),
        bf, wf, bm, wm, bn, wn, ratios[0], ratios[1], SL, DL,
    )
    return SL, DL
