"""Obstacle surface meshes, acquisition geometry and image grids.

Surface meshes are closed, outward-oriented triangulations.  Two
parametrised obstacles are provided: an L-shaped corner wall (the
obscuring structure) and an icosphere (the validation and full-wave
target).  Several closed surfaces can be merged into one multi-body mesh
carrying a per-triangle body index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .constants import C0


class MeshError(ValueError):
    """Raised for invalid mesh construction requests."""


# ---------------------------------------------------------------------------
# Surface meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed triangulated surface.

    Parameters
    ----------
    vertices : ndarray, shape (nv, 3)
        Vertex coordinates in metres.
    triangles : ndarray, shape (nt, 3)
        Vertex indices, counter-clockwise when viewed from outside.
    body : ndarray, shape (nt,), optional
        Index of the closed body each triangle belongs to.  Defaults to
        all zeros (a single body).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    body: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertices must have shape (nv, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        b = np.zeros(len(t), dtype=np.int64) if self.body is None else np.asarray(self.body, dtype=np.int64)
        if b.shape != (len(t),):
            raise MeshError("body must have one entry per triangle")
        for name, arr in (("vertices", v), ("triangles", t), ("body", b)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        e1 = v[t[:, 1]] - v[t[:, 0]]
        e2 = v[t[:, 2]] - v[t[:, 0]]
        cr = np.cross(e1, e2)
        twice_area = np.linalg.norm(cr, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            normals = cr / twice_area[:, None]
        normals.setflags(write=False)
        areas = 0.5 * twice_area
        areas.setflags(write=False)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "areas", areas)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_bodies(self) -> int:
        return int(self.body.max()) + 1 if len(self.body) else 0

    def edge_lengths(self) -> np.ndarray:
        """Lengths of the three edges of every triangle, shape (nt, 3)."""
        v, t = self.vertices, self.triangles
        return np.stack(
            [np.linalg.norm(v[t[:, (i + 1) % 3]] - v[t[:, i]], axis=1) for i in range(3)], axis=1
        )

    @property
    def max_edge(self) -> float:
        return float(self.edge_lengths().max())

    def signed_volume(self, body: int | None = None) -> float:
        """Enclosed volume from the divergence theorem."""
        t = self.triangles if body is None else self.triangles[self.body == body]
        v = self.vertices
        return float(np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum() / 6.0)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


@dataclass(frozen=True)
class MeshReport:
    """Outcome of :func:`mesh_validate`."""

    watertight: bool
    orientation: bool
    outward: bool
    min_area: float
    max_edge: float
    volume: float

    @property
    def passed(self) -> bool:
        return self.watertight and self.orientation and self.outward and self.min_area > 1e-12


def mesh_validate(mesh: SurfaceMesh) -> MeshReport:
    """Check the closed-surface invariants of a mesh.

    Watertightness requires every undirected edge to be used by exactly
    two triangles; consistent orientation requires those two uses to
    traverse the edge in opposite directions.  Outward orientation is
    checked per body through the sign of the enclosed volume.
    """
    t = mesh.triangles
    if len(t) == 0:
        return MeshReport(False, False, False, 0.0, 0.0, 0.0)
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    watertight = bool(np.all(counts == 2))
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    orientation = watertight and bool(np.all(dcounts == 1))
    outward = all(mesh.signed_volume(b) > 0 for b in range(mesh.n_bodies))
    return MeshReport(
        watertight=watertight,
        orientation=orientation,
        outward=outward,
        min_area=float(mesh.areas.min()),
        max_edge=mesh.max_edge,
        volume=mesh.signed_volume(),
    )


def _weld(points: np.ndarray, triangles: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge coincident points (within ``tol``) and reindex triangles."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    parent = np.arange(len(points))
    # union-find on the (small) set of coincident pairs
    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(len(points))])
    uniq, inverse = np.unique(roots, return_inverse=True)
    return points[uniq], inverse[triangles]


def merge_meshes(meshes: Sequence[SurfaceMesh]) -> SurfaceMesh:
    """Concatenate disjoint closed surfaces into one multi-body mesh."""
    verts, tris, bodies = [], [], []
    offset, body_offset = 0, 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + offset)
        bodies.append(m.body + body_offset)
        offset += m.n_vertices
        body_offset += m.n_bodies
    return SurfaceMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(bodies))


# ---------------------------------------------------------------------------
# Corner wall
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WallParams:
    """Parametrised L-shaped corner wall.

    The outer corner of the footprint sits at ``corner + origin_offset``.
    Arm 1 runs along +x, arm 2 along +y, and the thickness extends
    towards +x/+y so that the outer faces look towards the lower-left
    quadrant.  The wall spans ``z`` in ``[-height/2, height/2]``.

    Parameters
    ----------
    epsilon_r : float
        Relative permittivity (>= 1).
    sigma : float
        Conductivity in S/m (>= 0).
    thickness : float
        Wall thickness in metres.
    origin_offset : tuple of float
        Offset of the footprint in the horizontal plane (metres).
    lengths : tuple of float
        Outer lengths of arm 1 (along x) and arm 2 (along y).
    height : float
        Wall height in metres.
    corner : tuple of float
        Nominal outer-corner position before the offset is applied.
    """

    epsilon_r: float = 3.0
    sigma: float = 0.0
    thickness: float = 0.1
    origin_offset: tuple[float, float] = (0.0, 0.0)
    lengths: tuple[float, float] = (1.0, 1.2)
    height: float = 0.6
    corner: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "origin_offset", tuple(float(x) for x in self.origin_offset))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "corner", tuple(float(x) for x in self.corner))
        if not self.epsilon_r >= 1.0:
            raise MeshError(f"epsilon_r must be >= 1, got {self.epsilon_r}")
        if not self.sigma >= 0.0:
            raise MeshError(f"sigma must be >= 0, got {self.sigma}")
        if not (self.thickness > 0 and self.height > 0 and min(self.lengths) > 0):
            raise MeshError("thickness, lengths and height must be positive")

    def with_values(self, **values) -> "WallParams":
        """Copy with selected fields replaced; ``offset_x``/``offset_y`` are accepted."""
        ox, oy = self.origin_offset
        if "offset_x" in values:
            ox = values.pop("offset_x")
        if "offset_y" in values:
            oy = values.pop("offset_y")
        return replace(self, origin_offset=(ox, oy), **values)

    def get(self, name: str) -> float:
        if name == "offset_x":
            return self.origin_offset[0]
        if name == "offset_y":
            return self.origin_offset[1]
        return float(getattr(self, name))

    def footprint_volume(self) -> float:
        l1, l2 = self.lengths
        t = self.thickness
        return (t * l1 + t * l2 - t * t) * self.height


def _strip_coords(lo_ids, lo_s, up_ids, up_s) -> list[tuple[int, int, int]]:
    """Advancing-front triangulation between two rows (lower, upper)."""
    tris = []
    i = j = 0
    while i < len(lo_s) - 1 or j < len(up_s) - 1:
        if j == len(up_s) - 1:
            advance_lower = True
        elif i == len(lo_s) - 1:
            advance_lower = False
        else:
            # keep the shorter of the two candidate diagonals
            advance_lower = abs(lo_s[i + 1] - up_s[j]) <= abs(up_s[j + 1] - lo_s[i])
        if advance_lower:
            tris.append((lo_ids[i], lo_ids[i + 1], up_ids[j]))
            i += 1
        else:
            tris.append((lo_ids[i], up_ids[j + 1], up_ids[j]))
            j += 1
    return tris


def _side_face(p0, direction, s_nodes, z_rows, points, triangles):
    """Mesh a vertical rectangular face with staggered rows.

    Even rows carry the prescribed nodes ``s_nodes`` (shared with the
    horizontal faces); odd rows carry the interval midpoints plus both
    end points.  The result is close to equilateral when the row spacing
    matches the node spacing.
    """
    mids = np.concatenate([[s_nodes[0]], 0.5 * (s_nodes[1:] + s_nodes[:-1]), [s_nodes[-1]]])
    rows = []
    for j, z in enumerate(z_rows):
        s = s_nodes if j % 2 == 0 else mids
        base = len(points)
        for sv in s:
            points.append((p0[0] + sv * direction[0], p0[1] + sv * direction[1], z))
        rows.append((np.arange(base, base + len(s)), s))
    for (lo_ids, lo_s), (up_ids, up_s) in zip(rows[:-1], rows[1:]):
        triangles.extend(_strip_coords(lo_ids, lo_s, up_ids, up_s))


def _rect_grid(x0, x1, nx, y0, y1, ny, z, up, points, triangles):
    """Structured right-triangle grid on an axis-aligned horizontal rectangle."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    base = len(points)
    for y in ys:
        for x in xs:
            points.append((x, y, z))
    idx = lambda i, j: base + j * (nx + 1) + i  # noqa: E731
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if up:
                triangles.extend([(a, b, c), (a, c, d)])
            else:
                triangles.extend([(a, c, b), (a, d, c)])


# cross-thickness spacing as a fraction of the target edge; close to 1/sqrt(2)
# so that arm cells are nearly square and side faces stay near-equilateral
_THICKNESS_FRACTION = 0.7


def build_corner_wall(params: WallParams, target_edge: float) -> SurfaceMesh:
    """Mesh an L-shaped corner wall.

    The footprint is split into a corner square and two arm rectangles,
    each meshed with a structured grid whose spacing across the thickness
    is at most half the target edge.  Vertical faces use staggered rows
    sharing the footprint boundary nodes, which keeps the triangles close
    to equilateral and the mesh watertight at every seam.

    Parameters
    ----------
    params : WallParams
        Wall geometry.
    target_edge : float
        Upper bound on every edge length (metres).

    Returns
    -------
    SurfaceMesh
    """
    if not target_edge > 0:
        raise MeshError("target_edge must be positive")
    l1, l2 = params.lengths
    t, height = params.thickness, params.height
    if t >= min(l1, l2):
        raise MeshError("thickness must be smaller than both arm lengths")
    h = float(target_edge)
    m = max(1, math.ceil(t / (_THICKNESS_FRACTION * h) - 1e-12))
    dy = t / m
    dx_max = math.sqrt(h * h - dy * dy) * (1 - 1e-9)
    n1 = max(1, math.ceil((l1 - t) / dx_max))
    n2 = max(1, math.ceil((l2 - t) / dx_max))

    # footprint boundary abscissae along each of the six edges (CCW from the corner)
    c_nodes = np.linspace(0.0, t, m + 1)
    a1_nodes = np.linspace(t, l1, n1 + 1)
    a2_nodes = np.linspace(t, l2, n2 + 1)
    corners = [(0.0, 0.0), (l1, 0.0), (l1, t), (t, t), (t, l2), (0.0, l2)]
    edge_nodes = [
        np.concatenate([c_nodes, a1_nodes[1:]]),  # (0,0) -> (l1,0)
        c_nodes,  # (l1,0) -> (l1,t)
        l1 - a1_nodes[::-1],  # (l1,t) -> (t,t): distance from start
        a2_nodes - t,  # (t,t) -> (t,l2)
        c_nodes,  # (t,l2) -> (0,l2)
        np.concatenate([c_nodes, a2_nodes[1:]]),  # (0,l2) -> (0,0)
    ]
    # the edge (0,l2)->(0,0) walks downwards, so convert to distances from its start
    edge_nodes[5] = l2 - edge_nodes[5][::-1]

    max_spacing = max(float(np.diff(s).max()) for s in edge_nodes)
    dz_max = math.sqrt(h * h - 0.25 * max_spacing**2) * (1 - 1e-9)
    nz = max(2, math.ceil(height / dz_max))
    nz += nz % 2
    z_rows = np.linspace(-0.5 * height, 0.5 * height, nz + 1)

    points: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    for k in range(6):
        p0 = np.array(corners[k])
        p1 = np.array(corners[(k + 1) % 6])
        length = float(np.linalg.norm(p1 - p0))
        direction = (p1 - p0) / length
        s = np.asarray(edge_nodes[k], dtype=float)
        s[0], s[-1] = 0.0, length
        _side_face(p0, direction, s, z_rows, points, triangles)
    for z, up in ((0.5 * height, True), (-0.5 * height, False)):
        _rect_grid(0.0, t, m, 0.0, t, m, z, up, points, triangles)
        _rect_grid(t, l1, n1, 0.0, t, m, z, up, points, triangles)
        _rect_grid(0.0, t, m, t, l2, n2, z, up, points, triangles)

    pts = np.asarray(points, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64)
    pts, tri = _weld(pts, tri, tol=1e-9 * max(l1, l2, height))
    shift = np.array([params.corner[0] + params.origin_offset[0], params.corner[1] + params.origin_offset[1], 0.0])
    return SurfaceMesh(pts + shift, tri)


# ---------------------------------------------------------------------------
# Sphere
# ---------------------------------------------------------------------------


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _geodesic_unit_sphere(freq: int) -> tuple[np.ndarray, np.ndarray]:
    """Class-I geodesic subdivision of the icosahedron with frequency ``freq``."""
    v0, f0 = _icosahedron()
    points, tris = [], []
    for a, b, c in f0:
        A, B, C = v0[a], v0[b], v0[c]
        index = {}
        for i in range(freq + 1):
            for j in range(freq + 1 - i):
                k = freq - i - j
                index[i, j] = len(points)
                points.append((k * A + i * B + j * C) / freq)
        for i in range(freq):
            for j in range(freq - i):
                tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
                if i + j < freq - 1:
                    tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    pts = np.asarray(points)
    pts, tri = _weld(pts, np.asarray(tris), tol=1e-9)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts, tri


def build_sphere_mesh(radius: float, center: Sequence[float], target_edge: float) -> SurfaceMesh:
    """Icosphere with the smallest geodesic frequency meeting ``target_edge``.

    Parameters
    ----------
    radius : float
        Sphere radius (metres), positive.
    center : sequence of 3 floats
    target_edge : float
        Upper bound on every edge length.
    """
    if not radius > 0:
        raise MeshError("radius must be positive")
    if not target_edge > 0:
        raise MeshError("target_edge must be positive")
    center = np.asarray(center, dtype=float)
    freq = 1
    while True:
        pts, tri = _geodesic_unit_sphere(freq)
        mesh = SurfaceMesh(pts * radius, tri)
        if mesh.max_edge <= target_edge or freq > 200:
            break
        freq += 1
    # re-project after scaling so |x - c| = r to rounding precision
    unit = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return SurfaceMesh(center + radius * unit, tri)


# ---------------------------------------------------------------------------
# Point/mesh queries
# ---------------------------------------------------------------------------


def winding_number(mesh: SurfaceMesh, points: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Generalised winding number of a closed mesh at each point.

    Uses the solid-angle formula of Van Oosterom and Strackee; values are
    close to 1 inside a body and 0 outside.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v = mesh.vertices[mesh.triangles]  # (nt, 3, 3)
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        p = points[s : s + chunk, None, None, :]
        r = v[None] - p  # (np, nt, 3, 3)
        a, b, c = r[..., 0, :], r[..., 1, :], r[..., 2, :]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("...i,...i->...", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("...i,...i->...", a, b) * lc
            + np.einsum("...i,...i->...", b, c) * la
            + np.einsum("...i,...i->...", c, a) * lb
        )
        out[s : s + chunk] = 2.0 * np.arctan2(num, den).sum(axis=1) / (4 * np.pi)
    return out


def points_inside(mesh: SurfaceMesh, points: np.ndarray) -> np.ndarray:
    """Boolean mask of points enclosed by any body of ``mesh``."""
    return winding_number(mesh, points) > 0.5


def distance_to_mesh(mesh: SurfaceMesh, points: np.ndarray) -> np.ndarray:
    """Unsigned distance from each point to the closest triangle."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    tri = mesh.vertices[mesh.triangles]
    out = np.empty(len(points))
    for i, p in enumerate(points):
        out[i] = _point_triangles_distance(p, tri).min()
    return out


def _point_triangles_distance(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Vectorised closest-point distance from one point to many triangles."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    with np.errstate(divide="ignore", invalid="ignore"):
        v = vb / denom
        w = vc / denom
        closest = a + ab * v[:, None] + ac * w[:, None]
        # vertex regions
        m = (d1 <= 0) & (d2 <= 0)
        closest[m] = a[m]
        m = (d3 >= 0) & (d4 <= d3)
        closest[m] = b[m]
        m = (d6 >= 0) & (d5 <= d6)
        closest[m] = c[m]
        # edge regions
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        closest[m] = (a + ab * t[:, None])[m]
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        closest[m] = (a + ac * t[:, None])[m]
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        closest[m] = (b + (c - b) * t[:, None])[m]
    return np.linalg.norm(closest - p, axis=1)


# ---------------------------------------------------------------------------
# OFF format
# ---------------------------------------------------------------------------


def write_off(mesh: SurfaceMesh, path: str | Path) -> None:
    """Write a mesh in ASCII OFF format."""
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path: str | Path) -> SurfaceMesh:
    """Read a triangle mesh from ASCII OFF format."""
    tokens = [
        line.split("#")[0].split()
        for line in Path(path).read_text().splitlines()
    ]
    tokens = [t for t in tokens if t]
    if not tokens or tokens[0][0] != "OFF":
        raise MeshError("missing OFF header")
    if len(tokens[0]) > 1:
        counts, body = tokens[0][1:], tokens[1:]
    else:
        counts, body = tokens[1], tokens[2:]
    nv, nf = int(counts[0]), int(counts[1])
    verts = np.array([[float(x) for x in row[:3]] for row in body[:nv]])
    faces = []
    for row in body[nv : nv + nf]:
        if int(row[0]) != 3:
            raise MeshError("only triangular faces are supported")
        faces.append([int(x) for x in row[1:4]])
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Acquisition geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AcquisitionConfig:
    """Parameters of a multi-static circular-arc collection.

    Defaults follow the radar parameters of the reference collection:
    349.9 MHz centre frequency, 299.8 MHz bandwidth, 0.86 rad aperture,
    transmitter azimuth -7pi/12 and receivers rotated by 0, -pi/6 and
    -pi/3 at 20 m range.
    """

    center_frequency: float = 349.9e6
    bandwidth: float = 299.8e6
    aperture: float = 0.86
    tx_azimuth: float = -7.0 * math.pi / 12.0
    bistatic_angles: tuple[float, ...] = (0.0, -math.pi / 6.0, -math.pi / 3.0)
    range: float = 20.0
    n_slow: int = 12
    n_freq: int = 12
    scene_center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    antenna_height: float = 0.0


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Sampled multi-static acquisition.

    Attributes
    ----------
    slow_time : ndarray, shape (n_s,)
        Transmitter azimuth angle of each slow-time sample (rad).
    tx_positions : ndarray, shape (n_s, 3)
    rx_positions : ndarray, shape (n_ch, n_s, 3)
        Receiver position of each channel at each slow-time sample.
    omegas : ndarray, shape (n_f,)
        Angular frequencies (rad/s).
    reference_point : ndarray, shape (3,)
    bistatic_angles : ndarray, shape (n_ch,)
    channels : tuple of (int, int)
        ``(tx, rx)`` index pairs; transmitter 0 pairs with receiver ``c``.
    """

    slow_time: np.ndarray
    tx_positions: np.ndarray
    rx_positions: np.ndarray
    omegas: np.ndarray
    reference_point: np.ndarray
    bistatic_angles: np.ndarray
    channels: tuple[tuple[int, int], ...]
    center_frequency: float = 0.0
    bandwidth: float = 0.0

    @property
    def n_slow(self) -> int:
        return len(self.slow_time)

    @property
    def n_freq(self) -> int:
        return len(self.omegas)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_samples(self) -> int:
        return self.n_channels * self.n_slow * self.n_freq

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.omegas / (2 * np.pi)

    def sample_index(self) -> np.ndarray:
        """Index map of the flattened data vector.

        Returns
        -------
        ndarray, shape (n_samples, 3)
            Columns are (channel, slow-time, frequency) indices; data are
            ordered channel-major, then slow time, then frequency.
        """
        c, s, f = np.meshgrid(
            np.arange(self.n_channels), np.arange(self.n_slow), np.arange(self.n_freq), indexing="ij"
        )
        return np.stack([c.ravel(), s.ravel(), f.ravel()], axis=1)

    def antenna_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Distinct antenna positions and the lookup from (channel, slow time).

        Mono-static receivers coincide with transmitters and are not
        duplicated.

        Returns
        -------
        positions : ndarray, shape (n_ant, 3)
        tx_index : ndarray, shape (n_s,)
            Antenna index of the transmitter at each slow-time sample.
        rx_index : ndarray, shape (n_ch, n_s)
            Antenna index of each channel's receiver.
        """
        positions = [p for p in self.tx_positions]
        tx_index = np.arange(self.n_slow)
        rx_index = np.empty((self.n_channels, self.n_slow), dtype=np.int64)
        for c in range(self.n_channels):
            for s in range(self.n_slow):
                p = self.rx_positions[c, s]
                if np.array_equal(p, self.tx_positions[s]):
                    rx_index[c, s] = s
                else:
                    rx_index[c, s] = len(positions)
                    positions.append(p)
        return np.asarray(positions), tx_index, rx_index

    def reference_ranges(self) -> np.ndarray:
        """R0 = |tx - x_ref| + |rx - x_ref| for every sample, flattened."""
        idx = self.sample_index()
        tx = self.tx_positions[idx[:, 1]]
        rx = self.rx_positions[idx[:, 0], idx[:, 1]]
        x0 = self.reference_point
        return np.linalg.norm(tx - x0, axis=1) + np.linalg.norm(rx - x0, axis=1)

    def look_direction(self) -> np.ndarray:
        """Unit horizontal vector pointing from the antennas into the scene (down-range)."""
        x0 = self.reference_point
        d = (x0 - self.tx_positions).sum(axis=0) + (x0 - self.rx_positions.reshape(-1, 3)).sum(axis=0)
        d[2] = 0.0
        return d / np.linalg.norm(d)


def make_acquisition(config: AcquisitionConfig, obstacles: Sequence[SurfaceMesh] = ()) -> AcquisitionGeometry:
    """Build the sampled acquisition geometry.

    The transmitter moves on a circular arc of the configured range about
    the scene centre, centred on ``tx_azimuth`` and spanning ``aperture``.
    Each receiver path is the transmitter path rotated about the vertical
    axis through the scene centre by its bistatic angle.

    Parameters
    ----------
    config : AcquisitionConfig
    obstacles : sequence of SurfaceMesh, optional
        When given, every antenna is checked to lie outside them.
    """
    if len(config.bistatic_angles) == 0:
        raise ValueError("at least one channel is required")
    if config.n_slow < 1 or config.n_freq < 1:
        raise ValueError("sample counts must be positive")
    c = np.asarray(config.scene_center, dtype=float)
    if config.n_slow == 1:
        az = np.array([config.tx_azimuth])
    else:
        az = config.tx_azimuth + np.linspace(-0.5, 0.5, config.n_slow) * config.aperture

    def arc(angles):
        return np.stack(
            [
                c[0] + config.range * np.cos(angles),
                c[1] + config.range * np.sin(angles),
                np.full_like(angles, config.antenna_height),
            ],
            axis=1,
        )

    tx = arc(az)
    betas = np.asarray(config.bistatic_angles, dtype=float)
    rx = np.stack([tx.copy() if b == 0.0 else arc(az + b) for b in betas])
    f_lo = config.center_frequency - 0.5 * config.bandwidth
    f_hi = config.center_frequency + 0.5 * config.bandwidth
    if config.n_freq == 1:
        freqs = np.array([config.center_frequency])
    else:
        freqs = np.linspace(f_lo, f_hi, config.n_freq)
        freqs[0], freqs[-1] = f_lo, f_hi
    geom = AcquisitionGeometry(
        slow_time=az,
        tx_positions=tx,
        rx_positions=rx,
        omegas=2 * np.pi * freqs,
        reference_point=c,
        bistatic_angles=betas,
        channels=tuple((0, i) for i in range(len(betas))),
        center_frequency=config.center_frequency,
        bandwidth=config.bandwidth,
    )
    for mesh in obstacles:
        pos, _, _ = geom.antenna_table()
        if np.any(points_inside(mesh, pos)):
            raise ValueError("an antenna position lies inside an obstacle")
    return geom


def nyquist_counts(config: AcquisitionConfig, scene_diameter: float, margin: float = 1.2) -> tuple[int, int]:
    """Frequency and slow-time sample counts from the oversampled Nyquist rule.

    Returns ``(n_freq, n_slow)`` with ``df <= c/(2 D margin)`` and
    ``dtheta <= lambda_min/(2 D margin)``.
    """
    df_max = C0 / (2 * scene_diameter * margin)
    n_freq = max(2, math.ceil(config.bandwidth / df_max) + 1)
    lam_min = C0 / (config.center_frequency + 0.5 * config.bandwidth)
    dth_max = lam_min / (2 * scene_diameter * margin)
    n_slow = max(2, math.ceil(config.aperture / dth_max) + 1)
    return n_freq, n_slow


# ---------------------------------------------------------------------------
# Image grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageGrid:
    """Uniform horizontal pixel grid.

    Pixels are stored row-major with rows along y: pixel ``(iy, ix)`` has
    flat index ``iy * nx + ix``.
    """

    center: tuple[float, float]
    spacing: float
    shape: tuple[int, int]
    height: float = 0.0
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ny, nx = self.shape
        xs = self.center[0] + (np.arange(nx) - 0.5 * (nx - 1)) * self.spacing
        ys = self.center[1] + (np.arange(ny) - 0.5 * (ny - 1)) * self.spacing
        X, Y = np.meshgrid(xs, ys)
        pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, float(self.height))], axis=1)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n_pixels(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.shape[1] - 1) * self.spacing, (self.shape[0] - 1) * self.spacing)

    @property
    def x(self) -> np.ndarray:
        return self.points[: self.shape[1], 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:: self.shape[1], 1]

    def reshape(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v).reshape(self.shape)


def make_image_grid(
    extent: float | tuple[float, float],
    spacing: float,
    plane_height: float = 0.0,
    center: tuple[float, float] = (0.0, 0.0),
) -> ImageGrid:
    """Uniform grid covering ``extent`` (metres) centred on ``center``.

    The pixel count per axis is ``floor(extent / spacing) + 1``; an extent
    smaller than the spacing yields a single pixel at the centre.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    ex, ey = (extent, extent) if np.isscalar(extent) else extent
    nx = int(math.floor(ex / spacing + 1e-9)) + 1
    ny = int(math.floor(ey / spacing + 1e-9)) + 1
    return ImageGrid(center=(float(center[0]), float(center[1])), spacing=float(spacing), shape=(ny, nx), height=plane_height)


def upsampled_spacing(resolution: float, factor: int) -> float:
    """Pixel spacing for a grid upsampled ``factor`` times relative to ``resolution``."""
    return resolution / factor
