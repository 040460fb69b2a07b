"""Quadrature rules for Galerkin boundary integrals on flat triangles.

Regular element pairs use products of symmetric triangle rules.  Pairs
that share a triangle, an edge or a vertex use regularising coordinate
transforms of the four-dimensional reference integral, which map the
kernel singularity onto a face of the unit hypercube where the Jacobian
cancels it.  All singular rules are expressed on the reference triangle

    T = {(s, t) : 0 <= t <= s <= 1},

parametrised on a physical triangle (A, B, C) as ``A + s (B - A) + t (C - B)``
(so the Jacobian is twice the area), with barycentric coordinates
``(1 - s, s - t, t)`` for (A, B, C).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class QuadratureConfig:
    """Orders of the quadrature rules used during assembly.

    Parameters
    ----------
    singular_order : int
        Gauss-Legendre points per dimension of the singular transforms.
    far_rule : str
        Triangle rule for well separated pairs (``"gauss6"`` or
        ``"collapsed<n>"``).
    mid_rule, near_rule : str
        Rules for pairs closer than ``mid_ratio`` and ``near_ratio`` times
        the larger element diameter (centroid distance).
    """

    singular_order: int = 6
    far_rule: str = "gauss6"
    mid_rule: str = "collapsed4"
    near_rule: str = "collapsed6"
    mid_ratio: float = 4.0
    near_ratio: float = 2.0

    def doubled(self) -> "QuadratureConfig":
        """A configuration with roughly twice the order of every rule."""
        return QuadratureConfig(
            singular_order=2 * self.singular_order,
            far_rule="collapsed5",
            mid_rule="collapsed8",
            near_rule="collapsed12",
            mid_ratio=self.mid_ratio,
            near_ratio=self.near_ratio,
        )


def gauss_legendre01(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


# Symmetric 6-point rule of polynomial degree 4 (Dunavant).
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322


@lru_cache(maxsize=None)
def triangle_rule(name: str) -> tuple[np.ndarray, np.ndarray]:
    """Triangle rule in barycentric form.

    Returns
    -------
    bary : ndarray, shape (nq, 3)
        Barycentric coordinates of the points.
    weights : ndarray, shape (nq,)
        Weights summing to one (multiply by the area).
    """
    if name == "gauss6":
        b = []
        for a in (_A1, _A2):
            c = 1.0 - 2.0 * a
            b += [(a, a, c), (a, c, a), (c, a, a)]
        w = [_W1] * 3 + [_W2] * 3
        bary, weights = np.array(b), np.array(w)
    elif name == "centroid":
        bary, weights = np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])
    elif name.startswith("collapsed"):
        n = int(name[len("collapsed"):])
        x, w = gauss_legendre01(n)
        s = np.repeat(x, n)
        t = s * np.tile(x, n)
        weights = np.repeat(w, n) * np.tile(w, n) * s * 2.0
        bary = np.stack([1.0 - s, s - t, t], axis=1)
    else:
        raise ValueError(f"unknown triangle rule {name!r}")
    bary = np.ascontiguousarray(bary, dtype=np.float64)
    weights = np.ascontiguousarray(weights / weights.sum(), dtype=np.float64)
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights


def _hypercube(n: int):
    x, w = gauss_legendre01(n)
    g = np.meshgrid(x, x, x, x, indexing="ij")
    wg = np.meshgrid(w, w, w, w, indexing="ij")
    pts = [a.ravel() for a in g]
    wt = wg[0].ravel() * wg[1].ravel() * wg[2].ravel() * wg[3].ravel()
    return pts, wt


def _to_bary(st: np.ndarray) -> np.ndarray:
    s, t = st[:, 0], st[:, 1]
    return np.stack([1.0 - s, s - t, t], axis=1)


_HEXAGON = np.array([[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1], [0, -1]], dtype=float)


@lru_cache(maxsize=None)
def singular_rule(kind: str, order: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regularised rule for a pair of triangles touching each other.

    Parameters
    ----------
    kind : {"coincident", "edge", "vertex"}
        Adjacency type.  For ``"edge"`` both triangles must be ordered so
        that the shared edge is (A, B) in both; for ``"vertex"`` the shared
        vertex must be A in both.
    order : int
        Gauss points per hypercube dimension.

    Returns
    -------
    bx, by : ndarray, shape (nq, 3)
        Barycentric coordinates of the test and trial points.
    w : ndarray, shape (nq,)
        Weights for the reference pair (they sum to 1/4, the squared
        reference area); multiply by ``4 A_x A_y``.
    """
    (e, a, b, c), wt = _hypercube(order)
    xs, ys, ws = [], [], []
    if kind == "coincident":
        for j in range(6):
            v0, v1 = _HEXAGON[j], _HEXAGON[(j + 1) % 6]
            z = e[:, None] * (v0[None, :] + a[:, None] * (v1 - v0)[None, :])
            p = np.maximum(0.0, -z[:, 1])
            q = np.maximum(0.0, z[:, 1] - z[:, 0])
            x = np.stack([p + q, p], axis=1) + (1.0 - e)[:, None] * np.stack([b, b * c], axis=1)
            xs.append(x)
            ys.append(x + z)
            ws.append(wt * e * (1.0 - e) ** 2 * b)
    elif kind == "edge":
        x1 = e * (1.0 - a) + (1.0 - e) * c
        xa = np.stack([x1, e * (1.0 - a)], axis=1)
        ya = np.stack([x1 + e * a, e * b], axis=1)
        wa = wt * e**2 * (1.0 - e)
        xb = np.stack([x1, e * (1.0 - a) * b], axis=1)
        yb = np.stack([x1 + e * a, e], axis=1)
        wb = wt * e**2 * (1.0 - e) * (1.0 - a)
        xs += [xa, xb, ya, yb]
        ys += [ya, yb, xa, xb]
        ws += [wa, wb, wa, wb]
    elif kind == "vertex":
        xa = np.stack([e, e * b], axis=1)
        ya = np.stack([e * a, e * a * c], axis=1)
        w0 = wt * e**3 * a
        xs += [xa, ya]
        ys += [ya, xa]
        ws += [w0, w0]
    else:
        raise ValueError(f"unknown adjacency {kind!r}")
    bx = np.ascontiguousarray(_to_bary(np.concatenate(xs)))
    by = np.ascontiguousarray(_to_bary(np.concatenate(ys)))
    w = np.ascontiguousarray(np.concatenate(ws))
    for arr in (bx, by, w):
        arr.setflags(write=False)
    return bx, by, w
