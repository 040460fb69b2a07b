"""Independent reference solutions used to validate the numerical modules.

Nothing here shares code with the solvers it checks: the sphere series
uses separation of variables, gradients use plain central differences
and the proximal reference uses a generic constrained optimiser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special


class SeriesConvergenceError(RuntimeError):
    """The partial-wave series did not converge below the order cap."""


@dataclass(frozen=True)
class SphereSeriesConfig:
    """Homogeneous penetrable sphere illuminated by a plane wave or point source.

    Parameters
    ----------
    radius : float
    k0, kD : complex
        Exterior and interior wavenumbers.  The field and its normal
        derivative are continuous across the surface.
    source : {"plane", "point"}
    direction : 3-vector
        Propagation direction of the plane wave.
    position : 3-vector
        Location of the point source ``exp(i k0 r) / (4 pi r)``.
    center : 3-vector
    order_cap : int, optional
        Largest order summed; defaults to ``ceil(|k0| a) + 60``.
    """

    radius: float
    k0: complex
    kD: complex
    source: str = "plane"
    direction: tuple = (0.0, 0.0, 1.0)
    position: tuple = (0.0, 0.0, 10.0)
    center: tuple = (0.0, 0.0, 0.0)
    order_cap: int | None = None

    def __post_init__(self):
        floor = math.ceil(abs(self.k0) * self.radius) + 10
        if self.order_cap is not None and self.order_cap < floor:
            raise ValueError(f"order_cap must be at least {floor}")
        if self.source not in ("plane", "point"):
            raise ValueError("source must be 'plane' or 'point'")

    @property
    def cap(self) -> int:
        if self.order_cap is not None:
            return self.order_cap
        return math.ceil(abs(self.k0) * self.radius) + 60


def _h1(n, z, derivative=False):
    return special.spherical_jn(n, z, derivative) + 1j * special.spherical_yn(n, z, derivative)


def sphere_coefficients(radius: float, k0: complex, kD: complex, orders: np.ndarray) -> np.ndarray:
    """Scattering coefficients ``b_n`` of the penetrable sphere.

    The exterior field of order ``n`` is ``j_n(k0 r) + b_n h_n(k0 r)`` and
    matches ``c_n j_n(kD r)`` in value and radial derivative at ``r = a``.
    """
    x0, x1 = k0 * radius, kD * radius
    j0 = special.spherical_jn(orders, x0)
    dj0 = special.spherical_jn(orders, x0, derivative=True)
    h0 = _h1(orders, x0)
    dh0 = _h1(orders, x0, derivative=True)
    j1 = special.spherical_jn(orders, x1)
    dj1 = special.spherical_jn(orders, x1, derivative=True)
    num = kD * dj1 * j0 - k0 * dj0 * j1
    den = k0 * dh0 * j1 - kD * dj1 * h0
    return num / den


def sphere_series_field(config: SphereSeriesConfig, eval_points: np.ndarray,
                        n_terms: int | None = None) -> np.ndarray:
    """Scattered field of the sphere at exterior points.

    Terms are added until five consecutive orders change the result by
    less than ``1e-10`` relative (or exactly ``n_terms`` orders if given).

    Raises
    ------
    SeriesConvergenceError
        When the tolerance is not met at the order cap.
    ValueError
        For evaluation points inside the sphere.
    """
    pts = np.atleast_2d(np.asarray(eval_points, dtype=float)) - np.asarray(config.center, dtype=float)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r <= config.radius):
        raise ValueError("evaluation points must lie outside the sphere")
    a, k0 = config.radius, config.k0
    if config.source == "plane":
        d = np.asarray(config.direction, dtype=float)
        cosg = pts @ (d / np.linalg.norm(d)) / r
    else:
        y = np.asarray(config.position, dtype=float) - np.asarray(config.center, dtype=float)
        rho = np.linalg.norm(y)
        if rho <= a:
            raise ValueError("point source must lie outside the sphere")
        cosg = pts @ y / (r * rho)
    cosg = np.clip(cosg, -1.0, 1.0)

    limit = config.cap if n_terms is None else n_terms
    total = np.zeros(len(r), dtype=complex)
    quiet = 0
    for n in range(limit + 1):
        b = sphere_coefficients(a, k0, config.kD, np.array([n]))[0]
        if config.source == "plane":
            amp = (2 * n + 1) * (1j**n) * b
        else:
            amp = 1j * k0 / (4 * np.pi) * (2 * n + 1) * b * _h1(n, k0 * rho)
        term = amp * _h1(n, k0 * r) * special.eval_legendre(n, cosg)
        if not np.all(np.isfinite(term)):
            break
        total += term
        if n_terms is not None:
            continue
        scale = np.abs(total).max()
        if np.abs(term).max() <= 1e-10 * max(scale, np.finfo(float).tiny):
            quiet += 1
            if quiet >= 5:
                return total
        else:
            quiet = 0
    if n_terms is None and not np.all(total == 0):
        raise SeriesConvergenceError(f"series not converged at order {limit}")
    return total


def fd_gradient(f: Callable[[np.ndarray], float], m, h) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    ``h`` may be a scalar or one step per coordinate.
    """
    m = np.atleast_1d(np.asarray(m, dtype=float))
    steps = np.broadcast_to(np.asarray(h, dtype=float), m.shape)
    if np.any(steps <= 0):
        raise ValueError("steps must be positive")
    g = np.empty_like(m)
    for i in range(m.size):
        e = np.zeros_like(m)
        e[i] = steps[i]
        g[i] = (f(m + e) - f(m - e)) / (2 * steps[i])
    return g


def tv_isotropic(x: np.ndarray) -> float:
    """Isotropic total variation with forward differences, zero at the far edges."""
    x = np.asarray(x, dtype=float)
    dr = np.zeros_like(x)
    dc = np.zeros_like(x)
    dr[:-1, :] = x[1:, :] - x[:-1, :]
    dc[:, :-1] = x[:, 1:] - x[:, :-1]
    return float(np.sqrt(dr**2 + dc**2).sum())


def _difference_matrix(shape) -> np.ndarray:
    """Forward-difference operator, two rows (down, right) per pixel.

    Differences that would leave the image are zero rows, matching
    :func:`tv_isotropic`.
    """
    ny, nx = shape
    n = ny * nx
    d = np.zeros((2 * n, n))
    for i in range(ny):
        for j in range(nx):
            k = i * nx + j
            if i + 1 < ny:
                d[2 * k, k + nx] = 1.0
                d[2 * k, k] = -1.0
            if j + 1 < nx:
                d[2 * k + 1, k + 1] = 1.0
                d[2 * k + 1, k] = -1.0
    return d


def prox_bruteforce(y: np.ndarray, tau: float, kind: str = "tv", restarts: int = 20,
                    seed: int = 0) -> np.ndarray:
    """Minimiser of ``0.5 ||x - y||^2 + tau R(x)`` for a real image of at most 9 pixels.

    Two generic formulations are solved with SLSQP from many random starts:
    the primal in epigraph form (one auxiliary bound per non-smooth term)
    and the dual projection problem ``min 0.5 ||y - D^T p||^2`` subject to
    ``|p_k| <= tau`` per pixel, whose solution gives ``x = y - D^T p``.
    The candidate with the lowest exact objective is returned.  ``kind``
    is ``"tv"`` (isotropic, as in :func:`tv_isotropic`) or ``"l1"``.
    """
    y = np.asarray(y, dtype=float)
    if y.size > 9:
        raise ValueError("brute-force prox supports at most 9 variables")
    if kind not in ("tv", "l1"):
        raise ValueError(f"unknown regulariser {kind!r}")
    if tau == 0:
        return y.copy()
    shape = y.shape
    yf = y.ravel()
    n = yf.size
    if kind == "l1":
        dmat = np.eye(n)
        group = 1
    else:
        dmat = _difference_matrix(shape)
        group = 2
    ng = dmat.shape[0] // group

    def exact(x):
        reg = np.abs(x).sum() if kind == "l1" else tv_isotropic(x.reshape(shape))
        return 0.5 * np.sum((x - yf) ** 2) + tau * reg

    def norms_sq(v):
        return (v.reshape(ng, group) ** 2).sum(axis=1)

    # primal epigraph: min 0.5|x-y|^2 + tau sum t,  t_k^2 >= |(Dx)_k|^2, t >= 0
    def p_obj(z):
        return 0.5 * np.sum((z[:n] - yf) ** 2) + tau * np.sum(z[n:])

    def p_grad(z):
        return np.concatenate([z[:n] - yf, np.full(ng, tau)])

    def p_cons(z):
        return z[n:] ** 2 - norms_sq(dmat @ z[:n])

    # dual: min 0.5|y - D^T p|^2,  |p_k|^2 <= tau^2
    def d_obj(p):
        r = yf - dmat.T @ p
        return 0.5 * r @ r

    def d_grad(p):
        return -dmat @ (yf - dmat.T @ p)

    def d_cons(p):
        return tau**2 - norms_sq(p)

    rng = np.random.default_rng(seed)
    best_x, best_f = yf.copy(), exact(yf)
    spread = max(np.abs(yf).max(), tau, 1.0)
    opts = {"ftol": 1e-15, "maxiter": 2000}
    for r in range(restarts):
        x0 = yf if r == 0 else yf + spread * rng.standard_normal(n)
        z0 = np.concatenate([x0, np.sqrt(norms_sq(dmat @ x0)) + 1e-3])
        res = optimize.minimize(p_obj, z0, jac=p_grad, method="SLSQP",
                                constraints=[{"type": "ineq", "fun": p_cons}],
                                bounds=[(None, None)] * n + [(0.0, None)] * ng, options=opts)
        candidates = [res.x[:n]]
        p0 = rng.uniform(-tau, tau, dmat.shape[0]) / np.sqrt(group)
        res = optimize.minimize(d_obj, p0, jac=d_grad, method="SLSQP",
                                constraints=[{"type": "ineq", "fun": d_cons}], options=opts)
        candidates.append(yf - dmat.T @ res.x)
        for x in candidates:
            f = exact(x)
            if f < best_f:
                best_x, best_f = x, f
    return best_x.reshape(shape)


def slab_delay_shift(thickness: float, epsilon_r: float) -> float:
    """Apparent down-range shift caused by a lossless slab at normal incidence.

    Crossing a slab of thickness ``t`` and permittivity ``eps`` lengthens
    the one-way optical path by ``t (sqrt(eps) - 1)``.  A free-space
    image places the target that much farther down-range.
    """
    if thickness < 0 or epsilon_r < 1:
        raise ValueError("thickness must be >= 0 and epsilon_r >= 1")
    return float(thickness * (math.sqrt(epsilon_r) - 1.0))
