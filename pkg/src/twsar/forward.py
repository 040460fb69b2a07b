"""Phase-history data models: free-space Born and through-wall.

Every data sample ``i`` pairs a transmitter ``y_T``, a receiver ``y_R``
and an angular frequency ``omega``.  With the phase reference
``R_0 = |y_T - x_ref| + |y_R - x_ref|`` the linear model is

    A_ij = a(omega_i) exp(-i omega_i R_0,i / c) G(x_j, y_T,i) G(y_R,i, x_j),

with ``G = G0`` for the standard SAR model and ``G = G0 + U_D^sc`` (taken
from the F1 reduced-order model) through the wall.  The receive-side
factor comes from a source placed at the receiver, which is valid by
reciprocity.  The direct wall echo ``F0`` is
``a exp(-i omega R_0 / c) U_D^sc(y_R; y_T)`` from the F0 model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constants import C0
from .geometry import AcquisitionGeometry, ImageGrid
from .rom import RomPair, acquisition_hash

_FOUR_PI = 4.0 * np.pi


class PointMismatchError(ValueError):
    """Requested scene points are not evaluation points of the F1 model."""


def greens_free(x, y, omega):
    """Free-space Green's function ``exp(i k r) / (4 pi r)`` with ``k = omega / c0``.

    Broadcasts over leading axes of ``x`` and ``y`` (last axis of length 3).
    """
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise ValueError("coincident points")
    k = np.asarray(omega, dtype=float) / C0
    return np.exp(1j * k * r) / (_FOUR_PI * r)


def spectrum_weight(omega, spectrum: float | Callable | None = None):
    """``a(omega) = omega^2 P(omega)``; ``P`` is 1 unless a constant or callable is given."""
    omega = np.asarray(omega, dtype=float)
    if spectrum is None:
        p = 1.0
    elif callable(spectrum):
        p = spectrum(omega)
    else:
        p = spectrum
    return omega**2 * p


@dataclass(frozen=True, eq=False)
class PhaseHistory:
    """Phase-history vector ordered (channel, slow time, frequency).

    ``acquisition`` provides the index map via
    :meth:`AcquisitionGeometry.sample_index`.
    """

    d: np.ndarray
    acquisition: AcquisitionGeometry | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.complex128)
        if d.ndim != 1:
            raise ValueError("phase history must be a vector")
        if self.acquisition is not None and d.size != self.acquisition.n_samples:
            raise ValueError(f"expected {self.acquisition.n_samples} samples, got {d.size}")
        object.__setattr__(self, "d", d)

    def cube(self) -> np.ndarray:
        """Data as an array of shape (n_channels, n_slow, n_freq)."""
        a = self.acquisition
        return self.d.reshape(a.n_channels, a.n_slow, a.n_freq)


@dataclass(frozen=True, eq=False)
class ReflectivityImage:
    v: np.ndarray
    grid: ImageGrid | None = None

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.complex128).ravel()
        if self.grid is not None and v.size != self.grid.n_pixels:
            raise ValueError("image length does not match the grid")
        if not np.all(np.isfinite(v)):
            raise ValueError("image has non-finite entries")
        object.__setattr__(self, "v", v)

    def magnitude(self) -> np.ndarray:
        a = np.abs(self.v)
        return self.grid.reshape(a) if self.grid is not None else a


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Dense linear data model for one set of wall parameters.

    Attributes
    ----------
    matrix : ndarray, shape (n_samples, n_points)
    m : ndarray or None
        Wall parameters (``None`` for the free-space model).
    reference_ranges : ndarray
        ``R_0`` per sample.
    weights : ndarray
        ``a(omega_i) exp(-i omega_i R_0,i / c)`` per sample.
    """

    matrix: np.ndarray
    m: np.ndarray | None
    reference_ranges: np.ndarray
    weights: np.ndarray
    acquisition_id: str = ""
    label: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"image has {v.shape[0]} entries, operator expects {self.matrix.shape[1]}")
        return self.matrix @ v

    def adjoint(self, d) -> np.ndarray:
        d = d.d if isinstance(d, PhaseHistory) else np.asarray(d)
        if d.shape[0] != self.matrix.shape[0]:
            raise ValueError(f"data has {d.shape[0]} entries, operator expects {self.matrix.shape[0]}")
        return self.matrix.conj().T @ d

    __matmul__ = apply


def _sample_tables(acquisition: AcquisitionGeometry, spectrum=None):
    idx = acquisition.sample_index()
    c, s, f = idx[:, 0], idx[:, 1], idx[:, 2]
    om = acquisition.omegas[f]
    r0 = acquisition.reference_ranges()
    w = spectrum_weight(om, spectrum) * np.exp(-1j * om * r0 / C0)
    return c, s, f, r0, w


def _points(points) -> np.ndarray:
    if isinstance(points, ImageGrid):
        return points.points
    return np.ascontiguousarray(np.atleast_2d(points), dtype=float)


def freespace_operator(acquisition: AcquisitionGeometry, points, spectrum=None) -> ForwardOperator:
    """Standard SAR (free-space Born) operator."""
    pts = _points(points)
    c, s, f, r0, w = _sample_tables(acquisition, spectrum)
    om = acquisition.omegas[f][:, None]
    tx = acquisition.tx_positions[s][:, None, :]
    rx = acquisition.rx_positions[c, s][:, None, :]
    gt = greens_free(pts[None], tx, om)
    gr = greens_free(rx, pts[None], om)
    return ForwardOperator(w[:, None] * gt * gr, None, r0, w, acquisition_hash(acquisition), "free-space")


@dataclass(eq=False)
class ThroughWallModel:
    """Through-wall data model driven by the F0/F1 reduced-order models.

    Parameters
    ----------
    rom : RomPair
    acquisition : AcquisitionGeometry
        Must match the acquisition the models were trained on.
    points : ImageGrid or ndarray
        Scene points; each must be an F1 evaluation point.
    spectrum : float or callable, optional
        ``P(omega)``; flat by default.
    """

    rom: RomPair
    acquisition: AcquisitionGeometry
    points: ImageGrid | np.ndarray
    spectrum: float | Callable | None = None

    def __post_init__(self):
        pts = _points(self.points)
        f1 = self.rom.f1
        ant, tx_index, rx_index = self.acquisition.antenna_table()
        if f1.antennas is None or f1.antennas.shape != ant.shape or not np.allclose(f1.antennas, ant, atol=1e-9):
            raise ValueError("F1 model was trained for different antenna positions")
        if f1.omegas is None or not np.allclose(f1.omegas, self.acquisition.omegas, rtol=1e-12):
            raise ValueError("F1 model was trained for different frequencies")
        self.columns = match_points(f1.points, pts)
        self._pts = pts
        self._tx, self._rx = tx_index, rx_index
        c, s, f, r0, w = _sample_tables(self.acquisition, self.spectrum)
        self._c, self._s, self._f, self._r0, self._w = c, s, f, r0, w
        om = self.acquisition.omegas[:, None, None]
        self._g0 = greens_free(pts[None, None], ant[None, :, None], om)  # (freq, antenna, point)
        self._id = acquisition_hash(self.acquisition)

    @property
    def n_params(self) -> int:
        return self.rom.f1.grid.dim

    def _green_tables(self, u: np.ndarray) -> np.ndarray:
        u = self.rom.f1.reshaped(u)[:, :, self.columns]
        return u

    def _rows(self, table: np.ndarray):
        """Transmit and receive factors per sample from a (freq, antenna, point) table."""
        t = table[self._f, self._tx[self._s]]
        r = table[self._f, self._rx[self._c, self._s]]
        return t, r

    def operator(self, m) -> ForwardOperator:
        m = np.atleast_1d(np.asarray(m, dtype=float))
        gp = self._g0 + self._green_tables(self.rom.f1.evaluate(m))
        t, r = self._rows(gp)
        return ForwardOperator(self._w[:, None] * t * r, m, self._r0, self._w, self._id, "through-wall")

    def operator_and_derivatives(self, m) -> tuple[ForwardOperator, list[np.ndarray]]:
        """``A(m)`` and the dense derivatives ``dA/dm_j``."""
        m = np.atleast_1d(np.asarray(m, dtype=float))
        u, du, _ = self.rom.f1.evaluate_with_gradient(m)
        gp = self._g0 + self._green_tables(u)
        t, r = self._rows(gp)
        op = ForwardOperator(self._w[:, None] * t * r, m, self._r0, self._w, self._id, "through-wall")
        derivs = []
        for g in du:
            dt, dr = self._rows(self._green_tables(g))
            derivs.append(self._w[:, None] * (dt * r + t * dr))
        return op, derivs

    def _f0_rows(self, u: np.ndarray) -> np.ndarray:
        cube = self.rom.f0.reshaped(u)  # (freq, slow, channel)
        return cube[self._f, self._s, self._c]

    def direct_wall_response(self, m) -> np.ndarray:
        """``F0(m)``, the wall echo at every sample."""
        return self._w * self._f0_rows(self.rom.f0.evaluate(np.atleast_1d(m)))

    def direct_wall_response_with_gradient(self, m) -> tuple[np.ndarray, list[np.ndarray]]:
        u, du, _ = self.rom.f0.evaluate_with_gradient(np.atleast_1d(m))
        return self._w * self._f0_rows(u), [self._w * self._f0_rows(g) for g in du]


def match_points(available: np.ndarray | None, wanted: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Index of each wanted point among the available ones."""
    if available is None:
        raise PointMismatchError("the model has no evaluation points")
    available = np.asarray(available)
    d = np.linalg.norm(wanted[:, None, :] - available[None, :, :], axis=-1)
    idx = np.argmin(d, axis=1)
    bad = d[np.arange(len(wanted)), idx] > tol
    if np.any(bad):
        raise PointMismatchError(f"{int(bad.sum())} scene points are not ROM evaluation points, "
                                 f"first {wanted[np.argmax(bad)]}")
    return idx


def assemble_A(m, rom: RomPair, acquisition: AcquisitionGeometry, points, spectrum=None) -> ForwardOperator:
    """Through-wall operator ``A(m)`` (builds a :class:`ThroughWallModel` on the fly)."""
    return ThroughWallModel(rom, acquisition, points, spectrum).operator(m)


def direct_wall_response(m, rom: RomPair, acquisition: AcquisitionGeometry, spectrum=None) -> PhaseHistory:
    model = ThroughWallModel(rom, acquisition, rom.f1.points[:1], spectrum)
    return PhaseHistory(model.direct_wall_response(m), acquisition)


def predict(op: ForwardOperator, v, f0: np.ndarray | None = None) -> np.ndarray:
    """``A v`` plus the wall echo when ``f0`` is given."""
    d = op.apply(np.asarray(v, dtype=np.complex128))
    if f0 is not None:
        d = d + f0
    return d


def apply_adjoint(op: ForwardOperator, d) -> np.ndarray:
    """Back-projection ``A^H d``."""
    return op.adjoint(d)
