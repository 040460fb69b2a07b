"""Variable-projection reconstruction.

The inner problem finds the reflectivity for fixed wall parameters,

    v(m) = argmin_v  1/2 ||A(m) v - b(m)||^2 + lambda R(|v|),

with ``b = d - F0(m)`` when the wall echo is modelled, using FISTA with
the proximal maps below.  The outer problem minimises the reduced
objective ``J(m) = J(m, v(m))`` with a full-memory BFGS method.  Because
``v(m)`` is optimal, the reduced gradient only involves the partial
derivatives in ``m``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .forward import ForwardOperator, ThroughWallModel

log = logging.getLogger(__name__)


class StepSizeError(FloatingPointError):
    """The FISTA objective became non-finite (step size too large?)."""


# -- proximal maps -----------------------------------------------------------


def prox_l1(y, tau: float) -> np.ndarray:
    """Complex soft threshold ``max(|y| - tau, 0) exp(i arg y)``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    y = np.asarray(y)
    mag = np.abs(y)
    shrunk = np.maximum(mag - tau, 0.0)
    scale = np.divide(shrunk, mag, out=np.zeros_like(mag), where=mag > 0)
    return y * scale


def _grad(x: np.ndarray) -> np.ndarray:
    """Forward differences along rows and columns, zero past the last sample."""
    g = np.zeros((2,) + x.shape)
    g[0, :-1, :] = x[1:, :] - x[:-1, :]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    return g


def _grad_adjoint(p: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_grad` (a negative divergence)."""
    out = np.zeros(p.shape[1:])
    out[:-1, :] -= p[0, :-1, :]
    out[1:, :] += p[0, :-1, :]
    out[:, :-1] -= p[1, :, :-1]
    out[:, 1:] += p[1, :, :-1]
    return out


def tv_norm(x: np.ndarray) -> float:
    """Isotropic total variation with forward differences."""
    g = _grad(np.asarray(x, dtype=float))
    return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())


def prox_tv(r: np.ndarray, tau: float, inner_iter: int = 20, tol: float = 0.0) -> np.ndarray:
    """Proximal map of ``tau TV`` for a real image by fast gradient projection.

    Runs the accelerated projected gradient method on the dual problem
    for ``inner_iter`` iterations (fewer if the dual iterate changes by
    less than ``tol`` in max norm).
    """
    r = np.asarray(r, dtype=float)
    if tau == 0:
        return r.copy()
    if r.ndim != 2:
        raise ValueError("TV prox needs a 2D image")
    step = 1.0 / (8.0 * tau)
    p = np.zeros((2,) + r.shape)
    q = p.copy()
    t = 1.0
    for _ in range(inner_iter):
        z = q + step * _grad(r - tau * _grad_adjoint(q))
        norm = np.maximum(1.0, np.sqrt(z[0] ** 2 + z[1] ** 2))
        p_new = z / norm
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        q = p_new + ((t - 1.0) / t_new) * (p_new - p)
        change = np.abs(p_new - p).max()
        p, t = p_new, t_new
        if change <= tol:
            break
    return r - tau * _grad_adjoint(p)


def prox_tv_magnitude(y: np.ndarray, tau: float, inner_iter: int = 20, tol: float = 0.0) -> np.ndarray:
    """Proximal map of ``tau TV(|.|)``: TV prox of the magnitudes, original phases kept.

    Negative magnitudes from an inexact dual solve are clipped to zero.
    """
    y = np.asarray(y, dtype=np.complex128)
    if tau == 0:
        return y.copy()
    mag = np.abs(y)
    r = np.maximum(prox_tv(mag, tau, inner_iter, tol), 0.0)
    phase = np.divide(y, mag, out=np.ones_like(y), where=mag > 0)
    return r * phase


# -- operator norm -------------------------------------------------------------


def power_method_norm(op, iters: int = 100, seed: int = 0) -> float:
    """Estimate ``||A||_2`` by power iteration on ``A^H A`` from a seeded start.

    The estimate ``||A x_k||`` with ``x_k`` normalised never decreases
    with ``iters``.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    mat = op.matrix if isinstance(op, ForwardOperator) else np.asarray(op)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(mat.shape[1]) + 1j * rng.standard_normal(mat.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        ax = mat @ x
        est = np.linalg.norm(ax)
        if est == 0:
            raise ValueError("operator is zero (or the start vector is in its null space)")
        x = mat.conj().T @ ax
        x /= np.linalg.norm(x)
    return float(np.linalg.norm(mat @ x))


# -- FISTA ---------------------------------------------------------------------


@dataclass(frozen=True)
class InnerConfig:
    """Settings of the inner reflectivity solve.

    ``lambda_v`` is absolute; when it is ``None`` the weight is
    ``lambda_rel * ||A(m_ref)||_2`` fixed once per reconstruction.
    ``regularizer`` is ``"tv"``, ``"l1"`` or ``"none"``.  ``lipschitz_margin``
    inflates the power-method estimate of ``||A||^2`` so the step stays
    below ``1 / ||A||^2``.
    """

    lambda_v: float | None = None
    lambda_rel: float = 1e-3
    regularizer: str = "tv"
    max_iter: int = 500
    r_tol: float = 1e-6
    v_tol: float = 1e-8
    tv_inner_iter: int = 20
    power_iter: int = 100
    lipschitz_margin: float = 1.01

    def __post_init__(self):
        if self.regularizer not in ("tv", "l1", "none"):
            raise ValueError(f"unknown regulariser {self.regularizer!r}")
        if self.lambda_v is not None and self.lambda_v < 0:
            raise ValueError("lambda_v must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.r_tol < 0 or self.v_tol < 0:
            raise ValueError("tolerances must be non-negative")


@dataclass
class InnerTrace:
    objective: list = field(default_factory=list)
    best_objective: list = field(default_factory=list)
    misfit: list = field(default_factory=list)
    iterations: int = 0
    stop_reason: str = ""
    lipschitz: float = 0.0


def regularizer_value(v: np.ndarray, kind: str, shape) -> float:
    if kind == "none":
        return 0.0
    mag = np.abs(v)
    if kind == "l1":
        return float(mag.sum())
    return tv_norm(mag.reshape(shape))


def objective(op, v, b, lam: float, kind: str, shape) -> float:
    r = op.matrix @ v - b
    return 0.5 * float(np.vdot(r, r).real) + lam * regularizer_value(v, kind, shape)


def fista(
    op: ForwardOperator,
    b: np.ndarray,
    config: InnerConfig,
    lam: float,
    shape: tuple[int, int] | None = None,
    v0: np.ndarray | None = None,
    lipschitz: float | None = None,
) -> tuple[np.ndarray, InnerTrace]:
    """FISTA for ``1/2 ||A v - b||^2 + lam R(|v|)`` returning the best iterate.

    Stops when the relative objective change between iterates is below
    ``r_tol`` in magnitude, the relative squared iterate change is below
    ``v_tol``, or after ``max_iter`` iterations.

    Parameters
    ----------
    op : ForwardOperator
    b : ndarray
        Data the linear model has to fit.
    lam : float
        Regularisation weight.
    shape : tuple, optional
        Image shape, needed for TV.
    v0 : ndarray, optional
        Warm start (zeros otherwise).
    lipschitz : float, optional
        ``L >= ||A||^2``; estimated by the power method when omitted.
    """
    A = op.matrix
    n = A.shape[1]
    kind = config.regularizer if lam > 0 else "none"
    if kind == "tv" and (shape is None or shape[0] * shape[1] != n):
        raise ValueError("TV regularisation needs the image shape")
    if lipschitz is None:
        lipschitz = config.lipschitz_margin * power_method_norm(A, config.power_iter) ** 2
    step = 1.0 / lipschitz
    AH = A.conj().T
    bnorm = max(np.linalg.norm(b), np.finfo(float).tiny)

    def prox(z):
        if kind == "none":
            return z
        if kind == "l1":
            return prox_l1(z, lam * step)
        return prox_tv_magnitude(z.reshape(shape), lam * step, config.tv_inner_iter).ravel()

    def evaluate(v):
        r = A @ v - b
        f = 0.5 * float(np.vdot(r, r).real) + lam * regularizer_value(v, kind, shape)
        return f, float(np.linalg.norm(r)) / bnorm

    v = np.zeros(n, dtype=np.complex128) if v0 is None else np.array(v0, dtype=np.complex128)
    trace = InnerTrace(lipschitz=lipschitz)
    f_prev, mis = evaluate(v)
    if not math.isfinite(f_prev):
        raise StepSizeError("initial objective is not finite")
    best_v, best_f = v.copy(), f_prev
    trace.objective.append(f_prev)
    trace.best_objective.append(best_f)
    trace.misfit.append(mis)
    y = v.copy()
    t = 1.0
    trace.stop_reason = "max_iter"
    for k in range(1, config.max_iter + 1):
        v_new = prox(y - step * (AH @ (A @ y - b)))
        f, mis = evaluate(v_new)
        if not math.isfinite(f):
            raise StepSizeError(f"objective became non-finite at iteration {k}")
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = v_new + ((t - 1.0) / t_new) * (v_new - v)
        dv = np.vdot(v_new - v, v_new - v).real
        vv = np.vdot(v, v).real
        if f < best_f:
            best_v, best_f = v_new.copy(), f
        trace.objective.append(f)
        trace.best_objective.append(best_f)
        trace.misfit.append(mis)
        trace.iterations = k
        rel_f = abs(f_prev - f) / f_prev if f_prev > 0 else 0.0
        v, t, f_prev = v_new, t_new, f
        if rel_f < config.r_tol:
            trace.stop_reason = "r_tol"
            break
        if (dv / vv if vv > 0 else (0.0 if dv == 0 else math.inf)) < config.v_tol:
            trace.stop_reason = "v_tol"
            break
    if np.any(np.diff(trace.best_objective) > 0):
        raise AssertionError("best-iterate objective increased")
    return best_v, trace


# -- variable projection -----------------------------------------------------


@dataclass
class InnerResult:
    v: np.ndarray
    objective: float
    residual: np.ndarray
    op: ForwardOperator
    derivatives: list
    f0_derivatives: list
    trace: InnerTrace


@dataclass(eq=False)
class VarProProblem:
    """Reduced problem ``J(m) = min_v J(m, v)`` for fixed data.

    Parameters
    ----------
    model : ThroughWallModel
    data : ndarray
    inner : InnerConfig
    shape : tuple
        Image shape (rows, columns), used by TV.
    include_f0 : bool
        Model the direct wall echo.
    lam : float, optional
        Regularisation weight; when omitted it is set from
        ``inner.lambda_v`` or ``inner.lambda_rel * ||A(m_ref)||``.
    m_ref : array_like, optional
        Parameters of the reference operator for ``lambda_rel``.
    """

    model: ThroughWallModel
    data: np.ndarray
    inner: InnerConfig
    shape: tuple[int, int] | None = None
    include_f0: bool = False
    lam: float | None = None
    m_ref: Sequence[float] | None = None
    warm: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.lam is None:
            if self.inner.lambda_v is not None:
                self.lam = float(self.inner.lambda_v)
            elif self.inner.regularizer == "none":
                self.lam = 0.0
            else:
                if self.m_ref is None:
                    raise ValueError("m_ref is needed to scale lambda")
                op = self.model.operator(self.m_ref)
                self.lam = self.inner.lambda_rel * power_method_norm(op, self.inner.power_iter)

    def solve_inner(self, m, v0=None, derivatives: bool = True, warm_start: bool = True) -> InnerResult:
        """Assemble ``A(m)``, remove ``F0(m)`` if modelled, run FISTA."""
        m = np.atleast_1d(np.asarray(m, dtype=float))
        if derivatives:
            op, dA = self.model.operator_and_derivatives(m)
        else:
            op, dA = self.model.operator(m), []
        b = self.data
        dF0 = []
        if self.include_f0:
            if derivatives:
                f0, dF0 = self.model.direct_wall_response_with_gradient(m)
            else:
                f0 = self.model.direct_wall_response(m)
            b = b - f0
        start = v0 if v0 is not None else (self.warm if warm_start else None)
        v, trace = fista(op, b, self.inner, self.lam, self.shape, start)
        res = op.matrix @ v - b
        J = 0.5 * float(np.vdot(res, res).real) + self.lam * regularizer_value(
            v, self.inner.regularizer if self.lam > 0 else "none", self.shape)
        if warm_start:
            self.warm = v
        return InnerResult(v, J, res, op, dA, dF0, trace)

    def value_and_gradient(self, m, v0=None, warm_start: bool = True) -> tuple[float, np.ndarray, InnerResult]:
        """Reduced objective and its gradient ``Re <dF0_j + dA_j v, r>``."""
        out = self.solve_inner(m, v0, True, warm_start)
        grad = np.empty(len(out.derivatives))
        for j, dA in enumerate(out.derivatives):
            dr = dA @ out.v
            if self.include_f0:
                dr = dr + out.f0_derivatives[j]
            grad[j] = np.vdot(dr, out.residual).real
        return out.objective, grad, out

    def jacobian(self, m, v) -> np.ndarray:
        """Columns ``dF0/dm_j + dA/dm_j v`` of the residual Jacobian."""
        m = np.atleast_1d(np.asarray(m, dtype=float))
        _, dA = self.model.operator_and_derivatives(m)
        cols = [d @ v for d in dA]
        if self.include_f0:
            _, dF0 = self.model.direct_wall_response_with_gradient(m)
            cols = [c + g for c, g in zip(cols, dF0)]
        return np.stack(cols, axis=1)


def reduced_objective_gradient(problem: VarProProblem, m) -> tuple[float, np.ndarray]:
    J, g, _ = problem.value_and_gradient(m)
    return J, g


# -- outer BFGS ----------------------------------------------------------------


@dataclass(frozen=True)
class OuterConfig:
    """Settings of the outer quasi-Newton iteration.

    The iteration stops when the quasi-Newton step ``|H g|`` is below
    ``step_tol`` in every coordinate (parameter units), after
    ``max_bfgs_iter`` accepted steps, or when the line search fails.

    The line search halves the step until the Armijo condition holds.  If
    the unit step already satisfies it but the slope along the direction
    is still steeper than ``wolfe_c2`` times the initial slope, the step is
    doubled (at most ``max_expansions`` times) while the objective keeps
    decreasing; ``max_expansions = 0`` gives plain backtracking.

    With ``warm_start`` every trial's inner solve starts from the image of
    the last accepted iterate; otherwise it starts from zero, which makes
    the reduced objective a fixed function of ``m`` even when the inner
    solver stops on its iteration cap.
    """

    m0: tuple[float, ...] = (3.0,)
    max_bfgs_iter: int = 10
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 20
    step_tol: float = 1e-3
    max_step: float | None = None
    wolfe_c2: float = 0.9
    max_expansions: int = 8
    warm_start: bool = False

    def __post_init__(self):
        if self.max_bfgs_iter < 1:
            raise ValueError("max_bfgs_iter must be at least 1")
        if not 0 < self.armijo_c < self.wolfe_c2 < 1:
            raise ValueError("need 0 < armijo_c < wolfe_c2 < 1")
        if self.max_expansions < 0:
            raise ValueError("max_expansions must be >= 0")


@dataclass
class OuterRecord:
    iteration: int
    m: np.ndarray
    objective: float
    grad_norm: float
    inner_iterations: int
    inner_history: list
    accepted: bool


@dataclass
class ReconstructionTrace:
    records: list = field(default_factory=list)
    stop_reason: str = ""
    line_search_failed: bool = False

    def accepted(self) -> list:
        return [r for r in self.records if r.accepted]

    def to_csv(self, path: str | Path, names: Sequence[str] = ("m",)) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *names, "objective", "grad_norm", "inner_iterations", "accepted"])
            for r in self.records:
                w.writerow([r.iteration, *[repr(float(x)) for x in r.m], repr(r.objective),
                            repr(r.grad_norm), r.inner_iterations, int(r.accepted)])


def initial_inverse_hessian(jac: np.ndarray) -> np.ndarray:
    """``(Re J^H J)^-1`` for a complex residual and real parameters."""
    h = np.real(jac.conj().T @ jac)
    return np.linalg.inv(h)


def _trial(problem: VarProProblem, m, p, alpha, v, it, trace):
    """Evaluate ``m + alpha p`` with inner start ``v`` and log it as a rejected trial."""
    m_try = m + alpha * p
    J_try, g_try, res_try = problem.value_and_gradient(m_try, v0=v, warm_start=False)
    record = OuterRecord(it, m_try.copy(), J_try, float(np.linalg.norm(g_try)), res_try.trace.iterations,
                         list(res_try.trace.best_objective), False)
    trace.records.append(record)
    log.info("outer trial %d: m = %s, J = %.6e", it, m_try, J_try)
    return m_try, J_try, g_try, res_try, alpha, record


def bfgs_outer(problem: VarProProblem, outer: OuterConfig) -> tuple[np.ndarray, np.ndarray, ReconstructionTrace]:
    """Full-memory BFGS on the reduced objective with an Armijo line search.

    Returns the best parameters, their reflectivity and the trace.  The
    inverse-Hessian seed is ``(Re J0^H J0)^-1`` with ``J0`` the residual
    Jacobian at ``m0`` and ``v = v(m0)``.
    """
    m = np.asarray(outer.m0, dtype=float)
    trace = ReconstructionTrace()
    J, g, res = problem.value_and_gradient(m, warm_start=outer.warm_start)
    trace.records.append(OuterRecord(0, m.copy(), J, float(np.linalg.norm(g)), res.trace.iterations,
                                     list(res.trace.best_objective), True))
    H = initial_inverse_hessian(problem.jacobian(m, res.v))
    v = res.v if outer.warm_start else None
    accepted = 0
    it = 0
    while True:
        p = -H @ g
        if np.all(np.abs(p) <= outer.step_tol):
            trace.stop_reason = "step_tol"
            break
        if accepted >= outer.max_bfgs_iter:
            trace.stop_reason = "max_iter"
            break
        slope = float(g @ p)
        if slope >= 0:
            # not a descent direction: restart from the steepest-descent scaled seed
            H = np.eye(len(m)) * (np.abs(p).max() / max(np.linalg.norm(g), 1e-300))
            p = -H @ g
            slope = float(g @ p)
        if outer.max_step is not None and np.abs(p).max() > outer.max_step:
            p *= outer.max_step / np.abs(p).max()
            slope = float(g @ p)
        alpha = 1.0
        best = None
        for _ in range(outer.max_backtracks + 1):
            it += 1
            trial = _trial(problem, m, p, alpha, v, it, trace)
            if trial[1] <= J + outer.armijo_c * alpha * slope and trial[1] < J:
                best = trial
                break
            alpha *= outer.backtrack
        if best is not None and alpha == 1.0:
            # unit step accepted: extend it while the slope stays steep and J keeps falling
            for _ in range(outer.max_expansions):
                if float(best[2] @ p) >= outer.wolfe_c2 * slope:
                    break
                it += 1
                trial = _trial(problem, m, p, 2 * best[4], v, it, trace)
                if not (trial[1] <= J + outer.armijo_c * trial[4] * slope and trial[1] < best[1]):
                    break
                best = trial
        if best is None:
            trace.stop_reason = "line_search_failed"
            trace.line_search_failed = True
            break
        m_try, J_try, g_try, res_try, _, record = best
        record.accepted = True
        log.info("outer step %d accepted: m = %s, J = %.6e", accepted + 1, m_try, J_try)
        s = m_try - m
        y = g_try - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            I = np.eye(len(m))
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        m, J, g, v_best = m_try, J_try, g_try, res_try.v
        if outer.warm_start:
            v = problem.warm = v_best
        accepted += 1
    return m, (v_best if accepted else res.v), trace
