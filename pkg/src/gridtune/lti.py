"""Closed-loop assembly, Gramian-based H2 cost, analytic gradient, simulation.

The performance output is the approximate integral (pole at -epsilon) of the
weighted [RoCoF, frequency, voltage] deviations, so the squared H2 norm of the
disturbance-to-output map measures the energy imbalance after step-like
disturbances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, StabilityError, ValidationError
from .pwl import StateSpace, simulate_zoh

#: eigenvalue real-part threshold below which a matrix counts as Hurwitz here
_LYAP_MARGIN = 1e-9


@dataclass(frozen=True)
class PerfWeights:
    """Nonnegative weights on (RoCoF, frequency, voltage) and the integrator pole."""

    r_fdot: float = 1.0
    r_f: float = 100.0
    r_v: float = 1.0
    epsilon: float = 1e-3

    def __post_init__(self):
        w = (self.r_fdot, self.r_f, self.r_v)
        if any(not math.isfinite(x) or x < 0.0 for x in w) or max(w) <= 0.0:
            raise ValidationError("weights must be nonnegative with at least one positive")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValidationError("epsilon must be positive")


@dataclass(frozen=True, eq=False)
class ExtendedGrid:
    """Grid equivalent with two appended first-order filter states.

    The filters realize 1/(s+eps) applied to the frequency and voltage outputs;
    c_perf maps the extended state to the weighted performance output
    [sqrt(r_fdot)*(df - eps*xi_f), sqrt(r_f)*xi_f, sqrt(r_v)*xi_v], i.e. the
    approximate integrals of (RoCoF, frequency, voltage). c_fb keeps the plain
    [df, dv] outputs for feedback.
    """

    a: np.ndarray
    b: np.ndarray
    c_fb: np.ndarray
    c_perf: np.ndarray


def augment_grid(grid: StateSpace, weights: PerfWeights) -> ExtendedGrid:
    """Append the two performance filter states to a 2x2 grid equivalent."""
    if grid.n_inputs != 2 or grid.n_outputs != 2:
        raise ValidationError("grid equivalent must be 2x2")
    n = grid.n_states
    eps = weights.epsilon
    a = np.zeros((n + 2, n + 2))
    a[:n, :n] = grid.a
    a[n:, :n] = grid.c  # xi' = [df; dv] - eps * xi
    a[n, n] = -eps
    a[n + 1, n + 1] = -eps
    b = np.vstack([grid.b, np.zeros((2, 2))])
    c_fb = np.hstack([grid.c, np.zeros((2, 2))])
    e = np.zeros((3, n + 2))
    e[0, :n] = grid.c[0]
    e[0, n] = -eps
    e[1, n] = 1.0
    e[2, n + 1] = 1.0
    r_half = np.diag(np.sqrt([weights.r_fdot, weights.r_f, weights.r_v]))
    return ExtendedGrid(a=a, b=b, c_fb=c_fb, c_perf=r_half @ e)


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    """Closed-loop matrices: disturbance enters through the grid input rows and
    the performance output reads only extended-grid states."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    c_meas: np.ndarray    # [df, dv] over the closed-loop state
    c_inject: np.ndarray  # [dp, dq] over the closed-loop state
    n_grid: int
    alpha: object = None

    @property
    def n_states(self) -> int:
        return self.a.shape[0]


def close_loop(ext: ExtendedGrid, tdes: StateSpace, alpha=None) -> ClosedLoop:
    """Interconnect the extended grid with the service transfer matrix.

    A_cl = [[A_g, B_g C(alpha)], [B(alpha) C_g, A(alpha)]]; the disturbance
    [p_d, q_d] shares the grid input matrix, so B_cl = [B_g; 0] and
    C_cl = [C_perf, 0].
    """
    if tdes.n_inputs != 2 or tdes.n_outputs != 2:
        raise ValidationError("service transfer matrix must be 2x2")
    ng = ext.a.shape[0]
    nt = tdes.n_states
    a = np.zeros((ng + nt, ng + nt))
    a[:ng, :ng] = ext.a
    a[:ng, ng:] = ext.b @ tdes.c
    a[ng:, :ng] = tdes.b @ ext.c_fb
    a[ng:, ng:] = tdes.a
    b = np.vstack([ext.b, np.zeros((nt, 2))])
    c = np.hstack([ext.c_perf, np.zeros((3, nt))])
    c_meas = np.hstack([ext.c_fb, np.zeros((2, nt))])
    c_inject = np.hstack([np.zeros((2, ng)), tdes.c])
    return ClosedLoop(a=a, b=b, c=c, c_meas=c_meas, c_inject=c_inject, n_grid=ng, alpha=alpha)


def is_hurwitz(a: np.ndarray, margin: float = 1e-6) -> bool:
    """True iff every eigenvalue real part is below -margin."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] == 0:
        return True
    return bool(np.max(np.linalg.eigvals(a).real) < -margin)


def lyap_solve(a: np.ndarray, qsym: np.ndarray, method: str = "auto") -> np.ndarray:
    """Solve A P + P A^T + Q = 0 for symmetric PSD Q and Hurwitz A.

    Default path is the Schur (Bartels-Stewart) solver; a dense Kronecker
    solve acts as fallback for small systems if the scaled residual is out of
    tolerance. The result is symmetrized.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    q = np.atleast_2d(np.asarray(qsym, dtype=float))
    n = a.shape[0]
    if a.shape != (n, n) or q.shape != (n, n):
        raise ValidationError("lyap_solve needs square matrices of equal size")
    if n == 0:
        return np.zeros((0, 0))
    if not np.allclose(q, q.T, atol=1e-12 * max(1.0, float(np.abs(q).max()))):
        raise ValidationError("Q must be symmetric")
    if np.max(np.linalg.eigvals(a).real) >= -_LYAP_MARGIN:
        raise StabilityError("A is not Hurwitz: Lyapunov solution undefined")

    def _residual(p):
        return np.linalg.norm(a @ p + p @ a.T + q, "fro")

    def _tol(p):
        return 1e-8 * (
            np.linalg.norm(a, "fro") * np.linalg.norm(p, "fro") + np.linalg.norm(q, "fro")
        )

    def _kron():
        lhs = np.kron(np.eye(n), a) + np.kron(a, np.eye(n))
        p = np.linalg.solve(lhs, -q.reshape(-1)).reshape(n, n)
        return 0.5 * (p + p.T)

    if method not in ("auto", "schur", "kron"):
        raise ValidationError("unknown lyap_solve method")
    if method == "kron":
        p = _kron()
    else:
        p = scipy.linalg.solve_continuous_lyapunov(a, -q)
        p = 0.5 * (p + p.T)
        if method == "auto" and n <= 30 and _residual(p) > _tol(p):
            p = _kron()
    if _residual(p) > _tol(p):
        raise NumericalError("Lyapunov residual out of tolerance")
    return p


def gramians(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Controllability and observability Gramians of a stable realization."""
    p = lyap_solve(a, b @ b.T)
    q = lyap_solve(a.T, c.T @ c)
    return p, q


def h2_norm_sq(cl: ClosedLoop) -> float:
    """Squared H2 norm trace(C P C^T); +inf sentinel when the loop is unstable.

    The dual expression trace(B^T Q B) is evaluated as well and must agree to
    1e-8 relative.
    """
    try:
        p, q = gramians(cl.a, cl.b, cl.c)
    except StabilityError:
        return math.inf
    j_primal = float(np.trace(cl.c @ p @ cl.c.T))
    j_dual = float(np.trace(cl.b.T @ q @ cl.b))
    scale = max(abs(j_primal), abs(j_dual), 1e-300)
    if abs(j_primal - j_dual) > 1e-8 * scale:
        raise NumericalError(
            f"Gramian duality violated: {j_primal} vs {j_dual}"
        )
    return j_primal


def h2_gradient(builder, alpha_vec: np.ndarray, fd_step: float = 1e-6) -> np.ndarray:
    """Gradient of the squared H2 norm over the free parameter vector.

    One Gramian pair serves all components: dJ/da_i =
    2 tr(dA/da_i P Q) + tr(d(B B^T)/da_i Q) + tr(P d(C^T C)/da_i), with the
    matrix sensitivities taken by central differences of the realization map.
    For loops built by `close_loop`, B and C do not depend on alpha; their
    terms must vanish and this is asserted.
    """
    alpha_vec = np.asarray(alpha_vec, dtype=float)
    cl0 = builder(alpha_vec)
    if not is_hurwitz(cl0.a, margin=_LYAP_MARGIN):
        raise StabilityError("closed loop unstable at the evaluation point")
    p, q = gramians(cl0.a, cl0.b, cl0.c)
    scale = np.linalg.norm(cl0.a, "fro") + np.linalg.norm(cl0.b) + np.linalg.norm(cl0.c)
    grad = np.zeros_like(alpha_vec)
    for i in range(alpha_vec.size):
        h = fd_step * max(1.0, abs(alpha_vec[i]))
        pair = None
        for attempt_h in (h, h / 10.0):
            hi = alpha_vec.copy()
            lo = alpha_vec.copy()
            hi[i] += attempt_h
            lo[i] -= attempt_h
            cl_hi = builder(hi)
            cl_lo = builder(lo)
            if is_hurwitz(cl_hi.a, margin=0.0) and is_hurwitz(cl_lo.a, margin=0.0):
                pair = (cl_hi, cl_lo, attempt_h)
                break
        if pair is None:
            raise StabilityError(
                f"closed loop unstable under perturbation of parameter {i}"
            )
        cl_hi, cl_lo, used_h = pair
        if cl_hi.a.shape != cl0.a.shape or cl_lo.a.shape != cl0.a.shape:
            raise NumericalError(
                "realization dimension changed under perturbation; "
                "parameter sits on a structural boundary"
            )
        da = (cl_hi.a - cl_lo.a) / (2.0 * used_h)
        dbb = (cl_hi.b @ cl_hi.b.T - cl_lo.b @ cl_lo.b.T) / (2.0 * used_h)
        dcc = (cl_hi.c.T @ cl_hi.c - cl_lo.c.T @ cl_lo.c) / (2.0 * used_h)
        b_term = float(np.trace(dbb @ q))
        c_term = float(np.trace(p @ dcc))
        if max(abs(b_term), abs(c_term)) > 1e-12 * max(1.0, scale):
            raise NumericalError(
                "B/C sensitivity terms expected to vanish for this loop structure"
            )
        grad[i] = 2.0 * float(np.trace(da @ p @ q)) + b_term + c_term
    return grad


@dataclass(frozen=True)
class DisturbanceMetrics:
    rocof_max: float
    nadir: float
    v_peak: float


@dataclass(frozen=True, eq=False)
class SimResult:
    t: np.ndarray
    df: np.ndarray
    dfdot: np.ndarray
    dv: np.ndarray
    dp: np.ndarray
    dq: np.ndarray
    metrics: DisturbanceMetrics


def simulate_disturbance(cl: ClosedLoop, w_step, dt: float, horizon: float) -> SimResult:
    """ZOH response to a constant disturbance step [p_d, q_d] from rest.

    The RoCoF proxy is the first-order difference of the frequency trace; the
    summary metrics are defined on the discrete trace.
    """
    if not is_hurwitz(cl.a, margin=0.0):
        raise StabilityError("cannot simulate an unstable closed loop")
    w_step = np.asarray(w_step, dtype=float).reshape(2)
    n_samples = int(math.floor(horizon / dt + 1e-12)) + 1
    u = np.tile(w_step, (n_samples, 1))
    sys = StateSpace(cl.a, cl.b, np.vstack([cl.c_meas, cl.c_inject]))
    y = simulate_zoh(sys, u, dt)
    t = np.arange(n_samples) * dt
    df, dv, dp, dq = y[:, 0], y[:, 1], y[:, 2], y[:, 3]
    dfdot = np.concatenate(([0.0], np.diff(df) / dt))
    metrics = DisturbanceMetrics(
        rocof_max=float(np.max(np.abs(dfdot))),
        nadir=float(np.min(df)),
        v_peak=float(np.max(np.abs(dv))),
    )
    return SimResult(t=t, df=df, dfdot=dfdot, dv=dv, dp=dp, dq=dq, metrics=metrics)


def dominant_damping_ratio(a: np.ndarray, freq_band_hz=(0.2, 3.0)) -> float:
    """Damping ratio of the least-damped oscillatory mode inside a frequency band."""
    eigs = np.linalg.eigvals(np.atleast_2d(a))
    lo, hi = 2.0 * math.pi * freq_band_hz[0], 2.0 * math.pi * freq_band_hz[1]
    cand = [lam for lam in eigs if lo <= abs(lam.imag) <= hi]
    if not cand:
        raise ValidationError("no oscillatory mode in the requested band")
    zetas = [-lam.real / abs(lam) for lam in cand]
    return float(min(zetas))
