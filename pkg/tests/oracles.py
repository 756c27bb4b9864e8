"""Independent reference computations the tests check the library against.

Each oracle deliberately takes a different route than the implementation:
quadrature instead of Gramians, a general-purpose NLP solver instead of the
active-set projection, Kronecker linear solves instead of Schur, direct
polyline evaluation instead of Pade realizations.
"""

import numpy as np
import scipy.optimize

from gridtune.pwl import StateSpace, freq_response


def h2_by_quadrature(sys: StateSpace, w_lo=1e-4, w_hi=1e4, n_points=20000) -> float:
    """(1/pi) * integral of the squared Frobenius response over [w_lo, w_hi].

    The response is evaluated through an eigendecomposition, a route fully
    independent of the Lyapunov solves under test.
    """
    w = np.logspace(np.log10(w_lo), np.log10(w_hi), n_points)
    lam, v = np.linalg.eig(sys.a)
    cv = sys.c @ v
    vb = np.linalg.solve(v, sys.b.astype(complex))
    denom = 1j * w[:, None] - lam[None, :]
    resp = np.einsum("pk,wk,km->wpm", cv, 1.0 / denom, vb)
    integrand = np.sum(np.abs(resp) ** 2, axis=(1, 2))
    return float(np.trapezoid(integrand, w) / np.pi)


def project_by_nlp(target: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x: g x <= h} by a convex-programming solver."""
    import cvxpy as cp

    target = np.asarray(target, dtype=float)
    x = cp.Variable(target.size)
    problem = cp.Problem(cp.Minimize(cp.sum_squares(x - target)), [g @ x <= h])
    problem.solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-14, tol_gap_rel=1e-14, tol_feas=1e-12
    )
    if x.value is None:
        raise RuntimeError("projection oracle failed to solve")
    return np.asarray(x.value)


def lyap_by_kron(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve A P + P A^T + Q = 0 through the vectorized linear system."""
    n = a.shape[0]
    lhs = np.kron(np.eye(n), a) + np.kron(a, np.eye(n))
    p = np.linalg.solve(lhs, -q.reshape(-1)).reshape(n, n)
    return 0.5 * (p + p.T)


def fd_gradient(fun, x: np.ndarray, rel_step=1e-2) -> np.ndarray:
    """Richardson-extrapolated central differences of a scalar function.

    The two-step extrapolation kills the O(h^2) truncation term while the step
    stays large enough to ride above the numerical noise of Lyapunov-based
    costs.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))

        def central(step):
            hi, lo = x.copy(), x.copy()
            hi[i] += step
            lo[i] -= step
            return (fun(hi) - fun(lo)) / (2.0 * step)

        out[i] = (4.0 * central(h / 2.0) - central(h)) / 3.0
    return out


def random_stable_system(rng, n, m=2, p=2) -> StateSpace:
    """Random strictly proper system with eigenvalues of moderate scale."""
    a = rng.standard_normal((n, n)) / np.sqrt(n)
    shift = float(np.max(np.linalg.eigvals(a).real)) + rng.uniform(0.3, 1.0)
    a -= shift * np.eye(n)
    return StateSpace(a, rng.standard_normal((n, m)), rng.standard_normal((p, n)))
