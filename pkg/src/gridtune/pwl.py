"""Piecewise-linear capability curves and their rational realizations.

A capability curve prescribes a time-domain step response. Its Laplace
transform is a sum of delayed ramps, (1/s^2) * sum_k c_k exp(-t_k s), where
c_k is the slope change at t_k. Replacing each delay by a diagonal Pade
approximant yields a strictly proper rational transfer function that can be
realized, simulated and optimized with ordinary state-space tools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import StabilityError, ValidationError

#: shortest admissible spacing between constraint time parameters, seconds
MIN_SEGMENT = 1e-3
#: structural floor for curve breakpoint gaps (looser than MIN_SEGMENT so that
#: finite-difference jogs of parameters sitting at the MIN_SEGMENT bound stay valid)
_MIN_BREAKPOINT_GAP = 1e-4
#: diagonal Pade coefficient ratios overflow usefully beyond this order
MAX_PADE_ORDER = 12
DEFAULT_PADE_ORDER = 4


@dataclass(frozen=True)
class PwlCurve:
    """Time-domain capability curve: linear between breakpoints, constant after the last.

    Breakpoints are (time, value) pairs with strictly increasing times; the
    first one must be (0, 0). Values are per-unit and may be signed.
    """

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.breakpoints)
        object.__setattr__(self, "breakpoints", pts)
        if len(pts) < 2:
            raise ValidationError("curve needs at least 2 breakpoints")
        if not all(math.isfinite(t) and math.isfinite(v) for t, v in pts):
            raise ValidationError("curve breakpoints must be finite")
        if pts[0] != (0.0, 0.0):
            raise ValidationError("curve must start at breakpoint (0, 0)")
        gaps = np.diff([t for t, _ in pts])
        if np.any(gaps < _MIN_BREAKPOINT_GAP):
            raise ValidationError(
                f"breakpoint times must increase by at least {_MIN_BREAKPOINT_GAP} s"
            )

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.breakpoints])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.breakpoints])

    @property
    def final_value(self) -> float:
        return self.breakpoints[-1][1]

    def value(self, t):
        """Evaluate the curve: zero before t = 0, constant after the last breakpoint."""
        t = np.asarray(t, dtype=float)
        return np.where(t < 0.0, 0.0, np.interp(t, self.times, self.values))


@dataclass(frozen=True)
class DelayTerm:
    """Slope change of size `coefficient` occurring `delay` seconds into the response."""

    delay: float
    coefficient: float

    def __post_init__(self):
        if not (math.isfinite(self.coefficient) and math.isfinite(self.delay)):
            raise ValidationError("delay term must be finite")
        if self.delay < 0.0:
            raise ValidationError("delay must be nonnegative")


def pwl_to_delay_terms(curve: PwlCurve) -> list[DelayTerm]:
    """Decompose a curve into its slope changes (delayed-ramp coefficients).

    The step response is sum_k c_k * (t - t_k)_+ ; slope changes always sum to
    zero because the curve is flat both before t = 0 and after the last
    breakpoint. Zero slope changes are dropped.
    """
    t = curve.times
    slopes = np.concatenate(([0.0], np.diff(curve.values) / np.diff(t), [0.0]))
    changes = np.diff(slopes)
    return [
        DelayTerm(float(tk), float(ck)) for tk, ck in zip(t, changes) if ck != 0.0
    ]


def reconstruct_from_terms(terms, t):
    """Exact step response implied by delay terms: sum_k c_k * (t - t_k)_+ ."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    for term in terms:
        out += term.coefficient * np.maximum(t - term.delay, 0.0)
    return out


@dataclass(frozen=True)
class RationalTf:
    """Proper rational transfer function; coefficients ascending in powers of s."""

    num: tuple
    den: tuple

    def __post_init__(self):
        num = _trim_trailing_zeros(self.num)
        den = _trim_trailing_zeros(self.den)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        if den == (0.0,):
            raise ValidationError("denominator must be nonzero")
        if not all(math.isfinite(x) for x in num + den):
            raise ValidationError("coefficients must be finite")
        if num != (0.0,) and len(num) > len(den):
            raise ValidationError("transfer function must be proper")

    @property
    def is_zero(self) -> bool:
        return self.num == (0.0,)

    @property
    def is_strictly_proper(self) -> bool:
        return self.is_zero or len(self.num) < len(self.den)

    def scaled(self, gain: float) -> "RationalTf":
        if gain == 0.0:
            return RationalTf((0.0,), (1.0,))
        return RationalTf(tuple(gain * c for c in self.num), self.den)

    def evaluate(self, s):
        """Evaluate num(s)/den(s) at complex frequencies."""
        s = np.asarray(s, dtype=complex)
        return np.polyval(self.num[::-1], s) / np.polyval(self.den[::-1], s)


def _trim_trailing_zeros(coeffs) -> tuple:
    c = [float(x) for x in coeffs]
    if not c:
        raise ValidationError("empty coefficient list")
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    return tuple(c)


def pade_delay(delay: float, order: int = DEFAULT_PADE_ORDER) -> RationalTf:
    """Diagonal (n, n) Pade approximant of exp(-delay * s).

    Diagonal approximants are all-pass: |num(jw)| = |den(jw)| for every w,
    since num(s) = den(-s). A zero delay returns the constant 1.
    """
    if not (math.isfinite(delay) and delay >= 0.0):
        raise ValidationError("delay must be finite and nonnegative")
    order = int(order)
    if order < 1:
        raise ValidationError("Pade order must be >= 1")
    if order > MAX_PADE_ORDER:
        raise ValidationError(f"Pade order > {MAX_PADE_ORDER} rejected")
    if delay == 0.0:
        return RationalTf((1.0,), (1.0,))
    n = order
    den = []
    num = []
    for j in range(n + 1):
        c = (
            math.factorial(2 * n - j)
            * math.factorial(n)
            / (math.factorial(2 * n) * math.factorial(j) * math.factorial(n - j))
        )
        den.append(c * delay**j)
        num.append(c * (-delay) ** j)
    return RationalTf(tuple(num), tuple(den))


#: orders at or above this split long delays into a chain of Pade sections,
#: which confines the approximation ringing to a fixed-width window
_SECTION_SPLIT_ORDER = 8
#: section length cap, seconds
_SECTION_LENGTH = 4.0


def _sections_for(delay: float, order: int) -> int:
    if order < _SECTION_SPLIT_ORDER:
        return 1
    return max(1, math.ceil(delay / _SECTION_LENGTH))


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Strictly proper LTI system (A, B, C); the feedthrough is identically zero."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        c = np.atleast_2d(np.asarray(self.c, dtype=float))
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValidationError("A must be square")
        if b.shape[0] != n or c.shape[1] != n:
            raise ValidationError("B/C dimensions inconsistent with A")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValidationError("state-space matrices must be finite")
        for name, m in (("a", a), ("b", b), ("c", c)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @staticmethod
    def zero(n_outputs: int, n_inputs: int) -> "StateSpace":
        return StateSpace(
            np.zeros((0, 0)), np.zeros((0, n_inputs)), np.zeros((n_outputs, 0))
        )

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]

    def eigenvalues(self) -> np.ndarray:
        if self.n_states == 0:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.a)

    def transfer_at(self, s: complex) -> np.ndarray:
        """C (sI - A)^-1 B at a single complex frequency."""
        if self.n_states == 0:
            return np.zeros((self.n_outputs, self.n_inputs), dtype=complex)
        x = np.linalg.solve(
            s * np.eye(self.n_states) - self.a, self.b.astype(complex)
        )
        return self.c @ x

    def dc_gain(self) -> np.ndarray:
        return self.transfer_at(0.0).real


def tf_to_ss(tf: RationalTf) -> StateSpace:
    """Controllable canonical realization of a strictly proper transfer function."""
    if not tf.is_strictly_proper:
        raise ValidationError("only strictly proper transfer functions are realizable")
    if tf.is_zero:
        return StateSpace.zero(1, 1)
    den = np.asarray(tf.den)
    n = len(den) - 1
    a_monic = den[:-1] / den[-1]
    a = np.zeros((n, n))
    if n > 1:
        a[: n - 1, 1:] = np.eye(n - 1)
    a[n - 1, :] = -a_monic
    b = np.zeros((n, 1))
    b[n - 1, 0] = 1.0
    c = np.zeros((1, n))
    c[0, : len(tf.num)] = np.asarray(tf.num) / den[-1]
    return StateSpace(a, b, c)


def _realize_delay_term(gain: float, delay: float, order: int, sections: int) -> StateSpace:
    """State-space realization of gain * (PadeChain(delay) - 1)/s.

    The delay is split into `sections` equal Pade factors d_i, and the
    telescoping PadeChain - 1 = sum_i (d_i - 1) * prod_{j<i} d_j is realized
    with one denominator block per section feeding both the chain continuation
    and the strictly proper defect tap (d_i - 1)/s. Coefficients of num - den
    cancel at s^0, so no integrator state appears and every pole is a stable
    Pade pole. States are rebalanced by the section frequency scale.
    """
    tau = delay / sections
    p = pade_delay(tau, order)
    num = np.asarray(p.num)
    den = np.asarray(p.den)
    n = order
    a_monic = den[:-1] / den[-1]
    a1 = np.zeros((n, n))
    if n > 1:
        a1[: n - 1, 1:] = np.eye(n - 1)
    a1[n - 1, :] = -a_monic
    b1 = np.zeros(n)
    b1[n - 1] = 1.0
    d_sec = num[-1] / den[-1]
    c_sec = (num - d_sec * den)[:n] / den[-1]
    c_def = (num - den)[1:] / den[-1]
    rho = order / max(tau, MIN_SEGMENT)
    scale = rho ** (-np.arange(n, dtype=float))
    a1 = a1 * np.outer(scale, 1.0 / scale)
    b1 = b1 * scale
    c_sec = c_sec / scale
    c_def = c_def / scale
    total = sections * n
    a = np.zeros((total, total))
    b = np.zeros((total, 1))
    c = np.zeros((1, total))
    v_state = np.zeros(total)  # section input as a function of the state ...
    v_in = 1.0                 # ... and of the external input
    for i in range(sections):
        sl = slice(i * n, (i + 1) * n)
        a[sl, :] += np.outer(b1, v_state)
        a[sl, sl] += a1
        b[sl, 0] += b1 * v_in
        c[0, sl] += c_def
        new_v = d_sec * v_state
        new_v[sl] += c_sec
        v_state = new_v
        v_in *= d_sec
    b *= gain
    # Scalar state rescale equalizing the input and output map norms: the
    # canonical basis leaves C ~ tau^(1-n) against B ~ tau^(n-1), which would
    # poison the Lyapunov solves for short delays.
    gamma = math.sqrt(np.linalg.norm(c) / max(np.linalg.norm(b), 1e-300))
    return StateSpace(a, gamma * b, c / gamma)


def parallel_join(systems, n_outputs: int, n_inputs: int) -> StateSpace:
    """Parallel interconnection: branches share inputs, outputs are summed."""
    systems = [s for s in systems if s is not None]
    for s in systems:
        if s.n_outputs != n_outputs or s.n_inputs != n_inputs:
            raise ValidationError("parallel branches must share the i/o dimensions")
    if not systems:
        return StateSpace.zero(n_outputs, n_inputs)
    a = scipy.linalg.block_diag(*[s.a for s in systems])
    b = np.vstack([s.b for s in systems])
    c = np.hstack([s.c for s in systems])
    return StateSpace(a, b, c)


def diagonal_join(sys11: StateSpace, sys22: StateSpace) -> StateSpace:
    """Two decoupled SISO channels assembled as a 2x2 block-diagonal system."""
    if sys11.n_inputs != 1 or sys11.n_outputs != 1 or sys22.n_inputs != 1 or sys22.n_outputs != 1:
        raise ValidationError("diagonal_join expects SISO channel systems")
    n1, n2 = sys11.n_states, sys22.n_states
    a = scipy.linalg.block_diag(sys11.a, sys22.a)
    b = np.zeros((n1 + n2, 2))
    b[:n1, 0:1] = sys11.b
    b[n1:, 1:2] = sys22.b
    c = np.zeros((2, n1 + n2))
    c[0:1, :n1] = sys11.c
    c[1:2, n1:] = sys22.c
    return StateSpace(a, b, c)


def pwl_step_tf(curve: PwlCurve, input_step: float, pade_order: int = DEFAULT_PADE_ORDER) -> StateSpace:
    """Realize the transfer function whose response to a step of `input_step` is `curve`.

    Each slope change c_k at delay t_k contributes (c_k/step) * (Pade_k(s) - 1)/s
    in parallel. The prompt -1/s parts telescope exactly because the slope
    changes sum to zero, so no integrator state survives: the DC gain equals
    final_value/input_step and every pole is a stable Pade pole.

    At orders >= 8 each delay is approximated by a chain of Pade sections of
    at most a few seconds instead of a single long-delay approximant; this
    keeps the ringing confined near the breakpoints. Below that the order is
    too low for fidelity to matter and one section per delay keeps the state
    dimension independent of the delay values (the optimizer relies on that).
    """
    if input_step == 0.0 or not math.isfinite(input_step):
        raise ValidationError("input step must be finite and nonzero")
    if not (1 <= int(pade_order) <= MAX_PADE_ORDER):
        raise ValidationError(f"Pade order must be within 1..{MAX_PADE_ORDER}")
    branches = []
    for term in pwl_to_delay_terms(curve):
        if term.delay == 0.0:
            continue  # (Pade - 1)/s vanishes at zero delay
        branches.append(
            _realize_delay_term(
                term.coefficient / input_step,
                term.delay,
                int(pade_order),
                _sections_for(term.delay, int(pade_order)),
            )
        )
    return parallel_join(branches, 1, 1)


def zoh_discretize(sys: StateSpace, dt: float):
    """Exact zero-order-hold discretization via the augmented matrix exponential."""
    if dt <= 0.0:
        raise ValidationError("dt must be positive")
    n, m = sys.n_states, sys.n_inputs
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, m))
    blk = np.zeros((n + m, n + m))
    blk[:n, :n] = sys.a * dt
    blk[:n, n:] = sys.b * dt
    exp = scipy.linalg.expm(blk)
    return exp[:n, :n], exp[:n, n:]


def simulate_zoh(sys: StateSpace, u: np.ndarray, dt: float, x0=None) -> np.ndarray:
    """Simulate with piecewise-constant input samples u (N x m); returns y (N x p)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != sys.n_inputs:
        raise ValidationError("input column count must match the system inputs")
    n_samples = u.shape[0]
    y = np.zeros((n_samples, sys.n_outputs))
    if sys.n_states == 0:
        return y
    ad, bd = zoh_discretize(sys, dt)
    x = np.zeros(sys.n_states) if x0 is None else np.asarray(x0, dtype=float).copy()
    for k in range(n_samples):
        y[k] = sys.c @ x
        x = ad @ x + bd @ u[k]
    return y


def step_response(sys: StateSpace, channel: int, dt: float, horizon: float):
    """Unit step on one input, ZOH-exact; returns (t, y) with y of shape (N, p)."""
    if dt <= 0.0 or horizon < dt:
        raise ValidationError("require dt > 0 and horizon >= dt")
    if not (0 <= channel < sys.n_inputs):
        raise ValidationError("input channel out of range")
    n_samples = int(math.floor(horizon / dt + 1e-12)) + 1
    t = np.arange(n_samples) * dt
    u = np.zeros((n_samples, sys.n_inputs))
    u[:, channel] = 1.0
    return t, simulate_zoh(sys, u, dt)


def freq_response(sys: StateSpace, omegas) -> np.ndarray:
    """C (jwI - A)^-1 B on a grid of positive frequencies; shape (len(w), p, m)."""
    omegas = np.asarray(omegas, dtype=float)
    if np.any(omegas <= 0.0):
        raise ValidationError("frequencies must be positive")
    eigs = sys.eigenvalues()
    out = np.zeros((len(omegas), sys.n_outputs, sys.n_inputs), dtype=complex)
    if sys.n_states == 0:
        return out
    for i, w in enumerate(omegas):
        if np.any(np.abs(eigs - 1j * w) < 1e-9 * max(1.0, w)):
            raise StabilityError(f"imaginary-axis eigenvalue at w = {w}: response singular")
        out[i] = sys.transfer_at(1j * w)
    return out
