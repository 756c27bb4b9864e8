"""Ancillary-service products, their parameter sets, and the feasibility machinery.

Each product is parameterized by the knee points of its grid-code capability
curve (or, for the damping resonator, by its band and magnitude). Curves are
normalized per unit of input step: capacities scale with the droop gains, so
the transfer functions do not depend on the disturbance amplitude.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InfeasibleError, ValidationError
from .pwl import (
    MIN_SEGMENT,
    PwlCurve,
    RationalTf,
    StateSpace,
    diagonal_join,
    parallel_join,
    pwl_step_tf,
    tf_to_ss,
)

PRODUCTS = ("fcr", "ffr", "aux", "vq")


def _require_finite(name, *vals):
    for v in vals:
        if not math.isfinite(v):
            raise ValidationError(f"{name}: parameters must be finite")


@dataclass(frozen=True)
class FcrParams:
    """Proportional frequency reserve: delay t_i, full activation at t_a."""

    t_i: float
    t_a: float

    def __post_init__(self):
        _require_finite("fcr", self.t_i, self.t_a)
        if self.t_i < 0.0 or self.t_a < 0.0:
            raise ValidationError("fcr: times must be nonnegative")


@dataclass(frozen=True)
class FfrParams:
    """Fast reserve burst: activation t_a, support until t_d, recovered by t_r,
    overdelivery factor x."""

    t_a: float
    t_d: float
    t_r: float
    x: float

    def __post_init__(self):
        _require_finite("ffr", self.t_a, self.t_d, self.t_r, self.x)
        if min(self.t_a, self.t_d, self.t_r) < 0.0:
            raise ValidationError("ffr: times must be nonnegative")
        if self.x <= 0.0:
            raise ValidationError("ffr: overdelivery factor must be positive")


@dataclass(frozen=True)
class AuxParams:
    """Bandpass damping resonator: band [omega_l, omega_h], signed magnitude m."""

    omega_l: float
    omega_h: float
    m: float

    def __post_init__(self):
        _require_finite("aux", self.omega_l, self.omega_h, self.m)
        if self.omega_l <= 0.0 or self.omega_h <= 0.0:
            raise ValidationError("aux: band edges must be positive")
        if self.omega_l >= self.omega_h:
            raise ValidationError("aux: require omega_l < omega_h")


@dataclass(frozen=True)
class VqParams:
    """Reactive-power activation: 90% capacity by t90, 100% by t100."""

    t90: float
    t100: float

    def __post_init__(self):
        _require_finite("vq", self.t90, self.t100)
        if self.t90 < 0.0 or self.t100 < 0.0:
            raise ValidationError("vq: times must be nonnegative")


_PRODUCT_FIELDS = {
    "fcr": ("t_i", "t_a"),
    "ffr": ("t_a", "t_d", "t_r", "x"),
    "aux": ("omega_l", "omega_h", "m"),
    "vq": ("t90", "t100"),
}


@dataclass(frozen=True)
class AlphaParams:
    """Full service parameter vector; a product set to None is disabled."""

    fcr: FcrParams | None = None
    ffr: FfrParams | None = None
    aux: AuxParams | None = None
    vq: VqParams | None = None

    def enabled(self) -> tuple[str, ...]:
        return tuple(p for p in PRODUCTS if getattr(self, p) is not None)

    def field_names(self) -> list[str]:
        names = []
        for p in self.enabled():
            names.extend(f"{p}.{f}" for f in _PRODUCT_FIELDS[p])
        return names

    def to_vector(self) -> np.ndarray:
        vals = []
        for p in self.enabled():
            obj = getattr(self, p)
            vals.extend(getattr(obj, f) for f in _PRODUCT_FIELDS[p])
        return np.array(vals, dtype=float)

    def with_vector(self, vec) -> "AlphaParams":
        """Rebuild an AlphaParams with the same enabled products from a flat vector."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(self.field_names()),):
            raise ValidationError("vector length does not match enabled products")
        out = {}
        i = 0
        for p in self.enabled():
            fields = _PRODUCT_FIELDS[p]
            cls = type(getattr(self, p))
            out[p] = cls(**{f: float(vec[i + j]) for j, f in enumerate(fields)})
            i += len(fields)
        return replace(self, **out)


@dataclass(frozen=True)
class Droops:
    """Steady-state droop gains handed down by the system operator (all nonzero)."""

    d_p: float = -0.05
    k_p: float = -0.04
    d_q: float = -0.04

    def __post_init__(self):
        _require_finite("droops", self.d_p, self.k_p, self.d_q)
        if 0.0 in (self.d_p, self.k_p, self.d_q):
            raise ValidationError("droop gains must be nonzero")


@dataclass(frozen=True)
class GridCodeLimits:
    """Grid-code bounds on the service parameters (times in s, omegas in rad/s)."""

    t_i_max_fcr: float = 2.0
    t_a_max_fcr: float = 30.0
    t_a_max_ffr: float = 2.0
    t_d_min_offset_ffr: float = 8.0
    t_r_min_offset_ffr: float = 10.0
    x_max_ffr: float = 1.35
    omega_min: float = 2.0 * math.pi * 0.1
    omega_max: float = 2.0 * math.pi * 3.0
    t90_max_vq: float = 5.0
    t100_max_vq: float = 60.0

    def __post_init__(self):
        for f, v in self.__dict__.items():
            if not (math.isfinite(v) and v > 0.0):
                raise ValidationError(f"grid-code limit {f} must be positive")
        if self.omega_min >= self.omega_max:
            raise ValidationError("require omega_min < omega_max")


@dataclass(frozen=True)
class DeviceLimits:
    """Reserve-unit limits, normalized per unit of input step.

    The FFR duration caps bound t_d - t_a and t_r - t_d. m_aux_cap of None
    means "derive from the unused peak capacity" (see `aux_magnitude_cap`).
    """

    r_max_p: float = 111.0
    r_max_q: float = 150.0
    m_max_p: float = 70.0
    t_d_max_ffr: float = 20.0
    t_r_max_ffr: float = 20.0
    m_aux_cap: float | None = None

    def __post_init__(self):
        for f, v in self.__dict__.items():
            if f == "m_aux_cap":
                if v is not None and not (math.isfinite(v) and v >= 0.0):
                    raise ValidationError("m_aux_cap must be nonnegative")
            elif not (math.isfinite(v) and v > 0.0):
                raise ValidationError(f"device limit {f} must be positive")


@dataclass(frozen=True)
class Normalization:
    """Reference step amplitudes used to normalize device ratings."""

    df_max: float = 0.01
    dv_max: float = 0.1

    def __post_init__(self):
        if not (self.df_max > 0.0 and self.dv_max > 0.0):
            raise ValidationError("normalization steps must be positive")


@dataclass(frozen=True)
class LimitSet:
    grid_code: GridCodeLimits = GridCodeLimits()
    device: DeviceLimits = DeviceLimits()
    normalization: Normalization = Normalization()


def fcr_curve(p: FcrParams, d_p: float) -> PwlCurve:
    """Ramp from zero (after delay t_i) to the droop capacity 1/d_p at t_a."""
    if d_p == 0.0:
        raise ValidationError("fcr: droop must be nonzero")
    if p.t_a - p.t_i < MIN_SEGMENT * (1.0 - 1e-9):
        raise ValidationError("fcr: require t_a >= t_i + minimum segment")
    cap = 1.0 / d_p
    if p.t_i <= 1e-12:
        return PwlCurve(((0.0, 0.0), (p.t_a, cap)))
    return PwlCurve(((0.0, 0.0), (p.t_i, 0.0), (p.t_a, cap)))


def ffr_curve(p: FfrParams, k_p: float) -> PwlCurve:
    """Rise to the overdelivery peak x/k_p, decline to capacity at t_d, recover to zero."""
    if k_p == 0.0:
        raise ValidationError("ffr: gain must be nonzero")
    gap = MIN_SEGMENT * (1.0 - 1e-9)
    if not (p.t_a >= gap and p.t_d - p.t_a >= gap and p.t_r - p.t_d >= gap):
        raise ValidationError("ffr: require 0 < t_a < t_d < t_r with minimum segments")
    cap = 1.0 / k_p
    return PwlCurve(((0.0, 0.0), (p.t_a, p.x * cap), (p.t_d, cap), (p.t_r, 0.0)))


def vq_curve(p: VqParams, d_q: float) -> PwlCurve:
    """Reach 90% of the droop capacity 1/d_q at t90 and 100% at t100."""
    if d_q == 0.0:
        raise ValidationError("vq: droop must be nonzero")
    gap = MIN_SEGMENT * (1.0 - 1e-9)
    if not (p.t90 >= gap and p.t100 - p.t90 >= gap):
        raise ValidationError("vq: require 0 < t90 < t100 with minimum segments")
    cap = 1.0 / d_q
    return PwlCurve(((0.0, 0.0), (p.t90, 0.9 * cap), (p.t100, cap)))


def aux_tf(p: AuxParams) -> RationalTf:
    """Bandpass resonator m * dw * s / (s^2 + dw * s + omega_l*omega_h).

    At the resonance frequency sqrt(omega_l*omega_h) the bracket collapses and
    the magnitude is exactly |m|; the DC gain is zero.
    """
    dw = p.omega_h - p.omega_l
    return RationalTf((0.0, p.m * dw), (p.omega_l * p.omega_h, dw, 1.0))


def _aux_realization(p: AuxParams) -> StateSpace:
    """Two-state resonator realization; m enters only the output row, so the
    state dimension does not collapse at m = 0 (the optimizer jogs m there)."""
    dw = p.omega_h - p.omega_l
    a = np.array([[0.0, 1.0], [-p.omega_l * p.omega_h, -dw]])
    b = np.array([[0.0], [1.0]])
    c = np.array([[0.0, p.m * dw]])
    return StateSpace(a, b, c)


def build_tdes(alpha: AlphaParams, droops: Droops, pade_order: int = 4) -> StateSpace:
    """Assemble the 2x2 service transfer matrix diag(T_fp, T_vq) as a state space.

    Channel (1,1) superimposes the enabled frequency products (FCR + FFR + AUX),
    channel (2,2) is the voltage product; off-diagonal entries are zero.
    """
    if not alpha.enabled():
        raise ValidationError("all service products disabled")
    fp_branches = []
    if alpha.fcr is not None:
        fp_branches.append(pwl_step_tf(fcr_curve(alpha.fcr, droops.d_p), 1.0, pade_order))
    if alpha.ffr is not None:
        fp_branches.append(pwl_step_tf(ffr_curve(alpha.ffr, droops.k_p), 1.0, pade_order))
    if alpha.aux is not None:
        fp_branches.append(_aux_realization(alpha.aux))
    t_fp = parallel_join(fp_branches, 1, 1)
    if alpha.vq is not None:
        t_vq = pwl_step_tf(vq_curve(alpha.vq, droops.d_q), 1.0, pade_order)
    else:
        t_vq = StateSpace.zero(1, 1)
    return diagonal_join(t_fp, t_vq)


def baseline_alpha(limits: LimitSet, products=PRODUCTS) -> AlphaParams:
    """Cheapest grid-code-compliant parameters: every activation as slow as the
    code allows, minimum support windows, no overdelivery, no damping service."""
    gc = limits.grid_code
    out = {}
    if "fcr" in products:
        out["fcr"] = FcrParams(t_i=gc.t_i_max_fcr, t_a=gc.t_a_max_fcr)
    if "ffr" in products:
        t_a = gc.t_a_max_ffr
        t_d = t_a + gc.t_d_min_offset_ffr
        out["ffr"] = FfrParams(t_a=t_a, t_d=t_d, t_r=t_d + gc.t_r_min_offset_ffr, x=1.0)
    if "aux" in products:
        out["aux"] = AuxParams(omega_l=gc.omega_min, omega_h=gc.omega_max, m=0.0)
    if "vq" in products:
        out["vq"] = VqParams(t90=gc.t90_max_vq, t100=gc.t100_max_vq)
    if not out:
        raise ValidationError("at least one product required")
    return AlphaParams(**out)


def aux_magnitude_cap(alpha: AlphaParams, droops: Droops, limits: LimitSet) -> float:
    """Resonator magnitude bound: configured cap, or the peak capacity left over
    after the enabled droop products claim theirs."""
    if limits.device.m_aux_cap is not None:
        return limits.device.m_aux_cap
    used = 0.0
    if alpha.fcr is not None:
        used += abs(1.0 / droops.d_p)
    if alpha.ffr is not None:
        used += abs(1.0 / droops.k_p)
    return max(limits.device.m_max_p - used, 0.0)


def superposed_peak(alpha: AlphaParams, droops: Droops) -> float:
    """Largest magnitude of the combined FCR + FFR polyline, per unit input.

    The sum of two piecewise-linear curves is piecewise linear, so the peak is
    attained at a breakpoint of the merged grid.
    """
    curves = []
    if alpha.fcr is not None:
        curves.append(fcr_curve(alpha.fcr, droops.d_p))
    if alpha.ffr is not None:
        curves.append(ffr_curve(alpha.ffr, droops.k_p))
    if not curves:
        return 0.0
    knots = np.unique(np.concatenate([c.times for c in curves]))
    total = np.zeros_like(knots)
    for c in curves:
        total += c.value(knots)
    return float(np.max(np.abs(total)))


@dataclass(frozen=True)
class LinearConstraints:
    """Rows g @ x <= h over the flat parameter vector, with one id per row."""

    g: np.ndarray
    h: np.ndarray
    ids: tuple[str, ...]
    blocks: tuple[tuple[int, ...], ...]  # row indices grouped per product

    def slack(self, vec: np.ndarray) -> np.ndarray:
        return self.h - self.g @ vec


def linear_constraints(
    alpha: AlphaParams, droops: Droops, limits: LimitSet, tightened: bool = False
) -> LinearConstraints:
    """Linear inequalities of the grid-code and device sets over enabled products.

    With `tightened` the positivity bounds move in by the minimum segment
    length; this closes the strict orderings so that Euclidean projection is
    well defined (and keeps realizations away from degenerate zero delays).
    """
    gc, dev = limits.grid_code, limits.device
    names = alpha.field_names()
    idx = {n: i for i, n in enumerate(names)}
    nvar = len(names)
    rows, rhs, ids = [], [], []
    blocks = []

    def add(coeffs: dict, bound: float, cid: str):
        row = np.zeros(nvar)
        for field, c in coeffs.items():
            row[idx[field]] = c
        rows.append(row)
        rhs.append(bound)
        ids.append(cid)

    lo = MIN_SEGMENT
    if alpha.fcr is not None:
        start = len(rows)
        t_i_lo = lo if tightened else 0.0
        add({"fcr.t_i": -1.0}, -t_i_lo, "fcr.t_i_lo")
        add({"fcr.t_i": 1.0}, gc.t_i_max_fcr, "fcr.t_i_hi")
        gap = max(lo, abs(1.0 / droops.d_p) / dev.r_max_p)
        add({"fcr.t_i": 1.0, "fcr.t_a": -1.0}, -gap, "fcr.ramp")
        add({"fcr.t_a": 1.0}, gc.t_a_max_fcr, "fcr.t_a_hi")
        blocks.append(tuple(range(start, len(rows))))
    if alpha.ffr is not None:
        start = len(rows)
        add({"ffr.t_a": -1.0}, -lo, "ffr.t_a_lo")
        add({"ffr.t_a": 1.0}, gc.t_a_max_ffr, "ffr.t_a_hi")
        add({"ffr.t_a": 1.0, "ffr.t_d": -1.0}, -gc.t_d_min_offset_ffr, "ffr.t_d_lo")
        add({"ffr.t_d": 1.0, "ffr.t_a": -1.0}, dev.t_d_max_ffr, "ffr.t_d_hi")
        add({"ffr.t_d": 1.0, "ffr.t_r": -1.0}, -gc.t_r_min_offset_ffr, "ffr.t_r_lo")
        add({"ffr.t_r": 1.0, "ffr.t_d": -1.0}, dev.t_r_max_ffr, "ffr.t_r_hi")
        add({"ffr.x": -1.0}, -1.0, "ffr.x_lo")
        add({"ffr.x": 1.0}, gc.x_max_ffr, "ffr.x_hi")
        # peak ramp x*|1/k_p| <= t_a * r_max_p
        add(
            {"ffr.x": abs(1.0 / droops.k_p), "ffr.t_a": -dev.r_max_p},
            0.0,
            "ffr.ramp",
        )
        blocks.append(tuple(range(start, len(rows))))
    if alpha.aux is not None:
        start = len(rows)
        add({"aux.omega_l": -1.0}, -gc.omega_min, "aux.omega_lo")
        add({"aux.omega_h": 1.0}, gc.omega_max, "aux.omega_hi")
        add({"aux.omega_l": 1.0, "aux.omega_h": -1.0}, -lo, "aux.band")
        cap = aux_magnitude_cap(alpha, droops, limits)
        add({"aux.m": 1.0}, cap, "aux.m_hi")
        add({"aux.m": -1.0}, cap, "aux.m_lo")
        blocks.append(tuple(range(start, len(rows))))
    if alpha.vq is not None:
        start = len(rows)
        ramp_lo = 0.9 * abs(1.0 / droops.d_q) / dev.r_max_q
        add({"vq.t90": -1.0}, -max(lo, ramp_lo), "vq.ramp")
        add({"vq.t90": 1.0}, gc.t90_max_vq, "vq.t90_hi")
        add({"vq.t90": 1.0, "vq.t100": -1.0}, -lo, "vq.t100_lo")
        add({"vq.t100": 1.0}, gc.t100_max_vq, "vq.t100_hi")
        blocks.append(tuple(range(start, len(rows))))
    return LinearConstraints(
        np.array(rows).reshape(len(rows), nvar),
        np.array(rhs),
        tuple(ids),
        tuple(blocks),
    )


def check_feasible(
    alpha: AlphaParams, droops: Droops, limits: LimitSet, tol: float = 0.0
) -> list[tuple[str, float]]:
    """All violated constraints as (id, signed slack); empty means feasible.

    Covers the linear grid-code/device rows plus the nonlinear overall peak
    bound on the superimposed active-power products.
    """
    cons = linear_constraints(alpha, droops, limits, tightened=False)
    vec = alpha.to_vector()
    slack = cons.slack(vec)
    out = [
        (cid, float(s)) for cid, s in zip(cons.ids, slack) if s < -tol
    ]
    peak = superposed_peak(alpha, droops)
    m_abs = abs(alpha.aux.m) if alpha.aux is not None else 0.0
    fp_slack = limits.device.m_max_p - (peak + m_abs)
    if fp_slack < -tol:
        out.append(("fp.peak_capacity", float(fp_slack)))
    return out


def _project_block(target: np.ndarray, g: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x : g x <= h} by enumerating KKT active sets.

    For a convex QP any primal-feasible point with nonnegative multipliers is
    the optimum, and some optimal active set has at most dim(x) independent
    rows, so enumeration over small subsets is exact.
    """
    n = target.size
    m = g.shape[0]
    feas_tol = 1e-9 * max(1.0, float(np.max(np.abs(h))) if m else 1.0)
    for size in range(0, n + 1):
        for subset in itertools.combinations(range(m), size):
            gs = g[list(subset)]
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = np.eye(n)
            if size:
                kkt[:n, n:] = gs.T
                kkt[n:, :n] = gs
            rhs = np.concatenate([target, h[list(subset)]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if size and np.any(lam < -1e-10):
                continue
            if np.all(g @ x <= h + feas_tol):
                return x
    raise InfeasibleError("constraint set is empty: limits are inconsistent")


def project_vector(
    template: AlphaParams, vec: np.ndarray, droops: Droops, limits: LimitSet
) -> np.ndarray:
    """Project a raw parameter vector (possibly structurally invalid, e.g. a
    gradient step) onto the tightened linear constraint set of `template`."""
    cons = linear_constraints(template, droops, limits, tightened=True)
    out = np.asarray(vec, dtype=float).copy()
    for block in cons.blocks:
        rows = list(block)
        cols = np.unique(np.nonzero(cons.g[rows])[1])
        out[cols] = _project_block(out[cols], cons.g[np.ix_(rows, cols)], cons.h[rows])
    return out


def project(alpha: AlphaParams, droops: Droops, limits: LimitSet) -> AlphaParams:
    """Exact Euclidean projection onto the (tightened) linear constraint set.

    Products are decoupled in the linear rows, so each block projects
    independently. The nonlinear superposed-peak bound is not projected; the
    optimizer enforces it by rejection.
    """
    vec = project_vector(alpha, alpha.to_vector(), droops, limits)
    return alpha.with_vector(vec)
