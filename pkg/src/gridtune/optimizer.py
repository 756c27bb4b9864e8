"""Projected gradient descent on the closed-loop H2 cost with feasibility and
stability safeguards, plus the baseline comparison and the sequential
multi-unit tuning pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError, StabilityError, ValidationError
from .lti import (
    ClosedLoop,
    PerfWeights,
    augment_grid,
    close_loop,
    dominant_damping_ratio,
    h2_gradient,
    h2_norm_sq,
    is_hurwitz,
    simulate_disturbance,
)
from .pwl import StateSpace
from .services import (
    AlphaParams,
    Droops,
    LimitSet,
    aux_magnitude_cap,
    baseline_alpha,
    build_tdes,
    linear_constraints,
    project,
    project_vector,
    superposed_peak,
)


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    step_init: float = 1.0
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    tol_step: float = 1e-4
    stability_margin: float = 1e-6
    multistart: int = 0
    seed: int = 0
    max_backtracks: int = 40

    def __post_init__(self):
        if not (0.0 < self.armijo_c1 < 1.0):
            raise ValidationError("require 0 < armijo_c1 < 1")
        if not (0.0 < self.backtrack < 1.0):
            raise ValidationError("require 0 < backtrack < 1")
        if self.tol_step <= 0.0 or self.step_init <= 0.0 or self.stability_margin <= 0.0:
            raise ValidationError("tolerances and steps must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    alpha: AlphaParams
    j: float
    grad_norm: float
    step: float


@dataclass(frozen=True)
class OptRun:
    alpha_star: AlphaParams
    j_star: float
    history: tuple[IterRecord, ...]
    status: str  # converged | max_iters | infeasible


def make_builder(
    grid: StateSpace,
    template: AlphaParams,
    droops: Droops,
    weights: PerfWeights,
    pade_order: int = 4,
):
    """Closure mapping a free parameter vector to its closed loop with `grid`."""
    ext = augment_grid(grid, weights)

    def build(vec: np.ndarray) -> ClosedLoop:
        alpha = template.with_vector(vec)
        return close_loop(ext, build_tdes(alpha, droops, pade_order), alpha=alpha)

    return build


def _fp_peak_ok(alpha: AlphaParams, droops: Droops, limits: LimitSet) -> bool:
    m_abs = abs(alpha.aux.m) if alpha.aux is not None else 0.0
    return superposed_peak(alpha, droops) + m_abs <= limits.device.m_max_p + 1e-12


def optimize(
    grid: StateSpace,
    droops: Droops,
    limits: LimitSet,
    weights: PerfWeights,
    cfg: OptimizerConfig,
    alpha0: AlphaParams,
    pade_order: int = 4,
) -> OptRun:
    """Projected gradient descent from alpha0 (projected first if infeasible).

    Armijo backtracking on J composed with the projection; candidates whose
    loop is not Hurwitz or that violate the superposed-peak device bound count
    as J = +inf and are backtracked. Accepted iterates therefore form a
    non-increasing J sequence of feasible, stabilizing parameters.
    """
    template = project(alpha0, droops, limits)
    build = make_builder(grid, template, droops, weights, pade_order)

    def evaluate(vec: np.ndarray) -> float:
        alpha = template.with_vector(vec)
        if not _fp_peak_ok(alpha, droops, limits):
            return math.inf
        cl = build(vec)
        if not is_hurwitz(cl.a, margin=cfg.stability_margin):
            return math.inf
        try:
            return h2_norm_sq(cl)
        except NumericalError:
            return math.inf  # numerically unusable corner: backtrack away

    vec = template.to_vector()
    j_curr = evaluate(vec)
    if not math.isfinite(j_curr):
        raise StabilityError(
            "closed loop unstable or device bound violated at the (projected) "
            "starting point; review the grid scenario and limits"
        )
    history = []
    eta = cfg.step_init
    status = "max_iters"
    for it in range(1, cfg.max_iters + 1):
        grad = h2_gradient(build, vec)
        grad_norm = float(np.linalg.norm(grad))
        if it == 1:
            history.append(
                IterRecord(0, template.with_vector(vec), j_curr, grad_norm, 0.0)
            )
        eta = min(eta * 4.0, 1e12)
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand_vec = project_vector(template, vec - eta * grad, droops, limits)
            j_cand = evaluate(cand_vec)
            decrease = float(grad @ (cand_vec - vec))
            if math.isfinite(j_cand) and j_cand <= j_curr + cfg.armijo_c1 * decrease:
                accepted = True
                break
            eta *= cfg.backtrack
        if not accepted:
            status = "converged"
            break
        step_norm = float(np.linalg.norm(cand_vec - vec))
        vec, j_curr = cand_vec, j_cand
        history.append(IterRecord(it, template.with_vector(vec), j_curr, grad_norm, step_norm))
        if step_norm <= cfg.tol_step:
            status = "converged"
            break
    alpha_star = template.with_vector(vec)
    return OptRun(alpha_star=alpha_star, j_star=j_curr, history=tuple(history), status=status)


def _sample_feasible(template: AlphaParams, droops: Droops, limits: LimitSet, rng) -> AlphaParams:
    """Uniform sample inside the per-variable ranges, then projected to feasibility."""
    cons = linear_constraints(template, droops, limits, tightened=True)
    names = template.field_names()
    lo = np.zeros(len(names))
    hi = np.zeros(len(names))
    gc = limits.grid_code
    bounds = {
        "fcr.t_i": (0.0, gc.t_i_max_fcr),
        "fcr.t_a": (0.0, gc.t_a_max_fcr),
        "ffr.t_a": (0.0, gc.t_a_max_ffr),
        "ffr.t_d": (0.0, gc.t_a_max_ffr + limits.device.t_d_max_ffr),
        "ffr.t_r": (0.0, gc.t_a_max_ffr + limits.device.t_d_max_ffr + limits.device.t_r_max_ffr),
        "ffr.x": (1.0, gc.x_max_ffr),
        "aux.omega_l": (gc.omega_min, gc.omega_max),
        "aux.omega_h": (gc.omega_min, gc.omega_max),
        "aux.m": (-limits.device.m_max_p, limits.device.m_max_p),
        "vq.t90": (0.0, gc.t90_max_vq),
        "vq.t100": (0.0, gc.t100_max_vq),
    }
    for i, n in enumerate(names):
        lo[i], hi[i] = bounds[n]
    del cons  # ranges above cover the box; couplings are restored by projection
    draw = lo + rng.random(len(names)) * (hi - lo)
    cap = aux_magnitude_cap(template, droops, limits)
    for i, n in enumerate(names):
        if n == "aux.m":
            draw[i] = np.clip(draw[i], -cap, cap)
    return template.with_vector(project_vector(template, draw, droops, limits))


def optimize_multistart(
    grid: StateSpace,
    droops: Droops,
    limits: LimitSet,
    weights: PerfWeights,
    cfg: OptimizerConfig,
    alpha0: AlphaParams,
    pade_order: int = 4,
) -> OptRun:
    """Descent from alpha0 plus cfg.multistart random feasible starts; best run wins."""
    best = optimize(grid, droops, limits, weights, cfg, alpha0, pade_order)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.multistart):
        start = _sample_feasible(alpha0, droops, limits, rng)
        try:
            run = optimize(grid, droops, limits, weights, cfg, start, pade_order)
        except StabilityError:
            continue
        if run.j_star < best.j_star:
            best = run
    return best


@dataclass(frozen=True)
class CompareReport:
    j_baseline: float
    j_star: float
    j_reduction_pct: float
    metrics_baseline: dict
    metrics_star: dict
    improvement_pct: dict


def _metrics_dict(m) -> dict:
    return {"rocof_max": m.rocof_max, "nadir": m.nadir, "v_peak": m.v_peak}


def compare_baseline(
    grid: StateSpace,
    droops: Droops,
    limits: LimitSet,
    weights: PerfWeights,
    alpha_star: AlphaParams,
    pade_order: int = 4,
    disturbance=(-1.0, -1.0),
    dt: float = 0.01,
    horizon: float = 60.0,
) -> CompareReport:
    """Cost and step-disturbance metrics of alpha_star against the cheap baseline.

    The baseline uses the same enabled products as alpha_star. Improvement
    percentages are computed on metric magnitudes, positive = better.
    """
    alpha0 = baseline_alpha(limits, products=alpha_star.enabled())
    ext = augment_grid(grid, weights)

    def _eval(alpha):
        cl = close_loop(ext, build_tdes(alpha, droops, pade_order), alpha=alpha)
        j = h2_norm_sq(cl)
        if not math.isfinite(j):
            raise StabilityError("closed loop unstable during comparison")
        sim = simulate_disturbance(cl, disturbance, dt, horizon)
        return j, sim.metrics

    j0, m0 = _eval(alpha0)
    j1, m1 = _eval(alpha_star)

    def _pct(a, b):
        return 100.0 * (abs(a) - abs(b)) / abs(a) if a != 0.0 else 0.0

    improvement = {
        "rocof_max": _pct(m0.rocof_max, m1.rocof_max),
        "nadir": _pct(m0.nadir, m1.nadir),
        "v_peak": _pct(m0.v_peak, m1.v_peak),
    }
    return CompareReport(
        j_baseline=j0,
        j_star=j1,
        j_reduction_pct=_pct(j0, j1),
        metrics_baseline=_metrics_dict(m0),
        metrics_star=_metrics_dict(m1),
        improvement_pct=improvement,
    )


@dataclass(frozen=True)
class UnitSpec:
    """One reserve unit in a multi-unit pass: its droops, limits and start point."""

    droops: Droops
    limits: LimitSet
    alpha0: AlphaParams
    pade_order: int = 4


@dataclass(frozen=True)
class SequentialResult:
    runs: tuple  # runs[cycle][unit] -> OptRun
    alphas: tuple  # final AlphaParams per unit
    j_trajectory: tuple  # global J: initial, then after each cycle


def effective_grid(grid: StateSpace, closed_units: list[StateSpace]) -> StateSpace:
    """Grid equivalent seen by one unit with the other units' services closed in."""
    sys = grid
    for t in closed_units:
        ng, nt = sys.n_states, t.n_states
        a = np.zeros((ng + nt, ng + nt))
        a[:ng, :ng] = sys.a
        a[:ng, ng:] = sys.b @ t.c
        a[ng:, :ng] = t.b @ sys.c
        a[ng:, ng:] = t.a
        b = np.vstack([sys.b, np.zeros((nt, 2))])
        c = np.hstack([sys.c, np.zeros((2, nt))])
        sys = StateSpace(a, b, c)
    return sys


def _aggregate_tdes(units, alphas) -> StateSpace:
    parts = [
        build_tdes(alpha, unit.droops, unit.pade_order)
        for unit, alpha in zip(units, alphas)
    ]
    a = scipy.linalg.block_diag(*[p.a for p in parts])
    b = np.vstack([p.b for p in parts])
    c = np.hstack([p.c for p in parts])
    return StateSpace(a, b, c)


def sequential_po(
    grid: StateSpace,
    units: list[UnitSpec],
    weights: PerfWeights,
    cfg: OptimizerConfig,
    cycles: int = 2,
) -> SequentialResult:
    """Tune each unit in turn against the grid with all other units closed in.

    Every per-unit descent starts from that unit's current parameters, so the
    global cost is non-increasing along the whole pass.
    """
    if not units:
        raise ValidationError("at least one unit required")
    alphas = [project(u.alpha0, u.droops, u.limits) for u in units]

    def global_j(cycle_label):
        cl = close_loop(augment_grid(grid, weights), _aggregate_tdes(units, alphas))
        j = h2_norm_sq(cl)
        if not math.isfinite(j):
            raise StabilityError(f"global closed loop unstable at {cycle_label}")
        return j

    j_traj = [global_j("start")]
    runs = []
    for cycle in range(cycles):
        cycle_runs = []
        for i, unit in enumerate(units):
            others = [
                build_tdes(alphas[j], units[j].droops, units[j].pade_order)
                for j in range(len(units))
                if j != i
            ]
            g_eff = effective_grid(grid, others)
            try:
                run = optimize(
                    g_eff, unit.droops, unit.limits, weights, cfg, alphas[i], unit.pade_order
                )
            except StabilityError as exc:
                raise StabilityError(f"cycle {cycle + 1}, unit {i + 1}: {exc}") from exc
            alphas[i] = run.alpha_star
            cycle_runs.append(run)
        runs.append(tuple(cycle_runs))
        j_traj.append(global_j(f"cycle {cycle + 1}"))
    return SequentialResult(runs=tuple(runs), alphas=tuple(alphas), j_trajectory=tuple(j_traj))
