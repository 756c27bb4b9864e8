"""Batch command-line front end for the perceive-and-optimize pipeline.

Subcommands: translate | baseline | identify | optimize | simulate | pipeline
| compare. Exit codes: 0 success, 1 validation error, 2 numerical failure;
failures emit one machine-readable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import gridsim, sysid
from .config import (
    PipelineConfig,
    alpha_to_config_text,
    load_alpha,
    load_config,
)
from .errors import (
    GridTuneError,
    IdentificationError,
    InfeasibleError,
    NumericalError,
    StabilityError,
    ValidationError,
)
from .fileio import (
    TRACES_HEADER,
    bode_columns,
    read_dataset,
    read_model,
    write_csv,
    write_dataset,
    write_model,
    write_record,
    write_tf_records,
)
from .lti import augment_grid, close_loop, h2_norm_sq, simulate_disturbance
from .optimizer import compare_baseline, make_builder, optimize_multistart
from .pwl import StateSpace, step_response
from .services import (
    aux_tf,
    baseline_alpha,
    build_tdes,
    fcr_curve,
    ffr_curve,
    vq_curve,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gridtune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("translate", "emit service transfer functions and open-loop step data"),
        ("baseline", "emit the cheapest grid-code-compliant parameters"),
        ("identify", "fit a grid dynamic equivalent from data"),
        ("optimize", "tune the service parameters against the grid equivalent"),
        ("simulate", "closed-loop disturbance response and metrics"),
        ("pipeline", "identify, optimize and simulate in sequence"),
        ("compare", "baseline-versus-optimized report"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline configuration file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--pade-order", type=int, default=None, help="Pade order override")
        p.add_argument("--epsilon", type=float, default=None, help="integrator pole override")
        p.add_argument("--snr", type=float, default=None, help="dataset SNR override, dB")
        if name in ("simulate", "compare", "translate"):
            p.add_argument("--alpha", default=None, help="service parameter file override")
    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            pipeline=dataclasses.replace(cfg.pipeline, seed=args.seed),
            optimizer=dataclasses.replace(cfg.optimizer, seed=args.seed),
        )
    if args.pade_order is not None:
        cfg = dataclasses.replace(
            cfg, pipeline=dataclasses.replace(cfg.pipeline, pade_order=args.pade_order)
        )
    if args.epsilon is not None:
        cfg = dataclasses.replace(
            cfg, weights=dataclasses.replace(cfg.weights, epsilon=args.epsilon)
        )
    if args.snr is not None:
        cfg = dataclasses.replace(
            cfg, sysid=dataclasses.replace(cfg.sysid, snr_db=args.snr)
        )
    return cfg


def _alpha_from(cfg: PipelineConfig, args) -> "AlphaParams":
    if getattr(args, "alpha", None):
        return load_alpha(args.alpha)
    if cfg.alpha is not None:
        return cfg.alpha
    return baseline_alpha(cfg.limits, products=cfg.pipeline.products)


def _scenario_grid(cfg: PipelineConfig) -> StateSpace:
    kind = cfg.scenario.kind
    if kind == "nominal":
        return gridsim.make_nominal_grid(cfg.scenario.grid)
    if kind == "oscillatory":
        return gridsim.make_oscillatory_grid(cfg.scenario.grid)
    if kind == "model":
        return read_model(cfg.scenario.path)
    raise ValidationError(
        "this command needs an analytic or model scenario; got kind 'dataset'"
    )


def _obtain_dataset(cfg: PipelineConfig, out: Path) -> "sysid.TimeSeriesDataset":
    if cfg.scenario.kind == "dataset":
        return read_dataset(cfg.scenario.path)
    grid = _scenario_grid(cfg)
    s = cfg.sysid
    n = int(round(s.duration / s.dt))
    seed = cfg.pipeline.seed
    excitation = np.column_stack(
        [
            sysid.rbs(n, s.amplitude, s.switch_prob, seed=seed),
            sysid.rbs(n, s.amplitude, s.switch_prob, seed=seed + 1),
        ]
    )
    ds = gridsim.generate_dataset(grid, excitation, s.snr_db, s.dt, seed=seed + 2)
    write_dataset(out / "dataset.csv", ds)
    return ds


def _identify(cfg: PipelineConfig, out: Path):
    ds = _obtain_dataset(cfg, out)
    res = sysid.identify(
        ds,
        candidates=cfg.sysid.orders,
        use_prefilter=cfg.sysid.prefilter,
        target_order=cfg.sysid.target_order,
    )
    write_model(out / "model.json", res.system)
    omegas = 2.0 * np.pi * np.logspace(-2, 1, 200)
    header, cols = bode_columns(res.system, omegas)
    write_csv(out / "bode.csv", header, cols)
    write_record(
        out / "fit_report.json",
        {
            "fit_df": float(res.report.fits[0]),
            "fit_dv": float(res.report.fits[1]),
            "mean_fit": res.report.mean_fit,
            "model_order": res.system.n_states,
            "arx_orders": [res.arx.na, res.arx.nb, res.arx.nk],
            "reduction_error_bound": res.reduction.error_bound,
        },
    )
    return res.system


def _grid_for_optimization(cfg: PipelineConfig, out: Path) -> StateSpace:
    if cfg.scenario.kind == "dataset":
        return _identify(cfg, out)
    return _scenario_grid(cfg)


def _optimize(cfg: PipelineConfig, grid: StateSpace, out: Path):
    start = cfg.alpha if cfg.alpha is not None else baseline_alpha(
        cfg.limits, products=cfg.pipeline.products
    )
    run = optimize_multistart(
        grid,
        cfg.droops,
        cfg.limits,
        cfg.weights,
        cfg.optimizer,
        start,
        cfg.pipeline.pade_order,
    )
    (out / "alpha_star.cfg").write_text(alpha_to_config_text(run.alpha_star))
    names = run.alpha_star.field_names()
    header = ["iter", "J", "grad_norm", "step"] + names
    records = [
        [float(r.iteration), r.j, r.grad_norm, r.step] + list(r.alpha.to_vector())
        for r in run.history
    ]
    cols = [np.array([rec[i] for rec in records]) for i in range(len(header))]
    write_csv(out / "history.csv", header, cols)
    return run


def _simulate(cfg: PipelineConfig, grid: StateSpace, alpha, out: Path):
    tdes = build_tdes(alpha, cfg.droops, cfg.pipeline.pade_order)
    cl = close_loop(augment_grid(grid, cfg.weights), tdes, alpha=alpha)
    j = h2_norm_sq(cl)
    sim = simulate_disturbance(
        cl,
        (cfg.pipeline.disturbance_p, cfg.pipeline.disturbance_q),
        cfg.pipeline.sim_dt,
        cfg.pipeline.sim_horizon,
    )
    write_csv(
        out / "traces.csv",
        TRACES_HEADER,
        [sim.t, sim.df, sim.dfdot, sim.dv, sim.dp, sim.dq],
    )
    write_record(
        out / "metrics.json",
        {
            "rocof_max": sim.metrics.rocof_max,
            "nadir": sim.metrics.nadir,
            "v_peak": sim.metrics.v_peak,
            "J": j,
            "epsilon": cfg.weights.epsilon,
        },
    )
    return sim


def _translate(cfg: PipelineConfig, alpha, out: Path):
    order = cfg.pipeline.pade_order
    tdes = build_tdes(alpha, cfg.droops, order)
    write_model(out / "tdes_model.json", tdes)
    records = {}
    if alpha.fcr is not None:
        records["fcr_curve"] = _curve_record(fcr_curve(alpha.fcr, cfg.droops.d_p))
    if alpha.ffr is not None:
        records["ffr_curve"] = _curve_record(ffr_curve(alpha.ffr, cfg.droops.k_p))
    if alpha.vq is not None:
        records["vq_curve"] = _curve_record(vq_curve(alpha.vq, cfg.droops.d_q))
    if alpha.aux is not None:
        tf = aux_tf(alpha.aux)
        records["aux_tf"] = {"num": list(tf.num), "den": list(tf.den)}
    write_tf_records(out / "tdes_coeffs.json", records)
    dt, horizon = 0.02, 80.0
    t, y = step_response(tdes, 0, dt, horizon)
    exact_fp = np.zeros_like(t)
    if alpha.fcr is not None:
        exact_fp += fcr_curve(alpha.fcr, cfg.droops.d_p).value(t)
    if alpha.ffr is not None:
        exact_fp += ffr_curve(alpha.ffr, cfg.droops.k_p).value(t)
    write_csv(out / "step_fp.csv", ["t", "exact", "approx"], [t, exact_fp, y[:, 0]])
    t, y = step_response(tdes, 1, dt, horizon)
    exact_vq = (
        vq_curve(alpha.vq, cfg.droops.d_q).value(t)
        if alpha.vq is not None
        else np.zeros_like(t)
    )
    write_csv(out / "step_vq.csv", ["t", "exact", "approx"], [t, exact_vq, y[:, 1]])


def _curve_record(curve) -> dict:
    return {
        "breakpoints_t": [t for t, _ in curve.breakpoints],
        "breakpoints_value": [v for _, v in curve.breakpoints],
    }


def _compare(cfg: PipelineConfig, grid: StateSpace, alpha_star, out: Path):
    rep = compare_baseline(
        grid,
        cfg.droops,
        cfg.limits,
        cfg.weights,
        alpha_star,
        cfg.pipeline.pade_order,
        (cfg.pipeline.disturbance_p, cfg.pipeline.disturbance_q),
        cfg.pipeline.sim_dt,
        cfg.pipeline.sim_horizon,
    )
    write_record(
        out / "compare.json",
        {
            "J_baseline": rep.j_baseline,
            "J_star": rep.j_star,
            "J_reduction_pct": rep.j_reduction_pct,
            "metrics_baseline": rep.metrics_baseline,
            "metrics_star": rep.metrics_star,
            "improvement_pct": rep.improvement_pct,
        },
    )
    names = ["rocof_max", "nadir", "v_peak"]
    write_csv(
        out / "compare_metrics.csv",
        ["metric_idx", "baseline", "optimized", "improvement_pct"],
        [
            np.arange(len(names), dtype=float),
            np.array([rep.metrics_baseline[n] for n in names]),
            np.array([rep.metrics_star[n] for n in names]),
            np.array([rep.improvement_pct[n] for n in names]),
        ],
    )
    return rep


def run_command(argv) -> int:
    """Parse arguments, run one subcommand, write artifacts under --out."""
    args = _build_parser().parse_args(argv)
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "baseline":
        alpha0 = baseline_alpha(cfg.limits, products=cfg.pipeline.products)
        (out / "alpha0.cfg").write_text(alpha_to_config_text(alpha0))
    elif args.command == "translate":
        _translate(cfg, _alpha_from(cfg, args), out)
    elif args.command == "identify":
        _identify(cfg, out)
    elif args.command == "optimize":
        grid = _grid_for_optimization(cfg, out)
        _optimize(cfg, grid, out)
    elif args.command == "simulate":
        grid = _scenario_grid(cfg)
        _simulate(cfg, grid, _alpha_from(cfg, args), out)
    elif args.command == "compare":
        grid = _scenario_grid(cfg)
        _compare(cfg, grid, _alpha_from(cfg, args), out)
    elif args.command == "pipeline":
        if cfg.scenario.kind == "model":
            grid = _scenario_grid(cfg)
        else:
            grid = _identify(cfg, out)
        run = _optimize(cfg, grid, out)
        _simulate(cfg, grid, run.alpha_star, out)
        _compare(cfg, grid, run.alpha_star, out)
    return 0


_ERROR_KINDS = (
    (InfeasibleError, "infeasible", 2),
    (StabilityError, "instability", 2),
    (IdentificationError, "identification", 2),
    (NumericalError, "numerical", 2),
    (ValidationError, "validation", 1),
    (GridTuneError, "error", 2),
)


def main(argv=None) -> int:
    try:
        return run_command(sys.argv[1:] if argv is None else argv)
    except GridTuneError as exc:
        for cls, kind, code in _ERROR_KINDS:
            if isinstance(exc, cls):
                print(json.dumps({"error": kind, "detail": str(exc)}), file=sys.stderr)
                return code
        raise AssertionError("unreachable")
    except OSError as exc:
        print(json.dumps({"error": "io", "detail": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
