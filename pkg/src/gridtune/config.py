"""Structured text configuration: one INI file drives the whole pipeline.

Sections [fcr]/[ffr]/[aux]/[vq] carry the service parameters (present =
enabled), [droops], [limits.grid_code]/[limits.device]/[limits.normalization],
[weights], [optimizer], [sysid], [scenario] and [pipeline] the rest. Unknown
keys are rejected.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .gridsim import GridScenario, OscillatoryMode
from .lti import PerfWeights
from .optimizer import OptimizerConfig
from .services import (
    AlphaParams,
    AuxParams,
    DeviceLimits,
    Droops,
    FcrParams,
    FfrParams,
    GridCodeLimits,
    LimitSet,
    Normalization,
    VqParams,
)

_ALPHA_SECTIONS = {
    "fcr": (FcrParams, ("t_i", "t_a")),
    "ffr": (FfrParams, ("t_a", "t_d", "t_r", "x")),
    "aux": (AuxParams, ("omega_l", "omega_h", "m")),
    "vq": (VqParams, ("t90", "t100")),
}

_SCENARIO_KEYS = {
    "kind",
    "path",
    "inertia",
    "load_damping",
    "gov_gain",
    "gov_time",
    "k_v",
    "tau_v",
    "k_pv",
    "k_qf",
    "mode_freq_hz",
    "mode_zeta",
    "mode_gain",
}

_SYSID_KEYS = {
    "dt",
    "duration",
    "amplitude",
    "switch_prob",
    "snr_db",
    "orders",
    "nk",
    "prefilter",
    "lowpass_hz",
    "target_order",
}

_PIPELINE_KEYS = {
    "pade_order",
    "seed",
    "products",
    "disturbance_p",
    "disturbance_q",
    "sim_dt",
    "sim_horizon",
}


@dataclass(frozen=True)
class SysidSettings:
    dt: float = 1e-3
    duration: float = 40.0
    amplitude: float = 0.03
    switch_prob: float = 0.1
    snr_db: float | None = 40.0
    orders: tuple = ((2, 2, 1), (3, 3, 1), (4, 4, 1), (6, 6, 1), (8, 8, 1), (12, 12, 1))
    nk: int = 1
    prefilter: bool = True
    lowpass_hz: float | None = 5.0
    target_order: int | None = None


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "nominal"  # nominal | oscillatory | dataset | model
    path: str | None = None
    grid: GridScenario = GridScenario()


@dataclass(frozen=True)
class PipelineSettings:
    pade_order: int = 4
    seed: int = 0
    products: tuple = ("fcr", "ffr", "aux", "vq")
    disturbance_p: float = -1.0
    disturbance_q: float = -1.0
    sim_dt: float = 0.01
    sim_horizon: float = 60.0


@dataclass(frozen=True)
class PipelineConfig:
    scenario: ScenarioSpec = ScenarioSpec()
    droops: Droops = Droops()
    limits: LimitSet = LimitSet()
    weights: PerfWeights = PerfWeights()
    optimizer: OptimizerConfig = OptimizerConfig()
    sysid: SysidSettings = SysidSettings()
    pipeline: PipelineSettings = PipelineSettings()
    alpha: AlphaParams | None = None


def _check_keys(parser, section, allowed):
    extra = set(parser[section]) - set(allowed)
    if extra:
        raise ValidationError(f"unknown keys in [{section}]: {sorted(extra)}")


def _get_floats(parser, section, allowed):
    _check_keys(parser, section, allowed)
    out = {}
    for key in parser[section]:
        try:
            out[key] = float(parser[section][key])
        except ValueError as exc:
            raise ValidationError(f"[{section}] {key}: not a number") from exc
    return out


def _dataclass_from_section(parser, section, cls):
    allowed = [f.name for f in fields(cls)]
    vals = _get_floats(parser, section, allowed)
    try:
        return cls(**vals)
    except TypeError as exc:
        raise ValidationError(f"bad [{section}] section: {exc}") from exc


def _parse_optional_float(text):
    if text.strip().lower() in ("none", "inf", ""):
        return None
    return float(text)


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {text!r}")


def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    text = Path(path).read_text()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config parse error: {exc}") from exc

    known_sections = (
        set(_ALPHA_SECTIONS)
        | {
            "droops",
            "limits.grid_code",
            "limits.device",
            "limits.normalization",
            "weights",
            "optimizer",
            "sysid",
            "scenario",
            "pipeline",
        }
    )
    extra = set(parser.sections()) - known_sections
    if extra:
        raise ValidationError(f"unknown config sections: {sorted(extra)}")

    out: dict = {}

    alpha_parts = {}
    for name, (cls, keys) in _ALPHA_SECTIONS.items():
        if parser.has_section(name):
            vals = _get_floats(parser, name, keys)
            missing = set(keys) - set(vals)
            if missing:
                raise ValidationError(f"[{name}] missing keys: {sorted(missing)}")
            alpha_parts[name] = cls(**vals)
    if alpha_parts:
        out["alpha"] = AlphaParams(**alpha_parts)

    if parser.has_section("droops"):
        out["droops"] = _dataclass_from_section(parser, "droops", Droops)

    limit_kwargs = {}
    if parser.has_section("limits.grid_code"):
        limit_kwargs["grid_code"] = _dataclass_from_section(
            parser, "limits.grid_code", GridCodeLimits
        )
    if parser.has_section("limits.device"):
        _check_keys(parser, "limits.device", [f.name for f in fields(DeviceLimits)])
        vals = {}
        for key in parser["limits.device"]:
            if key == "m_aux_cap":
                vals[key] = _parse_optional_float(parser["limits.device"][key])
            else:
                vals[key] = float(parser["limits.device"][key])
        limit_kwargs["device"] = DeviceLimits(**vals)
    if parser.has_section("limits.normalization"):
        limit_kwargs["normalization"] = _dataclass_from_section(
            parser, "limits.normalization", Normalization
        )
    if limit_kwargs:
        out["limits"] = LimitSet(**limit_kwargs)

    if parser.has_section("weights"):
        out["weights"] = _dataclass_from_section(parser, "weights", PerfWeights)

    if parser.has_section("optimizer"):
        _check_keys(parser, "optimizer", [f.name for f in fields(OptimizerConfig)])
        vals = {}
        for key in parser["optimizer"]:
            raw = parser["optimizer"][key]
            if key in ("max_iters", "multistart", "seed", "max_backtracks"):
                vals[key] = int(raw)
            else:
                vals[key] = float(raw)
        out["optimizer"] = OptimizerConfig(**vals)

    if parser.has_section("sysid"):
        _check_keys(parser, "sysid", _SYSID_KEYS)
        sec = parser["sysid"]
        vals = {}
        if "dt" in sec:
            vals["dt"] = float(sec["dt"])
        if "duration" in sec:
            vals["duration"] = float(sec["duration"])
        if "amplitude" in sec:
            vals["amplitude"] = float(sec["amplitude"])
        if "switch_prob" in sec:
            vals["switch_prob"] = float(sec["switch_prob"])
        if "snr_db" in sec:
            vals["snr_db"] = _parse_optional_float(sec["snr_db"])
        if "orders" in sec:
            try:
                orders = tuple(int(tok) for tok in sec["orders"].replace(" ", "").split(",") if tok)
            except ValueError as exc:
                raise ValidationError("[sysid] orders: expected integers") from exc
            nk = int(sec.get("nk", "1"))
            vals["orders"] = tuple((n, n, nk) for n in orders)
            vals["nk"] = nk
        elif "nk" in sec:
            vals["nk"] = int(sec["nk"])
        if "prefilter" in sec:
            vals["prefilter"] = _parse_bool(sec["prefilter"])
        if "lowpass_hz" in sec:
            vals["lowpass_hz"] = _parse_optional_float(sec["lowpass_hz"])
        if "target_order" in sec:
            raw = sec["target_order"].strip().lower()
            vals["target_order"] = None if raw in ("auto", "none", "") else int(raw)
        out["sysid"] = SysidSettings(**vals)

    if parser.has_section("scenario"):
        _check_keys(parser, "scenario", _SCENARIO_KEYS)
        sec = parser["scenario"]
        kind = sec.get("kind", "nominal").strip().lower()
        if kind not in ("nominal", "oscillatory", "dataset", "model"):
            raise ValidationError(f"unknown scenario kind: {kind}")
        path = sec.get("path", None)
        if kind in ("dataset", "model"):
            if not path:
                raise ValidationError(f"scenario kind {kind} requires a path")
        grid_kwargs = {}
        for key in ("inertia", "load_damping", "gov_gain", "gov_time", "k_v", "tau_v", "k_pv", "k_qf"):
            if key in sec:
                grid_kwargs[key] = float(sec[key])
        mode = None
        if kind == "oscillatory":
            mode_kwargs = {}
            for cfg_key, field in (
                ("mode_freq_hz", "freq_hz"),
                ("mode_zeta", "zeta"),
                ("mode_gain", "gain"),
            ):
                if cfg_key in sec:
                    mode_kwargs[field] = float(sec[cfg_key])
            mode = OscillatoryMode(**mode_kwargs)
        out["scenario"] = ScenarioSpec(kind=kind, path=path, grid=GridScenario(mode=mode, **grid_kwargs))

    if parser.has_section("pipeline"):
        _check_keys(parser, "pipeline", _PIPELINE_KEYS)
        sec = parser["pipeline"]
        vals = {}
        if "pade_order" in sec:
            vals["pade_order"] = int(sec["pade_order"])
        if "seed" in sec:
            vals["seed"] = int(sec["seed"])
        if "products" in sec:
            prods = tuple(tok for tok in sec["products"].replace(" ", "").split(",") if tok)
            bad = set(prods) - set(_ALPHA_SECTIONS)
            if bad:
                raise ValidationError(f"[pipeline] unknown products: {sorted(bad)}")
            vals["products"] = prods
        for key in ("disturbance_p", "disturbance_q", "sim_dt", "sim_horizon"):
            if key in sec:
                vals[key] = float(sec[key])
        out["pipeline"] = PipelineSettings(**vals)

    return PipelineConfig(**out)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def alpha_to_config_text(alpha: AlphaParams) -> str:
    """Serialize service parameters in the same section format the loader reads."""
    buf = io.StringIO()
    for name, (_, keys) in _ALPHA_SECTIONS.items():
        product = getattr(alpha, name)
        if product is None:
            continue
        buf.write(f"[{name}]\n")
        for key in keys:
            buf.write(f"{key} = {_fmt(getattr(product, key))}\n")
        buf.write("\n")
    return buf.getvalue()


def load_alpha(path) -> AlphaParams:
    cfg = load_config(path)
    if cfg.alpha is None:
        raise ValidationError(f"no service parameter sections in {path}")
    return cfg.alpha
