"""Synthetic linearized grid plants used as ground truth for the pipeline.

Desk-scale stand-ins: an aggregate swing/governor frequency channel, a
first-order voltage channel, weak cross couplings, and optionally one
weakly-damped oscillatory mode. Sign conventions: positive active-power
injection raises the local frequency, positive reactive injection raises the
voltage, so the (negative) droop feedbacks are stabilizing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StabilityError, ValidationError
from .pwl import StateSpace, simulate_zoh
from .sysid import TimeSeriesDataset


@dataclass(frozen=True)
class OscillatoryMode:
    """Second-order mode near freq_hz with damping ratio zeta, driven by dp."""

    freq_hz: float = 1.0
    zeta: float = 0.03
    gain: float = 0.15

    def __post_init__(self):
        if self.zeta <= 0.0:
            raise ValidationError("mode damping ratio must be positive")
        if self.freq_hz <= 0.0 or self.gain <= 0.0:
            raise ValidationError("mode frequency and gain must be positive")


@dataclass(frozen=True)
class GridScenario:
    inertia: float = 5.0
    load_damping: float = 1.0
    gov_gain: float = 20.0
    gov_time: float = 0.5
    k_v: float = 0.05
    tau_v: float = 0.2
    k_pv: float = 0.02
    k_qf: float = 0.02
    mode: OscillatoryMode | None = None

    def __post_init__(self):
        if self.inertia <= 0.0 or self.tau_v <= 0.0 or self.gov_time <= 0.0:
            raise ValidationError("inertia and time constants must be positive")
        if self.load_damping <= 0.0:
            raise ValidationError("load damping must be positive")


def make_nominal_grid(sc: GridScenario) -> StateSpace:
    """Three-state 2x2 plant: [df, dv] response to [dp, dq] injections.

    DC gain of the frequency channel is 1/(load damping + governor gain); with
    the defaults that is +1/21 per unit injection.
    """
    two_h = 2.0 * sc.inertia
    a = np.array(
        [
            [-sc.load_damping / two_h, 1.0 / two_h, 0.0],
            [-sc.gov_gain / sc.gov_time, -1.0 / sc.gov_time, 0.0],
            [0.0, 0.0, -1.0 / sc.tau_v],
        ]
    )
    b = np.array(
        [
            [1.0 / two_h, sc.k_qf / two_h],
            [0.0, 0.0],
            [sc.k_pv / sc.tau_v, sc.k_v / sc.tau_v],
        ]
    )
    c = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    sys = StateSpace(a, b, c)
    if np.max(sys.eigenvalues().real) >= 0.0:
        raise StabilityError("scenario parameterization is unstable")
    return sys


def make_oscillatory_grid(sc: GridScenario) -> StateSpace:
    """Nominal grid augmented with one lightly damped mode visible in both outputs."""
    if sc.mode is None:
        raise ValidationError("oscillatory grid requires a mode specification")
    base = make_nominal_grid(sc)
    mode = sc.mode
    w0 = 2.0 * math.pi * mode.freq_hz
    n = base.n_states
    a = np.zeros((n + 2, n + 2))
    a[:n, :n] = base.a
    a[n, n + 1] = 1.0
    a[n + 1, n] = -w0 * w0
    a[n + 1, n + 1] = -2.0 * mode.zeta * w0
    b = np.vstack([base.b, np.zeros((2, 2))])
    b[n + 1, 0] = mode.gain  # driven by active power
    c = np.hstack([base.c, np.zeros((2, 2))])
    c[0, n + 1] = 1.0   # mode velocity appears in the frequency output
    c[1, n + 1] = 0.5   # and, weaker, in the voltage output
    sys = StateSpace(a, b, c)
    if np.max(sys.eigenvalues().real) >= 0.0:
        raise StabilityError("oscillatory parameterization is unstable")
    return sys


def generate_dataset(
    grid: StateSpace,
    excitation: np.ndarray,
    snr_db: float | None,
    dt: float,
    seed: int = 0,
) -> TimeSeriesDataset:
    """Simulate the plant under the excitation and add output measurement noise.

    snr_db of None means noiseless. Noise is zero-mean white Gaussian per
    output channel, scaled from that channel's signal power; identical seeds
    reproduce identical datasets bit for bit.
    """
    u = np.atleast_2d(np.asarray(excitation, dtype=float))
    if u.shape[1] != grid.n_inputs:
        raise ValidationError("excitation must have one column per plant input")
    y = simulate_zoh(grid, u, dt)
    if snr_db is not None and math.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        power = np.mean(y**2, axis=0)
        noise_std = np.sqrt(power * 10.0 ** (-snr_db / 10.0))
        y = y + rng.standard_normal(y.shape) * noise_std[None, :]
    return TimeSeriesDataset(dt=dt, u=u, y=y)
