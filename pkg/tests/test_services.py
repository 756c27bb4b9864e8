import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from oracles import project_by_nlp

from gridtune.errors import InfeasibleError, ValidationError
from gridtune.pwl import MIN_SEGMENT, step_response
from gridtune.services import (
    AlphaParams,
    AuxParams,
    DeviceLimits,
    Droops,
    FcrParams,
    FfrParams,
    GridCodeLimits,
    LimitSet,
    VqParams,
    aux_magnitude_cap,
    aux_tf,
    baseline_alpha,
    build_tdes,
    check_feasible,
    fcr_curve,
    ffr_curve,
    linear_constraints,
    project,
    superposed_peak,
    vq_curve,
)


class TestCurves:
    def test_fcr_table_values(self, droops):
        c = fcr_curve(FcrParams(t_i=2.0, t_a=30.0), droops.d_p)
        assert c.breakpoints == ((0.0, 0.0), (2.0, 0.0), (30.0, -20.0))
        assert c.final_value == -20.0

    def test_fcr_unit_ramp(self):
        c = fcr_curve(FcrParams(t_i=0.0, t_a=1.0), 1.0)
        assert_allclose(c.value([0.25, 0.5, 1.0]), [0.25, 0.5, 1.0])

    def test_fcr_midpoint_half_capacity(self, droops):
        c = fcr_curve(FcrParams(t_i=2.0, t_a=30.0), droops.d_p)
        assert_allclose(c.value(16.0), -10.0)

    def test_fcr_ordering_error(self, droops):
        with pytest.raises(ValidationError):
            fcr_curve(FcrParams(t_i=2.0, t_a=2.0), droops.d_p)

    def test_ffr_baseline_polyline(self, droops):
        c = ffr_curve(FfrParams(t_a=2.0, t_d=10.0, t_r=20.0, x=1.0), droops.k_p)
        assert c.breakpoints == ((0.0, 0.0), (2.0, -25.0), (10.0, -25.0), (20.0, 0.0))

    def test_ffr_flat_support_at_unity_overdelivery(self):
        c = ffr_curve(FfrParams(t_a=1.0, t_d=5.0, t_r=9.0, x=1.0), -0.04)
        assert_allclose(c.value([1.0, 3.0, 5.0]), [-25.0, -25.0, -25.0])

    def test_ffr_ordering_error(self, droops):
        with pytest.raises(ValidationError):
            ffr_curve(FfrParams(t_a=5.0, t_d=4.0, t_r=9.0, x=1.0), droops.k_p)

    def test_vq_capacity_levels(self, droops):
        c = vq_curve(VqParams(t90=5.0, t100=60.0), droops.d_q)
        assert_allclose(c.value(5.0), -22.5)
        assert_allclose(c.value(60.0), -25.0)
        assert_allclose(c.value(5.0), 0.9 * c.final_value)

    def test_vq_fast_activation_accepted(self, droops):
        c = vq_curve(VqParams(t90=0.29, t100=0.30), droops.d_q)
        assert c.final_value == -25.0


class TestAuxTf:
    def test_resonance_identity_sweep(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            wl = rng.uniform(0.5, 10.0)
            wh = wl + rng.uniform(0.1, 15.0)
            m = rng.uniform(-60.0, 60.0)
            tf = aux_tf(AuxParams(omega_l=wl, omega_h=wh, m=m))
            assert_allclose(
                abs(tf.evaluate(1j * math.sqrt(wl * wh))), abs(m), atol=1e-10, rtol=1e-10
            )

    def test_zero_magnitude_gives_zero_tf(self):
        tf = aux_tf(AuxParams(omega_l=1.0, omega_h=2.0, m=0.0))
        assert tf.is_zero

    def test_table_parameters_rolloff(self):
        tf = aux_tf(AuxParams(omega_l=2.4, omega_h=7.0, m=-43.15))
        assert abs(tf.evaluate(0.0)) == 0.0
        hi = np.abs(tf.evaluate(1j * np.array([200.0, 2000.0])))
        assert_allclose(hi[0] / hi[1], 10.0, rtol=0.05)  # -20 dB/decade

    def test_band_ordering_error(self):
        with pytest.raises(ValidationError):
            AuxParams(omega_l=3.0, omega_h=2.0, m=1.0)

    def test_sign_flip_preserves_magnitude(self):
        w = np.logspace(-1, 2, 50)
        plus = np.abs(aux_tf(AuxParams(1.0, 5.0, 3.3)).evaluate(1j * w))
        minus = np.abs(aux_tf(AuxParams(1.0, 5.0, -3.3)).evaluate(1j * w))
        assert_allclose(plus, minus, rtol=1e-12)


class TestBuildTdes:
    def test_baseline_dc_matrix(self, alpha0, droops):
        sys = build_tdes(alpha0, droops, 4)
        assert_allclose(sys.dc_gain(), [[-20.0, 0.0], [0.0, -25.0]], atol=1e-9)

    def test_fcr_disabled_zero_dc(self, limits, droops):
        alpha = baseline_alpha(limits, products=("ffr", "aux", "vq"))
        sys = build_tdes(alpha, droops, 4)
        assert abs(sys.dc_gain()[0, 0]) < 1e-9

    def test_state_dimension_is_sum_of_products(self, alpha0, droops):
        from gridtune.pwl import pwl_step_tf
        from gridtune.services import _aux_realization

        parts = [
            pwl_step_tf(fcr_curve(alpha0.fcr, droops.d_p), 1.0, 4).n_states,
            pwl_step_tf(ffr_curve(alpha0.ffr, droops.k_p), 1.0, 4).n_states,
            _aux_realization(alpha0.aux).n_states,
            pwl_step_tf(vq_curve(alpha0.vq, droops.d_q), 1.0, 4).n_states,
        ]
        assert build_tdes(alpha0, droops, 4).n_states == sum(parts)

    def test_all_disabled_rejected(self, droops):
        with pytest.raises(ValidationError):
            build_tdes(AlphaParams(), droops, 4)

    def test_off_diagonal_zero(self, alpha0, droops):
        sys = build_tdes(alpha0, droops, 4)
        resp = sys.transfer_at(1j * 0.7)
        assert abs(resp[0, 1]) < 1e-12 and abs(resp[1, 0]) < 1e-12


class TestBaseline:
    def test_table_values(self, limits):
        a = baseline_alpha(limits)
        assert a.fcr == FcrParams(2.0, 30.0)
        assert a.ffr == FfrParams(2.0, 10.0, 20.0, 1.0)
        assert a.aux.m == 0.0
        assert a.vq == VqParams(5.0, 60.0)

    def test_baseline_feasible(self, limits, droops):
        assert check_feasible(baseline_alpha(limits), droops, limits) == []

    def test_modified_limit_tracks(self, droops):
        limits = LimitSet(grid_code=GridCodeLimits(t_i_max_fcr=1.0))
        assert baseline_alpha(limits).fcr.t_i == 1.0


class TestCheckFeasible:
    def test_t_i_violation_slack(self, limits, droops, alpha0):
        import dataclasses

        alpha = dataclasses.replace(alpha0, fcr=FcrParams(t_i=3.0, t_a=30.0))
        violations = dict(check_feasible(alpha, droops, limits))
        assert_allclose(violations["fcr.t_i_hi"], -1.0)

    def test_support_duration_minimum(self, limits, droops, alpha0):
        import dataclasses

        alpha = dataclasses.replace(
            alpha0, ffr=FfrParams(t_a=2.0, t_d=9.0, t_r=20.0, x=1.0)
        )
        violations = dict(check_feasible(alpha, droops, limits))
        assert_allclose(violations["ffr.t_d_lo"], -1.0)

    def test_duration_caps_are_offsets(self, limits, droops, alpha0):
        import dataclasses

        # support/recovery durations at their 20 s caps remain feasible even
        # though the absolute times exceed 20 s
        alpha = dataclasses.replace(
            alpha0, ffr=FfrParams(t_a=1.32, t_d=21.32, t_r=41.32, x=1.0)
        )
        assert check_feasible(alpha, droops, limits) == []
        alpha = dataclasses.replace(
            alpha0, ffr=FfrParams(t_a=1.0, t_d=21.5, t_r=41.5, x=1.0)
        )
        assert "ffr.t_d_hi" in dict(check_feasible(alpha, droops, limits))

    def test_peak_capacity_constraint(self, limits, droops, alpha0):
        import dataclasses

        alpha = dataclasses.replace(
            alpha0, aux=AuxParams(omega_l=1.0, omega_h=5.0, m=60.0)
        )
        violations = dict(check_feasible(alpha, droops, limits))
        assert "fp.peak_capacity" in violations

    def test_aux_cap_default_value(self, limits, droops, alpha0):
        # peak capacity 70 minus the enabled droop capacities 20 + 25
        assert_allclose(aux_magnitude_cap(alpha0, droops, limits), 25.0)
        alpha_no_fcr = baseline_alpha(limits, products=("ffr", "aux", "vq"))
        assert_allclose(aux_magnitude_cap(alpha_no_fcr, droops, limits), 45.0)

    def test_superposed_peak_exact(self, droops, alpha0):
        # polyline sum peak: ffr at capacity 25 plus the fcr ramp at t = 10
        expected = 25.0 + 20.0 * 8.0 / 28.0
        assert_allclose(superposed_peak(alpha0, droops), expected)


class TestProject:
    def test_idempotent_on_feasible(self, alpha0, droops, limits):
        projected = project(alpha0, droops, limits)
        assert_allclose(projected.to_vector(), alpha0.to_vector(), atol=1e-12)

    def test_single_violation_clipped(self, alpha0, droops, limits):
        import dataclasses

        alpha = dataclasses.replace(alpha0, fcr=FcrParams(t_i=3.0, t_a=30.0))
        projected = project(alpha, droops, limits)
        assert_allclose(projected.fcr.t_i, 2.0, atol=1e-12)
        rest = [f for f in alpha.field_names() if f != "fcr.t_i"]
        a, b = dict(zip(alpha.field_names(), alpha.to_vector())), dict(
            zip(projected.field_names(), projected.to_vector())
        )
        for f in rest:
            assert_allclose(b[f], a[f], atol=1e-12)

    def test_double_projection_fixed_point(self, alpha0, droops, limits):
        rng = np.random.default_rng(5)
        base = alpha0.to_vector()
        for _ in range(100):
            vec = base + rng.standard_normal(base.size) * 5.0
            from gridtune.services import project_vector

            once = project_vector(alpha0, vec, droops, limits)
            twice = project_vector(alpha0, once, droops, limits)
            assert np.max(np.abs(once - twice)) <= 1e-9

    def test_projection_feasible_1000_random(self, alpha0, droops, limits):
        from gridtune.services import project_vector

        cons = linear_constraints(alpha0, droops, limits, tightened=False)
        rng = np.random.default_rng(17)
        base = alpha0.to_vector()
        for _ in range(1000):
            vec = base + rng.standard_normal(base.size) * rng.uniform(0.1, 30.0)
            out = project_vector(alpha0, vec, droops, limits)
            assert np.min(cons.slack(out)) >= -1e-9

    def test_matches_nlp_oracle(self, alpha0, droops, limits):
        from gridtune.services import project_vector

        cons = linear_constraints(alpha0, droops, limits, tightened=True)
        rng = np.random.default_rng(29)
        base = alpha0.to_vector()
        for _ in range(10):
            vec = base + rng.standard_normal(base.size) * 8.0
            mine = project_vector(alpha0, vec, droops, limits)
            reference = project_by_nlp(vec, cons.g, cons.h)
            assert np.max(np.abs(mine - reference)) <= 1e-6

    def test_empty_set_raises(self, alpha0, droops):
        limits = LimitSet(
            grid_code=GridCodeLimits(t_r_min_offset_ffr=30.0),
            device=DeviceLimits(t_r_max_ffr=20.0),
        )
        with pytest.raises(InfeasibleError):
            project(alpha0, droops, limits)

    def test_tightened_lower_bounds(self, alpha0, droops, limits):
        import dataclasses

        alpha = dataclasses.replace(alpha0, fcr=FcrParams(t_i=0.0, t_a=30.0))
        projected = project(alpha, droops, limits)
        assert projected.fcr.t_i == pytest.approx(MIN_SEGMENT)


class TestVectorRoundTrip:
    def test_vector_round_trip(self, alpha0):
        vec = alpha0.to_vector()
        rebuilt = alpha0.with_vector(vec)
        assert rebuilt == alpha0
        assert alpha0.field_names()[0] == "fcr.t_i"

    def test_wrong_length_rejected(self, alpha0):
        with pytest.raises(ValidationError):
            alpha0.with_vector(np.zeros(3))

    def test_droops_nonzero(self):
        with pytest.raises(ValidationError):
            Droops(d_p=0.0)
