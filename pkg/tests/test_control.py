"""Input signals, input maps, and the admissibility audits."""
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

import possys as ps
from possys.control import (
    additivity_check,
    admissibility_report,
    cone_decomposition_check,
    composition_law_check,
    impulse_response_norms,
    positivity_equivalence_audit,
    resolvent_bound_audit,
    sampled_input_gain,
    step_input_operators,
)


def steps_signal(rng, n_seg=3, t_max=2.0):
    cuts = np.sort(rng.uniform(0.1, t_max, size=n_seg - 1))
    bp = np.concatenate([[0.0], cuts, [t_max]])
    return ps.InputSignal(bp, rng.uniform(-1.0, 2.0, size=n_seg))


class TestInputSignal:
    def test_invariants(self):
        with pytest.raises(ValueError):
            ps.InputSignal(np.array([0.5, 1.0]), np.array([1.0]))  # must start at 0
        with pytest.raises(ValueError):
            ps.InputSignal(np.array([0.0, 1.0, 1.0]), np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            ps.InputSignal(np.array([0.0, 1.0]), np.array([np.inf]))

    def test_value_at_right_continuous(self):
        u = ps.InputSignal(np.array([0.0, 1.0, 2.0]), np.array([3.0, 5.0]))
        np.testing.assert_allclose(
            u.value_at(np.array([0.0, 0.99, 1.0, 1.99, 2.0, 5.0])), [3, 3, 5, 5, 0, 0]
        )

    def test_zero_signal(self):
        z = ps.InputSignal.zero()
        assert z.end == 0.0
        assert z.lp_norm(1) == 0.0
        np.testing.assert_allclose(z.value_at(np.array([0.0, 1.0])), [0.0, 0.0])

    def test_lp_norms(self):
        u = ps.InputSignal(np.array([0.0, 0.5, 1.5]), np.array([2.0, -1.0]))
        assert u.lp_norm(1) == pytest.approx(2.0)
        assert u.lp_norm(2) == pytest.approx(np.sqrt(4 * 0.5 + 1.0))
        assert u.lp_norm(np.inf) == pytest.approx(2.0)

    @given(st.floats(min_value=0.01, max_value=2.99))
    @settings(max_examples=60, deadline=None)
    def test_truncate_then_shift_partition(self, t):
        # u = 1[0,1)*2 + 1[1,3)*0.5 split at t: truncation + shift rebuild u
        u = ps.InputSignal(np.array([0.0, 1.0, 3.0]), np.array([2.0, 0.5]))
        head, tail = u.truncated(t), u.shifted(t)
        probes = np.linspace(0.0, 3.5, 141)
        rebuilt = head.value_at(probes) + tail.value_at(np.maximum(probes - t, 0.0)) * (probes >= t)
        # the only disagreement allowed is at the split point itself
        mism = np.nonzero(~np.isclose(rebuilt, u.value_at(probes)))[0]
        assert all(abs(probes[i] - t) < 1e-9 for i in mism)

    def test_add_merges_breakpoints(self):
        a = ps.InputSignal(np.array([0.0, 1.0]), np.array([1.0]))
        b = ps.InputSignal(np.array([0.0, 0.5, 2.0]), np.array([2.0, -1.0]))
        tot = a + b
        np.testing.assert_allclose(tot.value_at(np.array([0.25, 0.75, 1.5])), [3.0, 0.0, -1.0])

    def test_positive_negative_parts(self):
        u = ps.InputSignal(np.array([0.0, 1.0, 2.0]), np.array([2.0, -3.0]))
        up, un = u.positive_part(), u.negative_part()
        probes = np.array([0.5, 1.5])
        np.testing.assert_allclose(up.value_at(probes) - un.value_at(probes), u.value_at(probes))
        assert np.all(up.value_at(probes) >= 0) and np.all(un.value_at(probes) >= 0)

    def test_csv_round_trip(self, tmp_path):
        u = ps.InputSignal(np.array([0.0, 0.25, 1.0]), np.array([1.5, -0.5]))
        path = tmp_path / "u.csv"
        u.to_csv(path)
        v = ps.InputSignal.from_csv(path)
        np.testing.assert_array_equal(v.breakpoints, u.breakpoints)
        np.testing.assert_array_equal(v.values, u.values)

    def test_csv_rejects_open_support(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,u\n0.0,1.0\n1.0,2.0\n")
        with pytest.raises(ValueError):
            ps.InputSignal.from_csv(path)

    def test_csv_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,value\n0.0,0.0\n")
        with pytest.raises(ValueError):
            ps.InputSignal.from_csv(path)


class TestInputMap:
    def test_zero_input_is_zero(self, toy):
        _, model, b = toy
        phi = ps.input_map(model, b, ps.InputSignal.zero(), 1.0)
        assert ps.l1_norm(phi) == 0.0

    def test_constant_input_closed_form(self, toy):
        _, model, b = toy
        u = ps.InputSignal.constant(1.0, 1.0)
        phi = ps.input_map(model, b, u, 1.0)
        r0b = np.array([0.5, 0.25])
        expected = r0b - scipy.linalg.expm(model.matrix) @ r0b
        np.testing.assert_allclose(phi.values, expected, atol=1e-12)

    def test_segment_and_stepper_paths_agree(self, toy, rng):
        _, model, b = toy
        u = ps.InputSignal(np.array([0.0, 0.25, 0.75, 1.0]), rng.uniform(0, 2, 3))
        exact = ps.input_map(model, b, u, 1.0)                       # segment path
        stepped = ps.input_map(model, b, u, 1.0, dt=0.0625)          # stepper path
        np.testing.assert_allclose(stepped.values, exact.values, atol=1e-12)

    def test_positive_input_lands_in_cone(self, toy, rng):
        _, model, b = toy
        for _ in range(25):
            u = steps_signal(rng).positive_part()
            phi = ps.input_map(model, b, u, 2.0)
            assert np.min(phi.values) >= -1e-12

    def test_misaligned_signal_warns(self, toy):
        _, model, b = toy
        u = ps.InputSignal(np.array([0.0, 0.3]), np.array([1.0]))
        with pytest.warns(UserWarning):
            ps.input_map(model, b, u, 1.0, dt=0.25)

    def test_implicit_method_close_to_exact(self, toy):
        _, model, b = toy
        u = ps.InputSignal.constant(1.0, 1.0)
        exact = ps.input_map(model, b, u, 1.0)
        approx = ps.input_map(model, b, u, 1.0, dt=1e-3, method="implicit_euler")
        np.testing.assert_allclose(approx.values, exact.values, atol=5e-3)


class TestMildSolution:
    def test_reduces_to_evolve_without_input(self, toy, rng):
        _, model, b = toy
        x = model.space.vector(rng.random(2))
        plan = ps.EvolutionPlan(1.0, 0.25, "exact_exponential")
        with_input = ps.mild_solution(model, b, x, ps.InputSignal.zero(), plan)
        plain = ps.evolve(model, x, plan)
        np.testing.assert_allclose(with_input.states, plain.states, atol=1e-13)

    def test_renewal_steady_state(self):
        # constant unit inflow: z(inf) = R(0, A_S) B when r < 1
        rs = ps.renewal_scenario(1.0, 0.5, length=4.0, cells=40)
        model = rs.system.perturbed
        b = rs.boundary_input
        plan = ps.EvolutionPlan(40.0, 0.05, "exact_exponential")
        traj = ps.mild_solution(model, b, model.space.zeros(), ps.InputSignal.constant(1.0, 40.0), plan)
        target = ps.resolvent_apply(model, 0.0, b.column)
        assert ps.l1_norm(traj.final - target) < 1e-6

    @pytest.mark.filterwarnings("ignore:input breakpoints resampled:UserWarning")
    def test_superposition(self, toy, rng):
        _, model, b = toy
        x = model.space.vector(rng.random(2))
        u = steps_signal(rng, t_max=1.0)
        plan = ps.EvolutionPlan(1.0, 0.03125, "exact_exponential")
        full = ps.mild_solution(model, b, x, u, plan)
        free = ps.evolve(model, x, plan)
        forced = ps.mild_solution(model, b, model.space.zeros(), u, plan)
        np.testing.assert_allclose(
            full.final.values, free.final.values + forced.final.values, atol=1e-12
        )


class TestAdmissibility:
    def test_boundary_impulse_norm_is_one(self, toy):
        _, model, b = toy
        # h-weighted norm of (1/h) e0 is exactly 1; decay afterwards
        assert ps.admissibility_constant(model, b, 1.0, p=1) == pytest.approx(1.0)

    def test_impulse_curve_decreasing_here(self, toy):
        _, model, b = toy
        norms = impulse_response_norms(model, b, 1.0, 1.0 / 64)
        assert norms[0] == pytest.approx(1.0)
        assert np.all(np.diff(norms) < 0)

    def test_markov_constant_in_tau(self):
        model = ps.markov_cycle_scenario(4)
        b = model.space.basis(0).values
        for tau in (0.5, 2.0, 7.0):
            assert ps.admissibility_constant(model, b, tau, p=1) == pytest.approx(1.0, abs=1e-12)

    def test_p2_and_pinf_against_quadrature(self, toy):
        _, model, b = toy
        e0 = np.array([1.0, 0.0])
        ts = np.linspace(0.0, 1.0, 4097)
        curve = np.array(
            [np.sum(np.abs(scipy.linalg.expm(model.matrix * t) @ e0)) for t in ts]
        )
        ref_inf = np.trapezoid(curve, ts)
        ref_2 = np.sqrt(np.trapezoid(curve**2, ts))
        assert ps.admissibility_constant(model, b, 1.0, p=np.inf) == pytest.approx(ref_inf, abs=1e-5)
        assert ps.admissibility_constant(model, b, 1.0, p=2) == pytest.approx(ref_2, abs=1e-5)

    def test_sampled_gain_is_lower_bound(self, toy, rng):
        _, model, b = toy
        kappa = ps.admissibility_constant(model, b, 1.0, p=1)
        low = sampled_input_gain(model, b, 1.0, trials=50, rng=rng)
        assert low <= kappa + 1e-9

    def test_uniform_decay_curve_monotone(self, toy):
        _, model, b = toy
        curve = ps.uniform_decay_curve(model, b, np.array([0.25, 0.5, 1.0, 2.0]))
        assert np.all(np.diff(curve) > 0)


class TestResolventBound:
    def test_scalar_oracle(self):
        # A = -I, B = e0, h = 1: ||R(lam)B|| = 1/(lam+1), bound max (lam-a)/(lam+1)
        space = ps.GridSpace(length=2.0, cells=2)
        model = ps.GeneratorModel.from_matrix(space, -np.eye(2))
        b = np.array([1.0, 0.0])
        grid = -0.5 + np.logspace(-1, 2, 25)
        m = resolvent_bound_audit(model, b, -0.5, grid, p=1)
        expected = np.max((grid + 0.5) / (grid + 1.0))
        assert m == pytest.approx(expected, rel=1e-12)
        assert m < 1.0

    def test_large_lambda_finite(self, toy):
        _, model, b = toy
        m = resolvent_bound_audit(model, b, -1.0, np.array([1e3, 1e6]), p=1)
        assert np.isfinite(m)

    def test_renewal_grid_finite(self):
        rs = ps.renewal_scenario(1.0, 0.5, length=4.0, cells=50)
        alpha = -1.0
        m = resolvent_bound_audit(rs.generator, rs.boundary_input, alpha, alpha + np.logspace(-1, 2, 25))
        assert np.isfinite(m) and m > 0

    def test_validates_alpha(self, toy):
        _, model, b = toy
        with pytest.raises(ValueError):
            resolvent_bound_audit(model, b, -3.0, np.array([1.0]))  # alpha below s(A)
        with pytest.raises(ValueError):
            resolvent_bound_audit(model, b, -1.0, np.array([-1.5]))  # grid below alpha


class TestSystemLaws:
    def test_composition_zero_input(self, toy):
        _, model, b = toy
        assert composition_law_check(model, b, ps.InputSignal.zero(), 1.0, 1.0, dt=0.25) == 0.0

    def test_head_supported_signal(self, toy):
        # u supported in [0, t): the shifted tail vanishes
        _, model, b = toy
        u = ps.InputSignal(np.array([0.0, 0.5]), np.array([2.0]))
        res = composition_law_check(model, b, u, 1.0, 1.0, dt=0.125)
        assert res <= 1e-10

    @pytest.mark.filterwarnings("ignore:input breakpoints resampled:UserWarning")
    def test_random_signals(self, toy, rng):
        _, model, b = toy
        for _ in range(20):
            u = steps_signal(rng, t_max=2.0)
            res = composition_law_check(model, b, u, 1.0, 1.0, dt=0.0625)
            assert res <= 1e-10
            res2 = additivity_check(model, b, u, steps_signal(rng, t_max=2.0), 2.0, dt=0.0625)
            assert res2 <= 1e-10
            res3 = cone_decomposition_check(model, b, u, 2.0, dt=0.0625)
            assert res3 <= 1e-10


class TestPositivityEquivalence:
    def test_boundary_injection_all_green(self, toy):
        _, model, b = toy
        eq = positivity_equivalence_audit(model, b)
        assert eq.column_nonneg and eq.resolvent_nonneg and eq.input_map_nonneg
        assert eq.consistent

    def test_signed_column_all_red(self, toy):
        _, model, _ = toy
        eq = positivity_equivalence_audit(model, np.array([1.0, -1.0]))
        assert not eq.column_nonneg and not eq.resolvent_nonneg and not eq.input_map_nonneg
        assert eq.consistent


def test_admissibility_report_bundle(toy):
    _, model, b = toy
    rep = admissibility_report(model, b, tau=1.0)
    assert rep.kappa == pytest.approx(1.0)
    assert rep.positive_admissible
    assert rep.composition_residual <= 1e-10
    assert np.isfinite(rep.m_alpha)
    assert rep.alpha > ps.spectral_bound(model)


def test_step_operator_cache_returns_same_arrays(toy):
    _, model, b = toy
    e1, f1 = step_input_operators(model, b, 0.125, "exact_exponential")
    e2, f2 = step_input_operators(model, b, 0.125, "exact_exponential")
    assert e1 is e2 and f1 is f2
