"""Time stepping: exact exponentials, implicit Euler, norm curves."""
import numpy as np
import pytest
import scipy.linalg

import possys as ps
from possys.semigroup import (
    DENSE_EXPM_LIMIT,
    EvolutionPlan,
    default_method,
    growth_estimate,
    left_invertibility_audit,
    operator_norm_trajectory,
    step_matrix,
)


class TestEvolutionPlan:
    def test_grid(self):
        plan = EvolutionPlan(t_end=1.0, dt=0.25, method="exact_exponential")
        assert plan.steps == 4
        np.testing.assert_allclose(plan.times, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_rejects_misaligned_dt(self):
        with pytest.raises(ValueError):
            EvolutionPlan(t_end=1.0, dt=0.3, method="exact_exponential")

    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            EvolutionPlan(t_end=1.0, dt=0.5, method="rk4")

    def test_tolerates_representable_fractions(self):
        plan = EvolutionPlan(t_end=1.0, dt=0.05, method="implicit_euler")
        assert plan.steps == 20


class TestStepMatrix:
    def test_exact_is_expm(self, toy):
        _, model, _ = toy
        e = step_matrix(model, 0.3, "exact_exponential")
        np.testing.assert_allclose(e, scipy.linalg.expm(0.3 * model.matrix), atol=1e-14)

    def test_implicit_euler_is_resolvent_step(self, toy):
        _, model, _ = toy
        e = step_matrix(model, 0.1, "implicit_euler")
        np.testing.assert_allclose(e, np.linalg.inv(np.eye(2) - 0.1 * model.matrix), atol=1e-13)

    def test_implicit_converges_first_order(self, toy):
        _, model, _ = toy
        exact = scipy.linalg.expm(model.matrix)
        errs = []
        for dt in (0.1, 0.05, 0.025):
            e = step_matrix(model, dt, "implicit_euler")
            errs.append(np.max(np.abs(np.linalg.matrix_power(e, int(round(1 / dt))) - exact)))
        assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.4)
        assert errs[1] / errs[2] == pytest.approx(2.0, abs=0.4)

    def test_both_methods_positive_for_metzler(self, toy):
        _, model, _ = toy
        assert np.min(step_matrix(model, 0.5, "exact_exponential")) >= 0.0
        assert np.min(step_matrix(model, 0.5, "implicit_euler")) >= 0.0

    def test_implicit_rejects_dt_past_spectrum(self):
        space = ps.GridSpace(length=1.0, cells=1)
        model = ps.GeneratorModel.from_matrix(space, np.array([[2.0]]))
        with pytest.raises(ps.SingularSystemError):
            step_matrix(model, 0.5, "implicit_euler")


def test_default_method_switches_on_size():
    small = ps.renewal_scenario(1.0, 0.0, length=1.0, cells=10).generator
    assert default_method(small) == "exact_exponential"
    big = ps.renewal_scenario(1.0, 0.0, length=1.0, cells=DENSE_EXPM_LIMIT + 1).generator
    assert default_method(big) == "implicit_euler"


class TestEvolve:
    def test_matches_expm(self, toy, rng):
        _, model, _ = toy
        x = model.space.vector(rng.random(2))
        traj = ps.evolve(model, x, EvolutionPlan(1.0, 0.125, "exact_exponential"))
        np.testing.assert_allclose(
            traj.final.values, scipy.linalg.expm(model.matrix) @ x.values, atol=1e-13
        )

    def test_preserves_cone_both_methods(self, toy, rng):
        _, model, _ = toy
        x = model.space.vector(rng.random(2) + 0.1)
        for method in ("exact_exponential", "implicit_euler"):
            traj = ps.evolve(model, x, EvolutionPlan(2.0, 0.125, method))
            assert np.min(traj.states) >= -1e-15

    def test_norms_and_vector_at(self, toy):
        _, model, _ = toy
        x = model.space.vector(np.array([1.0, 0.0]))
        traj = ps.evolve(model, x, EvolutionPlan(1.0, 0.25, "exact_exponential"))
        assert traj.norms()[0] == pytest.approx(1.0)
        v = traj.vector_at(2)  # t = 2 * 0.25
        np.testing.assert_allclose(
            v.values, scipy.linalg.expm(0.5 * model.matrix) @ x.values, atol=1e-13
        )


class TestOperatorNormCurve:
    def test_against_dense_exponentials(self, toy):
        _, model, _ = toy
        grid = np.linspace(0.0, 2.0, 9)
        curve = operator_norm_trajectory(model, grid)
        for t, val in zip(grid, curve):
            ref = ps.induced_operator_norm(scipy.linalg.expm(t * model.matrix), model.space)
            assert val == pytest.approx(ref, abs=1e-12)

    def test_non_uniform_grid_allowed(self, toy):
        _, model, _ = toy
        grid = np.array([0.0, 0.1, 0.5, 0.6])
        curve = operator_norm_trajectory(model, grid)
        assert curve[0] == pytest.approx(1.0)
        assert np.all(np.diff(curve) < 0)

    def test_markov_norm_constant(self):
        model = ps.markov_cycle_scenario(5)
        curve = operator_norm_trajectory(model, np.linspace(0.0, 3.0, 7))
        np.testing.assert_allclose(curve, 1.0, atol=1e-12)


class TestGrowthEstimate:
    def test_sits_at_or_above_spectral_bound(self, toy):
        _, model, _ = toy
        est = growth_estimate(model)
        assert est >= ps.spectral_bound(model) - 0.05

    def test_tracks_decay_for_normal_matrix(self):
        space = ps.GridSpace(length=3.0, cells=3)
        model = ps.GeneratorModel.from_matrix(space, np.diag([-1.0, -2.0, -3.0]))
        assert growth_estimate(model) == pytest.approx(-1.0, abs=1e-3)

    def test_window_override(self, toy):
        _, model, _ = toy
        est = growth_estimate(model, window=4.0)
        assert np.isfinite(est)


class TestLeftInvertibility:
    def test_markov_holds_with_unit_amplitude(self):
        model = ps.markov_cycle_scenario(6)
        audit = left_invertibility_audit(
            model, np.linspace(0.0, 3.0, 13), rng=np.random.default_rng(4)
        )
        assert audit.holds
        assert audit.amplitude == pytest.approx(1.0, abs=1e-9)
        assert abs(audit.rate) < 1e-9

    def test_transport_fails_once_mass_exits(self):
        # zero-inflow transport empties the domain: no uniform lower bound
        rs = ps.renewal_scenario(1.0, 0.0, length=1.0, cells=40)
        audit = left_invertibility_audit(
            rs.generator, np.linspace(0.0, 4.0, 17), rng=np.random.default_rng(4)
        )
        assert not audit.holds

    def test_lower_bound_is_a_bound(self, toy, rng):
        _, model, _ = toy
        grid = np.linspace(0.0, 1.0, 5)
        audit = left_invertibility_audit(model, grid, sample_count=50, rng=rng)
        for t, low in zip(grid, audit.lower_bounds):
            e = scipy.linalg.expm(t * model.matrix)
            for _ in range(20):
                x = rng.random(2)
                x /= ps.weighted_l1(x, model.space) if ps.weighted_l1(x, model.space) else 1.0
                assert ps.weighted_l1(e @ x, model.space) >= low - 1e-12

    def test_requires_uniform_grid_from_zero(self, toy, rng):
        _, model, _ = toy
        with pytest.raises(ValueError):
            left_invertibility_audit(model, np.array([0.5, 1.0]), rng=rng)
