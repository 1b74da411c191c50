import math

import numpy as np
import pytest

from mfergo import (ActionSet, ConfigError, ConstantPolicy, Ensemble,
                    InitialLaw, ModelSpec, RngStream, SimConfig,
                    bounded_function, sample_initial, second_moment_curve,
                    step_euler, synchronous_coupling_gap, w2_distance)
from mfergo.particle import simulate, simulate_reward_path, TrajectoryObserver


def model(B=-2.0, sigma=0.0, **kw):
    return ModelSpec.affine(dim=1, B=B, sigma0=sigma,
                            action_set=ActionSet.singleton(), **kw)


ZERO_POLICY = ConstantPolicy(ActionSet.singleton(), np.array([0.0]))


class TestSampleInitial:
    def test_point_mass(self):
        ens = sample_initial(InitialLaw.point(0.0), 4, RngStream(0))
        assert np.all(ens.positions == 0.0)

    def test_gaussian_statistics(self):
        n = 10_000
        ens = sample_initial(InitialLaw.gaussian(0.0, 1.0), n, RngStream(1))
        assert abs(ens.positions.mean()) < 4.0 / math.sqrt(n)
        assert abs(ens.positions.var() - 1.0) < 0.1

    def test_explicit_points_passthrough(self):
        ens = sample_initial(InitialLaw.explicit([-1.0, 1.0]), 2, RngStream(2))
        assert sorted(ens.positions.ravel()) == [-1.0, 1.0]

    def test_explicit_wrong_count(self):
        with pytest.raises(ConfigError):
            sample_initial(InitialLaw.explicit([-1.0, 1.0]), 3, RngStream(0))

    def test_unknown_law(self):
        with pytest.raises(ConfigError):
            InitialLaw.from_json({"kind": "cauchy"})

    def test_same_seed_same_draws(self):
        a = sample_initial(InitialLaw.gaussian(0, 1), 64, RngStream(7, (1,)))
        b = sample_initial(InitialLaw.gaussian(0, 1), 64, RngStream(7, (1,)))
        assert np.array_equal(a.positions, b.positions)
        c = sample_initial(InitialLaw.gaussian(0, 1), 64, RngStream(7, (2,)))
        assert not np.array_equal(a.positions, c.positions)


class TestStepEuler:
    def test_zero_dynamics(self):
        ens = Ensemble(np.array([[0.5], [-0.5]]))
        out = step_euler(model(B=0.0), ens, ZERO_POLICY, 0.1,
                         RngStream(0).generator())
        assert np.array_equal(out.positions, ens.positions)
        assert out.time == pytest.approx(0.1)

    def test_constant_drift(self):
        spec = ModelSpec.affine(dim=1, b0=1.0, action_set=ActionSet.singleton())
        ens = Ensemble(np.array([[0.0], [2.0]]))
        out = step_euler(spec, ens, ZERO_POLICY, 0.1, RngStream(0).generator())
        assert np.allclose(out.positions - ens.positions, 0.1)

    def test_ou_decay_against_exact_exponential(self):
        spec = model(B=-2.0, sigma=0.0)
        ens = Ensemble(np.full((2, 1), 1.0))
        gen = RngStream(0).generator()
        for _ in range(100):
            ens = step_euler(spec, ens, ZERO_POLICY, 0.01, gen)
        assert abs(ens.positions[0, 0] - math.exp(-2.0)) < 2e-2

    def test_blow_up_detection(self):
        spec = model(B=1e9, sigma=0.0)
        ens = Ensemble(np.full((2, 1), 1.0))
        from mfergo import BlowUpError
        with pytest.raises(BlowUpError):
            step_euler(spec, ens, ZERO_POLICY, 1.0, RngStream(0).generator())


class TestSimulate:
    def test_constant_reward_integrates_exactly(self):
        spec = model(B=0.0, sigma=0.0,
                     reward_x=bounded_function("constant", value=2.5))
        ens = Ensemble(np.zeros((4, 1)))
        rec = simulate_reward_path(spec, ZERO_POLICY, ens, 3.0, 0.01,
                                   RngStream(0))
        assert np.trapezoid(rec.fbar, rec.times) == pytest.approx(2.5 * 3.0)

    def test_dt_must_divide_horizon(self):
        spec = model()
        ens = Ensemble(np.zeros((4, 1)))
        with pytest.raises(ConfigError):
            simulate_reward_path(spec, ZERO_POLICY, ens, 1.0, 0.3, RngStream(0))

    def test_observer_stride_and_rows(self):
        spec = model(B=-1.0, sigma=0.5)
        ens = sample_initial(InitialLaw.gaussian(0, 1), 32, RngStream(3))
        obs = TrajectoryObserver(reference=ens.positions)
        simulate(spec, ZERO_POLICY, ens, 1.0, 0.1, RngStream(4),
                 observers=[obs], obs_stride=2)
        assert len(obs.rows) == 6      # steps 0,2,4,6,8,10
        t, mean, m2, w2 = obs.rows[0]
        assert t == 0.0 and w2 == 0.0  # reference is the initial cloud

    def test_determinism(self):
        spec = model(B=-1.0, sigma=1.0)
        ens = sample_initial(InitialLaw.gaussian(0, 1), 64, RngStream(5))
        r1 = simulate_reward_path(spec, ZERO_POLICY, ens, 2.0, 0.01, RngStream(6))
        r2 = simulate_reward_path(spec, ZERO_POLICY, ens, 2.0, 0.01, RngStream(6))
        assert np.array_equal(r1.fbar, r2.fbar)
        assert np.array_equal(r1.final.positions, r2.final.positions)


class TestW2:
    def test_identical_clouds(self):
        x = np.random.default_rng(0).normal(size=(32, 1))
        assert w2_distance(x, x) == 0.0

    def test_translation(self):
        x = np.random.default_rng(1).normal(size=(64, 1))
        assert w2_distance(x, x + 0.7) == pytest.approx(0.7)

    def test_cross_pairing(self):
        a = np.array([[0.0], [2.0]])
        b = np.array([[1.0], [1.0]])
        assert w2_distance(a, b) == pytest.approx(1.0)

    def test_mismatched_sizes_error(self):
        with pytest.raises(ConfigError):
            w2_distance(np.zeros((4, 1)), np.zeros((5, 1)))

    def test_triangle_inequality_random_triples(self):
        gen = np.random.default_rng(2)
        for _ in range(25):
            a, b, c = (gen.normal(loc=gen.normal(), scale=gen.uniform(0.5, 2),
                                  size=(16, 1)) for _ in range(3))
            assert w2_distance(a, c) <= \
                w2_distance(a, b) + w2_distance(b, c) + 1e-12

    def test_sliced_translation_2d(self):
        x = np.random.default_rng(3).normal(size=(128, 2))
        shift = np.array([0.6, -0.8])   # |shift| = 1
        est = w2_distance(x, x + shift, n_projections=256)
        assert est == pytest.approx(1.0, rel=0.15)


class TestCoupling:
    def test_identical_start_zero_gap(self):
        spec = model(B=-1.0, sigma=0.7)
        ens = sample_initial(InitialLaw.gaussian(0, 1), 64, RngStream(7))
        curve = synchronous_coupling_gap(spec, ZERO_POLICY, ens,
                                         Ensemble(ens.positions.copy()),
                                         1.0, 0.01, RngStream(8))
        assert np.all(curve.mean_sq_gap == 0.0)

    def test_pure_ou_decay_rate(self):
        spec = model(B=-2.0, sigma=0.5)
        ens_a = sample_initial(InitialLaw.gaussian(0, 1), 256, RngStream(9))
        ens_b = Ensemble(ens_a.positions + 1.0)
        curve = synchronous_coupling_gap(spec, ZERO_POLICY, ens_a, ens_b,
                                         2.0, 0.01, RngStream(10))
        # noise cancels exactly; fit the decay rate of the gap
        rate = -np.polyfit(curve.times, np.log(curve.mean_sq_gap), 1)[0]
        assert rate >= 2 * 2.0 * (1 - 0.15)

    def test_mean_field_ou_envelope(self):
        spec = ModelSpec.affine(dim=1, B=-1.5, Bbar=0.5, sigma0=1.0,
                                action_set=ActionSet.singleton())
        ens_a = sample_initial(InitialLaw.gaussian(0, 1), 512, RngStream(11))
        ens_b = Ensemble(ens_a.positions + 1.0)
        curve = synchronous_coupling_gap(spec, ZERO_POLICY, ens_a, ens_b,
                                         2.0, 0.005, RngStream(12))
        assert curve.mean_sq_gap[-1] <= math.exp(-2 * 1.0 * 2.0) * 1.2
        assert not curve.breached(slack=0.2)

    def test_short_horizon_stability_in_initial_gap(self):
        # expanding drift: mean-square gap stays proportional to the initial
        # epsilon^2 over a fixed horizon
        spec = model(B=1.0, sigma=1.0)
        ens = sample_initial(InitialLaw.gaussian(0, 1), 256, RngStream(13))
        out = {}
        for eps in (1e-2, 1e-3):
            shifted = Ensemble(ens.positions + eps)
            curve = synchronous_coupling_gap(spec, ZERO_POLICY, ens, shifted,
                                             1.0, 0.01, RngStream(14), eta=1.0)
            out[eps] = curve.mean_sq_gap[-1]
            assert curve.mean_sq_gap[-1] <= eps ** 2 * math.exp(2.0) * 1.1
        assert out[1e-2] / out[1e-3] == pytest.approx(100.0, rel=0.1)


class TestSecondMoment:
    def test_deterministic_decay(self):
        spec = model(B=-2.0, sigma=0.0)
        ens = Ensemble(np.full((4, 1), 1.0))
        curve = second_moment_curve(spec, ZERO_POLICY, ens, 1.0, 0.01,
                                    RngStream(15))
        assert curve.second_moment[-1] == pytest.approx(math.exp(-4.0), rel=0.05)

    def test_stationary_ou_stays_near_one(self):
        spec = model(B=-1.0, sigma=math.sqrt(2.0))
        ens = sample_initial(InitialLaw.gaussian(0, 1), 8192, RngStream(16))
        curve = second_moment_curve(spec, ZERO_POLICY, ens, 10.0, 0.01,
                                    RngStream(17))
        assert np.all(np.abs(curve.second_moment - 1.0) < 0.1)

    def test_point_start_respects_ceiling(self):
        spec = ModelSpec.affine(dim=1, B=-1.5, Bbar=0.5, sigma0=1.0,
                                action_set=ActionSet.singleton())
        ens = sample_initial(InitialLaw.point(0.0), 1024, RngStream(18))
        curve = second_moment_curve(spec, ZERO_POLICY, ens, 10.0, 0.01,
                                    RngStream(19), slack=0.25)
        assert not curve.breached
