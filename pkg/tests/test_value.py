import math

import numpy as np
import pytest

from mfergo import (ActionSet, ConstantPolicy, InitialLaw, ModelSpec,
                    OptimizerConfig, PolicyFamily, RngStream, SimConfig,
                    TerminalReward, bounded_function, discounted_reward,
                    dpp_residual, finite_horizon_value, lipschitz_constants,
                    value_discounted)
from mfergo.value import truncation_horizon

SMALL = SimConfig(n_particles=128, dt=0.01, replicas=4)


def const_model(c=1.0):
    return ModelSpec.affine(dim=1, B=-1.0, sigma0=1.0,
                            reward_x=bounded_function("constant", value=c),
                            action_set=ActionSet.singleton())


def ou_cos():
    return ModelSpec.affine(dim=1, B=-1.0, sigma0=math.sqrt(2.0),
                            reward_x=bounded_function("cos"),
                            action_set=ActionSet.singleton())


def tanh_drive():
    return ModelSpec.affine(dim=1, B=-1.0, G=1.0, sigma0=1.0,
                            reward_x=bounded_function("tanh"),
                            action_set=ActionSet.finite([-1.0, 0.0, 1.0]))


ZPOL = ConstantPolicy(ActionSet.singleton(), np.array([0.0]))


class TestDiscountedReward:
    def test_constant_reward_c_over_beta(self):
        est = discounted_reward(const_model(1.0), ZPOL, InitialLaw.point(0.0),
                                0.5, RngStream(0), SMALL)
        assert est.estimate == pytest.approx(2.0, abs=0.003)
        assert est.stderr == 0.0
        assert est.truncation_bound <= 1e-3 * 1.0 / 0.5 + 1e-15

    def test_beta_must_be_positive(self):
        from mfergo import ConfigError
        with pytest.raises(ConfigError):
            discounted_reward(const_model(), ZPOL, InitialLaw.point(0.0),
                              -0.1, RngStream(0), SMALL)

    def test_stationary_ou_cos_oracle(self):
        # at the stationary start, beta * J equals E cos X = e^{-1/2}
        sim = SimConfig(n_particles=2048, dt=0.01, replicas=6)
        est = discounted_reward(ou_cos(), ZPOL, InitialLaw.gaussian(0.0, 1.0),
                                0.5, RngStream(1), sim)
        tol = max(3 * 0.5 * est.stderr, 0.012)
        assert 0.5 * est.estimate == pytest.approx(math.exp(-0.5), abs=tol)

    def test_halving_dt_consistency(self):
        est1 = discounted_reward(ou_cos(), ZPOL, InitialLaw.point(0.0), 0.5,
                                 RngStream(2), SMALL.replace(n_particles=512))
        est2 = discounted_reward(ou_cos(), ZPOL, InitialLaw.point(0.0), 0.5,
                                 RngStream(2),
                                 SMALL.replace(n_particles=512, dt=0.005))
        tol = 3 * math.hypot(est1.stderr, est2.stderr) + 0.01 * abs(est1.estimate)
        assert abs(est1.estimate - est2.estimate) <= tol

    def test_truncation_horizon_grid_aligned(self):
        T = truncation_horizon(0.3, 0.01, 1e-3)
        assert T == pytest.approx(round(T / 0.01) * 0.01)
        assert math.exp(-0.3 * T) <= 1e-3


class TestValueDiscounted:
    def test_singleton_equals_fixed_policy(self):
        dv = value_discounted(const_model(1.0), InitialLaw.point(0.0), 0.5,
                              PolicyFamily("constant", ActionSet.singleton()),
                              OptimizerConfig(), SMALL, RngStream(3))
        est = discounted_reward(const_model(1.0), ZPOL, InitialLaw.point(0.0),
                                0.5, RngStream(4), SMALL)
        assert dv.estimate == pytest.approx(est.estimate, abs=3e-3)

    def test_tanh_best_constant_action_is_one(self):
        spec = tanh_drive()
        dv = value_discounted(spec, InitialLaw.point(0.0), 0.5,
                              PolicyFamily("constant", spec.action_set),
                              OptimizerConfig(),
                              SimConfig(n_particles=512, dt=0.01, replicas=4),
                              RngStream(5))
        assert dv.best_policy.a[0] == 1.0

    def test_trivial_bound_on_scaled_value(self):
        for spec, law in [(ou_cos(), InitialLaw.gaussian(0, 1)),
                          (tanh_drive(), InitialLaw.point(0.0))]:
            Mf = lipschitz_constants(spec).M_f
            for beta in (0.5, 0.2):
                fam = PolicyFamily("constant", spec.action_set)
                dv = value_discounted(spec, law, beta, fam, OptimizerConfig(),
                                      SMALL, RngStream(6))
                assert beta * abs(dv.estimate) <= Mf + 3 * beta * dv.stderr + 1e-9


class TestFiniteHorizon:
    def test_constant_reward_cT(self):
        fam = PolicyFamily("constant", ActionSet.singleton())
        fh = finite_horizon_value(const_model(1.0), InitialLaw.point(0.0), 3.0,
                                  TerminalReward("zero"), fam,
                                  OptimizerConfig(), SMALL, RngStream(7))
        assert fh.estimate == pytest.approx(3.0, abs=1e-9)

    def test_long_horizon_average_near_ergodic_oracle(self):
        spec = tanh_drive()
        fam = PolicyFamily("constant", spec.action_set)
        fh = finite_horizon_value(spec, InitialLaw.point(0.0), 30.0,
                                  TerminalReward("zero"), fam,
                                  OptimizerConfig(),
                                  SimConfig(n_particles=512, dt=0.01,
                                            replicas=4), RngStream(8))
        assert fh.estimate / 30.0 == pytest.approx(0.632120558828557, rel=0.05)

    def test_terminal_mean_penalty_steers_actions(self):
        # f = 0, g = -|mean(mu_T)|: from delta_2 the cheapest way to shrink
        # the mean is the most negative action in the last window
        spec = ModelSpec.affine(dim=1, B=-1.0, G=1.0, sigma0=0.5,
                                action_set=ActionSet.finite([-1.0, 0.0, 1.0]))
        g = TerminalReward("measure", lambda X: -abs(float(X.mean())))
        fam = PolicyFamily("constant", spec.action_set, windows=2, horizon=1.0)
        fh = finite_horizon_value(spec, InitialLaw.point(2.0), 1.0, g, fam,
                                  OptimizerConfig(),
                                  SimConfig(n_particles=256, dt=0.01,
                                            replicas=4), RngStream(9))
        last_window_action = fh.best_policy.parts[-1].a[0]
        assert last_window_action == -1.0


class TestDppResidual:
    def test_constant_reward_residual_zero(self):
        fam = PolicyFamily("constant", ActionSet.singleton())
        res = dpp_residual(const_model(1.0), InitialLaw.point(0.0), 0.5, 1.0,
                           fam, OptimizerConfig(), SMALL, RngStream(10))
        assert res.residual <= 3 * res.stderr + 5e-3

    def test_singleton_benchmark_within_stderr(self):
        fam = PolicyFamily("constant", ActionSet.singleton())
        res = dpp_residual(ou_cos(), InitialLaw.gaussian(0, 1), 0.5, 1.0,
                           fam, OptimizerConfig(),
                           SimConfig(n_particles=512, dt=0.01, replicas=6),
                           RngStream(11))
        assert res.residual <= 3 * res.stderr + 0.02
        assert res.relative <= 0.05

    def test_controlled_benchmark_relative_residual(self):
        spec = tanh_drive()
        fam = PolicyFamily("constant", spec.action_set)
        res = dpp_residual(spec, InitialLaw.point(0.0), 0.5, 1.0, fam,
                           OptimizerConfig(),
                           SimConfig(n_particles=256, dt=0.01, replicas=4),
                           RngStream(12))
        assert res.relative <= 0.05


class TestLipschitzTransfer:
    def test_mean_shift_bounded_uniformly_in_beta(self):
        # two Gaussians differing only in mean: the value gap stays below
        # L * delta with the same L across the discount schedule
        spec = ou_cos()
        sim = SimConfig(n_particles=1024, dt=0.01, replicas=4)
        delta = 0.5
        L_theory = 2.0 * 1.0 / 1.0    # 2 L_f / eta for this model
        ratios = []
        for beta in (0.4, 0.1):
            a = discounted_reward(spec, ZPOL, InitialLaw.gaussian(0.0, 1.0),
                                  beta, RngStream(13), sim)
            b = discounted_reward(spec, ZPOL, InitialLaw.gaussian(delta, 1.0),
                                  beta, RngStream(13), sim)
            gap = abs(a.estimate - b.estimate)
            se = math.hypot(a.stderr, b.stderr)
            assert gap <= L_theory * delta + 3 * se
            ratios.append(gap / delta)
        assert max(ratios) <= L_theory
