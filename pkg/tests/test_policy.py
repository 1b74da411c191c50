import numpy as np
import pytest

from mfergo import (ActionSet, AffineClampedPolicy, ConfigError, ConstantPolicy,
                    OptimizerConfig, OptimizerError, PiecewisePolicy,
                    PolicyFamily, RngStream, TabularPolicy, evaluate,
                    optimize_policy, policy_from_json, policy_to_json)

BOX = ActionSet.box(-1.0, 1.0)
FIN = ActionSet.finite([-1.0, 0.0, 1.0])


class TestEvaluate:
    def test_constant_ignores_inputs(self):
        p = ConstantPolicy(BOX, np.array([0.3]))
        for t, x, m in [(0, 0, 0), (5, -3, 2), (1e3, 7, -7)]:
            assert evaluate(p, t, x, m) == pytest.approx(0.3)

    def test_affine_clamps_to_box(self):
        p = AffineClampedPolicy(BOX, np.zeros(1), np.array([[-5.0]]),
                                np.zeros((1, 1)))
        assert evaluate(p, 0.0, 1.0, 0.0) == -1.0
        assert evaluate(p, 0.0, -1.0, 0.0) == 1.0

    def test_tabular_single_cell(self):
        p = TabularPolicy(FIN, np.array([0.0]), np.array([0.0]),
                          np.full((1, 1, 1), 1.0))
        for x in (-10.0, 0.0, 10.0):
            assert evaluate(p, 0.0, x, 5.0) == 1.0

    def test_tabular_saturating_edges(self):
        table = np.array([[[-1.0]], [[0.0]], [[1.0]]])
        p = TabularPolicy(FIN, np.array([-1.0, 0.0, 1.0]), np.array([0.0]),
                          table)
        assert evaluate(p, 0, -99.0, 0) == -1.0
        assert evaluate(p, 0, 99.0, 0) == 1.0
        assert evaluate(p, 0, 0.1, 0) == 0.0

    def test_piecewise_switches_on_time(self):
        p = PiecewisePolicy(BOX, (1.0,),
                            (ConstantPolicy(BOX, np.array([-0.5])),
                             ConstantPolicy(BOX, np.array([0.5]))))
        assert evaluate(p, 0.5, 0, 0) == -0.5
        assert evaluate(p, 1.5, 0, 0) == 0.5

    def test_actions_always_in_set(self):
        gen = np.random.default_rng(0)
        for aset in (BOX, FIN):
            fam = PolicyFamily("affine", aset)
            for _ in range(20):
                pol = fam.build(gen.normal(scale=4.0, size=fam.param_dim))
                X = gen.normal(scale=3.0, size=(16, 1))
                A = pol.actions(0.0, X, X.mean(axis=0), 0.0)
                assert aset.contains(A)


class TestFamilies:
    def test_param_dims(self):
        assert PolicyFamily("constant", BOX).param_dim == 1
        assert PolicyFamily("affine", BOX).param_dim == 3
        assert PolicyFamily("constant", BOX, windows=4, horizon=2.0).param_dim == 4

    def test_windows_need_horizon(self):
        with pytest.raises(ConfigError):
            PolicyFamily("constant", BOX, windows=4)

    def test_enumerate_finite_constant(self):
        fam = PolicyFamily("constant", FIN)
        cands = fam.enumerate()
        assert [c[0] for c in cands] == [-1.0, 0.0, 1.0]
        assert PolicyFamily("constant", BOX).enumerate() is None

    def test_enumerate_windows_product(self):
        fam = PolicyFamily("constant", FIN, windows=2, horizon=1.0)
        assert len(fam.enumerate()) == 9


def quadratic_objective(params, stream, scale=1):
    gen = stream.generator()
    p = float(np.asarray(params).ravel()[0])
    n = 8 * scale
    noise = gen.normal(scale=0.02, size=n)
    vals = -(p - 2.0) ** 2 + noise
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


class TestOptimizer:
    def test_cem_finds_quadratic_argmax(self):
        fam = PolicyFamily("constant", ActionSet.box(-5.0, 5.0), init_spread=2.0)
        res = optimize_policy(quadratic_objective, fam,
                              OptimizerConfig(population=32, iterations=15),
                              RngStream(1))
        assert abs(res.params[0] - 2.0) < 0.05

    def test_enumeration_exact_argmax(self):
        table = {-1.0: 0.2, 0.0: 0.9, 1.0: 0.5}

        def obj(params, stream, scale=1):
            return table[float(params[0])], 0.0

        res = optimize_policy(obj, PolicyFamily("constant", FIN),
                              OptimizerConfig(), RngStream(2))
        assert res.params[0] == 0.0
        assert res.value == 0.9

    def test_constant_objective_reported_unbiased(self):
        def obj(params, stream, scale=1):
            return 5.0, 0.0

        res = optimize_policy(obj, PolicyFamily("constant", FIN),
                              OptimizerConfig(), RngStream(3))
        assert res.value == 5.0

    def test_budget_monotonicity(self):
        fam = PolicyFamily("constant", ActionSet.box(-5.0, 5.0), init_spread=2.0)
        short = optimize_policy(quadratic_objective, fam,
                                OptimizerConfig(population=16, iterations=4,
                                                restarts=1), RngStream(4))
        long = optimize_policy(quadratic_objective, fam,
                               OptimizerConfig(population=16, iterations=8,
                                               restarts=1), RngStream(4))
        se = max(short.stderr, long.stderr, 1e-6)
        assert long.value >= short.value - 2 * se

    def test_all_non_finite_raises(self):
        def bad(params, stream, scale=1):
            return float("nan"), 0.0

        with pytest.raises(OptimizerError):
            optimize_policy(bad, PolicyFamily("constant", FIN),
                            OptimizerConfig(), RngStream(5))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(population=4)
        with pytest.raises(ConfigError):
            OptimizerConfig(elite_frac=0.9)
        with pytest.raises(ConfigError):
            OptimizerConfig(iterations=0)


class TestSerialization:
    @pytest.mark.parametrize("policy", [
        ConstantPolicy(FIN, np.array([1.0])),
        AffineClampedPolicy(BOX, np.array([0.1]), np.array([[0.5]]),
                            np.array([[-0.2]])),
        PiecewisePolicy(BOX, (1.0,), (ConstantPolicy(BOX, np.array([-0.5])),
                                      ConstantPolicy(BOX, np.array([0.5])))),
        TabularPolicy(FIN, np.array([-1.0, 1.0]), np.array([0.0]),
                      np.array([[[-1.0]], [[1.0]]])),
    ])
    def test_round_trip(self, policy):
        back = policy_from_json(policy_to_json(policy))
        gen = np.random.default_rng(6)
        X = gen.normal(size=(8, 1))
        a1 = policy.actions(0.7, X, X.mean(axis=0), 0.0)
        a2 = back.actions(0.7, X, X.mean(axis=0), 0.0)
        assert np.array_equal(np.broadcast_to(a1, (8, 1)),
                              np.broadcast_to(a2, (8, 1)))
