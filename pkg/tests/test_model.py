import numpy as np
import pytest

from mfergo import (ActionCost, ActionSet, ConfigError, MissingConstantsError,
                    ModelSpec, bounded_function, dissipativity_margin,
                    lipschitz_constants, sample_check_dissipativity)


def ou(B=-2.0, sigma=0.5, **kw):
    return ModelSpec.affine(dim=1, B=B, sigma0=sigma,
                            action_set=kw.pop("action_set", ActionSet.singleton()),
                            **kw)


class TestLipschitzConstants:
    def test_pure_ou_readoff(self):
        c = lipschitz_constants(ou())
        assert c.L_bx == 2.0
        assert c.L_bmu == 0.0
        assert c.L_sx == 0.0
        assert c.L_smu == 0.0
        assert c.M == 0.5

    def test_controlled_mean_field_readoff(self):
        # b = -x + 0.5(m - x) + a = -1.5 x + 0.5 m + a, sigma = 1, A = [-1, 1]
        spec = ModelSpec.affine(dim=1, B=-1.5, Bbar=0.5, G=1.0, sigma0=1.0,
                                action_set=ActionSet.box(-1.0, 1.0))
        c = lipschitz_constants(spec)
        assert c.L_bx == 1.5
        assert c.L_bmu == 0.5
        assert c.M == pytest.approx(2.0)   # max|a| = 1 plus sigma = 1

    def test_cos_reward_bounds(self):
        spec = ou(reward_x=bounded_function("cos"))
        c = lipschitz_constants(spec)
        assert c.M_f == 1.0
        assert c.L_f == 1.0

    def test_custom_needs_constants(self):
        spec = ModelSpec.custom(1, ActionSet.singleton(),
                                drift=lambda X, m, A: -X,
                                diffusion=lambda X, m, A: np.ones_like(X),
                                reward=lambda X, m, A: np.zeros(X.shape[0]))
        with pytest.raises(MissingConstantsError):
            lipschitz_constants(spec)

    def test_reward_bound_holds_on_samples(self):
        gen = np.random.default_rng(0)
        spec = ModelSpec.affine(
            dim=1, B=-1.0, sigma0=1.0,
            reward_x=bounded_function("clipped_quad", clip=2.0),
            reward_mean=bounded_function("bump", amp=0.7, center=1.0, width=0.5),
            action_cost=ActionCost("quadratic", 0.3),
            action_set=ActionSet.box(-2.0, 2.0))
        Mf = lipschitz_constants(spec).M_f
        for _ in range(200):
            X = gen.normal(scale=3.0, size=(16, 1))
            mean = gen.normal(scale=2.0, size=1)
            a = spec.action_set.grid()[gen.integers(0, 33)]
            A = np.broadcast_to(a, (16, 1))
            f = spec.reward(X, mean, A)
            assert np.all(np.abs(f) <= Mf + 1e-12)


class TestDissipativityMargin:
    def test_pure_ou(self):
        rep = dissipativity_margin(ou(B=-2.0, sigma=0.5))
        assert rep.gamma == pytest.approx(2.0)
        assert rep.eta == pytest.approx(2.0)
        assert rep.passed

    def test_cross_terms(self):
        # gamma = 2 with S = 0.5 needs B = -(2 + S^2/2); add Bbar=0.5, Sbar=1
        spec = ModelSpec.affine(dim=1, B=-2.125, S=0.5, Bbar=0.5, Sbar=1.0,
                                sigma0=1.0, action_set=ActionSet.singleton())
        rep = dissipativity_margin(spec)
        assert rep.gamma == pytest.approx(2.0)
        assert rep.eta == pytest.approx(2.0 - (0.5 + 0.5 * 1.0 + 0.5))

    def test_mean_field_ou(self):
        spec = ModelSpec.affine(dim=1, B=-1.5, Bbar=0.5, sigma0=1.0,
                                action_set=ActionSet.singleton())
        rep = dissipativity_margin(spec)
        assert rep.gamma == pytest.approx(1.5)
        assert rep.eta == pytest.approx(1.0)

    def test_failure_is_reported_not_raised(self):
        rep = dissipativity_margin(ou(B=1.0, sigma=1.0))
        assert rep.eta <= 0
        assert not rep.passed

    def test_eta_formula_random_models(self):
        gen = np.random.default_rng(1)
        for _ in range(25):
            B = -gen.uniform(0.5, 3.0)
            S = gen.uniform(0.0, 0.8)
            Bbar = gen.uniform(-0.4, 0.4)
            Sbar = gen.uniform(0.0, 0.4)
            spec = ModelSpec.affine(dim=1, B=B, S=S, Bbar=Bbar, Sbar=Sbar,
                                    sigma0=1.0, action_set=ActionSet.singleton())
            c = lipschitz_constants(spec)
            rep = dissipativity_margin(spec)
            expected = -(B + 0.5 * S * S) - (
                c.L_bmu + c.L_sx * c.L_smu + 0.5 * c.L_smu ** 2)
            assert rep.eta == pytest.approx(expected, rel=1e-12)


class TestSampledCheck:
    def test_pure_ou_no_violations(self):
        for seed in (0, 1, 2):
            rep = sample_check_dissipativity(ou(), n_samples=500,
                                             particle_count=16, seed=seed)
            assert rep.violations == 0
            assert rep.passed

    def test_expanding_drift_violates(self):
        # direct evaluation at xi=0, xi'=1: <b(0)-b(1), -1> = 1 > -0.1
        spec = ou(B=1.0, sigma=1.0)
        rep = sample_check_dissipativity(spec, n_samples=200,
                                         particle_count=16, seed=0, eta=0.1)
        assert rep.violations >= 1
        assert rep.worst_violation > 0

    def test_identical_clouds_no_violation(self):
        # both sides of the inequality vanish when xi = xi'
        spec = ou()
        X = np.random.default_rng(3).normal(size=(32, 1))
        A = np.zeros((32, 1))
        mean = X.mean(axis=0)
        db = spec.drift(X, mean, A) - spec.drift(X, mean, A)
        ds = spec.diffusion(X, mean, A) - spec.diffusion(X, mean, A)
        lhs = np.mean((db * (X - X)).sum(axis=1) + 0.5 * (ds ** 2).sum(axis=1))
        assert lhs == 0.0

    def test_passing_margin_implies_no_sampled_violation(self):
        gen = np.random.default_rng(4)
        for _ in range(3):
            spec = ModelSpec.affine(
                dim=1, B=-gen.uniform(1.0, 3.0), Bbar=gen.uniform(-0.3, 0.3),
                sigma0=1.0, action_set=ActionSet.singleton())
            if not dissipativity_margin(spec).passed:
                continue
            rep = sample_check_dissipativity(spec, n_samples=300,
                                             particle_count=16,
                                             seed=int(gen.integers(1 << 30)))
            assert rep.violations == 0


class TestActionSet:
    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            ActionSet.finite([])

    def test_box_grid_inside_box(self):
        aset = ActionSet.box(-1.0, 2.0, grid_points=7)
        g = aset.grid()
        assert len(g) == 7
        assert np.all(g >= -1.0) and np.all(g <= 2.0)

    def test_project_membership(self):
        gen = np.random.default_rng(5)
        box = ActionSet.box(-1.0, 1.0)
        fin = ActionSet.finite([-1.0, 0.0, 1.0])
        raw = gen.normal(scale=3.0, size=(50, 1))
        assert box.contains(box.project(raw))
        assert fin.contains(fin.project(raw))

    def test_grid_sorted_ascending(self):
        fin = ActionSet.finite([1.0, -1.0, 0.0])
        assert np.all(np.diff(fin.grid()[:, 0]) > 0)


class TestSerialization:
    def test_model_round_trip(self):
        spec = ModelSpec.affine(
            dim=1, B=-1.5, Bbar=0.5, G=1.0, sigma0=1.0,
            reward_x=bounded_function("tanh"),
            action_cost=ActionCost("quadratic", 0.1),
            action_set=ActionSet.finite([-1.0, 0.0, 1.0]), name="t")
        back = ModelSpec.from_json(spec.to_json())
        assert back.to_json() == spec.to_json()
        c1, c2 = lipschitz_constants(spec), lipschitz_constants(back)
        assert c1 == c2
