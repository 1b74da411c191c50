"""Executable acceptance suite: one runner per criterion, shared caches.

Each criterion returns a CriterionResult with the measured values, the pinned
tolerance, and pass/fail.  Heavy intermediates (the ergodic pairs) are cached
at module level so criteria that interrogate the same pair do not recompute
it.  Everything is seeded; 'bench' in the CLI and tests/test_acceptance.py
both run exactly these functions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List

import numpy as np

from .benchmarks import get_benchmark, probe_grid_for
from .ergodic import (ErgodicPair, abelian_tauberian_check, fixed_point_residual,
                      long_run_average, vanishing_discount, verification_run,
                      PhiOnEnsembles)
from .lions import (PoissonBiasOracle, greedy_feedback, hjb_residual,
                    lions_derivative, mean_functional,
                    second_moment_functional)
from .model import (ActionSet, ModelSpec, bounded_function, dissipativity_margin,
                    lipschitz_constants)
from .particle import (Ensemble, InitialLaw, RngStream, SimConfig,
                       sample_initial, second_moment_curve,
                       synchronous_coupling_gap)
from .policy import ConstantPolicy, OptimizerConfig, PolicyFamily
from .value import (TerminalReward, discounted_reward, finite_horizon_value,
                    _finite_horizon_values as _fh_values)

SEED = 20240

# frozen oracles (Gauss-Hermite quadrature / closed forms)
LAMBDA_OU_COS = math.exp(-0.5)            # E cos N(0,1)
LAMBDA_MF_OU_COS = math.exp(-1.0 / 3.0)   # E cos N(0,2/3)
LAMBDA_TANH = 0.632120558828557           # max_a E tanh N(a, 1/2), at a=+1
LAMBDA_TANH_WRONG = 0.0                   # E tanh N(0, 1/2)


@dataclass
class CriterionResult:
    cid: str
    title: str
    passed: bool
    detail: str
    runtime_s: float
    budget_s: float
    values: dict = field(default_factory=dict)

    @property
    def in_budget(self) -> bool:
        return self.runtime_s <= self.budget_s

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.cid:<4} {status:<5} {self.runtime_s:7.1f}s "
                f"(budget {self.budget_s:.0f}s)  {self.title}: {self.detail}")


def _timed(cid, title, budget_s, fn) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail, values = fn()
    dt = time.perf_counter() - t0
    return CriterionResult(cid=cid, title=title, passed=bool(passed),
                           detail=detail, runtime_s=dt, budget_s=budget_s,
                           values=values)


# ---------------------------------------------------------------------------
# cached heavy intermediates
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def ou_cos_pair() -> ErgodicPair:
    model = get_benchmark("ou_cos")
    return vanishing_discount(
        model, betas=(0.4, 0.2, 0.1, 0.05), probes=probe_grid_for("ou_cos"),
        sim=SimConfig(n_particles=4096, dt=1e-2, replicas=16),
        stream=RngStream(SEED, (5,)), truncation_frac=1e-4, probe_replicas=8)


@lru_cache(maxsize=None)
def mf_ou_cos_pair() -> ErgodicPair:
    model = get_benchmark("mf_ou_cos")
    return vanishing_discount(
        model, betas=(0.4, 0.2, 0.1, 0.05), probes=None,
        sim=SimConfig(n_particles=4096, dt=1e-2, replicas=16),
        stream=RngStream(SEED, (6,)), truncation_frac=1e-4)


@lru_cache(maxsize=None)
def tanh_pair() -> ErgodicPair:
    # the slow mean-relaxation of this benchmark leaves visible curvature in
    # beta * v^beta, so the intercept refit is quadratic here
    model = get_benchmark("tanh_drive")
    return vanishing_discount(
        model, betas=(0.4, 0.2, 0.1, 0.05), probes=probe_grid_for("tanh_drive"),
        sim=SimConfig(n_particles=2048, dt=1e-2, replicas=8),
        stream=RngStream(SEED, (7,)), truncation_frac=1e-4, fit="quadratic")


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------

def criterion_1() -> CriterionResult:
    def run():
        gen = np.random.default_rng(SEED)
        worst = 0.0
        for _ in range(100):
            B = -gen.uniform(0.5, 4.0)
            S = gen.uniform(0.0, 1.0)
            Bbar = gen.uniform(-0.5, 0.5)
            Sbar = gen.uniform(0.0, 0.5)
            model = ModelSpec.affine(dim=1, B=B, Bbar=Bbar, sigma0=1.0, S=S,
                                     Sbar=Sbar,
                                     reward_x=bounded_function("cos"),
                                     action_set=ActionSet.singleton())
            c = lipschitz_constants(model)
            rep = dissipativity_margin(model)
            expected = (-(B + 0.5 * S * S)
                        - (c.L_bmu + c.L_sx * c.L_smu + 0.5 * c.L_smu ** 2))
            rel = abs(rep.eta - expected) / max(abs(expected), 1e-300)
            worst = max(worst, rel)
        return worst <= 1e-12, f"worst relative error {worst:.2e} <= 1e-12", \
            {"worst_rel": worst}

    return _timed("C1", "dissipativity arithmetic", 1.0, run)


def criterion_2() -> CriterionResult:
    def run():
        model = get_benchmark("mf_ou_contract")
        pol = ConstantPolicy(model.action_set, np.array([0.0]))
        stream = RngStream(SEED, (2,))
        ens_a = sample_initial(InitialLaw.gaussian(0.0, 1.0), 4096,
                               stream.child(0))
        ens_b = Ensemble(ens_a.positions + 1.0)   # unit mean-square gap
        curve = synchronous_coupling_gap(model, pol, ens_a, ens_b, T=3.0,
                                         dt=1e-2, stream=stream.child(1))
        bound = np.exp(-2.0 * 1.0 * curve.times) * 1.2
        worst = float(np.max(curve.mean_sq_gap / bound))
        return worst <= 1.0, f"max gap/bound ratio {worst:.3f} <= 1", \
            {"worst_ratio": worst, "eta": curve.eta}

    return _timed("C2", "synchronous-coupling contraction", 30.0, run)


def criterion_3() -> CriterionResult:
    def run():
        model = get_benchmark("mf_ou_contract")
        pol = ConstantPolicy(model.action_set, np.array([0.0]))
        stream = RngStream(SEED, (3,))
        ens0 = sample_initial(InitialLaw.point(0.0), 4096, stream.child(0))
        curve = second_moment_curve(model, pol, ens0, T=20.0, dt=1e-2,
                                    stream=stream.child(1), slack=0.25)
        worst = float(np.max(curve.second_moment)) / (curve.K * 1.25)
        return (not curve.breached), \
            f"max second moment {worst:.3f} of the K*1.25 ceiling (K={curve.K:.3g})", \
            {"worst_frac": worst, "K": curve.K}

    return _timed("C3", "second-moment ceiling", 30.0, run)


def criterion_4() -> CriterionResult:
    def run():
        model = get_benchmark("const_reward")
        sim = SimConfig(n_particles=64, dt=1e-2, replicas=4)
        stream = RngStream(SEED, (4,))
        pair = vanishing_discount(model, probes=None, sim=sim,
                                  stream=stream.child(0), truncation_frac=1e-4)
        pol = ConstantPolicy(model.action_set, np.array([0.0]))
        lra = long_run_average(model, pol, InitialLaw.point(0.0), T=20.0,
                               burn_in=2.0, sim=sim, stream=stream.child(1))
        vals = []
        for T in (5.0, 10.0, 20.0):
            v = _fh_values(model, pol, InitialLaw.point(0.0), T,
                           TerminalReward("zero"), stream.child(2), sim)
            vals.append(float(np.mean(v)))
        A = np.vstack([np.ones(3), [5.0, 10.0, 20.0]]).T
        slope = float(np.linalg.lstsq(A, np.asarray(vals), rcond=None)[0][1])
        errs = {"beta_route": abs(pair.lambda_hat - 1.0),
                "horizon_route": abs(slope - 1.0),
                "average_route": abs(lra.estimate - 1.0)}
        worst = max(errs.values())
        return worst <= 1e-3, \
            "max |lambda - 1| over routes " + f"{worst:.2e} <= 1e-3", errs

    return _timed("C4", "trivial ergodic value, three routes", 60.0, run)


def criterion_5() -> CriterionResult:
    def run():
        pair = ou_cos_pair()
        rel = abs(pair.lambda_hat - LAMBDA_OU_COS) / LAMBDA_OU_COS
        return rel <= 0.02, \
            f"lambda {pair.lambda_hat:.5f} vs {LAMBDA_OU_COS:.5f} (rel {rel:.3%})", \
            {"lambda_hat": pair.lambda_hat, "rel": rel,
             "stderr": pair.lambda_stderr}

    return _timed("C5", "uncontrolled Gaussian oracle (ou_cos)", 300.0, run)


def criterion_6() -> CriterionResult:
    def run():
        pair = mf_ou_cos_pair()
        rel = abs(pair.lambda_hat - LAMBDA_MF_OU_COS) / LAMBDA_MF_OU_COS
        return rel <= 0.02, \
            f"lambda {pair.lambda_hat:.5f} vs {LAMBDA_MF_OU_COS:.5f} (rel {rel:.3%})", \
            {"lambda_hat": pair.lambda_hat, "rel": rel,
             "stderr": pair.lambda_stderr}

    return _timed("C6", "mean-field oracle (mf_ou_cos)", 300.0, run)


@lru_cache(maxsize=None)
def tanh_tauberian():
    model = get_benchmark("tanh_drive")
    return abelian_tauberian_check(
        model,
        laws=[("delta0", InitialLaw.point(0.0)),
              ("gauss21", InitialLaw.gaussian(2.0, 1.0))],
        T_schedule=(10.0, 20.0, 40.0),
        sim=SimConfig(n_particles=2048, dt=1e-2, replicas=8),
        stream=RngStream(SEED, (8,)), truncation_frac=1e-4,
        avg_T=50.0, avg_burn=10.0)


def criterion_7() -> CriterionResult:
    def run():
        rep = tanh_tauberian()
        checks = {}
        ok = True
        for lid, routes in rep.routes.items():
            ests = {k: v[0] for k, v in routes.items()}
            pair_gap = (max(ests.values()) - min(ests.values())) / LAMBDA_TANH
            oracle_gap = max(abs(v - LAMBDA_TANH) for v in ests.values()) \
                / LAMBDA_TANH
            checks[lid] = {"pairwise_rel": pair_gap, "oracle_rel": oracle_gap,
                           **ests}
            ok = ok and pair_gap <= 0.03 and oracle_gap <= 0.03
        cross_ok = rep.cross_law_gap <= max(3.0 * rep.cross_law_stderr, 1e-12)
        checks["cross_law"] = {"gap": rep.cross_law_gap,
                               "stderr": rep.cross_law_stderr}
        detail = (f"pairwise/oracle gaps <= 3%: {ok}; cross-law gap "
                  f"{rep.cross_law_gap:.4f} vs 3*se={3 * rep.cross_law_stderr:.4f}")
        return ok and cross_ok, detail, checks

    return _timed("C7", "Abelian-Tauberian agreement (tanh_drive)", 600.0, run)


def criterion_8() -> CriterionResult:
    def run():
        sim = SimConfig(n_particles=2048, dt=1e-2, replicas=16)
        res_ou = fixed_point_residual(
            get_benchmark("ou_cos"), ou_cos_pair(),
            InitialLaw.gaussian(1.0, 0.36), T=2.0, sim=sim,
            stream=RngStream(SEED, (9,)))
        res_th = fixed_point_residual(
            get_benchmark("tanh_drive"), tanh_pair(),
            InitialLaw.gaussian(0.5, 0.25), T=2.0,
            sim=SimConfig(n_particles=2048, dt=1e-2, replicas=8),
            stream=RngStream(SEED, (10,)))
        ok = res_ou.relative <= 0.05 and res_th.relative <= 0.07
        detail = (f"ou_cos rel {res_ou.relative:.3%} <= 5%, "
                  f"tanh_drive rel {res_th.relative:.3%} <= 7%")
        return ok, detail, {"ou_cos": res_ou.to_json(),
                            "tanh_drive": res_th.to_json()}

    return _timed("C8", "fixed-point relation", 300.0, run)


def criterion_9() -> CriterionResult:
    def run():
        model = get_benchmark("ou_cos")
        pair = ou_cos_pair()
        mu = InitialLaw.gaussian(1.0, 0.36)
        phi_mu, _ = pair.phi_at(mu)
        pol = ConstantPolicy(model.action_set, np.array([0.0]))
        sim = SimConfig(n_particles=2048, dt=1e-2, replicas=16)
        stream = RngStream(SEED, (11,))
        D = {}
        for T in (2.0, 5.0, 10.0):
            vals = _fh_values(model, pol, mu, T, TerminalReward("zero"),
                              stream, sim)
            D[T] = abs(float(np.mean(vals)) - phi_mu - pair.lambda_hat * T)
        ratio = max(D.values()) / D[2.0]
        return ratio <= 1.5, \
            f"max envelope {max(D.values()):.4f} within 1.5x of D(2)={D[2.0]:.4f}", \
            {"D": {str(k): v for k, v in D.items()}, "ratio": ratio}

    return _timed("C9", "finite-horizon envelope boundedness", 600.0, run)


def criterion_10() -> CriterionResult:
    def run():
        gen = np.random.default_rng(SEED + 10)
        worst = 0.0
        for trial in range(3):
            ens = Ensemble(gen.standard_normal((512, 1)) * 1.5 + 0.3)
            for h in (1e-3, 2e-4, 1e-5):
                f1 = lions_derivative(second_moment_functional(), ens, h)
                x = ens.positions.ravel()
                worst = max(worst,
                            float(np.max(np.abs(f1.dmu.ravel() - 2 * x))),
                            float(np.max(np.abs(f1.dxdmu.ravel() - 2.0))))
                f2 = lions_derivative(mean_functional(), ens, h)
                worst = max(worst,
                            float(np.max(np.abs(f2.dmu.ravel() - 1.0))),
                            float(np.max(np.abs(f2.dxdmu.ravel()))))
        return worst <= 1e-10, f"max |field - closed form| {worst:.2e} <= 1e-10", \
            {"worst": worst}

    return _timed("C10", "measure-derivative quadratic exactness", 1.0, run)


def criterion_11() -> CriterionResult:
    def run():
        model = get_benchmark("ou_cos")
        pair = ou_cos_pair()
        oracle = PoissonBiasOracle(model)
        source = oracle.derivative_source()
        gen_stream = RngStream(SEED, (12,))
        probe_laws = [("p0", InitialLaw.point(0.0)),
                      ("p1", InitialLaw.gaussian(1.0, 0.25)),
                      ("p2", InitialLaw.gaussian(-1.0, 1.0)),
                      ("p3", InitialLaw.gaussian(0.0, 1.0)),
                      ("p4", InitialLaw.gaussian(2.0, 0.25))]
        probes = {pid: sample_initial(law, 2048, gen_stream.child(i))
                  for i, (pid, law) in enumerate(probe_laws)}
        rep = hjb_residual(model, pair.lambda_hat, source, probes)
        rel = rep.max_abs / abs(pair.lambda_hat)
        return rel <= 0.05, \
            f"max residual {rep.max_abs:.4f} = {rel:.3%} of lambda <= 5%", \
            {"rows": rep.rows, "rel": rel}

    return _timed("C11", "ergodic HJB residual with analytic oracle", 120.0, run)


def criterion_12() -> CriterionResult:
    def run():
        model = get_benchmark("tanh_drive")
        pair = tanh_pair()
        a_star = np.atleast_1d(pair.best_policy.a)
        frozen = PoissonBiasOracle(model, action=a_star)
        feedback = greedy_feedback(model, frozen.derivative_source(),
                                   x_centers=np.linspace(-4.0, 4.0, 81),
                                   m_centers=np.linspace(-1.5, 1.5, 13),
                                   sd_ref=math.sqrt(0.5))
        phi_fn = PhiOnEnsembles(pair.phi_interpolant())
        sim = SimConfig(n_particles=2048, dt=1e-2, replicas=8)
        stream = RngStream(SEED, (13,))
        rep = verification_run(model, feedback, InitialLaw.point(0.0),
                               pair.lambda_hat, phi_fn, T=40.0, burn_in=8.0,
                               sim=sim, stream=stream.child(0),
                               lambda_ref_stderr=pair.lambda_stderr)
        wrong = long_run_average(model,
                                 ConstantPolicy(model.action_set, np.array([0.0])),
                                 InitialLaw.point(0.0), T=40.0, burn_in=8.0,
                                 sim=sim, stream=stream.child(1))
        rel = abs(rep.average - LAMBDA_TANH) / LAMBDA_TANH
        shortfall = rep.average - wrong.estimate
        se_gap = math.hypot(rep.average_stderr, wrong.stderr)
        drift_ok = abs(rep.drift_slope) <= 3.0 * rep.drift_stderr
        ok = rel <= 0.03 and shortfall > 3.0 * se_gap and drift_ok
        detail = (f"closed-loop {rep.average:.4f} (rel {rel:.3%}), wrong-policy "
                  f"shortfall {shortfall:.3f} > 3se={3 * se_gap:.3f}, drift "
                  f"{rep.drift_slope:.2e} vs 3se={3 * rep.drift_stderr:.2e}")
        return ok, detail, {"report": rep.to_json(), "wrong": wrong.estimate,
                            "rel": rel}

    return _timed("C12", "verification theorem (greedy feedback)", 300.0, run)


def criterion_13() -> CriterionResult:
    def run():
        checks = {}
        model = get_benchmark("ou_cos")
        sim = SimConfig(n_particles=256, dt=1e-2, replicas=3)
        pol = ConstantPolicy(model.action_set, np.array([0.0]))

        def twice(fn):
            return fn(), fn()

        a, b = twice(lambda: discounted_reward(
            model, pol, InitialLaw.gaussian(0.0, 1.0), 0.4,
            RngStream(SEED, (14,)), sim).estimate)
        checks["discounted"] = a == b

        th = get_benchmark("tanh_drive")
        a, b = twice(lambda: long_run_average(
            th, ConstantPolicy(th.action_set, np.array([1.0])),
            InitialLaw.point(0.0), 5.0, 1.0, sim, RngStream(SEED, (15,))).estimate)
        checks["long_run"] = a == b

        a, b = twice(lambda: vanishing_discount(
            get_benchmark("const_reward"), probes=None,
            sim=SimConfig(n_particles=64, dt=1e-2, replicas=2),
            stream=RngStream(SEED, (16,))).lambda_hat)
        checks["vanishing_discount"] = a == b

        mf = get_benchmark("mf_ou_contract")
        def couple():
            s = RngStream(SEED, (17,))
            e0 = sample_initial(InitialLaw.gaussian(0.0, 1.0), 256, s.child(0))
            e1 = Ensemble(e0.positions + 1.0)
            return synchronous_coupling_gap(mf, pol, e0, e1, 1.0, 1e-2,
                                            s.child(1)).mean_sq_gap[-1]
        a, b = twice(couple)
        checks["coupling"] = a == b

        a, b = twice(lambda: finite_horizon_value(
            th, InitialLaw.point(0.0), 2.0, TerminalReward("zero"),
            PolicyFamily("constant", th.action_set), OptimizerConfig(),
            sim, RngStream(SEED, (18,))).estimate)
        checks["finite_horizon"] = a == b

        # thread-count invariance: per-replica streams make the aggregation
        # independent of the executor
        v1 = long_run_average(th, ConstantPolicy(th.action_set, np.array([1.0])),
                              InitialLaw.point(0.0), 5.0, 1.0,
                              sim.replace(threads=1), RngStream(SEED, (19,)))
        v4 = long_run_average(th, ConstantPolicy(th.action_set, np.array([1.0])),
                              InitialLaw.point(0.0), 5.0, 1.0,
                              sim.replace(threads=4), RngStream(SEED, (19,)))
        checks["threads"] = v1.estimate == v4.estimate

        neg = dissipativity_margin(get_benchmark("expanding_drift_negative_control"))
        checks["negative_control"] = (neg.eta <= 0.0) and (not neg.passed)

        ok = all(checks.values())
        bad = [k for k, v in checks.items() if not v]
        return ok, ("all pipelines bitwise-reproducible, negative control fails"
                    if ok else f"failed: {bad}"), checks

    return _timed("C13", "determinism and negative control", 120.0, run)


CRITERIA: List[Callable[[], CriterionResult]] = [
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
    criterion_6, criterion_7, criterion_8, criterion_9, criterion_10,
    criterion_11, criterion_12, criterion_13,
]

TRIVIAL_SUITE = [criterion_1, criterion_4, criterion_10, criterion_13]


def run_suite(suite: str = "full") -> List[CriterionResult]:
    fns = TRIVIAL_SUITE if suite == "trivial" else CRITERIA
    return [fn() for fn in fns]
