"""Monte Carlo value estimation for the discounted and finite-horizon problems.

The discounted value is estimated by truncating the horizon where the tail
bound M_f e^{-beta T} / beta drops below a configured fraction of the trivial
bound M_f / beta, then integrating e^{-beta t} fbar(t) with the trapezoid rule
on the Euler grid.  Replicas carry independent noise streams and give the
standard error; the initial-condition stream is kept separate from the noise
stream so that runs from different initial laws share noise increments
(common random numbers), which makes value differences low-variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError
from .model import ModelSpec, lipschitz_constants
from .particle import (Ensemble, InitialLaw, RngStream, SimConfig,
                       map_replicas, sample_initial, simulate_reward_path)
from .policy import OptimizerConfig, PolicyFamily, optimize_policy

__all__ = [
    "ValueEstimate", "DiscountedValue", "FiniteHorizonValue", "TerminalReward",
    "discounted_reward", "value_discounted", "finite_horizon_value",
    "dpp_residual", "truncation_horizon", "discounted_reward_multi",
    "reward_paths", "discounted_from_paths",
]

InitLike = Union[InitialLaw, Ensemble]


@dataclass
class ValueEstimate:
    estimate: float
    stderr: float
    per_replica: np.ndarray
    truncation_T: float = 0.0
    truncation_bound: float = 0.0

    def __iter__(self):
        yield self.estimate
        yield self.stderr


def _initial(init: InitLike, n: int, stream: RngStream) -> Ensemble:
    if isinstance(init, Ensemble):
        if init.n == n:
            return Ensemble(init.positions.copy(), 0.0)
        return _resample_cloud(init, n, stream)
    return sample_initial(init, n, stream)


def _resample_cloud(ens: Ensemble, n: int, stream: RngStream) -> Ensemble:
    gen = stream.generator()
    idx = gen.integers(0, ens.n, size=n)
    return Ensemble(ens.positions[idx].copy(), 0.0)


def truncation_horizon(beta: float, dt: float, frac: float) -> float:
    """Smallest grid-aligned T with e^{-beta T} <= frac."""
    if beta <= 0:
        raise ConfigError("discount rate beta must be > 0")
    if not (0 < frac < 1):
        raise ConfigError("truncation fraction must lie in (0, 1)")
    steps = max(2, math.ceil(math.log(1.0 / frac) / (beta * dt)))
    return steps * dt


def reward_paths(model: ModelSpec, policy, init: InitLike, T: float,
                 stream: RngStream, sim: SimConfig):
    """Per-replica particle-mean reward paths: (times, fbar matrix (R, n+1)).

    Replica r draws its noise from stream.child(r).child(0) and its initial
    cloud from stream.child(r).child(1); runs sharing a stream therefore share
    noise increments step for step (common random numbers) regardless of the
    initial law or the horizon.
    """
    def one(rep_stream: RngStream) -> np.ndarray:
        ens0 = _initial(init, sim.n_particles, rep_stream.child(1))
        rec = simulate_reward_path(model, policy, ens0, T, sim.dt,
                                   rep_stream.child(0))
        return rec.fbar

    rows = map_replicas(one, [stream.child(r) for r in range(sim.replicas)],
                        sim.threads)
    n = round(T / sim.dt)
    return np.arange(n + 1) * sim.dt, np.asarray(rows)


def discounted_from_paths(times: np.ndarray, fbar: np.ndarray,
                          betas: Sequence[float], dt: float,
                          truncation_frac: float) -> np.ndarray:
    """Trapezoid integrals of e^{-beta t} fbar on each beta's truncated prefix."""
    out = np.empty((fbar.shape[0], len(betas)))
    for bi, b in enumerate(betas):
        n_cut = round(truncation_horizon(b, dt, truncation_frac) / dt)
        if n_cut > len(times) - 1:
            raise ConfigError("paths are shorter than the truncation horizon")
        t = times[: n_cut + 1]
        w = np.exp(-b * t)
        out[:, bi] = np.trapezoid(w * fbar[:, : n_cut + 1], t, axis=1)
    return out


def discounted_reward_multi(model: ModelSpec, policy, init: InitLike,
                            betas: Sequence[float], stream: RngStream,
                            sim: SimConfig,
                            truncation_frac: float = 1e-3) -> np.ndarray:
    """Per-replica discounted reward for several discount rates at once.

    One trajectory per replica is integrated to the longest horizon and each
    beta is integrated on its own truncated prefix, so the estimate for a
    given beta is bitwise what a single-beta run with the same stream returns.
    """
    betas = [float(b) for b in betas]
    if any(b <= 0 for b in betas):
        raise ConfigError("discount rate beta must be > 0")
    T_max = max(truncation_horizon(b, sim.dt, truncation_frac) for b in betas)
    times, fbar = reward_paths(model, policy, init, T_max, stream, sim)
    return discounted_from_paths(times, fbar, betas, sim.dt, truncation_frac)


def discounted_reward(model: ModelSpec, policy, init: InitLike, beta: float,
                      stream: RngStream, sim: SimConfig,
                      truncation_frac: float = 1e-3) -> ValueEstimate:
    """Infinite-horizon discounted reward under one fixed policy."""
    vals = discounted_reward_multi(model, policy, init, [beta], stream, sim,
                                   truncation_frac)[:, 0]
    T = truncation_horizon(beta, sim.dt, truncation_frac)
    M_f = lipschitz_constants(model).M_f
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return ValueEstimate(float(vals.mean()), se, vals, truncation_T=T,
                         truncation_bound=M_f * math.exp(-beta * T) / beta)


@dataclass
class DiscountedValue:
    beta: float
    estimate: float
    stderr: float
    truncation_T: float
    truncation_bound: float
    best_policy: object
    per_replica: np.ndarray = None

    def to_json(self) -> dict:
        from .policy import policy_to_json
        return {"beta": self.beta, "estimate": self.estimate,
                "stderr": self.stderr, "truncation_T": self.truncation_T,
                "truncation_bound": self.truncation_bound,
                "best_policy": policy_to_json(self.best_policy)}


def value_discounted(model: ModelSpec, mu0: InitLike, beta: float,
                     family: PolicyFamily, opt: OptimizerConfig,
                     sim: SimConfig, stream: RngStream,
                     truncation_frac: float = 1e-3) -> DiscountedValue:
    """In-family supremum of the discounted reward (a certified lower bound)."""

    def objective(params, s, scale=1):
        est = discounted_reward(model, family.build(params), mu0, beta, s,
                                sim.replace(replicas=sim.replicas * scale),
                                truncation_frac)
        return est.estimate, est.stderr

    res = optimize_policy(objective, family, opt, stream)
    T = truncation_horizon(beta, sim.dt, truncation_frac)
    M_f = lipschitz_constants(model).M_f
    return DiscountedValue(beta=beta, estimate=res.value, stderr=res.stderr,
                           truncation_T=T,
                           truncation_bound=M_f * math.exp(-beta * T) / beta,
                           best_policy=res.policy)


# ---------------------------------------------------------------------------
# finite horizon
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TerminalReward:
    """Terminal payoff g: zero, a library function of x averaged over the
    ensemble, or a function of the terminal empirical measure (phi tables)."""

    kind: str = "zero"             # "zero" | "function" | "measure"
    fn: Optional[Callable] = None

    def __call__(self, ens: Ensemble) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "function":
            return float(np.mean(self.fn(ens.positions).sum(axis=-1)))
        return float(self.fn(ens.positions))


@dataclass
class FiniteHorizonValue:
    horizon: float
    estimate: float
    stderr: float
    best_policy: object
    per_replica: np.ndarray = None

    def to_json(self) -> dict:
        from .policy import policy_to_json
        return {"horizon": self.horizon, "estimate": self.estimate,
                "stderr": self.stderr,
                "best_policy": policy_to_json(self.best_policy)}


def _finite_horizon_values(model: ModelSpec, policy, init: InitLike, T: float,
                           g: TerminalReward, stream: RngStream,
                           sim: SimConfig) -> np.ndarray:
    def one(rep_stream: RngStream) -> float:
        ens0 = _initial(init, sim.n_particles, rep_stream.child(1))
        rec = simulate_reward_path(model, policy, ens0, T, sim.dt,
                                   rep_stream.child(0))
        return float(np.trapezoid(rec.fbar, rec.times)) + g(rec.final)

    return np.asarray(map_replicas(
        one, [stream.child(r) for r in range(sim.replicas)], sim.threads))


def finite_horizon_value(model: ModelSpec, mu0: InitLike, T: float,
                         g: TerminalReward, family: PolicyFamily,
                         opt: OptimizerConfig, sim: SimConfig,
                         stream: RngStream) -> FiniteHorizonValue:
    """sup over the (time-windowed) family of E[int_0^T f dt + g(X_T, mu_T)]."""
    if T <= 0:
        raise ConfigError("horizon T must be > 0")
    fam = family.with_horizon(T) if family.windows > 1 else family

    def objective(params, s, scale=1):
        vals = _finite_horizon_values(model, fam.build(params), mu0, T, g, s,
                                      sim.replace(replicas=sim.replicas * scale))
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return float(vals.mean()), se

    res = optimize_policy(objective, fam, opt, stream)
    return FiniteHorizonValue(horizon=T, estimate=res.value, stderr=res.stderr,
                              best_policy=res.policy)


# ---------------------------------------------------------------------------
# dynamic programming residual
# ---------------------------------------------------------------------------

@dataclass
class DppResidual:
    lhs: float
    rhs: float
    residual: float
    stderr: float
    relative: float                # residual / (M_f / beta)

    def to_json(self) -> dict:
        return self.__dict__.copy()


def dpp_residual(model: ModelSpec, mu0: InitLike, beta: float, t_split: float,
                 family: PolicyFamily, opt: OptimizerConfig, sim: SimConfig,
                 stream: RngStream, truncation_frac: float = 1e-3) -> DppResidual:
    """Gap between v^beta(mu0) and its one-step dynamic-programming unrolling.

    The inner value at the split time restarts fresh simulations from the
    terminal particle cloud itself; the same policy family is used on both
    sides so the residual measures consistency within the class.
    """
    if t_split <= 0:
        raise ConfigError("t_split must be > 0")
    lhs = value_discounted(model, mu0, beta, family, opt, sim, stream.child(0),
                           truncation_frac)

    inner_sim = sim.replace(replicas=max(2, sim.replicas // 2))

    def objective(params, s, scale=1):
        pol = family.build(params)
        reps = sim.replicas * scale
        vals = np.empty(reps)
        for r in range(reps):
            rs = s.child(r)
            ens0 = _initial(mu0, sim.n_particles, rs.child(1))
            rec = simulate_reward_path(model, pol, ens0, t_split, sim.dt,
                                       rs.child(0))
            head = float(np.trapezoid(np.exp(-beta * rec.times) * rec.fbar,
                                      rec.times))
            tail = value_discounted(model, rec.final, beta, family, opt,
                                    inner_sim, rs.child(2), truncation_frac)
            vals[r] = head + math.exp(-beta * t_split) * tail.estimate
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        return float(vals.mean()), se

    res = optimize_policy(objective, family, opt, stream.child(1))
    M_f = lipschitz_constants(model).M_f
    resid = abs(lhs.estimate - res.value)
    se = math.hypot(lhs.stderr, res.stderr)
    return DppResidual(lhs=lhs.estimate, rhs=res.value, residual=resid,
                       stderr=se, relative=resid / (M_f / beta) if M_f else 0.0)
