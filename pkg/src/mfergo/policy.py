"""Feedback policy families and a derivative-free parameter search.

Policies map (t, x, measure-summary) to an action and always return elements
of the model's action set: projection onto the set is part of evaluation.
The families are small on purpose; benchmarks are chosen so that the optimum
lies inside them (constant or affine), which turns the search into a certified
lower bound on the value.

``optimize_policy`` runs a cross-entropy method over the flat parameter
vector, or exhaustive enumeration when the family is finite.  The reported
best value is re-evaluated with a fresh seed and a larger sample to strip
selection bias.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, OptimizerError
from .model import ActionSet
from .particle import RngStream

logger = logging.getLogger(__name__)

__all__ = [
    "ConstantPolicy", "AffineClampedPolicy", "PiecewisePolicy", "TabularPolicy",
    "PolicyFamily", "OptimizerConfig", "OptimizeResult",
    "optimize_policy", "policy_to_json", "policy_from_json", "evaluate",
]


# ---------------------------------------------------------------------------
# policy families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantPolicy:
    action_set: ActionSet
    a: np.ndarray                  # (k,)

    def __post_init__(self):
        row = self.action_set.project(
            np.atleast_2d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "_row", row)

    def actions(self, t, X, mean, sd) -> np.ndarray:
        return self._row           # (1, k); broadcasts per particle

    def params(self) -> np.ndarray:
        return np.asarray(self.a, dtype=float).ravel()


@dataclass(frozen=True)
class AffineClampedPolicy:
    """a = project(k0 + k1 x + k2 m) with k1: (k, d), k2: (k, d)."""

    action_set: ActionSet
    k0: np.ndarray
    k1: np.ndarray
    k2: np.ndarray

    def actions(self, t, X, mean, sd) -> np.ndarray:
        raw = self.k0 + X @ self.k1.T + (np.atleast_1d(mean) @ self.k2.T)
        return self.action_set.project(raw)

    def params(self) -> np.ndarray:
        return np.concatenate([self.k0.ravel(), self.k1.ravel(), self.k2.ravel()])


@dataclass(frozen=True)
class PiecewisePolicy:
    """Constant-in-time switching between sub-policies at the breakpoints."""

    action_set: ActionSet
    breaks: tuple                  # increasing interior switch times
    parts: tuple                   # len(breaks) + 1 sub-policies

    def actions(self, t, X, mean, sd) -> np.ndarray:
        idx = int(np.searchsorted(np.asarray(self.breaks), t, side="right"))
        return self.parts[idx].actions(t, X, mean, sd)


@dataclass(frozen=True)
class TabularPolicy:
    """Nearest-cell lookup on an (x-bin, mean-bin) grid with saturating edges."""

    action_set: ActionSet
    x_centers: np.ndarray          # (nx,)
    m_centers: np.ndarray          # (nm,)
    table: np.ndarray              # (nx, nm, k)

    def actions(self, t, X, mean, sd) -> np.ndarray:
        xi = np.clip(np.searchsorted(
            0.5 * (self.x_centers[1:] + self.x_centers[:-1]), X[:, 0]),
            0, len(self.x_centers) - 1) if len(self.x_centers) > 1 else \
            np.zeros(X.shape[0], dtype=int)
        m0 = float(np.atleast_1d(mean)[0])
        if len(self.m_centers) > 1:
            mi = int(np.clip(np.searchsorted(
                0.5 * (self.m_centers[1:] + self.m_centers[:-1]), m0),
                0, len(self.m_centers) - 1))
        else:
            mi = 0
        return self.action_set.project(self.table[xi, mi])


def evaluate(policy, t: float, x, m, sd: float = 0.0) -> np.ndarray:
    """Single-point policy evaluation; returns an element of the action set."""
    X = np.asarray(x, dtype=float).reshape(1, -1)
    return policy.actions(t, X, np.atleast_1d(np.asarray(m, float)), sd)[0]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def policy_to_json(p) -> dict:
    if isinstance(p, ConstantPolicy):
        return {"family": "constant", "a": np.asarray(p.a).tolist(),
                "action_set": p.action_set.to_json()}
    if isinstance(p, AffineClampedPolicy):
        return {"family": "affine", "k0": p.k0.tolist(), "k1": p.k1.tolist(),
                "k2": p.k2.tolist(), "action_set": p.action_set.to_json()}
    if isinstance(p, PiecewisePolicy):
        return {"family": "piecewise", "breaks": list(p.breaks),
                "parts": [policy_to_json(q) for q in p.parts],
                "action_set": p.action_set.to_json()}
    if isinstance(p, TabularPolicy):
        return {"family": "tabular", "x_centers": p.x_centers.tolist(),
                "m_centers": p.m_centers.tolist(), "table": p.table.tolist(),
                "action_set": p.action_set.to_json()}
    raise ConfigError(f"cannot serialize policy {type(p).__name__}")


def policy_from_json(d: dict):
    aset = ActionSet.from_json(d["action_set"])
    fam = d["family"]
    if fam == "constant":
        return ConstantPolicy(aset, np.asarray(d["a"], dtype=float))
    if fam == "affine":
        return AffineClampedPolicy(aset, np.asarray(d["k0"], float),
                                   np.asarray(d["k1"], float),
                                   np.asarray(d["k2"], float))
    if fam == "piecewise":
        return PiecewisePolicy(aset, tuple(d["breaks"]),
                               tuple(policy_from_json(q) for q in d["parts"]))
    if fam == "tabular":
        return TabularPolicy(aset, np.asarray(d["x_centers"], float),
                             np.asarray(d["m_centers"], float),
                             np.asarray(d["table"], float))
    raise ConfigError(f"unknown policy family {fam!r}")


# ---------------------------------------------------------------------------
# family descriptors for the optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyFamily:
    """Parametric family descriptor: flat params -> Policy.

    kind "constant": params are the k action coordinates (per time window).
    kind "affine":   params are (k0, k1, k2) flattened (per time window).
    windows > 1 splits [0, horizon) into equal windows, each with its own
    parameter block (needed by finite-horizon problems near the terminal).
    """

    kind: str
    action_set: ActionSet
    windows: int = 1
    horizon: Optional[float] = None
    state_dim: int = 1
    init_spread: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "affine"):
            raise ConfigError(f"unknown policy family kind {self.kind!r}")
        if self.windows > 1 and self.horizon is None:
            raise ConfigError("time-windowed family needs a horizon")

    def with_horizon(self, T: float) -> "PolicyFamily":
        from dataclasses import replace
        return replace(self, horizon=T)

    @property
    def block_dim(self) -> int:
        k, d = self.action_set.dim, self.state_dim
        return k if self.kind == "constant" else k * (1 + 2 * d)

    @property
    def param_dim(self) -> int:
        return self.block_dim * self.windows

    def _build_block(self, block: np.ndarray):
        k, d = self.action_set.dim, self.state_dim
        if self.kind == "constant":
            return ConstantPolicy(self.action_set, block[:k].copy())
        k0 = block[:k]
        k1 = block[k:k + k * d].reshape(k, d)
        k2 = block[k + k * d:].reshape(k, d)
        return AffineClampedPolicy(self.action_set, k0.copy(), k1.copy(), k2.copy())

    def build(self, params: np.ndarray):
        p = np.asarray(params, dtype=float).ravel()
        if p.size != self.param_dim:
            raise ConfigError(
                f"family expects {self.param_dim} params, got {p.size}")
        if self.windows == 1:
            return self._build_block(p)
        blocks = p.reshape(self.windows, self.block_dim)
        breaks = tuple(self.horizon * j / self.windows
                       for j in range(1, self.windows))
        parts = tuple(self._build_block(b) for b in blocks)
        return PiecewisePolicy(self.action_set, breaks, parts)

    def init_mean(self) -> np.ndarray:
        out = np.zeros(self.param_dim)
        if self.kind == "constant":
            center = self.action_set.grid().mean(axis=0)
            for w in range(self.windows):
                out[w * self.block_dim: w * self.block_dim + center.size] = center
        return out

    def enumerate(self, cap: int = 512) -> Optional[list]:
        """All parameter vectors when the family is a small finite set."""
        if self.kind != "constant" or self.action_set.kind != "finite":
            return None
        pts = self.action_set.grid()
        if len(pts) ** self.windows > cap:
            return None
        if self.windows == 1:
            return [p.copy() for p in pts]
        idx = np.indices((len(pts),) * self.windows).reshape(self.windows, -1).T
        return [np.concatenate([pts[i] for i in row]) for row in idx]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerConfig:
    population: int = 32
    elite_frac: float = 0.25
    iterations: int = 12
    init_spread: float = 1.0
    smoothing: float = 0.7
    restarts: int = 3
    reeval_scale: int = 4

    def __post_init__(self):
        if self.population < 8:
            raise ConfigError("population must be >= 8")
        if not (0.0 < self.elite_frac <= 0.5):
            raise ConfigError("elite_frac must lie in (0, 0.5]")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass
class OptimizeResult:
    params: np.ndarray
    policy: object
    value: float
    stderr: float
    history: list                  # (iteration, best_so_far) pairs
    n_evals: int


def optimize_policy(objective: Callable, family: PolicyFamily,
                    config: OptimizerConfig, stream: RngStream) -> OptimizeResult:
    """Maximize a stochastic objective over the family parameters.

    objective(params, stream, scale) must return (value, stderr); `scale`
    multiplies the sampling effort and is used for the final re-evaluation.
    Non-finite samples are discarded with a warning; if nothing evaluates
    finite the search fails with OptimizerError.
    """
    history: list = []
    n_evals = 0

    def run_eval(params, s, scale=1):
        nonlocal n_evals
        n_evals += 1
        v, se = objective(params, s, scale)
        return float(v), float(se)

    candidates = family.enumerate()
    if candidates is not None:
        best_p, best_v = None, -math.inf
        for i, cand in enumerate(candidates):
            v, _ = run_eval(cand, stream.child(0, i))
            if math.isfinite(v) and v > best_v:
                best_p, best_v = cand, v
            history.append((i, best_v))
        if best_p is None:
            raise OptimizerError("all enumerated candidates were non-finite")
        v, se = run_eval(best_p, stream.child(999_983), config.reeval_scale)
        return OptimizeResult(params=np.asarray(best_p, float),
                              policy=family.build(best_p), value=v, stderr=se,
                              history=history, n_evals=n_evals)

    dim = family.param_dim
    n_elite = max(1, int(round(config.population * config.elite_frac)))
    best_p, best_v = None, -math.inf
    for restart in range(max(1, config.restarts)):
        gen = stream.child(restart, 7).generator()
        mu = family.init_mean()
        sd = np.full(dim, config.init_spread * family.init_spread)
        for it in range(config.iterations):
            pop = mu + sd * gen.standard_normal((config.population, dim))
            vals = np.full(config.population, -np.inf)
            for j in range(config.population):
                v, _ = run_eval(pop[j], stream.child(restart, it, j))
                if math.isfinite(v):
                    vals[j] = v
                else:
                    logger.warning("discarding non-finite objective sample")
            if not np.any(np.isfinite(vals)):
                raise OptimizerError("entire population evaluated non-finite")
            order = np.argsort(vals)[::-1][:n_elite]
            elite = pop[order]
            mu = config.smoothing * elite.mean(axis=0) + (1 - config.smoothing) * mu
            sd = config.smoothing * elite.std(axis=0, ddof=0) \
                + (1 - config.smoothing) * sd
            sd = np.maximum(sd, 1e-8)
            if vals[order[0]] > best_v:
                best_v, best_p = float(vals[order[0]]), pop[order[0]].copy()
            history.append((restart * config.iterations + it, best_v))
    if best_p is None:
        raise OptimizerError("optimizer never saw a finite value")
    v, se = run_eval(best_p, stream.child(999_983), config.reeval_scale)
    return OptimizeResult(params=best_p, policy=family.build(best_p),
                          value=v, stderr=se, history=history, n_evals=n_evals)
