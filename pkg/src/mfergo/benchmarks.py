"""Shipped benchmark models with analytically known long-run behavior.

ou_cos          dX = -X dt + sqrt(2) dB, f = cos x; stationary N(0,1) so the
                long-run average is exp(-1/2).
mf_ou_cos       dX = (-X + 0.5 (m - X)) dt + sqrt(2) dB, f = cos x; stationary
                variance 2 / (2 * 1.5) = 2/3, long-run average exp(-1/3).
mf_ou_contract  same drift with sigma = 1; contraction/moment benchmark
                (gamma = 1.5, L_bmu = 0.5, eta = 1).
tanh_drive      dX = (-X + a) dt + dB, a in {-1, 0, 1}, f = tanh x; constant
                action a yields stationary N(a, 1/2), so a = +1 is optimal.
const_reward    dX = -X dt + dB, f = 1: every route must return 1.
expanding_drift dX = +X dt + dB: the dissipativity check must fail.
"""

from __future__ import annotations

import math

from .errors import ConfigError
from .ergodic import ProbeGrid
from .model import ActionCost, ActionSet, ModelSpec, bounded_function

__all__ = ["get_benchmark", "probe_grid_for", "BENCHMARK_NAMES"]


def _ou_cos() -> ModelSpec:
    return ModelSpec.affine(
        dim=1, B=-1.0, sigma0=math.sqrt(2.0),
        reward_x=bounded_function("cos"),
        action_set=ActionSet.singleton(0.0), name="ou_cos")


def _mf_ou_cos() -> ModelSpec:
    return ModelSpec.affine(
        dim=1, B=-1.5, Bbar=0.5, sigma0=math.sqrt(2.0),
        reward_x=bounded_function("cos"),
        action_set=ActionSet.singleton(0.0), name="mf_ou_cos")


def _mf_ou_contract() -> ModelSpec:
    return ModelSpec.affine(
        dim=1, B=-1.5, Bbar=0.5, sigma0=1.0,
        reward_x=bounded_function("cos"),
        action_set=ActionSet.singleton(0.0), name="mf_ou_contract")


def _tanh_drive() -> ModelSpec:
    return ModelSpec.affine(
        dim=1, B=-1.0, G=1.0, sigma0=1.0,
        reward_x=bounded_function("tanh"),
        action_cost=ActionCost("zero"),
        action_set=ActionSet.finite([-1.0, 0.0, 1.0]), name="tanh_drive")


def _const_reward() -> ModelSpec:
    return ModelSpec.affine(
        dim=1, B=-1.0, sigma0=1.0,
        reward_x=bounded_function("constant", value=1.0),
        action_set=ActionSet.singleton(0.0), name="const_reward")


def _expanding_drift() -> ModelSpec:
    return ModelSpec.affine(
        dim=1, B=1.0, sigma0=1.0,
        reward_x=bounded_function("cos"),
        action_set=ActionSet.singleton(0.0),
        name="expanding_drift_negative_control")


_BENCHMARKS = {
    "ou_cos": _ou_cos,
    "mf_ou_cos": _mf_ou_cos,
    "mf_ou_contract": _mf_ou_contract,
    "tanh_drive": _tanh_drive,
    "const_reward": _const_reward,
    "expanding_drift_negative_control": _expanding_drift,
}

BENCHMARK_NAMES = tuple(sorted(_BENCHMARKS))

_PROBE_GRIDS = {
    "ou_cos": ProbeGrid(means=(-1.0, 0.0, 1.0, 2.0), sds=(0.0, 0.6, 1.2)),
    "mf_ou_cos": ProbeGrid(means=(-1.0, 0.0, 1.0, 2.0), sds=(0.0, 0.6, 1.2)),
    "tanh_drive": ProbeGrid(means=(-0.5, 0.5, 1.5), sds=(0.0, 0.5, 1.0)),
}


def get_benchmark(name: str) -> ModelSpec:
    try:
        return _BENCHMARKS[name]()
    except KeyError:
        raise ConfigError(
            f"unknown benchmark {name!r}; available: {', '.join(BENCHMARK_NAMES)}")


def probe_grid_for(name: str) -> ProbeGrid:
    grid = _PROBE_GRIDS.get(name)
    if grid is None:
        raise ConfigError(f"benchmark {name!r} has no shipped probe grid")
    return grid
