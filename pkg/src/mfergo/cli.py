"""Configuration-driven command line front end.

    mfergo <subcommand> <config.{json,toml}> [--seed N] [--threads N]
           [--out-dir DIR]

Subcommands: check, simulate, couple, value-beta, value-T, ergodic-pair,
tauberian, fixed-point, hjb-residual, verify, bench, emit-plot-data.
Exit codes: 0 success, 1 config error, 2 numerical failure (blow-up),
3 acceptance failure in bench.

Every run appends a row to <out_dir>/ledger.csv keyed by the canonical
config hash; with --threads 1 a repeated run reproduces the estimate field
bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .benchmarks import probe_grid_for
from .config import ExperimentConfig, load_config_file, parse_config
from .ergodic import (ErgodicPair, PhiOnEnsembles, ProbeGrid,
                      abelian_tauberian_check, fixed_point_residual,
                      long_run_average, vanishing_discount, verification_run)
from .errors import BlowUpError, ConfigError
from .lions import PoissonBiasOracle, greedy_feedback, hjb_residual
from .model import dissipativity_margin, sample_check_dissipativity
from .particle import (Ensemble, InitialLaw, RngStream, TrajectoryObserver,
                       sample_initial, simulate_reward_path,
                       synchronous_coupling_gap)
from .policy import ConstantPolicy, OptimizerConfig, PolicyFamily
from .value import TerminalReward, finite_horizon_value, value_discounted


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _append_ledger(cfg: ExperimentConfig, operation: str, estimate: float,
                   stderr: float, runtime_s: float) -> None:
    path = cfg.out_dir / "ledger.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["timestamp", "benchmark", "operation", "seed",
                        "estimate", "stderr", "runtime_s", "config_hash"])
        w.writerow([datetime.now(timezone.utc).isoformat(), cfg.benchmark,
                    operation, cfg.seed, repr(float(estimate)),
                    repr(float(stderr)), f"{runtime_s:.3f}", cfg.hash])


def _family(cfg: ExperimentConfig) -> PolicyFamily:
    p = cfg.params.get("family", {})
    return PolicyFamily(kind=p.get("kind", "constant"),
                        action_set=cfg.model.action_set,
                        windows=int(p.get("windows", 1)),
                        state_dim=cfg.model.dim,
                        init_spread=float(p.get("init_spread", 1.0)))


def _optimizer(cfg: ExperimentConfig) -> OptimizerConfig:
    p = cfg.params.get("optimizer", {})
    return OptimizerConfig(**{k: p[k] for k in p}) if p else OptimizerConfig()


def _law(cfg: ExperimentConfig, key: str = "law", default=None) -> InitialLaw:
    d = cfg.params.get(key)
    if d is None:
        return default if default is not None else InitialLaw.point(0.0, cfg.model.dim)
    return InitialLaw.from_json(d)


def _probes(cfg: ExperimentConfig):
    p = cfg.params.get("probes")
    if p is None:
        try:
            return probe_grid_for(cfg.benchmark)
        except ConfigError:
            return None
    if p == "none":
        return None
    return ProbeGrid(means=tuple(p["means"]), sds=tuple(p["sds"]))


def _policy_for_run(cfg: ExperimentConfig):
    p = cfg.params.get("policy")
    if p is None:
        return ConstantPolicy(cfg.model.action_set,
                              cfg.model.action_set.grid()[0])
    from .policy import policy_from_json
    return policy_from_json(p)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_check(cfg: ExperimentConfig) -> int:
    rep = sample_check_dissipativity(
        cfg.model, n_samples=int(cfg.params.get("n_samples", 10_000)),
        particle_count=int(cfg.params.get("particle_count", 64)),
        seed=cfg.seed)
    _write_json(cfg.out_dir / "check.json", rep.to_json())
    print(rep.table())
    return 0


def cmd_simulate(cfg: ExperimentConfig) -> int:
    law = _law(cfg)
    pol = _policy_for_run(cfg)
    T = float(cfg.params.get("T", 10.0))
    stride = max(1, int(cfg.params.get("stride", 1)))
    stream = RngStream(cfg.seed)
    ens0 = sample_initial(law, cfg.sim.n_particles, stream.child(1))
    ref = cfg.params.get("w2_reference")
    obs = TrajectoryObserver(
        reference=None if ref is None else sample_initial(
            InitialLaw.from_json(ref), cfg.sim.n_particles,
            stream.child(2)).positions)

    def observe(t, X):
        e = Ensemble.__new__(Ensemble)
        e.positions, e.time = X, t
        obs(t, e)

    rec = simulate_reward_path(cfg.model, pol, ens0, T, cfg.sim.dt,
                               stream.child(0), observer=observe,
                               obs_stride=stride)
    running = np.concatenate(
        [[0.0], np.cumsum(0.5 * (rec.fbar[1:] + rec.fbar[:-1]) * cfg.sim.dt)])
    rows = [(t, m, m2, w2, running[j * stride])
            for j, (t, m, m2, w2) in enumerate(obs.rows)]
    _write_csv(cfg.out_dir / "trajectory.csv",
               ["time", "mean", "second_moment", "w2_to_ref", "running_reward"],
               rows)
    rep = dissipativity_margin(cfg.model)
    if rep.passed:
        m2_0 = rows[0][2]
        _write_csv(cfg.out_dir / "moment_curve.csv",
                   ["time", "second_moment", "ceiling"],
                   [(t, m2, m2_0 * np.exp(-rep.eta * t) + rep.K)
                    for t, _, m2, _, _ in rows])
    print(f"wrote {cfg.out_dir / 'trajectory.csv'} ({len(rows)} rows)")
    return 0


def cmd_couple(cfg: ExperimentConfig) -> int:
    law = _law(cfg, default=InitialLaw.gaussian(0.0, 1.0, cfg.model.dim))
    pol = _policy_for_run(cfg)
    T = float(cfg.params.get("T", 3.0))
    gap0 = float(cfg.params.get("initial_gap", 1.0))
    stream = RngStream(cfg.seed)
    ens_a = sample_initial(law, cfg.sim.n_particles, stream.child(1))
    ens_b = Ensemble(ens_a.positions + gap0)
    t0 = time.perf_counter()
    curve = synchronous_coupling_gap(cfg.model, pol, ens_a, ens_b, T,
                                     cfg.sim.dt, stream.child(0))
    _write_csv(cfg.out_dir / "gap_curve.csv",
               ["time", "mean_sq_gap", "envelope"], curve.rows())
    _append_ledger(cfg, "couple", curve.mean_sq_gap[-1], 0.0,
                   time.perf_counter() - t0)
    print(f"eta={curve.eta:.4g} breached={curve.breached(0.2)}")
    return 0


def cmd_value_beta(cfg: ExperimentConfig) -> int:
    beta = float(cfg.params.get("beta", 0.1))
    t0 = time.perf_counter()
    dv = value_discounted(cfg.model, _law(cfg), beta, _family(cfg),
                          _optimizer(cfg), cfg.sim, RngStream(cfg.seed),
                          float(cfg.params.get("truncation_frac", 1e-3)))
    _write_json(cfg.out_dir / "value_beta.json", dv.to_json())
    _append_ledger(cfg, "value-beta", dv.estimate, dv.stderr,
                   time.perf_counter() - t0)
    print(f"v^beta = {dv.estimate:.6f} +- {dv.stderr:.2e} "
          f"(truncated at T={dv.truncation_T:g})")
    return 0


def cmd_value_T(cfg: ExperimentConfig) -> int:
    T = float(cfg.params.get("T", 10.0))
    g = TerminalReward("zero")
    t0 = time.perf_counter()
    fh = finite_horizon_value(cfg.model, _law(cfg), T, g, _family(cfg),
                              _optimizer(cfg), cfg.sim, RngStream(cfg.seed))
    _write_json(cfg.out_dir / "value_T.json", fh.to_json())
    _append_ledger(cfg, "value-T", fh.estimate, fh.stderr,
                   time.perf_counter() - t0)
    print(f"v^T = {fh.estimate:.6f} +- {fh.stderr:.2e}")
    return 0


def cmd_ergodic_pair(cfg: ExperimentConfig) -> int:
    betas = tuple(cfg.params.get("betas", (0.4, 0.2, 0.1, 0.05)))
    t0 = time.perf_counter()
    pair = vanishing_discount(cfg.model, betas=betas, probes=_probes(cfg),
                              family=_family(cfg), opt=_optimizer(cfg),
                              sim=cfg.sim, stream=RngStream(cfg.seed),
                              truncation_frac=float(
                                  cfg.params.get("truncation_frac", 1e-4)))
    _write_json(cfg.out_dir / "ergodic_pair.json", pair.to_json())
    _append_ledger(cfg, "ergodic-pair", pair.lambda_hat, pair.lambda_stderr,
                   time.perf_counter() - t0)
    _write_csv(cfg.out_dir / "tauberian.csv", ["beta", "beta_v_beta", "stderr"],
               [(b, v, s) for b, v, s in pair.lambda_by_beta])
    for w in pair.warnings:
        print("warning:", w)
    print(f"lambda = {pair.lambda_hat:.6f} +- {pair.lambda_stderr:.2e}")
    return 0


def cmd_tauberian(cfg: ExperimentConfig) -> int:
    laws = [("law_a", _law(cfg, "law")),
            ("law_b", _law(cfg, "law_b",
                           InitialLaw.gaussian(2.0, 1.0, cfg.model.dim)))]
    t0 = time.perf_counter()
    rep = abelian_tauberian_check(
        cfg.model, laws, betas=tuple(cfg.params.get("betas", (0.4, 0.2, 0.1, 0.05))),
        T_schedule=tuple(cfg.params.get("T_schedule", (10.0, 20.0, 40.0))),
        family=_family(cfg), opt=_optimizer(cfg), sim=cfg.sim,
        stream=RngStream(cfg.seed))
    _write_json(cfg.out_dir / "tauberian.json", rep.to_json())
    est = rep.routes["law_a"]["beta"][0]
    _append_ledger(cfg, "tauberian", est, rep.routes["law_a"]["beta"][1],
                   time.perf_counter() - t0)
    print(json.dumps(rep.to_json(), indent=2))
    return 0


def _load_pair(cfg: ExperimentConfig) -> ErgodicPair:
    p = cfg.params.get("pair")
    if p:
        return ErgodicPair.from_json(json.loads(Path(p).read_text()))
    pair = vanishing_discount(cfg.model, probes=_probes(cfg),
                              family=_family(cfg), opt=_optimizer(cfg),
                              sim=cfg.sim, stream=RngStream(cfg.seed, (100,)),
                              truncation_frac=1e-4)
    return pair


def cmd_fixed_point(cfg: ExperimentConfig) -> int:
    pair = _load_pair(cfg)
    mu = _law(cfg, default=InitialLaw.gaussian(1.0, 0.25, cfg.model.dim))
    T = float(cfg.params.get("T", 2.0))
    t0 = time.perf_counter()
    res = fixed_point_residual(cfg.model, pair, mu, T, _family(cfg),
                               _optimizer(cfg), cfg.sim, RngStream(cfg.seed))
    _write_json(cfg.out_dir / "fixed_point.json", res.to_json())
    _append_ledger(cfg, "fixed-point", res.residual, res.stderr,
                   time.perf_counter() - t0)
    print(f"residual {res.residual:.5f} (relative {res.relative:.3%}, "
          f"hull exits {res.out_of_hull})")
    return 0


def cmd_hjb_residual(cfg: ExperimentConfig) -> int:
    pair = _load_pair(cfg)
    oracle = PoissonBiasOracle(cfg.model,
                               action=cfg.params.get("frozen_action"))
    stream = RngStream(cfg.seed, (3,))
    probes_cfg = cfg.params.get("hjb_probes",
                                [{"kind": "point", "loc": [0.0]},
                                 {"kind": "gaussian", "mean": 1.0, "var": 0.25},
                                 {"kind": "gaussian", "mean": -1.0, "var": 1.0},
                                 {"kind": "gaussian", "mean": 0.0, "var": 1.0},
                                 {"kind": "gaussian", "mean": 2.0, "var": 0.25}])
    probes = {f"probe{i}": sample_initial(InitialLaw.from_json(d),
                                          cfg.sim.n_particles, stream.child(i))
              for i, d in enumerate(probes_cfg)}
    t0 = time.perf_counter()
    rep = hjb_residual(cfg.model, pair.lambda_hat, oracle.derivative_source(),
                       probes)
    _write_json(cfg.out_dir / "hjb_residual.json", rep.to_json())
    _write_csv(cfg.out_dir / "hjb_residual.csv", ["probe", "residual"],
               sorted(rep.rows.items()))
    _append_ledger(cfg, "hjb-residual", rep.max_abs, 0.0,
                   time.perf_counter() - t0)
    print(f"max |residual| = {rep.max_abs:.5f} (lambda {pair.lambda_hat:.5f})")
    return 0


def cmd_verify(cfg: ExperimentConfig) -> int:
    pair = _load_pair(cfg)
    a_star = pair.best_policy.a if pair.best_policy is not None else \
        cfg.model.action_set.grid()[0]
    oracle = PoissonBiasOracle(cfg.model, action=a_star)
    feedback = greedy_feedback(cfg.model, oracle.derivative_source(),
                               x_centers=np.linspace(-4, 4, 81),
                               m_centers=np.linspace(-2, 2, 17),
                               sd_ref=float(cfg.params.get("sd_ref", 1.0)))
    phi_fn = PhiOnEnsembles(pair.phi_interpolant()) if pair.grid_means else \
        oracle.phi_functional()
    t0 = time.perf_counter()
    rep = verification_run(cfg.model, feedback, _law(cfg), pair.lambda_hat,
                           phi_fn, T=float(cfg.params.get("T", 40.0)),
                           burn_in=float(cfg.params.get("burn_in", 8.0)),
                           sim=cfg.sim, stream=RngStream(cfg.seed, (4,)))
    _write_json(cfg.out_dir / "verify.json", rep.to_json())
    _append_ledger(cfg, "verify", rep.average, rep.average_stderr,
                   time.perf_counter() - t0)
    print(f"closed-loop average {rep.average:.5f} +- {rep.average_stderr:.2e}; "
          f"drift slope {rep.drift_slope:.2e} +- {rep.drift_stderr:.2e}")
    return 0


def cmd_bench(cfg: ExperimentConfig, suite: str) -> int:
    from .acceptance import run_suite
    results = run_suite(suite)
    rows = []
    for r in results:
        print(r.row())
        rows.append((r.cid, "PASS" if r.passed else "FAIL",
                     f"{r.runtime_s:.1f}", r.detail))
    _write_csv(cfg.out_dir / "bench.csv",
               ["criterion", "status", "runtime_s", "detail"], rows)
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} criteria passed")
    return 3 if n_fail else 0


def _read_source(src) -> dict:
    p = Path(src)
    if not p.exists():
        raise ConfigError(f"plot input params.source not found: {p}")
    return json.loads(p.read_text())


def cmd_emit_plot_data(cfg: ExperimentConfig) -> int:
    kind = cfg.params.get("kind", "tauberian")
    src = cfg.params.get("source")
    out = cfg.out_dir / f"plot_{kind}.csv"
    rows = []
    if kind == "tauberian":
        header = ["beta", "beta_v_beta"]
        if src:
            pair = ErgodicPair.from_json(_read_source(src))
            rows = [(b, v) for b, v, _ in pair.lambda_by_beta]
    elif kind == "cesaro":
        header = ["T", "v_T_over_T"]
        if src:
            data = _read_source(src).get("cesaro", {})
            first = next(iter(data.values()), [])
            rows = [(t, v) for t, v in first]
    elif kind == "contraction":
        header = ["time", "gap", "envelope"]
        if src:
            p = Path(src)
            if not p.exists():
                raise ConfigError(f"plot input params.source not found: {p}")
            with p.open() as fh:
                rows = [tuple(r) for r in list(csv.reader(fh))[1:]]
    else:
        raise ConfigError(f"unknown plot kind {kind!r}")
    _write_csv(out, header, rows)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_SUBCOMMANDS = ["check", "simulate", "couple", "value-beta", "value-T",
                "ergodic-pair", "tauberian", "fixed-point", "hjb-residual",
                "verify", "bench", "emit-plot-data"]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mfergo", description=__doc__)
    parser.add_argument("subcommand", choices=_SUBCOMMANDS)
    parser.add_argument("config", help="path to a JSON or TOML config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap; 1 guarantees bitwise reproducibility")
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--suite", default="full", choices=["full", "trivial"],
                        help="bench only")
    args = parser.parse_args(argv)

    try:
        raw = load_config_file(args.config)
        cfg = parse_config(raw, seed_override=args.seed,
                           threads_override=args.threads,
                           out_dir_override=args.out_dir)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        dispatch = {
            "check": cmd_check, "simulate": cmd_simulate, "couple": cmd_couple,
            "value-beta": cmd_value_beta, "value-T": cmd_value_T,
            "ergodic-pair": cmd_ergodic_pair, "tauberian": cmd_tauberian,
            "fixed-point": cmd_fixed_point, "hjb-residual": cmd_hjb_residual,
            "verify": cmd_verify, "emit-plot-data": cmd_emit_plot_data,
        }
        if args.subcommand == "bench":
            return cmd_bench(cfg, args.suite)
        return dispatch[args.subcommand](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except BlowUpError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
