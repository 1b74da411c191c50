"""Vanishing-discount construction of the ergodic pair and its diagnostics.

The long-run value lambda and the bias phi are built from the discounted
values: beta * v^beta(delta_0) is extrapolated to beta = 0 by a linear least
squares fit over the schedule (the per-beta table is retained so the fit can
be redone), and phi(mu) = v^beta(mu) - v^beta(delta_0) is taken at the
smallest beta, with a Richardson extrapolation over the two smallest betas
recorded separately.  All runs from different initial measures share noise
increments per replica index, so the differences defining phi are
low-variance and phi(delta_0) = 0 holds exactly.

phi is stored on a (mean, sd) grid of Gaussian probe measures and evaluated
elsewhere by bilinear interpolation of the measure summary; this surrogate is
exact for the affine model family only up to the two-moment closure and is
validated on benchmarks, not in general.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .model import ModelSpec
from .particle import (Ensemble, InitialLaw, RngStream, SimConfig,
                       map_replicas, sample_initial, simulate_reward_path)
from .policy import OptimizerConfig, PolicyFamily, optimize_policy, policy_to_json
from .value import (TerminalReward, ValueEstimate, discounted_from_paths,
                    discounted_reward_multi, finite_horizon_value,
                    reward_paths, truncation_horizon, _finite_horizon_values)

__all__ = [
    "ProbeGrid", "PhiInterpolant", "ErgodicPair", "vanishing_discount",
    "long_run_average", "sup_long_run_average", "TauberianReport",
    "abelian_tauberian_check", "FixedPointResult", "fixed_point_residual",
    "VerificationReport", "verification_run",
]

DEFAULT_BETAS = (0.4, 0.2, 0.1, 0.05)


# ---------------------------------------------------------------------------
# probes and the phi surface
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeGrid:
    """Gaussian probe measures on a (mean, sd) product grid (sd = 0 allowed)."""

    means: tuple
    sds: tuple

    def probes(self) -> List[Tuple[str, InitialLaw]]:
        out = []
        for m in self.means:
            for s in self.sds:
                out.append((probe_id(m, s), InitialLaw.gaussian(m, s * s)))
        return out


def probe_id(mean: float, sd: float) -> str:
    return f"m{mean:+.4g}_s{sd:.4g}"


@dataclass
class PhiInterpolant:
    """Bilinear phi surface over the Gaussian probe grid."""

    means: np.ndarray              # sorted (nm,)
    sds: np.ndarray                # sorted (ns,)
    values: np.ndarray             # (nm, ns)

    def evaluate(self, mean: float, sd: float) -> Tuple[float, bool]:
        """Value and whether (mean, sd) lay inside the interpolation hull."""
        ms, ss, V = self.means, self.sds, self.values
        inside = bool(ms[0] <= mean <= ms[-1] and ss[0] <= sd <= ss[-1])
        m = min(max(mean, ms[0]), ms[-1])
        s = min(max(sd, ss[0]), ss[-1])

        def locate(grid, q):
            if len(grid) == 1:
                return 0, 0.0
            i = int(np.clip(np.searchsorted(grid, q) - 1, 0, len(grid) - 2))
            w = (q - grid[i]) / (grid[i + 1] - grid[i])
            return i, float(w)

        i, wm = locate(ms, m)
        j, ws = locate(ss, s)
        i2 = min(i + 1, len(ms) - 1)
        j2 = min(j + 1, len(ss) - 1)
        val = ((1 - wm) * (1 - ws) * V[i, j] + wm * (1 - ws) * V[i2, j]
               + (1 - wm) * ws * V[i, j2] + wm * ws * V[i2, j2])
        return float(val), inside

    def surface(self, mean: float, sd: float) -> float:
        return self.evaluate(mean, sd)[0]


class PhiOnEnsembles:
    """phi-hat as a function of a particle cloud; counts hull exits."""

    def __init__(self, interp: PhiInterpolant):
        self.interp = interp
        self.out_of_hull = 0

    def __call__(self, positions: np.ndarray) -> float:
        x = np.asarray(positions, dtype=float)
        m = float(x.mean())
        sd = float(np.sqrt(max(np.mean(x * x) - m * m, 0.0)))
        val, inside = self.interp.evaluate(m, sd)
        if not inside:
            self.out_of_hull += 1
        return val


# ---------------------------------------------------------------------------
# ergodic pair
# ---------------------------------------------------------------------------

@dataclass
class ErgodicPair:
    lambda_hat: float
    lambda_stderr: float
    beta_schedule: tuple
    lambda_by_beta: list           # (beta, estimate, stderr) rows
    phi_table: dict                # probe id -> (phi, stderr)
    phi_richardson: dict           # probe id -> (phi, stderr)
    probe_summaries: dict          # probe id -> (mean, sd)
    grid_means: tuple = ()
    grid_sds: tuple = ()
    best_policy: object = None     # optimizer pick at the anchor, smallest beta
    warnings: list = field(default_factory=list)

    def phi_interpolant(self, richardson: bool = False) -> PhiInterpolant:
        if not (self.grid_means and self.grid_sds):
            raise ConfigError("pair was built without a probe grid")
        table = self.phi_richardson if richardson else self.phi_table
        V = np.empty((len(self.grid_means), len(self.grid_sds)))
        for i, m in enumerate(self.grid_means):
            for j, s in enumerate(self.grid_sds):
                V[i, j] = table[probe_id(m, s)][0]
        return PhiInterpolant(np.asarray(self.grid_means, float),
                              np.asarray(self.grid_sds, float), V)

    def phi_at(self, law: InitialLaw) -> Tuple[float, bool]:
        """Table value when the law is a probe, else interpolated summary."""
        m, s = law.summary()
        pid = probe_id(float(np.atleast_1d(m)[0]), s)
        if pid in self.phi_table:
            return self.phi_table[pid][0], True
        return self.phi_interpolant().evaluate(float(np.atleast_1d(m)[0]), s)

    def to_json(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "lambda_stderr": self.lambda_stderr,
            "beta_schedule": list(self.beta_schedule),
            "lambda_by_beta": [list(r) for r in self.lambda_by_beta],
            "phi_table": {k: list(v) for k, v in self.phi_table.items()},
            "phi_richardson": {k: list(v) for k, v in self.phi_richardson.items()},
            "probe_summaries": {k: list(v) for k, v in self.probe_summaries.items()},
            "grid_means": list(self.grid_means),
            "grid_sds": list(self.grid_sds),
            "best_policy": (policy_to_json(self.best_policy)
                            if self.best_policy is not None else None),
            "warnings": list(self.warnings),
        }

    @staticmethod
    def from_json(d: dict) -> "ErgodicPair":
        from .policy import policy_from_json
        return ErgodicPair(
            lambda_hat=d["lambda_hat"], lambda_stderr=d["lambda_stderr"],
            beta_schedule=tuple(d["beta_schedule"]),
            lambda_by_beta=[tuple(r) for r in d["lambda_by_beta"]],
            phi_table={k: tuple(v) for k, v in d["phi_table"].items()},
            phi_richardson={k: tuple(v) for k, v in d["phi_richardson"].items()},
            probe_summaries={k: tuple(v) for k, v in d["probe_summaries"].items()},
            grid_means=tuple(d.get("grid_means", ())),
            grid_sds=tuple(d.get("grid_sds", ())),
            best_policy=(policy_from_json(d["best_policy"])
                         if d.get("best_policy") else None),
            warnings=list(d.get("warnings", [])),
        )


def _mean_se(vals: np.ndarray) -> Tuple[float, float]:
    v = np.asarray(vals, dtype=float)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def _intercept(betas: np.ndarray, y: np.ndarray, degree: int = 1) -> float:
    """Least-squares intercept of a polynomial-in-beta fit."""
    A = np.vstack([betas ** k for k in range(degree + 1)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0])


# ---------------------------------------------------------------------------
# vanishing discount
# ---------------------------------------------------------------------------

def vanishing_discount(model: ModelSpec, betas: Sequence[float] = DEFAULT_BETAS,
                       probes: Optional[object] = None,
                       family: Optional[PolicyFamily] = None,
                       opt: Optional[OptimizerConfig] = None,
                       sim: SimConfig = SimConfig(),
                       stream: RngStream = RngStream(0),
                       truncation_frac: float = 1e-4,
                       probe_replicas: Optional[int] = None,
                       fit: str = "linear") -> ErgodicPair:
    """Construct the ergodic pair from the discounted values.

    ``probes`` is a ProbeGrid (used for the phi surface), a list of
    (id, InitialLaw) pairs, or None for the anchor alone.  The policy family
    defaults to the constant family over the model's action set.
    ``probe_replicas`` (<= sim.replicas) trims the budget spent on the phi
    table; common random numbers keep the differences tight regardless.
    ``fit`` selects the extrapolation model for the intercept: "linear"
    (default first-order ansatz) or "quadratic" for benchmarks whose
    transient makes the curvature in beta non-negligible; the per-beta table
    is stored either way so the fit can be redone offline.
    """
    betas = [float(b) for b in betas]
    if len(betas) < 3 or any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ConfigError("beta schedule must be strictly decreasing, >= 3 points")
    if fit not in ("linear", "quadratic"):
        raise ConfigError("fit must be linear or quadratic")
    degree = 1 if fit == "linear" else 2
    if len(betas) < degree + 2:
        raise ConfigError("schedule too short for the requested fit")
    if family is None:
        family = PolicyFamily("constant", model.action_set, state_dim=model.dim)
    if opt is None:
        opt = OptimizerConfig()
    n_probe_reps = sim.replicas if probe_replicas is None \
        else min(int(probe_replicas), sim.replicas)

    grid_means: tuple = ()
    grid_sds: tuple = ()
    if probes is None:
        probe_list: List[Tuple[str, InitialLaw]] = []
    elif isinstance(probes, ProbeGrid):
        probe_list = probes.probes()
        grid_means = tuple(sorted(probes.means))
        grid_sds = tuple(sorted(probes.sds))
    else:
        probe_list = list(probes)

    anchor = InitialLaw.point(0.0, dim=model.dim)
    measures: List[Tuple[str, InitialLaw]] = [("delta0", anchor)] + probe_list

    shared = stream.child(0)       # same noise streams for every measure/policy
    candidates = family.enumerate()
    vals: Dict[str, np.ndarray] = {}
    best_pol: Dict[str, object] = {}
    if candidates is not None:
        # Anchor runs cover the full discount truncation horizon.  Probe runs
        # share the anchor's noise, so the difference of the reward paths dies
        # at the contraction rate eta; the probe value is anchor + difference
        # integrated over a short coupling horizon (factor e^{-eta T_phi}).
        T_max = max(truncation_horizon(b, sim.dt, truncation_frac)
                    for b in betas)
        from .model import dissipativity_margin
        eta = dissipativity_margin(model).eta
        if np.isfinite(eta) and eta > 0:
            T_phi = min(T_max, math.ceil(math.log(1e7) / (eta * sim.dt))
                        * sim.dt)
        else:
            T_phi = T_max
        n_phi = round(T_phi / sim.dt)

        anchor_paths = {}
        anchor_vals_per_cand = []
        for ci, cand in enumerate(candidates):
            times, fbar = reward_paths(model, family.build(cand),
                                       measures[0][1], T_max, shared, sim)
            anchor_paths[ci] = fbar
            anchor_vals_per_cand.append(
                discounted_from_paths(times, fbar, betas, sim.dt,
                                      truncation_frac))
        per_cand = np.stack(anchor_vals_per_cand)         # (nc, R, nB)
        sel0 = np.argmax(per_cand.mean(axis=1), axis=0)
        chosen = np.stack([per_cand[sel0[bi], :, bi]
                           for bi in range(len(betas))], axis=1)
        vals["delta0"] = chosen
        best_pol["delta0"] = family.build(candidates[int(sel0[-1])])

        t_short = times[: n_phi + 1]
        for pid, law in probe_list:
            psim = sim.replace(replicas=n_probe_reps)
            diff_per_cand = []
            for ci, cand in enumerate(candidates):
                _, fbar_p = reward_paths(model, family.build(cand), law,
                                         T_phi, shared, psim)
                delta = fbar_p - anchor_paths[ci][:n_probe_reps, : n_phi + 1]
                diffs = np.stack([
                    np.trapezoid(np.exp(-b * t_short) * delta, t_short, axis=1)
                    for b in betas], axis=1)              # (R, nB)
                diff_per_cand.append(
                    per_cand[ci, :n_probe_reps] + diffs)
            pc = np.stack(diff_per_cand)                  # (nc, R, nB)
            sel = np.argmax(pc.mean(axis=1), axis=0)
            vals[pid] = np.stack([pc[sel[bi], :, bi]
                                  for bi in range(len(betas))], axis=1)
            best_pol[pid] = family.build(candidates[int(sel[-1])])
    else:
        # continuous family: optimize per (measure, beta); phi differences
        # then carry the optimizer noise and are correspondingly wider
        from .value import value_discounted
        for pid, law in measures:
            chosen = np.empty((sim.replicas, len(betas)))
            for bi, b in enumerate(betas):
                dv = value_discounted(model, law, b, family, opt, sim,
                                      shared.child(bi), truncation_frac)
                best = dv.best_policy
                chosen[:, bi] = discounted_reward_multi(
                    model, best, law, [b], shared, sim, truncation_frac)[:, 0]
                if pid == "delta0" and bi == len(betas) - 1:
                    best_pol[pid] = best
            vals[pid] = chosen
        best_pol.setdefault("delta0", None)

    barr = np.asarray(betas)
    anchor_vals = vals["delta0"]                       # (R, nB)
    lam_r = np.array([_intercept(barr, barr * anchor_vals[r], degree)
                      for r in range(anchor_vals.shape[0])])
    lambda_hat, lambda_se = _mean_se(lam_r)

    lambda_by_beta = []
    for bi, b in enumerate(betas):
        est, se = _mean_se(b * anchor_vals[:, bi])
        lambda_by_beta.append((b, est, se))

    warnings: List[str] = []
    diffs = np.diff([r[1] for r in lambda_by_beta])
    ses = np.asarray([r[2] for r in lambda_by_beta])
    tol3 = 3.0 * np.hypot(ses[:-1], ses[1:])
    signif = diffs[np.abs(diffs) > np.maximum(tol3, 1e-12)]
    if len(signif) and not (np.all(signif > 0) or np.all(signif < 0)):
        warnings.append("lambda_by_beta is not monotone beyond 3 stderr; "
                        "consider a larger simulation budget")

    # phi at the smallest beta, Richardson over the two smallest
    b1, b2 = betas[-1], betas[-2]
    phi_table: Dict[str, tuple] = {}
    phi_rich: Dict[str, tuple] = {}
    summaries: Dict[str, tuple] = {}
    summaries["delta0"] = (0.0, 0.0)
    phi_table["delta0"] = (0.0, 0.0)
    phi_rich["delta0"] = (0.0, 0.0)
    for pid, law in probe_list:
        R_p = vals[pid].shape[0]   # CRN: replica r of a probe pairs with
        d1 = vals[pid][:, -1] - anchor_vals[:R_p, -1]  # anchor replica r
        d2 = vals[pid][:, -2] - anchor_vals[:R_p, -2]
        rich = (b2 * d1 - b1 * d2) / (b2 - b1)
        phi_table[pid] = _mean_se(d1)
        phi_rich[pid] = _mean_se(rich)
        m, s = law.summary()
        summaries[pid] = (float(np.atleast_1d(m)[0]), s)
        gap = abs(phi_rich[pid][0] - phi_table[pid][0])
        gap_se = math.hypot(phi_rich[pid][1], phi_table[pid][1])
        if gap > max(3.0 * gap_se, 1e-12) + 1e-12 and gap > 0.05 * max(
                abs(phi_table[pid][0]), 0.1):
            warnings.append(f"phi Richardson extrapolation moved {pid} by "
                            f"{gap:.3g} (> 3 stderr)")

    return ErgodicPair(lambda_hat=lambda_hat, lambda_stderr=lambda_se,
                       beta_schedule=tuple(betas),
                       lambda_by_beta=lambda_by_beta, phi_table=phi_table,
                       phi_richardson=phi_rich, probe_summaries=summaries,
                       grid_means=grid_means, grid_sds=grid_sds,
                       best_policy=best_pol.get("delta0"), warnings=warnings)


# ---------------------------------------------------------------------------
# long-run average
# ---------------------------------------------------------------------------

def long_run_average(model: ModelSpec, policy, mu0, T: float, burn_in: float,
                     sim: SimConfig, stream: RngStream) -> ValueEstimate:
    """Time average of the particle-mean reward over [burn_in, T]."""
    if not (0 <= burn_in < T):
        raise ConfigError("need 0 <= burn_in < T")
    from .value import _initial

    def one(rep: RngStream) -> float:
        ens0 = _initial(mu0, sim.n_particles, rep.child(1))
        rec = simulate_reward_path(model, policy, ens0, T, sim.dt, rep.child(0))
        keep = rec.times >= burn_in - 1e-12
        return float(np.trapezoid(rec.fbar[keep], rec.times[keep])
                     / (rec.times[keep][-1] - rec.times[keep][0]))

    vals = np.asarray(map_replicas(
        one, [stream.child(r) for r in range(sim.replicas)], sim.threads))
    est, se = _mean_se(vals)
    return ValueEstimate(est, se, vals)


def sup_long_run_average(model: ModelSpec, mu0, family: PolicyFamily,
                         opt: OptimizerConfig, sim: SimConfig,
                         stream: RngStream, T: float,
                         burn_in: float):
    """sup over the family of the long-run average; returns OptimizeResult."""

    def objective(params, s, scale=1):
        est = long_run_average(model, family.build(params), mu0, T, burn_in,
                               sim.replace(replicas=sim.replicas * scale), s)
        return est.estimate, est.stderr

    return optimize_policy(objective, family, opt, stream)


# ---------------------------------------------------------------------------
# Abelian-Tauberian diagnostics
# ---------------------------------------------------------------------------

@dataclass
class TauberianReport:
    routes: dict    # law id -> {"beta": (est, se), "horizon": ..., "average": ...}
    max_pairwise_gap: float
    cross_law_gap: float
    cross_law_stderr: float
    cesaro: dict = field(default_factory=dict)   # law id -> [(T, v_T / T)]

    def to_json(self) -> dict:
        return {"routes": {k: {r: list(v) for r, v in d.items()}
                           for k, d in self.routes.items()},
                "max_pairwise_gap": self.max_pairwise_gap,
                "cross_law_gap": self.cross_law_gap,
                "cross_law_stderr": self.cross_law_stderr,
                "cesaro": {k: [list(r) for r in v]
                           for k, v in self.cesaro.items()}}


def _route_beta(model, law, betas, family, opt, sim, stream, frac):
    candidates = family.enumerate()
    barr = np.asarray([float(b) for b in betas])
    if candidates is not None:
        per_cand = np.stack([
            discounted_reward_multi(model, family.build(c), law, betas,
                                    stream, sim, frac) for c in candidates])
        sel = np.argmax(per_cand.mean(axis=1), axis=0)
        chosen = np.stack([per_cand[sel[bi], :, bi]
                           for bi in range(len(betas))], axis=1)
    else:
        from .value import value_discounted
        chosen = np.empty((sim.replicas, len(betas)))
        for bi, b in enumerate(betas):
            dv = value_discounted(model, law, b, family, opt, sim,
                                  stream.child(bi), frac)
            chosen[:, bi] = discounted_reward_multi(
                model, dv.best_policy, law, [b], stream, sim, frac)[:, 0]
    lam_r = np.array([_intercept(barr, barr * chosen[r])
                      for r in range(chosen.shape[0])])
    return _mean_se(lam_r)


def _route_horizon(model, law, T_schedule, family, opt, sim, stream):
    Ts = [float(T) for T in T_schedule]
    g = TerminalReward("zero")
    candidates = family.enumerate()
    rows = []
    for ti, T in enumerate(Ts):
        fam = family.with_horizon(T) if family.windows > 1 else family
        if candidates is not None:
            per_cand = np.stack([
                _finite_horizon_values(model, fam.build(c), law, T, g,
                                       stream, sim) for c in candidates])
            rows.append(per_cand[int(np.argmax(per_cand.mean(axis=1)))])
        else:
            fh = finite_horizon_value(model, law, T, g, fam, opt, sim,
                                      stream.child(ti))
            rows.append(_finite_horizon_values(model, fh.best_policy, law, T,
                                               g, stream, sim))
    V = np.stack(rows, axis=1)                         # (R, nT)
    Tarr = np.asarray(Ts)
    A = np.vstack([np.ones_like(Tarr), Tarr]).T
    slopes = [float(np.linalg.lstsq(A, V[r], rcond=None)[0][1])
              for r in range(V.shape[0])]
    cesaro = [(T, float(V[:, ti].mean()) / T) for ti, T in enumerate(Ts)]
    return _mean_se(np.asarray(slopes)), cesaro


def abelian_tauberian_check(model: ModelSpec, laws: Sequence[Tuple[str, InitialLaw]],
                            betas: Sequence[float] = DEFAULT_BETAS,
                            T_schedule: Sequence[float] = (10.0, 20.0, 40.0),
                            family: Optional[PolicyFamily] = None,
                            opt: Optional[OptimizerConfig] = None,
                            sim: SimConfig = SimConfig(),
                            stream: RngStream = RngStream(0),
                            truncation_frac: float = 1e-4,
                            avg_T: float = 50.0,
                            avg_burn: float = 10.0) -> TauberianReport:
    """Three lambda estimates (discount limit, horizon limit, long-run sup)
    for each supplied initial law, with pairwise and cross-law gaps."""
    if family is None:
        family = PolicyFamily("constant", model.action_set, state_dim=model.dim)
    if opt is None:
        opt = OptimizerConfig()
    routes: Dict[str, dict] = {}
    cesaro_all: Dict[str, list] = {}
    for li, (lid, law) in enumerate(laws):
        s = stream.child(li)
        beta_est = _route_beta(model, law, betas, family, opt, sim,
                               s.child(0), truncation_frac)
        hor_est, cesaro = _route_horizon(model, law, T_schedule, family, opt,
                                         sim, s.child(1))
        res = sup_long_run_average(model, law, family, opt, sim, s.child(2),
                                   avg_T, avg_burn)
        routes[lid] = {"beta": beta_est, "horizon": hor_est,
                       "average": (res.value, res.stderr)}
        cesaro_all[lid] = cesaro
    gaps = []
    for d in routes.values():
        ests = [d["beta"][0], d["horizon"][0], d["average"][0]]
        gaps.append(max(ests) - min(ests))
    # initial-law independence is a statement about the ergodic (long-run
    # average) value, so the cross-law comparison pairs that route: after the
    # burn-in both runs average the same stationary regime and the gap is a
    # pure Monte Carlo quantity.  The discount route's extrapolation carries
    # a law-dependent curvature bias and is covered by the relative checks.
    lam_laws = [d["average"] for d in routes.values()]
    cross = abs(lam_laws[0][0] - lam_laws[-1][0]) if len(lam_laws) > 1 else 0.0
    cross_se = math.hypot(lam_laws[0][1], lam_laws[-1][1]) \
        if len(lam_laws) > 1 else 0.0
    return TauberianReport(routes=routes, max_pairwise_gap=max(gaps),
                           cross_law_gap=cross, cross_law_stderr=cross_se,
                           cesaro=cesaro_all)


# ---------------------------------------------------------------------------
# fixed-point relation
# ---------------------------------------------------------------------------

@dataclass
class FixedPointResult:
    lhs: float
    rhs: float
    residual: float
    stderr: float
    relative: float                # residual / (|lambda_hat| * T)
    out_of_hull: int

    def to_json(self) -> dict:
        return self.__dict__.copy()


def fixed_point_residual(model: ModelSpec, pair: ErgodicPair, mu: InitialLaw,
                         T: float, family: Optional[PolicyFamily] = None,
                         opt: Optional[OptimizerConfig] = None,
                         sim: SimConfig = SimConfig(),
                         stream: RngStream = RngStream(0)) -> FixedPointResult:
    """Gap in phi(mu) + lambda T = sup { E int_0^T f dt + phi(mu_T) }.

    The right side reuses the finite-horizon machinery with the pair's phi
    surface as terminal reward, evaluated at the terminal empirical measure.
    """
    if family is None:
        family = PolicyFamily("constant", model.action_set, state_dim=model.dim)
    if opt is None:
        opt = OptimizerConfig()
    phi_mu, inside = pair.phi_at(mu)
    phi_fn = PhiOnEnsembles(pair.phi_interpolant())
    g = TerminalReward("measure", phi_fn)
    fh = finite_horizon_value(model, mu, T, g, family, opt, sim, stream)
    lhs = phi_mu + pair.lambda_hat * T
    resid = abs(lhs - fh.estimate)
    se = math.hypot(fh.stderr, pair.lambda_stderr * T)
    scale = max(abs(pair.lambda_hat) * T, 1e-12)
    return FixedPointResult(lhs=lhs, rhs=fh.estimate, residual=resid,
                            stderr=se, relative=resid / scale,
                            out_of_hull=phi_fn.out_of_hull + (0 if inside else 1))


# ---------------------------------------------------------------------------
# verification runs (closed-loop feedback)
# ---------------------------------------------------------------------------

@dataclass
class VerificationReport:
    average: float
    average_stderr: float
    drift_slope: float
    drift_stderr: float
    lambda_ref: float

    def to_json(self) -> dict:
        return self.__dict__.copy()


def verification_run(model: ModelSpec, feedback, mu0, lambda_ref: float,
                     phi_fn, T: float, burn_in: float, sim: SimConfig,
                     stream: RngStream,
                     lambda_ref_stderr: float = 0.0) -> VerificationReport:
    """Closed-loop long-run average plus the compensated-drift diagnostic.

    The diagnostic regresses  phi(mu_t) + int_0^t fbar ds - lambda_ref * t
    on t over [burn_in, T]; a slope indistinguishable from zero is the
    expectation form of the martingale optimality principle.  lambda_ref
    enters the slope with coefficient -1, so its own standard error (when it
    is an estimate) is propagated into the reported drift stderr.
    """
    if not (0 <= burn_in < T):
        raise ConfigError("need 0 <= burn_in < T")
    from .value import _initial
    steps = round(T / sim.dt)
    stride = max(1, steps // 400)

    def one(rep: RngStream):
        phis = []

        def obs(t, X):
            phis.append(float(phi_fn(X)))

        ens0 = _initial(mu0, sim.n_particles, rep.child(1))
        rec = simulate_reward_path(model, feedback, ens0, T, sim.dt,
                                   rep.child(0), observer=obs,
                                   obs_stride=stride)
        t_obs = rec.times[::stride][: len(phis)]
        dt_grid = rec.times[1] - rec.times[0]
        cum = np.concatenate(
            [[0.0], np.cumsum(0.5 * (rec.fbar[1:] + rec.fbar[:-1]) * dt_grid)])
        comp = np.asarray(phis) + cum[::stride][: len(phis)] - lambda_ref * t_obs
        keep = t_obs >= burn_in - 1e-12
        A = np.vstack([np.ones(keep.sum()), t_obs[keep]]).T
        slope = float(np.linalg.lstsq(A, comp[keep], rcond=None)[0][1])
        tail = rec.times >= burn_in - 1e-12
        avg = float(np.trapezoid(rec.fbar[tail], rec.times[tail])
                    / (rec.times[tail][-1] - rec.times[tail][0]))
        return avg, slope

    rows = map_replicas(one, [stream.child(r) for r in range(sim.replicas)],
                        sim.threads)
    avgs = np.asarray([r[0] for r in rows])
    slopes = np.asarray([r[1] for r in rows])
    a, ase = _mean_se(avgs)
    s, sse = _mean_se(slopes)
    return VerificationReport(average=a, average_stderr=ase, drift_slope=s,
                              drift_stderr=math.hypot(sse, lambda_ref_stderr),
                              lambda_ref=lambda_ref)
