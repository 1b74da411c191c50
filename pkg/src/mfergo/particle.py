"""Interacting-particle Euler-Maruyama integration and empirical measures.

The marginal law of the controlled state is represented throughout by the
empirical measure of an N-particle ensemble driven by independent noises.
Each explicit Euler step freezes the empirical measure at the step start,
evaluates per-particle actions from the policy, and advances

    x_i <- x_i + b(x_i, mu_hat, a_i) dt + sigma(x_i, mu_hat, a_i) sqrt(dt) Z_i.

Monte Carlo replicas own independent ``RngStream`` children, so runs are
bitwise reproducible for a fixed seed and replicas may be mapped over a
thread pool without changing any result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import BlowUpError, ConfigError
from .model import ModelSpec

__all__ = [
    "RngStream", "Ensemble", "EmpiricalMeasure", "InitialLaw", "SimConfig",
    "GapCurve", "MomentCurve", "TrajectoryRecord",
    "sample_initial", "step_euler", "simulate", "simulate_reward_path",
    "w2_distance", "synchronous_coupling_gap", "second_moment_curve",
    "map_replicas",
]

BLOWUP_THRESHOLD = 1e8


# ---------------------------------------------------------------------------
# rng streams
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RngStream:
    """Seed plus a spawn key: distinct keys give independent substreams."""

    seed: int
    key: tuple = ()

    def child(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))


def map_replicas(fn: Callable, streams: Sequence[RngStream], threads: int = 1) -> list:
    """Apply fn over replica streams, preserving order (threads optional)."""
    if threads <= 1:
        return [fn(s) for s in streams]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, streams))


# ---------------------------------------------------------------------------
# ensembles and empirical measures
# ---------------------------------------------------------------------------

@dataclass
class Ensemble:
    positions: np.ndarray          # (N, d)
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.shape[0] < 2:
            raise ConfigError("ensemble needs N >= 2 particles")
        if not np.all(np.isfinite(self.positions)):
            raise ConfigError("ensemble positions must be finite")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def measure(self) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.positions)


@dataclass
class EmpiricalMeasure:
    """Equal-weight discrete measure on N support points."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def second_moment(self) -> float:
        return float(np.mean((self.points ** 2).sum(axis=1)))

    def sd(self) -> float:
        """Scalar spread: sqrt(E|x|^2 - |Ex|^2) (population convention)."""
        m = self.mean()
        return math.sqrt(max(self.second_moment() - float(m @ m), 0.0))

    def summary(self) -> tuple:
        """(mean, sd) pair used by tabular policies and the phi interpolant."""
        m = self.mean()
        return (float(m[0]) if self.dim == 1 else m, self.sd())


def _summary_of(X: np.ndarray) -> tuple:
    m = X.mean(axis=0)
    sm = float(np.mean((X ** 2).sum(axis=1)))
    sd = math.sqrt(max(sm - float(m @ m), 0.0))
    return m, sd


# ---------------------------------------------------------------------------
# initial laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitialLaw:
    """Named initial law: point mass, Gaussian(mean, var), uniform, or points."""

    kind: str
    loc: np.ndarray = None
    var: np.ndarray = None
    low: np.ndarray = None
    high: np.ndarray = None
    points: np.ndarray = None
    dim: int = 1

    @staticmethod
    def point(loc=0.0, dim: int = 1) -> "InitialLaw":
        return InitialLaw("point", loc=np.broadcast_to(
            np.atleast_1d(np.asarray(loc, float)), (dim,)).copy(), dim=dim)

    @staticmethod
    def gaussian(mean=0.0, var=1.0, dim: int = 1) -> "InitialLaw":
        v = np.broadcast_to(np.atleast_1d(np.asarray(var, float)), (dim,)).copy()
        if np.any(v < 0):
            raise ConfigError("gaussian variance must be >= 0")
        return InitialLaw("gaussian", loc=np.broadcast_to(
            np.atleast_1d(np.asarray(mean, float)), (dim,)).copy(), var=v, dim=dim)

    @staticmethod
    def uniform(low, high, dim: int = 1) -> "InitialLaw":
        lo = np.broadcast_to(np.atleast_1d(np.asarray(low, float)), (dim,)).copy()
        hi = np.broadcast_to(np.atleast_1d(np.asarray(high, float)), (dim,)).copy()
        if np.any(lo > hi):
            raise ConfigError("uniform law has low > high")
        return InitialLaw("uniform", low=lo, high=hi, dim=dim)

    @staticmethod
    def explicit(points) -> "InitialLaw":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == 1 and np.ndim(points) == 1:
            pts = pts.T
        return InitialLaw("points", points=pts, dim=pts.shape[1])

    def summary(self) -> tuple:
        """(mean, sd) of the law itself (exact for named laws)."""
        if self.kind == "point":
            return (float(self.loc[0]) if self.dim == 1 else self.loc, 0.0)
        if self.kind == "gaussian":
            m = float(self.loc[0]) if self.dim == 1 else self.loc
            return (m, math.sqrt(float(np.sum(self.var))))
        if self.kind == "uniform":
            mid = 0.5 * (self.low + self.high)
            v = float(np.sum((self.high - self.low) ** 2) / 12.0)
            return (float(mid[0]) if self.dim == 1 else mid, math.sqrt(v))
        return EmpiricalMeasure(self.points).summary()

    def to_json(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "point":
            out["loc"] = self.loc.tolist()
        elif self.kind == "gaussian":
            out["mean"], out["var"] = self.loc.tolist(), self.var.tolist()
        elif self.kind == "uniform":
            out["low"], out["high"] = self.low.tolist(), self.high.tolist()
        else:
            out["points"] = self.points.tolist()
        return out

    @staticmethod
    def from_json(d) -> "InitialLaw":
        if isinstance(d, InitialLaw):
            return d
        kind = d.get("kind")
        dim = int(d.get("dim", 1))
        if kind == "point":
            return InitialLaw.point(d.get("loc", 0.0), dim)
        if kind == "gaussian":
            return InitialLaw.gaussian(d.get("mean", 0.0), d.get("var", 1.0), dim)
        if kind == "uniform":
            return InitialLaw.uniform(d["low"], d["high"], dim)
        if kind == "points":
            return InitialLaw.explicit(d["points"])
        raise ConfigError(f"unknown initial law kind {kind!r}")


def sample_initial(law: InitialLaw, n: int, stream: RngStream) -> Ensemble:
    """N i.i.d. draws from the named law (explicit lists pass through)."""
    if n < 2:
        raise ConfigError("need N >= 2 particles")
    law = InitialLaw.from_json(law) if isinstance(law, dict) else law
    gen = stream.generator()
    if law.kind == "point":
        X = np.tile(law.loc, (n, 1))
    elif law.kind == "gaussian":
        X = law.loc + np.sqrt(law.var) * gen.standard_normal((n, law.dim))
    elif law.kind == "uniform":
        X = gen.uniform(law.low, law.high, size=(n, law.dim))
    elif law.kind == "points":
        if law.points.shape[0] != n:
            raise ConfigError(
                f"explicit law has {law.points.shape[0]} points, asked N={n}")
        X = law.points.copy()
    else:
        raise ConfigError(f"unknown initial law kind {law.kind!r}")
    return Ensemble(X, time=0.0)


# ---------------------------------------------------------------------------
# integrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    n_particles: int = 4096
    dt: float = 1e-2
    replicas: int = 16
    threads: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be > 0")
        if self.n_particles < 2 or self.replicas < 1:
            raise ConfigError("need n_particles >= 2 and replicas >= 1")

    def replace(self, **kw) -> "SimConfig":
        from dataclasses import replace
        return replace(self, **kw)


def _check_finite(X: np.ndarray, time: float) -> None:
    # single reduction: NaN propagates, so this also catches non-finite values
    peak = float(np.max(np.abs(X)))
    if not peak < BLOWUP_THRESHOLD:
        bad = ~np.isfinite(X).all(axis=1) | \
            (np.abs(X) > BLOWUP_THRESHOLD).any(axis=1)
        i = int(np.argmax(bad))
        raise BlowUpError(i, time, peak)


def step_euler(model: ModelSpec, ens: Ensemble, policy, dt: float,
               gen: np.random.Generator) -> Ensemble:
    """One explicit step; the measure argument is frozen at the step start."""
    if dt <= 0:
        raise ConfigError("dt must be > 0")
    X = ens.positions
    mean = X.mean(axis=0)
    A = policy.actions(ens.time, X, mean, 0.0)
    drift = model.drift(X, mean, A)
    sig = model.diffusion(X, mean, A)
    Z = gen.standard_normal(X.shape)
    Xn = X + drift * dt + sig * math.sqrt(dt) * Z
    t = ens.time + dt
    _check_finite(Xn, t)
    out = Ensemble.__new__(Ensemble)
    out.positions, out.time = Xn, t
    return out


def _n_steps(T: float, dt: float) -> int:
    steps = round(T / dt)
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"dt={dt} does not divide horizon T={T}")
    return steps


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    fbar: np.ndarray               # per-time particle average of the reward
    final: Ensemble
    observations: dict = field(default_factory=dict)


def simulate_reward_path(model: ModelSpec, policy, ens0: Ensemble, T: float,
                         dt: float, stream: RngStream,
                         observer: Optional[Callable] = None,
                         obs_stride: int = 1) -> TrajectoryRecord:
    """Integrate to time T recording the particle-averaged running reward.

    fbar[j] evaluates the reward at the state/action of step j (the final
    entry uses the terminal state), so reward integrals are trapezoid-ready.
    """
    steps = _n_steps(T, dt)
    gen = stream.generator()
    X = ens0.positions.copy()
    t = ens0.time
    sq = math.sqrt(dt)
    times = np.empty(steps + 1)
    fbar = np.empty(steps + 1)
    chunk = min(64, steps) or 1    # draw noise in blocks, identical stream order
    zbuf, zi = None, chunk
    for j in range(steps + 1):
        mean = X.mean(axis=0)
        A = policy.actions(t, X, mean, 0.0)
        times[j] = t
        fbar[j] = float(np.mean(model.reward(X, mean, A)))
        if observer is not None and j % obs_stride == 0:
            observer(t, X)
        if j == steps:
            break
        if zi == chunk:
            zbuf = gen.standard_normal((chunk,) + X.shape)
            zi = 0
        Z = zbuf[zi]
        zi += 1
        dr = model.drift(X, mean, A)    # fresh array; fuse the update in place
        dr *= dt
        dr += X
        np.multiply(Z, model.diffusion(X, mean, A) * sq, out=Z)
        dr += Z
        X = dr
        t = ens0.time + (j + 1) * dt
        _check_finite(X, t)
    final = Ensemble.__new__(Ensemble)
    final.positions, final.time = X, t
    return TrajectoryRecord(times=times, fbar=fbar, final=final)


def simulate(model: ModelSpec, policy, ens0: Ensemble, T: float, dt: float,
             stream: RngStream, observers: Iterable = (),
             obs_stride: int = 1) -> TrajectoryRecord:
    """Full-featured run: observers receive (time, ensemble) at the stride."""
    obs = list(observers)

    def call_all(t, X):
        e = Ensemble.__new__(Ensemble)
        e.positions, e.time = X, t
        for o in obs:
            o(t, e)

    rec = simulate_reward_path(model, policy, ens0, T, dt, stream,
                               observer=call_all if obs else None,
                               obs_stride=obs_stride)
    for o in obs:
        if hasattr(o, "result"):
            rec.observations[type(o).__name__] = o.result()
    return rec


# ---------------------------------------------------------------------------
# observers
# ---------------------------------------------------------------------------

class TrajectoryObserver:
    """Accumulates (time, mean, second_moment, w2_to_ref) rows for CSV export."""

    def __init__(self, reference: Optional[np.ndarray] = None):
        self.reference = None if reference is None else np.sort(
            np.asarray(reference, dtype=float).ravel())
        self.rows = []

    def __call__(self, t: float, ens: Ensemble):
        X = ens.positions
        mean, _ = _summary_of(X)
        m2 = float(np.mean((X ** 2).sum(axis=1)))
        w2 = float("nan")
        if self.reference is not None and X.shape[1] == 1 \
                and X.shape[0] == self.reference.size:
            w2 = float(np.sqrt(np.mean((np.sort(X.ravel()) - self.reference) ** 2)))
        self.rows.append((t, float(np.atleast_1d(mean)[0]), m2, w2))

    def result(self):
        return self.rows


# ---------------------------------------------------------------------------
# Wasserstein-2
# ---------------------------------------------------------------------------

def w2_distance(a, b, n_projections: int = 64, seed: int = 0) -> float:
    """W2 between equal-size clouds: exact in d=1 via sorted pairing.

    In d > 1 a sliced approximation over random projections is used and the
    value is only an estimate of the true distance.
    """
    pa = a.points if isinstance(a, EmpiricalMeasure) else np.atleast_2d(a)
    pb = b.points if isinstance(b, EmpiricalMeasure) else np.atleast_2d(b)
    if pa.shape != pb.shape:
        raise ConfigError(f"measure shapes differ: {pa.shape} vs {pb.shape}")
    d = pa.shape[1]
    if d == 1:
        sa, sb = np.sort(pa.ravel()), np.sort(pb.ravel())
        return float(np.sqrt(np.mean((sa - sb) ** 2)))
    gen = np.random.default_rng(seed)
    dirs = gen.standard_normal((n_projections, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    qa = np.sort(pa @ dirs.T, axis=0)
    qb = np.sort(pb @ dirs.T, axis=0)
    return float(np.sqrt(d * np.mean((qa - qb) ** 2)))


# ---------------------------------------------------------------------------
# coupling experiments
# ---------------------------------------------------------------------------

@dataclass
class GapCurve:
    times: np.ndarray
    mean_sq_gap: np.ndarray
    envelope: np.ndarray           # initial gap * exp(-2 eta t)
    eta: float

    def breached(self, slack: float = 0.0) -> bool:
        return bool(np.any(self.mean_sq_gap > self.envelope * (1.0 + slack)))

    def rows(self):
        return list(zip(self.times, self.mean_sq_gap, self.envelope))


def synchronous_coupling_gap(model: ModelSpec, policy, ens_a0: Ensemble,
                             ens_b0: Ensemble, T: float, dt: float,
                             stream: RngStream,
                             eta: Optional[float] = None) -> GapCurve:
    """Run two ensembles with identical per-index noise and the same policy.

    Each system reads its own state and empirical measure; the mean-square
    index-paired gap is recorded together with the exp(-2 eta t) envelope.
    """
    if ens_a0.n != ens_b0.n:
        raise ConfigError("coupled ensembles need equal particle counts")
    if eta is None:
        from .model import dissipativity_margin
        eta = dissipativity_margin(model).eta
    steps = _n_steps(T, dt)
    gen = stream.generator()
    Xa, Xb = ens_a0.positions.copy(), ens_b0.positions.copy()
    sq = math.sqrt(dt)
    times = np.arange(steps + 1) * dt
    gaps = np.empty(steps + 1)
    gaps[0] = float(np.mean(((Xa - Xb) ** 2).sum(axis=1)))
    t = 0.0
    for j in range(steps):
        Z = gen.standard_normal(Xa.shape)
        ma = Xa.mean(axis=0)
        mb = Xb.mean(axis=0)
        Aa = policy.actions(t, Xa, ma, 0.0)
        Ab = policy.actions(t, Xb, mb, 0.0)
        Xa = Xa + model.drift(Xa, ma, Aa) * dt + model.diffusion(Xa, ma, Aa) * sq * Z
        Xb = Xb + model.drift(Xb, mb, Ab) * dt + model.diffusion(Xb, mb, Ab) * sq * Z
        t = (j + 1) * dt
        _check_finite(Xa, t)
        _check_finite(Xb, t)
        gaps[j + 1] = float(np.mean(((Xa - Xb) ** 2).sum(axis=1)))
    envelope = gaps[0] * np.exp(-2.0 * eta * times)
    return GapCurve(times=times, mean_sq_gap=gaps, envelope=envelope, eta=eta)


@dataclass
class MomentCurve:
    times: np.ndarray
    second_moment: np.ndarray
    ceiling: np.ndarray
    K: float
    breached: bool

    def rows(self):
        return list(zip(self.times, self.second_moment, self.ceiling))


def second_moment_curve(model: ModelSpec, policy, ens0: Ensemble, T: float,
                        dt: float, stream: RngStream,
                        slack: float = 0.25) -> MomentCurve:
    """Record E|X_t|^2 along one run against the m0 e^{-eta t} + K ceiling."""
    from .model import dissipativity_margin
    rep = dissipativity_margin(model)
    samples = []

    def obs(t, X):
        samples.append((t, float(np.mean((X ** 2).sum(axis=1)))))

    simulate_reward_path(model, policy, ens0, T, dt, stream, observer=obs)
    times = np.array([s[0] for s in samples])
    m2 = np.array([s[1] for s in samples])
    ceiling = (m2[0] * np.exp(-rep.eta * times) + rep.K) * (1.0 + slack)
    return MomentCurve(times=times, second_moment=m2, ceiling=ceiling,
                       K=rep.K, breached=bool(np.any(m2 > ceiling)))
