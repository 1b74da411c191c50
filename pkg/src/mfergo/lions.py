"""Measure derivatives on particle ensembles, the Hamiltonian, and feedback.

A function u on probability measures is differentiated through its empirical
lift u_tilde(x_1, ..., x_N) = u(mu_hat): the per-particle estimates are

    dmu[i]   = N * (u(x_i + h) - u(x_i - h)) / (2 h)
    dxdmu[i] = N * (u(x_i + h) - 2 u(x_i) + u(x_i - h)) / h^2

(the diagonal second difference of the lift, scaled by N; coordinate-wise in
d > 1).  Both formulas are exact for polynomial moment functionals of degree
<= 2.  Evaluating them in float64 leaves a cancellation noise floor of order
eps * N / h^2 on the second difference, so for moment functionals the
combination is computed in exact (dyadic rational) arithmetic and rounded
once at the end; arbitrary callables use the plain float path.

The Hamiltonian functional integrates the pointwise supremum over the action
grid of  f + <b, dmu> + tr(sigma sigma^T dxdmu) / 2  against the empirical
measure, and the greedy feedback tabulates its argmax (ties break toward the
smallest action).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .model import ModelSpec
from .particle import Ensemble
from .policy import TabularPolicy

__all__ = [
    "DerivativeField", "MomentFunctional", "SeparableFunctional",
    "second_moment_functional", "mean_functional", "mean_squared_functional",
    "lions_derivative", "hamiltonian_F", "HjbResidualReport", "hjb_residual",
    "OracleDerivativeSource", "InterpolantDerivativeSource",
    "PoissonBiasOracle", "greedy_feedback",
]


# ---------------------------------------------------------------------------
# measure functionals
# ---------------------------------------------------------------------------

class MomentFunctional:
    """u(mu) = g(M_{p_1}, ..., M_{p_r}) with M_p the p-th raw moment mean.

    ``g`` must be built from +, -, *, / so it evaluates on Fraction inputs as
    well as floats (d = 1 only).
    """

    exact_capable = True

    def __init__(self, powers: Sequence[int], g: Callable, label: str = ""):
        self.powers = tuple(int(p) for p in powers)
        self.g = g
        self.label = label or f"moment{self.powers}"

    def __call__(self, positions: np.ndarray) -> float:
        x = np.asarray(positions, dtype=float).ravel()
        return float(self.g(*[np.mean(x ** p) for p in self.powers]))


def second_moment_functional() -> MomentFunctional:
    return MomentFunctional((2,), lambda m2: m2, "second_moment")


def mean_functional() -> MomentFunctional:
    return MomentFunctional((1,), lambda m1: m1, "mean")


def mean_squared_functional() -> MomentFunctional:
    return MomentFunctional((1,), lambda m1: m1 * m1, "mean_squared")


class SeparableFunctional:
    """u(mu) = mean of psi(x) over the ensemble, psi a scalar function."""

    exact_capable = False

    def __init__(self, psi: Callable, label: str = "separable"):
        self.psi = psi
        self.label = label

    def __call__(self, positions: np.ndarray) -> float:
        x = np.asarray(positions, dtype=float).ravel()
        return float(np.mean(self.psi(x)))


# ---------------------------------------------------------------------------
# derivative field
# ---------------------------------------------------------------------------

@dataclass
class DerivativeField:
    positions: np.ndarray          # (N, d) the field was evaluated on
    dmu: np.ndarray                # (N, d)
    dxdmu: np.ndarray              # (N, d, d)
    fd_step: float

    def __post_init__(self):
        if not (np.all(np.isfinite(self.dmu)) and np.all(np.isfinite(self.dxdmu))):
            raise ConfigError("derivative field has non-finite entries")


def _lions_exact_moment(u: MomentFunctional, x: np.ndarray, h: float):
    """Exact-rational central differences for a moment functional (d = 1)."""
    N = x.size
    hf = Fraction(h)
    xf = [Fraction(v) for v in x]
    sums = {p: sum(v ** p for v in xf) for p in u.powers}
    u0 = u.g(*[sums[p] / N for p in u.powers])
    dmu = np.empty(N)
    dxdmu = np.empty(N)
    for i in range(N):
        up_m, dn_m = [], []
        for p in u.powers:
            base = sums[p] - xf[i] ** p
            up_m.append((base + (xf[i] + hf) ** p) / N)
            dn_m.append((base + (xf[i] - hf) ** p) / N)
        up, dn = u.g(*up_m), u.g(*dn_m)
        dmu[i] = float(N * (up - dn) / (2 * hf))
        dxdmu[i] = float(N * (up - 2 * u0 + dn) / (hf * hf))
    return dmu, dxdmu


def _lions_float(u: Callable, X: np.ndarray, h: float):
    """Plain float central differences, coordinate-wise, any callable."""
    N, d = X.shape
    dmu = np.empty((N, d))
    dxdmu = np.zeros((N, d, d))
    work = X.copy()
    u0 = float(u(work))
    for i in range(N):
        for j in range(d):
            xi = work[i, j]
            work[i, j] = xi + h
            up = float(u(work))
            work[i, j] = xi - h
            dn = float(u(work))
            work[i, j] = xi
            dmu[i, j] = N * (up - dn) / (2 * h)
            dxdmu[i, j, j] = N * (up - 2 * u0 + dn) / (h * h)
    return dmu, dxdmu


def lions_derivative(u, ens: Ensemble, fd_step: float = 1e-3,
                     mode: str = "auto") -> DerivativeField:
    """Per-particle first and second measure derivatives of u at mu_hat.

    mode "exact" evaluates the difference quotients in rational arithmetic
    (moment functionals, d = 1), "float" forces the generic path, "auto"
    picks exact whenever the functional supports it.
    """
    if fd_step <= 0:
        raise ConfigError("fd_step must be > 0")
    X = ens.positions
    exact_ok = getattr(u, "exact_capable", False) and X.shape[1] == 1
    if mode == "exact" and not exact_ok:
        raise ConfigError("exact mode needs a 1-d moment functional")
    use_exact = exact_ok if mode == "auto" else (mode == "exact")
    if use_exact:
        dmu1, dxdmu1 = _lions_exact_moment(u, X.ravel(), fd_step)
        dmu = dmu1[:, None]
        dxdmu = dxdmu1[:, None, None]
    else:
        dmu, dxdmu = _lions_float(u, X, fd_step)
    if not (np.all(np.isfinite(dmu)) and np.all(np.isfinite(dxdmu))):
        raise ConfigError("functional returned non-finite values")
    return DerivativeField(positions=X, dmu=dmu, dxdmu=dxdmu, fd_step=fd_step)


# ---------------------------------------------------------------------------
# Hamiltonian functional
# ---------------------------------------------------------------------------

def hamiltonian_F(model: ModelSpec, ens: Ensemble, field: DerivativeField,
                  actions: Optional[np.ndarray] = None) -> float:
    """(1/N) sum_i max_a [ f + <b, dmu_i> + tr(sigma sigma^T dxdmu_i)/2 ]."""
    if field.positions.shape != ens.positions.shape:
        raise ConfigError("derivative field does not match the ensemble")
    grid = model.action_set.grid() if actions is None else np.atleast_2d(actions)
    if grid.size == 0:
        raise ConfigError("empty action grid")
    X = ens.positions
    mean = X.mean(axis=0)
    f = model.reward_grid(X, mean, grid)              # (N, n)
    b = model.drift_grid(X, mean, grid)               # (N, n, d)
    sig = model.diffusion_grid(X, mean, grid)         # (N, n, d)
    diag2 = np.einsum("ndd->nd", field.dxdmu)         # (N, d)
    H = f + np.einsum("inj,ij->in", b, field.dmu) \
        + 0.5 * np.einsum("inj,ij->in", sig ** 2, diag2)
    return float(np.mean(np.max(H, axis=1)))


# ---------------------------------------------------------------------------
# derivative sources
# ---------------------------------------------------------------------------

class OracleDerivativeSource:
    """Analytic source: dmu(x) = hprime(x), dxdmu(x) = hsecond(x) (d = 1).

    Matches functionals of the form u(mu) = int h d(mu), whose Lions
    derivative is h' independently of mu.
    """

    def __init__(self, hprime: Callable, hsecond: Callable):
        self.hprime = hprime
        self.hsecond = hsecond

    def field(self, ens: Ensemble) -> DerivativeField:
        x = ens.positions.ravel()
        return DerivativeField(positions=ens.positions,
                               dmu=self.hprime(x)[:, None],
                               dxdmu=self.hsecond(x)[:, None, None],
                               fd_step=0.0)

    def pointwise(self, x: np.ndarray, mean: float, sd: float):
        x = np.asarray(x, dtype=float)
        return self.hprime(x), self.hsecond(x)


class InterpolantDerivativeSource:
    """Derivatives of a (mean, sd)-interpolated phi surface.

    For u(mu) = G(m, s): dmu(x) = G_m + G_s (x - m)/s and dxdmu = G_s / s,
    with the partials of G taken by central differences on the surface.
    """

    def __init__(self, phi_surface: Callable, eps: float = 1e-4,
                 sd_floor: float = 0.05):
        self.G = phi_surface       # callable (mean, sd) -> float
        self.eps = eps
        self.sd_floor = sd_floor

    def _partials(self, m: float, s: float):
        e = self.eps
        gm = (self.G(m + e, s) - self.G(m - e, s)) / (2 * e)
        gs = (self.G(m, s + e) - self.G(m, max(s - e, 0.0))) / \
            (e + min(e, s))
        return gm, gs

    def pointwise(self, x: np.ndarray, mean: float, sd: float):
        x = np.asarray(x, dtype=float)
        s = max(sd, self.sd_floor)
        gm, gs = self._partials(mean, s)
        return gm + gs * (x - mean) / s, np.full_like(x, gs / s)

    def field(self, ens: Ensemble) -> DerivativeField:
        m, s = ens.measure().summary()
        dmu, dxdmu = self.pointwise(ens.positions.ravel(), float(m), s)
        return DerivativeField(positions=ens.positions, dmu=dmu[:, None],
                               dxdmu=dxdmu[:, None, None], fd_step=self.eps)


# ---------------------------------------------------------------------------
# stationary Poisson-equation oracle (1-d uncontrolled linear model)
# ---------------------------------------------------------------------------

class PoissonBiasOracle:
    """Bias function of a scalar linear model frozen at one action.

    For dX = (c + B x) dt + s dW with B < 0, constant s > 0 and reward f(x),
    the long-run average is lam = int f drho with rho = N(-c/B, s^2/(-2B)),
    and the centered bias h solves  s^2 h''/2 + (c + B x) h' = lam - f.
    The integrating factor gives

        h'(x) = 2 / (s^2 rho(x)) * int_{-inf}^x (lam - f(y)) rho(y) dy,

    evaluated on a grid; h'' follows pointwise from the equation itself and
    h (normalized h(0) = 0) by one more cumulative integral.  Since
    phi(mu) = int h dmu is linear in mu, h' and h'' are exactly its first
    and mixed second measure derivatives.
    """

    def __init__(self, model: ModelSpec, action=None, half_width: float = 8.0,
                 grid_points: int = 8001):
        if not model.is_affine or model.dim != 1:
            raise ConfigError("oracle needs a 1-d affine model")
        if np.any(model.Bbar != 0) or np.any(model.Sbar != 0) or np.any(model.S != 0):
            raise ConfigError("oracle needs constant sigma and no mean-field terms")
        if model.reward_mean is not None:
            raise ConfigError("oracle supports state rewards only")
        a = model.action_set.grid()[0] if action is None else np.atleast_1d(action)
        B = float(model.B[0, 0])
        if B >= 0:
            raise ConfigError("oracle needs a contracting drift (B < 0)")
        c = float(model.b0[0] + model.G[0] @ a)
        s = float(model.sigma0[0])
        if s <= 0:
            raise ConfigError("oracle needs nondegenerate noise")
        self.B, self.c, self.s, self.action = B, c, s, a
        self.m_star = -c / B
        self.v_star = s * s / (-2.0 * B)

        sd = math.sqrt(self.v_star)
        x = np.linspace(self.m_star - half_width * sd,
                        self.m_star + half_width * sd, grid_points)
        rho = np.exp(-0.5 * (x - self.m_star) ** 2 / self.v_star)
        cost = float(np.atleast_1d(model.action_cost(np.atleast_2d(a)))[0])
        fx = model.reward_x(x) - cost if model.reward_x is not None \
            else np.full_like(x, -cost)
        z = np.trapezoid(rho, x)
        lam = float(np.trapezoid(fx * rho, x) / z)

        integrand = (lam - fx) * rho
        dx = x[1] - x[0]
        cum = np.concatenate(
            [[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * dx)])
        hp = 2.0 * cum / (s * s * rho)
        h = np.concatenate([[0.0], np.cumsum(0.5 * (hp[1:] + hp[:-1]) * dx)])
        h -= np.interp(0.0, x, h)

        self.grid = x
        self._f = fx
        self._hp = hp
        self._h = h
        self.lambda_value = lam
        self._reward = model.reward_x
        self._cost = cost

    def hprime(self, xq) -> np.ndarray:
        return np.interp(np.asarray(xq, dtype=float), self.grid, self._hp)

    def hsecond(self, xq) -> np.ndarray:
        xq = np.asarray(xq, dtype=float)
        fq = self._reward(xq) - self._cost if self._reward is not None \
            else np.full_like(xq, -self._cost)
        return 2.0 * (self.lambda_value - fq
                      - (self.c + self.B * xq) * self.hprime(xq)) / (self.s ** 2)

    def h(self, xq) -> np.ndarray:
        return np.interp(np.asarray(xq, dtype=float), self.grid, self._h)

    def derivative_source(self) -> OracleDerivativeSource:
        return OracleDerivativeSource(self.hprime, self.hsecond)

    def phi_functional(self) -> SeparableFunctional:
        return SeparableFunctional(self.h, label="poisson_bias")

    def phi_surface(self, mean: float, sd: float, quad_points: int = 257) -> float:
        """phi on a Gaussian probe: int h dN(mean, sd^2) by quadrature."""
        if sd <= 0:
            return float(self.h(mean))
        z = np.linspace(-6.0, 6.0, quad_points)
        w = np.exp(-0.5 * z * z)
        return float(np.trapezoid(self.h(mean + sd * z) * w, z)
                     / np.trapezoid(w, z))


# ---------------------------------------------------------------------------
# HJB residual and greedy feedback
# ---------------------------------------------------------------------------

@dataclass
class HjbResidualReport:
    lambda_hat: float
    rows: Dict[str, float]         # probe id -> lambda_hat - F_hat
    max_abs: float

    def to_json(self) -> dict:
        return {"lambda_hat": self.lambda_hat, "rows": self.rows,
                "max_abs": self.max_abs}


def hjb_residual(model: ModelSpec, lambda_hat: float, source,
                 probes: Dict[str, Ensemble],
                 actions: Optional[np.ndarray] = None) -> HjbResidualReport:
    """Residual lambda_hat - F(mu, dmu phi, dxdmu phi) at each probe measure."""
    rows = {}
    for pid, ens in probes.items():
        field = source.field(ens)
        rows[pid] = lambda_hat - hamiltonian_F(model, ens, field, actions)
    return HjbResidualReport(lambda_hat=lambda_hat, rows=rows,
                             max_abs=max(abs(v) for v in rows.values()))


def greedy_feedback(model: ModelSpec, source, x_centers, m_centers,
                    sd_ref: float = 1.0,
                    actions: Optional[np.ndarray] = None) -> TabularPolicy:
    """Tabulate argmax_a of the Hamiltonian integrand on an (x, mean) grid.

    Ties break toward the smallest action (the grid is sorted ascending and
    argmax returns the first maximizer).
    """
    grid = model.action_set.grid() if actions is None else np.atleast_2d(actions)
    if grid.size == 0:
        raise ConfigError("empty action grid")
    xc = np.sort(np.asarray(x_centers, dtype=float).ravel())
    mc = np.sort(np.asarray(m_centers, dtype=float).ravel())
    table = np.empty((len(xc), len(mc), grid.shape[1]))
    for mi, m in enumerate(mc):
        dmu, dxdmu = source.pointwise(xc, float(m), sd_ref)
        mean = np.full(model.dim, m)
        X = xc[:, None]
        f = model.reward_grid(X, mean, grid)                       # (nx, na)
        b = model.drift_grid(X, mean, grid)[..., 0]                # (nx, na)
        sig = model.diffusion_grid(X, mean, grid)[..., 0]          # (nx, na)
        H = f + b * dmu[:, None] + 0.5 * sig ** 2 * dxdmu[:, None]
        table[:, mi, :] = grid[np.argmax(H, axis=1)]
    return TabularPolicy(model.action_set, xc, mc, table)
