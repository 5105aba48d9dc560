"""Lumped model: the lossy site (filling N, phase difference dphi to the
reservoir) fed by two reservoir leads at filling N0.

    dN/dt    = -gamma N + 4 J'(dN) sqrt(N N0) sin(dphi) + kappa (N0 - N)
    dphi/dt  = w (mu(N0) - mu(N)) + (1 - w) Gamma_phi cos(dphi)

with w = J'(dN)/J the Franck-Condon overlap and kappa = c J^2 the incoherent
hopping rate. For w = 1 (constant coupling, or a full site) the phase obeys the
plain Josephson relation. A mismatched, nearly empty site loses phase memory;
its phase then relaxes at rate Gamma_phi towards the maximal-inflow quadrature
and the transport becomes Franck-Condon-limited hopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .core import (
    ChemicalPotentialModel,
    CouplingModel,
    CouplingVariant,
    DomainError,
    InitialCondition,
    LatticeParams,
    Solver,
    SteadyStateRecord,
    chemical_potential_difference,
)

DEFAULT_KAPPA_COEFFICIENT = 1e-3  # s; kappa = c J^2
DEFAULT_EPSILON = 0.05
EMPTY_SEED_FRACTION = 1e-3


class NotConvergedError(RuntimeError):
    pass


class DivergentError(NotConvergedError):
    """Relaxation did not settle within t_max."""


def wrap_phase(phi):
    """Map onto (-pi, pi]."""
    out = -((-np.asarray(phi, dtype=float) + np.pi) % (2 * np.pi) - np.pi)
    return float(out) if np.ndim(phi) == 0 else out


@dataclass(frozen=True)
class TwoModeState:
    n: float
    delta_phi: float

    def __post_init__(self):
        n = float(self.n)
        if not math.isfinite(n) or n < 0:
            raise DomainError(f"filling must be finite and >= 0, got {self.n!r}")
        if not math.isfinite(float(self.delta_phi)):
            raise DomainError("delta_phi must be finite")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "delta_phi", wrap_phase(float(self.delta_phi)))

    def as_array(self) -> np.ndarray:
        return np.array([self.n, self.delta_phi])


@dataclass(frozen=True)
class RateModelParams:
    lattice: LatticeParams = field(default_factory=LatticeParams)
    coupling: Optional[CouplingModel] = None
    kappa_coefficient: float = DEFAULT_KAPPA_COEFFICIENT
    mu_model: Optional[ChemicalPotentialModel] = None
    phase_relaxation: Optional[float] = None

    def __post_init__(self):
        if self.coupling is None:
            object.__setattr__(self, "coupling", CouplingModel.default_for(self.lattice.n0))
        if self.mu_model is None:
            object.__setattr__(self, "mu_model", ChemicalPotentialModel(self.lattice.u_interaction))
        c = float(self.kappa_coefficient)
        if not math.isfinite(c) or c < 0:
            raise DomainError("kappa_coefficient must be >= 0")
        object.__setattr__(self, "kappa_coefficient", c)
        if self.phase_relaxation is None:
            object.__setattr__(self, "phase_relaxation", 10.0 * self.mu_model.mu(self.lattice.n0))
        if not self.phase_relaxation > 0:
            raise DomainError("phase_relaxation must be > 0")

    @property
    def kappa(self) -> float:
        return self.kappa_coefficient * self.lattice.j_coupling ** 2

    @property
    def n0(self) -> float:
        return self.lattice.n0

    def with_gamma(self, gamma: float) -> "RateModelParams":
        return RateModelParams(
            self.lattice.replace(gamma=gamma),
            self.coupling,
            self.kappa_coefficient,
            self.mu_model,
            self.phase_relaxation,
        )

    def with_j(self, j: float) -> "RateModelParams":
        return RateModelParams(
            self.lattice.replace(j_coupling=j),
            self.coupling,
            self.kappa_coefficient,
            self.mu_model,
            self.phase_relaxation,
        )

    def default_t_max(self) -> float:
        lat = self.lattice
        return max(100.0 / lat.gamma if lat.gamma > 0 else 0.0, 1e4 / lat.j_coupling)


def _flow(n, phi, p: RateModelParams):
    """Vectorised right-hand side; ``n`` is assumed >= 0."""
    lat = p.lattice
    n0, j, gamma = lat.n0, lat.j_coupling, lat.gamma
    dn = n0 - n
    w = p.coupling.overlap(dn)
    u = p.mu_model.u_interaction
    ndot = -gamma * n + 4.0 * j * w * np.sqrt(n * n0) * np.sin(phi) + p.kappa * dn
    phidot = w * u * dn + (1.0 - w) * p.phase_relaxation * np.cos(phi)
    return ndot, phidot


def rate_rhs(state: TwoModeState, p: RateModelParams) -> "RateDerivative":
    """Time derivative (dN/dt, d dphi/dt) at ``state``."""
    if state.n < 0:
        raise DomainError("filling must be >= 0")
    ndot, phidot = _flow(state.n, state.delta_phi, p)
    return RateDerivative(float(ndot), float(phidot))


@dataclass(frozen=True)
class RateDerivative:
    dn: float
    dphi: float


class Stability(str, Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    SADDLE = "saddle"


@dataclass(frozen=True)
class FixedPoint:
    state: TwoModeState
    stability: Stability
    eigenvalues: tuple


def jacobian(n: float, phi: float, p: RateModelParams, rel_step: float = 1e-6) -> np.ndarray:
    hn = rel_step * max(abs(n), p.n0)
    hp = rel_step * max(abs(phi), 1.0)
    jac = np.empty((2, 2))
    fp = np.array(_flow(n + hn, phi, p))
    fm = np.array(_flow(max(n - hn, 0.0), phi, p))
    jac[:, 0] = (fp - fm) / (n + hn - max(n - hn, 0.0))
    jac[:, 1] = (np.array(_flow(n, phi + hp, p)) - np.array(_flow(n, phi - hp, p))) / (2 * hp)
    return jac


def classify_eigenvalues(ev) -> Stability:
    re = np.real(ev)
    if np.all(re < 0):
        return Stability.STABLE
    if np.all(re > 0):
        return Stability.UNSTABLE
    return Stability.SADDLE


def _scaled_residual(n, phi, p):
    ndot, phidot = _flow(n, phi, p)
    j = p.lattice.j_coupling
    return np.maximum(np.abs(ndot) / (p.n0 * j), np.abs(phidot) / j)


def _newton(n, phi, p: RateModelParams, iters: int = 60):
    """Vectorised damped Newton on the flow; returns refined arrays."""
    n = np.array(n, dtype=float)
    phi = np.array(phi, dtype=float)
    nmax = 1.2 * p.n0
    for _ in range(iters):
        f1, f2 = _flow(n, phi, p)
        hn = 1e-7 * p.n0
        hp = 1e-7
        a1, a2 = _flow(n + hn, phi, p)
        b1, b2 = _flow(np.maximum(n - hn, 0.0), phi, p)
        dn_ = n + hn - np.maximum(n - hn, 0.0)
        j11, j21 = (a1 - b1) / dn_, (a2 - b2) / dn_
        c1, c2 = _flow(n, phi + hp, p)
        d1, d2 = _flow(n, phi - hp, p)
        j12, j22 = (c1 - d1) / (2 * hp), (c2 - d2) / (2 * hp)
        det = j11 * j22 - j12 * j21
        det = np.where(np.abs(det) < 1e-300, 1e-300, det)
        sn = -(j22 * f1 - j12 * f2) / det
        sp = -(-j21 * f1 + j11 * f2) / det
        res0 = _scaled_residual(n, phi, p)
        lam = np.ones_like(n)
        # backtracking: halve the step until the residual decreases
        for _ in range(30):
            nt = np.clip(n + lam * sn, 0.0, nmax)
            pt = phi + lam * sp
            worse = _scaled_residual(nt, pt, p) > res0
            if not np.any(worse):
                break
            lam = np.where(worse, lam / 2, lam)
        n, phi = nt, pt
        if np.all(_scaled_residual(n, phi, p) < 1e-13):
            break
    return n, phi


def find_fixed_points(p: RateModelParams, n_grid: int = 241, phi_grid: int = 144, tol: float = 1e-10) -> List[FixedPoint]:
    """All fixed points with N in [0, 1.2 N0] and dphi in (-pi, pi].

    Cells of a regular grid in which both flow components change sign are
    refined by damped Newton; converged roots are deduplicated and classified
    by the eigenvalues of the finite-difference Jacobian.
    """
    n0 = p.n0
    ns = np.linspace(0.0, 1.2 * n0, n_grid)
    phis = np.linspace(-np.pi, np.pi, phi_grid + 1)
    N, P = np.meshgrid(ns, phis, indexing="ij")
    f1, f2 = _flow(N, P, p)

    def changes(f):
        corners = np.stack([f[:-1, :-1], f[1:, :-1], f[:-1, 1:], f[1:, 1:]])
        return (corners.min(axis=0) <= 0) & (corners.max(axis=0) >= 0)

    cand = changes(f1) & changes(f2)
    ii, jj = np.nonzero(cand)
    seeds_n = 0.5 * (ns[ii] + ns[ii + 1])
    seeds_p = 0.5 * (phis[jj] + phis[jj + 1])
    # exact full-site candidates: the grid may straddle them on a cell edge
    lat = p.lattice
    s = lat.gamma / (4.0 * lat.j_coupling)
    if s <= 1.0:
        a = math.asin(s)
        seeds_n = np.concatenate([seeds_n, [n0, n0]])
        seeds_p = np.concatenate([seeds_p, [a, math.pi - a]])
    if seeds_n.size == 0:
        return []
    rn, rp = _newton(seeds_n, seeds_p, p)
    res = _scaled_residual(rn, rp, p)
    ok = (res < tol) & (rn >= 0) & (rn <= 1.2 * n0 * (1 + 1e-12))
    found: List[FixedPoint] = []
    for n, phi in sorted(zip(rn[ok], wrap_phase(rp[ok]))):
        if any(abs(n - f.state.n) < 1e-6 * n0 and abs(wrap_phase(phi - f.state.delta_phi)) < 1e-6 for f in found):
            continue
        ev = np.linalg.eigvals(jacobian(n, phi, p))
        found.append(FixedPoint(TwoModeState(n, phi), classify_eigenvalues(ev), tuple(complex(e) for e in ev)))
    found.sort(key=lambda f: (f.state.n, f.state.delta_phi))
    return found


def stable_fixed_points(p: RateModelParams) -> List[FixedPoint]:
    return [f for f in find_fixed_points(p) if f.stability is Stability.STABLE]


def initial_state(p: RateModelParams, kind: InitialCondition, seed_fraction: float = EMPTY_SEED_FRACTION) -> TwoModeState:
    kind = InitialCondition(kind)
    if kind is InitialCondition.FULL:
        s = min(p.lattice.gamma / (4 * p.lattice.j_coupling), 1.0)
        return TwoModeState(p.n0, math.asin(s))
    if not 0 < seed_fraction < 1:
        raise DomainError("seed_fraction must lie in (0, 1)")
    return TwoModeState(seed_fraction * p.n0, 0.0)


@dataclass
class Trajectory:
    t: np.ndarray
    n: np.ndarray
    delta_phi: np.ndarray
    sol: object = None


def evolve(state: TwoModeState, p: RateModelParams, t_final: float, n_samples: int = 2001, rtol: float = 1e-10) -> Trajectory:
    if not t_final > 0:
        raise DomainError("t_final must be > 0")

    def rhs(_t, y):
        n = y[0] if y[0] > 0 else 0.0
        a, b = _flow(n, y[1], p)
        return [a, b]

    sol = solve_ivp(rhs, (0.0, t_final), state.as_array(), method="DOP853", rtol=rtol,
                    atol=[1e-9 * p.n0, 1e-10], dense_output=True)
    if not sol.success:
        raise NotConvergedError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")
    t = np.linspace(0.0, t_final, n_samples)
    y = sol.sol(t)
    return Trajectory(t, np.maximum(y[0], 0.0), y[1], sol)


def _settle(state: TwoModeState, p: RateModelParams, t_max: float, rtol: float = 1e-10):
    """Integrate in chunks until the flow is stationary.

    Returns (final fixed point or None, list of solve_ivp solutions, elapsed).
    """
    lat = p.lattice
    chunk = 20.0 / (lat.gamma + p.kappa + lat.j_coupling * 1e-2)
    y = state.as_array()
    t = 0.0
    sols = []

    def rhs(_t, yy):
        n = yy[0] if yy[0] > 0 else 0.0
        a, b = _flow(n, yy[1], p)
        return [a, b]

    while t < t_max:
        t_end = min(t + chunk, t_max)
        sol = solve_ivp(rhs, (t, t_end), y, method="DOP853", rtol=rtol,
                        atol=[1e-9 * p.n0, 1e-10], dense_output=True)
        if not sol.success:
            raise NotConvergedError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")
        sols.append(sol)
        y = sol.y[:, -1].copy()
        y[0] = max(y[0], 0.0)
        t = t_end
        if _scaled_residual(y[0], y[1], p) < 1e-7:
            rn, rp = _newton(np.array([y[0]]), np.array([y[1]]), p)
            if _scaled_residual(rn[0], rp[0], p) < 1e-10 and abs(rn[0] - y[0]) < 1e-4 * p.n0:
                return TwoModeState(float(rn[0]), float(rp[0])), sols, t
        chunk *= 1.5
    return None, sols, t


def steady_state(state: TwoModeState, p: RateModelParams, t_max: Optional[float] = None) -> TwoModeState:
    fp, _, _ = _settle(state, p, t_max or p.default_t_max())
    if fp is None:
        raise NotConvergedError("no stationary state reached within t_max")
    return fp


def settling_time(curve, t_grid, target: float, threshold: float) -> Optional[float]:
    """Last time on ``t_grid`` (refined by root finding) at which
    ``|curve(t) - target|`` still reaches ``threshold``; ``None`` if never."""
    t_grid = np.asarray(t_grid, dtype=float)

    def dev(x):
        return np.abs(np.asarray(curve(x), dtype=float) - target) - threshold

    d = dev(t_grid)
    above = np.nonzero(d >= 0)[0]
    if above.size == 0:
        return None
    k = above[-1]
    if k == t_grid.size - 1:
        return float(t_grid[-1])
    return float(brentq(lambda x: float(dev(x)), t_grid[k], t_grid[k + 1], xtol=1e-14, rtol=1e-12))


def relaxation_time(p: RateModelParams, initial: TwoModeState, epsilon: float = DEFAULT_EPSILON,
                    t_max: Optional[float] = None) -> float:
    """Time after which |N(t) - N_S| < epsilon N0 for good."""
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    fp, sols, _ = _settle(initial, p, t_max or p.default_t_max())
    if fp is None:
        raise DivergentError("no convergence within t_max")
    thr = epsilon * p.n0
    # scan backwards for the last excursion above the threshold
    for sol in reversed(sols):
        tt = np.linspace(sol.t[0], sol.t[-1], 4001)
        t = settling_time(lambda x, sol=sol: sol.sol(x)[0], tt, fp.n, thr)
        if t is not None:
            return t
    return 0.0


class SweepDirection(str, Enum):
    UP = "up"
    DOWN = "down"


def hysteresis_sweep(p: RateModelParams, gamma_grid: Sequence[float], direction: SweepDirection) -> List[SteadyStateRecord]:
    """Adiabatic continuation over ``gamma_grid`` (ascending).

    UP starts from an empty site at the smallest gamma, DOWN from a full site
    at the largest; each converged state seeds the next gamma. Records are
    returned in ascending gamma order.
    """
    grid = np.asarray(gamma_grid, dtype=float)
    if grid.size and np.any(np.diff(grid) < 0):
        raise DomainError("gamma_grid must be sorted ascending")
    direction = SweepDirection(direction)
    order = list(range(grid.size)) if direction is SweepDirection.UP else list(range(grid.size))[::-1]
    kind = InitialCondition.EMPTY if direction is SweepDirection.UP else InitialCondition.FULL
    records = {}
    state = None
    for k in order:
        pk = p.with_gamma(float(grid[k]))
        if state is None:
            state = initial_state(pk, kind)
        fp, _, _ = _settle(state, pk, pk.default_t_max())
        if fp is None:
            records[k] = SteadyStateRecord(pk.lattice.j_coupling, pk.lattice.gamma, kind, float("nan"),
                                           p.n0, float("nan"), None, Solver.TWOMODE, converged=False)
            continue
        state = fp
        records[k] = SteadyStateRecord(pk.lattice.j_coupling, pk.lattice.gamma, kind, fp.n / p.n0,
                                       p.n0, fp.delta_phi, None, Solver.TWOMODE)
    return [records[k] for k in range(grid.size)]


def _orbit_mean(sols, p: RateModelParams, spread: float = 1e-2) -> Optional[float]:
    """Time-averaged filling over the last integration chunk when the previous
    chunk gives the same average within ``spread * N0``; ``None`` otherwise."""
    if len(sols) < 2:
        return None
    means = []
    for sol in sols[-2:]:
        tt = np.linspace(sol.t[0], sol.t[-1], 4001)
        means.append(float(np.mean(np.maximum(sol.sol(tt)[0], 0.0))))
    if abs(means[1] - means[0]) > spread * p.n0:
        return None
    return means[1]


def steady_record(p: RateModelParams, kind: InitialCondition, epsilon: float = DEFAULT_EPSILON,
                  with_tau: bool = True) -> SteadyStateRecord:
    """Relax from the given initial condition and record the steady state."""
    kind = InitialCondition(kind)
    init = initial_state(p, kind)
    lat = p.lattice
    fp, sols, _ = _settle(init, p, p.default_t_max())
    if fp is None:
        mean = _orbit_mean(sols, p)
        if mean is None:
            return SteadyStateRecord(lat.j_coupling, lat.gamma, kind, float("nan"), p.n0, float("nan"),
                                     None, Solver.TWOMODE, converged=False)
        # running phase: periodic orbit or decay into the phase-less empty state
        return SteadyStateRecord(lat.j_coupling, lat.gamma, kind, mean / p.n0, p.n0, float("nan"),
                                 None, Solver.TWOMODE)
    tau = relaxation_time(p, init, epsilon) if with_tau else None
    return SteadyStateRecord(lat.j_coupling, lat.gamma, kind, fp.n / p.n0, p.n0, fp.delta_phi, tau, Solver.TWOMODE)


def current_voltage_curve(records: Sequence[SteadyStateRecord], mu_model: ChemicalPotentialModel):
    """(chemical potential drop, steady current) per record."""
    out = []
    for r in records:
        n_s = r.n_steady
        out.append((chemical_potential_difference(mu_model, r.n0, max(n_s, 0.0)), r.gamma * n_s))
    return out


def hopping_branch_phase(n, p: RateModelParams):
    """Stable phase root of the phase equation at filling ``n`` (nan where the
    phase cannot lock)."""
    dn = p.n0 - n
    w = p.coupling.overlap(dn)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = w * p.mu_model.u_interaction * dn / ((1.0 - w) * p.phase_relaxation)
    return np.where(np.abs(r) <= 1.0, np.arccos(np.clip(-r, -1, 1)), np.nan)


def resistive_onset_gamma(p: RateModelParams) -> Optional[float]:
    """Smallest gamma at which a phase-locked partially filled fixed point
    exists (the saddle-node of the empty branch), by 1D minimisation of the
    gamma needed to balance inflow at each filling. ``None`` if that branch
    never appears below the superfluid limit 4J."""
    n0 = p.n0

    def gamma_of(x):
        n = x * n0
        phi = hopping_branch_phase(n, p)
        if np.isnan(phi):
            return np.inf
        w = p.coupling.overlap(n0 - n)
        inflow = p.kappa * (n0 - n) + 4 * p.lattice.j_coupling * w * math.sqrt(n * n0) * math.sin(phi)
        return inflow / n

    xs = np.linspace(1e-4, 0.999, 4000)
    vals = np.array([gamma_of(x) for x in xs])
    k = int(np.argmin(vals))
    if not np.isfinite(vals[k]) or k in (0, xs.size - 1):
        return None
    res = minimize_scalar(gamma_of, bracket=(xs[k - 1], xs[k], xs[k + 1]), tol=1e-14)
    g = float(res.fun)
    if g >= 4 * p.lattice.j_coupling:
        return None
    return g


def is_constant(p: RateModelParams) -> bool:
    return p.coupling.variant is CouplingVariant.CONSTANT
