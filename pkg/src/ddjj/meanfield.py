"""Dissipative discrete nonlinear Schroedinger lattice.

    d psi_n / dt = i J~_n (psi_{n-1} + psi_{n+1}) - i U |psi_n|^2 psi_n
                   - delta_{nm} (gamma / 2) psi_n

(hbar = 1, open chain). Only the two bonds touching the lossy site m carry the
filling-dependent coupling J'(dN), with dN the mean neighbour filling minus N_m.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .core import (
    CouplingModel,
    DomainError,
    InitialCondition,
    LatticeParams,
    Solver,
    SteadyStateRecord,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEPLETION_LIMIT = 0.10


class NoSuperfluidSteadyState(ValueError):
    """gamma > 4J: no supercurrent can balance the loss."""


class StiffnessError(RuntimeError):
    pass


class ReservoirDepletedError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class MeanfieldState:
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        a = np.array(self.amplitudes, dtype=complex)
        if a.ndim != 1:
            raise ShapeError("amplitudes must be one-dimensional")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @property
    def fillings(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.amplitudes)


@dataclass(frozen=True)
class BlochSteadyState:
    delta_phi: float
    quasi_momentum: float
    filling: float


class InitialKind(str, Enum):
    FULL_UNIFORM = "full"
    EMPTY_LOSSY_SITE = "empty"


def _bond_couplings(psi: np.ndarray, params: LatticeParams, coupling: CouplingModel) -> np.ndarray:
    """Coupling on bond (n, n+1) for n = 0..L-2."""
    L, m, j = params.n_sites, params.lossy_site, params.j_coupling
    bonds = np.full(L - 1, j)
    if L > 1:
        dens = (psi * psi.conj()).real
        nbrs = [dens[k] for k in (m - 1, m + 1) if 0 <= k < L]
        jp = j * coupling.overlap(float(np.mean(nbrs)) - dens[m])
        if m - 1 >= 0:
            bonds[m - 1] = jp
        if m < L - 1:
            bonds[m] = jp
    return bonds


def _rhs_array(psi: np.ndarray, params: LatticeParams, coupling: CouplingModel) -> np.ndarray:
    bonds = _bond_couplings(psi, params, coupling)
    hop = np.zeros_like(psi)
    hop[:-1] += bonds * psi[1:]
    hop[1:] += bonds * psi[:-1]
    out = 1j * hop - 1j * params.u_interaction * (psi * psi.conj()).real * psi
    out[params.lossy_site] -= 0.5 * params.gamma * psi[params.lossy_site]
    return out


def dnls_rhs(state: MeanfieldState, params: LatticeParams, coupling: CouplingModel) -> np.ndarray:
    if state.amplitudes.size != params.n_sites:
        raise ShapeError(f"state has {state.amplitudes.size} sites, params expect {params.n_sites}")
    return _rhs_array(state.amplitudes, params, coupling)


@dataclass
class Trajectory:
    """Sampled mean-field evolution; ``amplitudes`` has shape (samples, sites)."""

    times: np.ndarray
    amplitudes: np.ndarray
    params: LatticeParams
    coupling: CouplingModel

    @property
    def fillings(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @property
    def phases(self) -> np.ndarray:
        return np.angle(self.amplitudes)

    def lossy_filling(self) -> np.ndarray:
        return self.fillings[:, self.params.lossy_site]

    def state(self, k: int) -> MeanfieldState:
        return MeanfieldState(self.amplitudes[k], float(self.times[k]))


def evolve(state: MeanfieldState, params: LatticeParams, coupling: CouplingModel, t_final: float,
           tol: float = DEFAULT_TOL, n_samples: int = 201, clamp_edges: bool = False,
           check_depletion: bool = True) -> Trajectory:
    """Adaptive Dormand-Prince 8(5,3) integration up to ``t_final``.

    ``clamp_edges`` freezes the modulus of the two outermost sites, which keep
    rotating at the initial local frequency of their interior neighbour. With
    ``check_depletion`` the run aborts once the reservoir (all non-lossy sites)
    has lost more than 10 % of its atoms.
    """
    if not t_final > 0:
        raise DomainError("t_final must be > 0")
    if not tol > 0:
        raise DomainError("tol must be > 0")
    psi0 = np.array(state.amplitudes, dtype=complex)
    if psi0.size != params.n_sites:
        raise ShapeError(f"state has {psi0.size} sites, params expect {params.n_sites}")
    m = params.lossy_site
    edges = [0, params.n_sites - 1] if clamp_edges and params.n_sites > 2 else []
    edge_omega = {}
    if edges:
        d0 = _rhs_array(psi0, params, coupling)
        for k, inner in ((0, 1), (params.n_sites - 1, params.n_sites - 2)):
            edge_omega[k] = (d0[inner] / psi0[inner]).imag if psi0[inner] != 0 else 0.0

    def rhs(_t, y):
        out = _rhs_array(y, params, coupling)
        for k in edges:
            out[k] = 1j * edge_omega[k] * y[k]
        return out

    reservoir = np.ones(params.n_sites, bool)
    reservoir[m] = False
    res0 = float(np.sum(np.abs(psi0[reservoir]) ** 2))

    def depleted(_t, y):
        return np.sum(np.abs(y[reservoir]) ** 2) - (1 - DEPLETION_LIMIT) * res0

    depleted.terminal = True
    events = [depleted] if check_depletion and res0 > 0 and not edges else None

    t_eval = np.linspace(0.0, t_final, n_samples)
    scale = math.sqrt(max(float(np.max(np.abs(psi0) ** 2)), 1.0))
    sol = solve_ivp(rhs, (0.0, t_final), psi0, method="DOP853", t_eval=t_eval, rtol=tol,
                    atol=tol * scale, events=events)
    if sol.status == -1:
        raise StiffnessError(f"step size underflow at t={sol.t[-1] if sol.t.size else 0.0:.6g} s: {sol.message}")
    if sol.status == 1:
        t_hit = float(sol.t_events[0][0])
        log.warning("reservoir depleted by more than 10%% at t=%.4g s; aborting run", t_hit)
        raise ReservoirDepletedError(f"reservoir depleted by more than 10% at t={t_hit:.6g} s")
    return Trajectory(sol.t, sol.y.T.copy(), params, coupling)


def analytic_bloch_steady_state(params: LatticeParams) -> BlochSteadyState:
    s = params.gamma / (4.0 * params.j_coupling)
    if s > 1.0:
        raise NoSuperfluidSteadyState(
            f"gamma={params.gamma:g} exceeds 4J={4 * params.j_coupling:g}; supercurrent cannot balance the loss"
        )
    dphi = math.asin(s)
    return BlochSteadyState(dphi, dphi, params.n0)


def bloch_state(params: LatticeParams) -> MeanfieldState:
    """Lattice realisation of the analytic steady state: uniform filling N0
    with the phase falling by dphi per bond away from the lossy site."""
    b = analytic_bloch_steady_state(params)
    dist = np.abs(np.arange(params.n_sites) - params.lossy_site)
    return MeanfieldState(math.sqrt(params.n0) * np.exp(-1j * b.delta_phi * dist))


def prepare_initial(params: LatticeParams, kind, seed_fraction: float = 1e-3) -> MeanfieldState:
    kind = InitialKind(kind.value if isinstance(kind, InitialCondition) else kind)
    psi = np.full(params.n_sites, math.sqrt(params.n0), dtype=complex)
    if kind is InitialKind.EMPTY_LOSSY_SITE:
        if not 0 < seed_fraction < 1:
            raise DomainError("seed_fraction must lie in (0, 1); an exactly empty site has no phase")
        psi[params.lossy_site] = math.sqrt(seed_fraction * params.n0)
    return MeanfieldState(psi)


def site_current(trajectory: Trajectory, params: Optional[LatticeParams] = None) -> np.ndarray:
    """I(t) = dN_m/dt + gamma N_m, with dN_m/dt from the equations of motion."""
    params = params or trajectory.params
    m = params.lossy_site
    out = np.empty(trajectory.times.size)
    for k, psi in enumerate(trajectory.amplitudes):
        d = _rhs_array(psi, params, trajectory.coupling)
        dn = 2.0 * (psi[m].conjugate() * d[m]).real
        out[k] = dn + params.gamma * abs(psi[m]) ** 2
    return out


def total_norm(trajectory: Trajectory) -> np.ndarray:
    return trajectory.fillings.sum(axis=1)


def steady_record(params: LatticeParams, coupling: CouplingModel, kind: InitialCondition,
                  t_final: Optional[float] = None, epsilon: float = 0.05, tol: float = DEFAULT_TOL,
                  window: float = 0.2, spread: float = 0.02, clamp_edges: bool = False) -> SteadyStateRecord:
    """Run one lattice relaxation and summarise the lossy-site steady state.

    The steady filling is the mean over the final ``window`` of the run; the
    run counts as converged when the filling stays within ``spread * N0`` over
    that window and the reservoir stayed within the depletion limit.
    """
    kind = InitialCondition(kind)
    j, n0 = params.j_coupling, params.n0
    if t_final is None:
        t_final = 200.0 / j
    psi0 = prepare_initial(params, kind)
    try:
        traj = evolve(psi0, params, coupling, t_final, tol=tol, n_samples=1001, clamp_edges=clamp_edges)
    except (ReservoirDepletedError, StiffnessError):
        return SteadyStateRecord(j, params.gamma, kind, float("nan"), n0, float("nan"), None,
                                 Solver.MEANFIELD, converged=False)
    nm = traj.lossy_filling()
    tail = traj.times >= (1 - window) * t_final
    n_s = float(nm[tail].mean())
    ok = float(nm[tail].max() - nm[tail].min()) < spread * n0
    m = params.lossy_site
    psi = traj.amplitudes[-1]
    nbr = psi[m + 1] if m + 1 < params.n_sites else psi[m - 1]
    dphi = float(np.angle(psi[m] * nbr.conjugate()))
    tau = None
    if ok:
        off = np.nonzero(np.abs(nm - n_s) >= epsilon * n0)[0]
        tau = float(traj.times[off[-1]]) if off.size else 0.0
    return SteadyStateRecord(j, params.gamma, kind, n_s / n0, n0, dphi, tau, Solver.MEANFIELD, converged=ok)
