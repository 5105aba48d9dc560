"""Exact few-site Bose-Hubbard dynamics with local particle loss.

Dense density-matrix propagation of the Lindblad master equation and its
quantum-jump unraveling. Intended for desk-scale instances (a handful of sites,
a few atoms), where it serves as a structural check of the mean-field picture.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import DOP853

from .core import DomainError, LatticeParams

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
POSITIVITY_ABORT = 1e-6
NESS_TOL = 1e-8
DEFAULT_MAX_D2 = 1_000_000
JUMP_NORM_TOL = 1e-6


class DimensionOverflowError(ValueError):
    pass


class IntegrationAccuracyError(RuntimeError):
    pass


class NonUniqueSteadyState(ValueError):
    pass


class NotConvergedError(RuntimeError):
    pass


class FockBasis:
    """Occupation tuples with n_i <= n_max and sum(n) <= n_total_cap, in
    lexicographic order."""

    def __init__(self, n_sites: int, n_max: int, n_total_cap: Optional[int] = None):
        if n_sites < 1 or n_max < 0:
            raise DomainError("need n_sites >= 1 and n_max >= 0")
        cap = n_sites * n_max if n_total_cap is None else n_total_cap
        if cap < 0:
            raise DomainError("n_total_cap must be >= 0")
        self.n_sites, self.n_max, self.n_total_cap = n_sites, n_max, cap
        self.states = [s for s in itertools.product(range(n_max + 1), repeat=n_sites) if sum(s) <= cap]
        self._index = {s: k for k, s in enumerate(self.states)}
        self.occupations = np.array(self.states, dtype=float).reshape(len(self.states), n_sites)

    @property
    def dim(self) -> int:
        return len(self.states)

    def index(self, occupation: Sequence[int]) -> int:
        try:
            return self._index[tuple(occupation)]
        except KeyError:
            raise DomainError(f"occupation {tuple(occupation)} is not in the basis") from None

    def fock_state(self, occupation: Sequence[int]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(occupation)] = 1.0
        return v

    def annihilation(self, site: int) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for k, s in enumerate(self.states):
            if s[site] > 0:
                t = list(s)
                t[site] -= 1
                rows.append(self._index[tuple(t)])
                cols.append(k)
                vals.append(math.sqrt(s[site]))
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim), dtype=complex)

    def number(self, site: int) -> sp.csr_matrix:
        return sp.diags(self.occupations[:, site].astype(complex)).tocsr()


def hamiltonian(params: LatticeParams, basis: FockBasis) -> sp.csr_matrix:
    """H = -J sum_i (a_i^+ a_{i+1} + h.c.) + (U/2) sum_i n_i (n_i - 1)."""
    if basis.n_sites != params.n_sites:
        raise DomainError(f"basis has {basis.n_sites} sites, params expect {params.n_sites}")
    a = [basis.annihilation(i) for i in range(basis.n_sites)]
    h = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for i in range(basis.n_sites - 1):
        hop = a[i].conj().T @ a[i + 1]
        h = h - params.j_coupling * (hop + hop.conj().T)
    occ = basis.occupations
    h = h + sp.diags((0.5 * params.u_interaction * occ * (occ - 1)).sum(axis=1).astype(complex))
    return h.tocsr()


@dataclass(frozen=True)
class JumpOperatorSpec:
    site: int
    rate: float

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate >= 0):
            raise DomainError("jump rate must be finite and >= 0")


def default_jumps(params: LatticeParams) -> list:
    return [JumpOperatorSpec(params.lossy_site, params.gamma)]


@dataclass
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=complex)
        d = self.entries.shape
        if len(d) != 2 or d[0] != d[1]:
            raise DomainError("density matrix must be square")

    @classmethod
    def pure(cls, psi: np.ndarray) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def expectation(self, op) -> float:
        return float(np.real(np.sum(op.T.multiply(self.entries)) if sp.issparse(op) else np.trace(op @ self.entries)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))[0])

    def validate(self):
        r = self.entries
        if np.max(np.abs(r - r.conj().T), initial=0.0) > HERMITIAN_TOL:
            raise DomainError("density matrix is not Hermitian")
        if abs(self.trace - 1) > TRACE_TOL:
            raise DomainError(f"density matrix trace {self.trace.real:.12g} != 1")
        if self.min_eigenvalue() < -POSITIVITY_TOL:
            raise DomainError("density matrix has negative eigenvalues")
        return self


class Liouvillian:
    """rho -> -i[H, rho] + sum_i (g_i/2)(2 a_i rho a_i^+ - {a_i^+ a_i, rho}),
    applied matrix-free on D x D matrices."""

    def __init__(self, params: LatticeParams, basis: FockBasis, jumps: Sequence[JumpOperatorSpec],
                 max_d2: int = DEFAULT_MAX_D2):
        d2 = basis.dim ** 2
        if d2 > max_d2:
            raise DimensionOverflowError(f"D^2 = {d2} ({basis.dim} states) exceeds the cap {max_d2}")
        self.params, self.basis = params, basis
        self.jumps = [j for j in jumps if j.rate > 0]
        for j in self.jumps:
            if not 0 <= j.site < basis.n_sites:
                raise DomainError(f"jump site {j.site} outside the lattice")
        self.h = hamiltonian(params, basis)
        self.a = [basis.annihilation(j.site) for j in self.jumps]
        loss = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
        for j, a in zip(self.jumps, self.a):
            loss = loss + j.rate * (a.conj().T @ a)
        self.h_eff = (self.h - 0.5j * loss).tocsr()
        self._heff_dag = self.h_eff.conj().T.tocsr()

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def has_loss(self) -> bool:
        return bool(self.jumps)

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        rho = np.asarray(rho, dtype=complex)
        out = -1j * (self.h_eff @ rho - (self._heff_dag.T @ rho.T).T)  # rho H_eff^+
        for j, a in zip(self.jumps, self.a):
            out += j.rate * (a @ (a @ rho.conj().T).conj().T)
        return out

    def apply(self, rho: DensityMatrix) -> np.ndarray:
        return self(rho.entries)


def build_liouvillian_apply(params: LatticeParams, basis: FockBasis, jumps: Sequence[JumpOperatorSpec],
                            max_d2: int = DEFAULT_MAX_D2) -> Liouvillian:
    return Liouvillian(params, basis, jumps, max_d2)


@dataclass
class MasterTrajectory:
    times: np.ndarray
    rhos: list
    basis: FockBasis = field(repr=False)

    def occupations(self) -> np.ndarray:
        """<N_i>(t), shape (samples, sites)."""
        occ = self.basis.occupations
        return np.array([np.real(np.diag(r.entries)) @ occ for r in self.rhos])

    def traces(self) -> np.ndarray:
        return np.array([r.trace.real for r in self.rhos])


def _hermitize(y: np.ndarray, d: int) -> np.ndarray:
    r = y.reshape(d, d)
    return (0.5 * (r + r.conj().T)).ravel()


def evolve_master(rho0: DensityMatrix, liouvillian: Liouvillian, t_final: float, tol: float = 1e-10,
                  n_samples: int = 201, times: Optional[np.ndarray] = None) -> MasterTrajectory:
    """Adaptive Dormand-Prince integration of the master equation.

    The state is re-symmetrised after every accepted step. Positivity is
    checked at every sample; an eigenvalue below -1e-6 aborts the run.
    """
    if not t_final > 0:
        raise DomainError("t_final must be > 0")
    d = liouvillian.dim
    if rho0.entries.shape != (d, d):
        raise DomainError("rho0 does not match the Liouvillian dimension")
    rho0.validate()
    times = np.linspace(0.0, t_final, n_samples) if times is None else np.asarray(times, float)

    def f(_t, y):
        return liouvillian(y.reshape(d, d)).ravel()

    solver = DOP853(f, 0.0, rho0.entries.ravel().copy(), t_final, rtol=tol, atol=tol)
    out = []
    k = 0
    while k < times.size and times[k] <= 0.0:
        out.append(DensityMatrix(rho0.entries.copy()))
        k += 1
    while k < times.size:
        t_prev = solver.t
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationAccuracyError(f"integration failed at t={solver.t:.6g}: {msg}")
        interp = solver.dense_output()
        while k < times.size and times[k] <= solver.t:
            y = _hermitize(interp(times[k]) if times[k] < solver.t else solver.y, d)
            rho = DensityMatrix(y.reshape(d, d))
            if rho.min_eigenvalue() < -POSITIVITY_ABORT:
                raise IntegrationAccuracyError(f"positivity lost at t={times[k]:.6g}")
            out.append(rho)
            k += 1
        solver.y = _hermitize(solver.y, d)
        if solver.t <= t_prev:
            raise IntegrationAccuracyError("integrator made no progress")
    return MasterTrajectory(times, out, liouvillian.basis)


def coherent_current(rho: DensityMatrix, params: LatticeParams, basis: FockBasis, site: Optional[int] = None) -> float:
    """i J <a_m^+ (a_{m-1} + a_{m+1}) - h.c.>: the tunneling inflow into site m."""
    m = params.lossy_site if site is None else site
    am = basis.annihilation(m)
    nb = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for k in (m - 1, m + 1):
        if 0 <= k < basis.n_sites:
            nb = nb + basis.annihilation(k)
    op = am.conj().T @ nb
    val = np.sum(op.T.multiply(rho.entries))
    return float(np.real(1j * params.j_coupling * (val - np.conj(val))))


@dataclass
class TrajectoryAverages:
    times: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_traj: int
    restarts: int = 0
    n_jumps: int = 0


class _Propagator:
    """Closed-form no-jump evolution exp(-i H_eff t) via an eigendecomposition."""

    def __init__(self, h_eff: np.ndarray):
        lam, v = np.linalg.eig(h_eff)
        vinv = np.linalg.inv(v)
        err = np.max(np.abs(v @ np.diag(lam) @ vinv - h_eff))
        if err > 1e-9 * max(1.0, np.max(np.abs(h_eff))):
            raise IntegrationAccuracyError("effective Hamiltonian is numerically defective")
        self.lam, self.v, self.vinv = lam, v, vinv

    def coeffs(self, psi: np.ndarray) -> np.ndarray:
        return psi @ self.vinv.T

    def at(self, c: np.ndarray, dt: np.ndarray) -> np.ndarray:
        """Unnormalised states at elapsed times ``dt`` (one per row of ``c``)."""
        return (c * np.exp(-1j * np.asarray(dt)[:, None] * self.lam)) @ self.v.T


def evolve_trajectories(psi0: np.ndarray, params: LatticeParams, basis: FockBasis,
                        jumps: Sequence[JumpOperatorSpec], t_final: float, n_traj: int, rng_seed: int,
                        n_samples: int = 101, times: Optional[np.ndarray] = None) -> TrajectoryAverages:
    """Quantum-jump unraveling, all trajectories advanced together.

    Trajectory k draws its random numbers from its own generator seeded with
    ``rng_seed + k``, so results do not depend on batching.
    """
    if n_traj < 1:
        raise DomainError("n_traj must be >= 1")
    liou = Liouvillian(params, basis, jumps)
    prop = _Propagator(liou.h_eff.toarray())
    times = np.linspace(0.0, t_final, n_samples) if times is None else np.asarray(times, float)
    psi0 = np.asarray(psi0, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    occ = basis.occupations
    jump_ops = [a.toarray() for a in liou.a]
    rates = np.array([j.rate for j in liou.jumps])

    rngs = [np.random.default_rng(rng_seed + k) for k in range(n_traj)]
    thresh = np.array([g.random() for g in rngs])
    c = np.tile(prop.coeffs(psi0), (n_traj, 1))
    t_ref = np.zeros(n_traj)
    restarts = n_jumps = 0
    obs = np.empty((times.size, n_traj, basis.n_sites))

    for k, t in enumerate(times):
        while True:
            psi_t = prop.at(c, t - t_ref)
            norm2 = np.sum(np.abs(psi_t) ** 2, axis=1)
            hit = np.nonzero(norm2 <= thresh)[0]
            if hit.size == 0:
                break
            lo, hi = t_ref[hit].copy(), np.full(hit.size, t)
            ch, th = c[hit], thresh[hit]
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                nm = np.sum(np.abs(prop.at(ch, mid - t_ref[hit])) ** 2, axis=1)
                above = nm > th
                lo = np.where(above, mid, lo)
                hi = np.where(above, hi, mid)
                if np.all(np.abs(nm - th) <= JUMP_NORM_TOL * th) or np.all(hi - lo <= 1e-15 * max(t, 1.0)):
                    break
            tj = hi
            psi_j = prop.at(ch, tj - t_ref[hit])
            for idx, tr in enumerate(hit):
                w = np.array([r * np.sum(np.abs(a @ psi_j[idx]) ** 2) for r, a in zip(rates, jump_ops)])
                tot = w.sum()
                if not tot > 0:
                    restarts += 1
                    log.warning("trajectory %d collapsed to zero norm; restarting", tr)
                    new = psi0
                    tj_i = 0.0
                else:
                    ch_idx = int(rngs[tr].choice(len(w), p=w / tot)) if len(w) > 1 else 0
                    new = jump_ops[ch_idx] @ psi_j[idx]
                    new = new / np.linalg.norm(new)
                    tj_i = tj[idx]
                    n_jumps += 1
                c[tr] = prop.coeffs(new)
                t_ref[tr] = tj_i
                thresh[tr] = rngs[tr].random()
        psi_n = psi_t / np.sqrt(norm2)[:, None]
        obs[k] = (np.abs(psi_n) ** 2) @ occ

    mean = obs.mean(axis=1)
    if n_traj > 1:
        stderr = obs.std(axis=1, ddof=1) / math.sqrt(n_traj)
    else:
        stderr = np.zeros_like(mean)
    return TrajectoryAverages(times, mean, stderr, n_traj, restarts, n_jumps)


class NessMethod(str, Enum):
    LONG_TIME = "long_time"
    POWER_ITERATION = "power_iteration"


def _residual(liou: Liouvillian, rho: np.ndarray) -> float:
    return float(np.max(np.abs(liou(rho))))


def find_ness(liouvillian: Liouvillian, method: NessMethod = NessMethod.LONG_TIME,
              rho0: Optional[DensityMatrix] = None, tol: float = NESS_TOL,
              max_iter: int = 2_000_000) -> DensityMatrix:
    if not liouvillian.has_loss:
        raise NonUniqueSteadyState("without loss every function of the conserved charges is stationary")
    method = NessMethod(method)
    d = liouvillian.dim
    rho = (rho0.entries.copy() if rho0 is not None else np.eye(d, dtype=complex) / d)
    if method is NessMethod.LONG_TIME:
        rate = min(j.rate for j in liouvillian.jumps)
        t = 10.0 / rate
        for _ in range(60):
            tr = evolve_master(DensityMatrix(rho), liouvillian, t, tol=1e-13, n_samples=2)
            rho = tr.rhos[-1].entries
            rho = rho / np.trace(rho)
            if _residual(liouvillian, rho) < tol:
                return DensityMatrix(rho)
            t *= 2
        raise NotConvergedError("long-time integration did not reach the residual criterion")

    # explicit Euler is stable for eps < -2 Re(l) / |l|^2 over the spectrum;
    # bound |l| by the operator norms and take a safe fraction
    h = liouvillian.h_eff
    n_top = max(1, liouvillian.basis.n_max)
    bound = 2 * float(np.max(np.abs(h).sum(axis=1))) + n_top * sum(j.rate for j in liouvillian.jumps)
    eps = 0.5 / bound
    for it in range(max_iter):
        step = liouvillian(rho)
        if it % 64 == 0 and np.max(np.abs(step)) < tol:
            return DensityMatrix(rho / np.trace(rho))
        rho = rho + eps * step
    raise NotConvergedError("power iteration did not reach the residual criterion")


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    ev = np.linalg.eigvalsh(a.entries - b.entries)
    return 0.5 * float(np.sum(np.abs(ev)))


def vacuum(basis: FockBasis) -> DensityMatrix:
    return DensityMatrix.pure(basis.fock_state([0] * basis.n_sites))
