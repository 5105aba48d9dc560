"""Parameter scans over (J, gamma): classification into superfluid, bistable
and resistive regimes, critical-rate extraction and power-law fits."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from . import meanfield, twomode
from .core import DomainError, InitialCondition, Solver, SteadyStateRecord

log = logging.getLogger(__name__)

THRESHOLD_HIGH = 0.9
THRESHOLD_AGREE = 0.1


class PairingError(ValueError):
    pass


class PhaseLabel(str, Enum):
    SUPERFLUID = "superfluid"
    BISTABLE = "bistable"
    RESISTIVE = "resistive"


@dataclass(frozen=True)
class PhasePoint:
    j_coupling: float
    gamma: float
    label: Optional[PhaseLabel]
    full: SteadyStateRecord
    empty: SteadyStateRecord
    error: Optional[str] = None

    @property
    def records(self) -> Tuple[SteadyStateRecord, SteadyStateRecord]:
        return self.full, self.empty


def classify(full: SteadyStateRecord, empty: SteadyStateRecord, threshold_high: float = THRESHOLD_HIGH,
             threshold_agree: float = THRESHOLD_AGREE) -> PhasePoint:
    """Label one grid point from its full-start and empty-start records.

    Disagreement of at least ``threshold_agree`` is bistable. Otherwise the
    two branches agree and the point is superfluid when their mean filling
    reaches ``threshold_high``, resistive below.
    """
    if not (math.isclose(full.j_coupling, empty.j_coupling, rel_tol=1e-12)
            and math.isclose(full.gamma, empty.gamma, rel_tol=1e-12, abs_tol=1e-300)):
        raise PairingError(
            f"records at (J={full.j_coupling:g}, gamma={full.gamma:g}) and "
            f"(J={empty.j_coupling:g}, gamma={empty.gamma:g}) do not pair"
        )
    a, b = full.filling_ratio, empty.filling_ratio
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DomainError("cannot classify a point without finite fillings")
    if abs(a - b) >= threshold_agree:
        label = PhaseLabel.BISTABLE
    elif 0.5 * (a + b) >= threshold_high:
        label = PhaseLabel.SUPERFLUID
    else:
        label = PhaseLabel.RESISTIVE
    return PhasePoint(full.j_coupling, full.gamma, label, full, empty)


@dataclass(frozen=True)
class CriticalRates:
    j_coupling: float
    gamma_rb: Optional[float]
    gamma_sf: Optional[float]
    gamma_csd: Optional[float]
    resolution: float = 0.0

    def ordered(self, slack: Optional[float] = None) -> bool:
        """gamma_rb <= gamma_csd <= gamma_sf, up to ``slack`` (default: half
        the grid step, the bracketing uncertainty)."""
        s = self.resolution if slack is None else slack
        vals = [self.gamma_rb, self.gamma_csd, self.gamma_sf]
        if any(v is None for v in vals):
            return True
        s += 1e-9 * max(abs(v) for v in vals)
        return vals[0] <= vals[1] + s and vals[1] <= vals[2] + s

    def as_row(self) -> dict:
        return {"j_coupling": self.j_coupling, "gamma_rb": self.gamma_rb, "gamma_csd": self.gamma_csd,
                "gamma_sf": self.gamma_sf, "resolution": self.resolution}


def _bracket(gammas: np.ndarray, below: np.ndarray) -> Optional[float]:
    """Midpoint of the first interval where ``below`` switches from False to True."""
    for k in range(1, gammas.size):
        if below[k] and not below[k - 1]:
            return float(0.5 * (gammas[k - 1] + gammas[k]))
    return None


def extract_critical_rates(points: Sequence[PhasePoint], tau_curve: Optional[Sequence[Tuple[float, Optional[float]]]] = None,
                           threshold_high: float = THRESHOLD_HIGH) -> CriticalRates:
    """Critical rates at one J from points sorted by gamma.

    gamma_RB: the empty-start branch stops refilling; gamma_SF: the full-start
    branch breaks down; both are midpoints of their bracketing interval.
    gamma_CSD is the argmax of tau along the empty branch (``tau_curve``
    defaults to the empty records' tau), reported only for an interior maximum.
    """
    if not points:
        raise DomainError("no points")
    js = {p.j_coupling for p in points}
    if len(js) != 1:
        raise PairingError("points span several J values")
    gammas = np.array([p.gamma for p in points])
    if np.any(np.diff(gammas) <= 0):
        raise DomainError("points must be sorted by strictly increasing gamma")
    ok = [p.error is None and p.label is not None for p in points]
    g = gammas[ok]
    f_full = np.array([p.full.filling_ratio for p, good in zip(points, ok) if good])
    f_empty = np.array([p.empty.filling_ratio for p, good in zip(points, ok) if good])
    rb = _bracket(g, f_empty < threshold_high)
    sf = _bracket(g, f_full < threshold_high)
    if tau_curve is None:
        tau_curve = [(p.gamma, p.empty.tau) for p in points]
    tc = [(x, t) for x, t in tau_curve if t is not None and math.isfinite(t)]
    csd = None
    if len(tc) >= 3:
        taus = np.array([t for _, t in tc])
        k = int(np.argmax(taus))
        if 0 < k < len(tc) - 1:
            csd = float(tc[k][0])
    res = 0.5 * float(np.min(np.diff(gammas))) if gammas.size > 1 else 0.0
    return CriticalRates(points[0].j_coupling, rb, sf, csd, res)


@dataclass(frozen=True)
class PowerLawFit:
    amplitude: float
    exponent: float
    exponent_stderr: float

    def as_row(self) -> dict:
        return {"amplitude": self.amplitude, "exponent": self.exponent, "exponent_stderr": self.exponent_stderr}


def fit_power_law(pairs: Sequence[Tuple[float, float]]) -> PowerLawFit:
    """Least squares on log(gamma) = log(a) + b log(J)."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise DomainError("need at least 3 (J, gamma) pairs")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError("power-law fit needs finite, positive values")
    r = linregress(np.log(arr[:, 0]), np.log(arr[:, 1]))
    return PowerLawFit(float(math.exp(r.intercept)), float(r.slope), float(r.stderr))


def _run_point(task):
    solver, template, j, gamma, kind, with_tau, clamp = task
    try:
        if solver is Solver.TWOMODE:
            p = template.with_j(j).with_gamma(gamma)
            return twomode.steady_record(p, kind, with_tau=with_tau), None
        if solver is Solver.MEANFIELD:
            lat = template.lattice.replace(j_coupling=j, gamma=gamma)
            return meanfield.steady_record(lat, template.coupling, kind, clamp_edges=clamp), None
        raise DomainError(f"solver {solver.value} cannot run phase-diagram sweeps")
    except Exception as exc:  # recorded per point, never aborts the sweep
        log.warning("run failed at J=%g gamma=%g (%s): %s", j, gamma, kind.value, exc)
        nan = float("nan")
        rec = SteadyStateRecord(j, gamma, kind, nan, template.n0, nan, None, solver, converged=False)
        return rec, f"{type(exc).__name__}: {exc}"


@dataclass
class PhaseDiagram:
    points: List[PhasePoint]
    critical_rates: List[CriticalRates]
    records: List[SteadyStateRecord] = field(default_factory=list)


_IC_ORDER = {InitialCondition.FULL: 0, InitialCondition.EMPTY: 1}


def build_phase_diagram(j_grid: Sequence[float], gamma_grid, solver: Solver,
                        params_template: twomode.RateModelParams, threads: int = 1, with_tau: bool = True,
                        threshold_high: float = THRESHOLD_HIGH, threshold_agree: float = THRESHOLD_AGREE,
                        clamp_edges: bool = False) -> PhaseDiagram:
    """Run both initial conditions at every (J, gamma) and classify.

    ``gamma_grid`` is either one ascending sequence of absolute rates or a
    callable mapping J to such a sequence (for grids scaled with J).
    ``clamp_edges`` only affects the mean-field solver.
    """
    j_grid = [float(j) for j in j_grid]
    if not j_grid or any(b <= a for a, b in zip(j_grid, j_grid[1:])):
        raise DomainError("j_grid must be nonempty and ascending")
    solver = Solver(solver)
    tasks = []
    for j in j_grid:
        gs = [float(g) for g in (gamma_grid(j) if callable(gamma_grid) else gamma_grid)]
        if not gs or any(b <= a for a, b in zip(gs, gs[1:])):
            raise DomainError("gamma grid must be nonempty and ascending")
        for g in gs:
            for kind in (InitialCondition.FULL, InitialCondition.EMPTY):
                tasks.append((solver, params_template, j, g, kind, with_tau, clamp_edges))
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_point, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        results = [_run_point(t) for t in tasks]

    by_key = {}
    for (_, _, j, g, kind, _, _), (rec, err) in zip(tasks, results):
        by_key[(j, g, _IC_ORDER[kind])] = (rec, err)
    keys = sorted(by_key)
    records = [by_key[k][0] for k in keys]

    points, rates = [], []
    for j in j_grid:
        row = []
        for (jj, g, ic) in keys:
            if jj != j or ic != 0:
                continue
            full, e1 = by_key[(j, g, 0)]
            empty, e2 = by_key[(j, g, 1)]
            err = e1 or e2
            if err is None and not (full.converged and empty.converged):
                err = "not converged"
            if err is None:
                pt = classify(full, empty, threshold_high, threshold_agree)
            else:
                pt = PhasePoint(j, g, None, full, empty, err)
            row.append(pt)
        points.extend(row)
        rates.append(extract_critical_rates(row, threshold_high=threshold_high))
    return PhaseDiagram(points, rates, records)


def refine_grid(gammas: Sequence[float], center: float, half_width: float, n: int = 11) -> np.ndarray:
    """``gammas`` merged with ``n`` evenly spaced points on
    ``center +/- half_width`` (clipped at zero). Points closer than 1e-9
    relative to an existing one are dropped."""
    if not half_width > 0 or n < 2:
        raise DomainError("refinement needs half_width > 0 and n >= 2")
    base = np.unique(np.asarray(gammas, dtype=float))
    fine = np.linspace(max(center - half_width, 0.0), center + half_width, n)
    if base.size:
        near = np.min(np.abs(fine[:, None] - base[None, :]), axis=1) <= 1e-9 * np.maximum(np.abs(fine), 1.0)
        fine = fine[~near]
    return np.union1d(base, fine)


def refine_critical_rates(points: Sequence[PhasePoint], solver: Solver, params_template, levels: int = 2,
                          n: int = 11, with_tau: bool = True, threshold_high: float = THRESHOLD_HIGH,
                          threshold_agree: float = THRESHOLD_AGREE) -> Tuple[List[PhasePoint], CriticalRates]:
    """Resolve gamma_RB (and the tau peak just below it) on one J line by
    rescanning ``levels`` times with ``n`` points across the current bracket.
    Only new gamma values are run."""
    pts = sorted(points, key=lambda q: q.gamma)
    cr = extract_critical_rates(pts, threshold_high=threshold_high)
    for _ in range(levels):
        if cr.gamma_rb is None:
            break
        half = 0.5 * _bracket_width(pts, cr.gamma_rb)
        grid = refine_grid([q.gamma for q in pts], cr.gamma_rb, half, n)
        have = {q.gamma for q in pts}
        new = [g for g in grid if g not in have]
        if not new:
            break
        extra = build_phase_diagram([cr.j_coupling], new, solver, params_template, with_tau=with_tau,
                                    threshold_high=threshold_high, threshold_agree=threshold_agree).points
        pts = sorted(list(pts) + extra, key=lambda q: q.gamma)
        cr = extract_critical_rates(pts, threshold_high=threshold_high)
    return pts, cr


def _bracket_width(points: Sequence[PhasePoint], mid: float) -> float:
    gs = np.array([q.gamma for q in points])
    k = int(np.searchsorted(gs, mid))
    return float(gs[min(k, gs.size - 1)] - gs[max(k - 1, 0)])


def default_j_grid() -> np.ndarray:
    return np.geomspace(100.0, 600.0, 8)


def default_gamma_grid(j: float, n: int = 40) -> np.ndarray:
    return np.linspace(0.0, 8.0 * j, n)


def region_sequence(points: Sequence[PhasePoint]) -> List[PhaseLabel]:
    """Labels along one J line with consecutive repeats collapsed."""
    seq = []
    for p in sorted(points, key=lambda q: q.gamma):
        if p.label is not None and (not seq or seq[-1] != p.label):
            seq.append(p.label)
    return seq


def is_ordered_sequence(seq: Sequence[PhaseLabel]) -> bool:
    """True when labels never step backwards through superfluid, bistable, resistive."""
    rank = {PhaseLabel.SUPERFLUID: 0, PhaseLabel.BISTABLE: 1, PhaseLabel.RESISTIVE: 2}
    r = [rank[x] for x in seq]
    return all(b > a for a, b in zip(r, r[1:]))


def gamma_rb_scan(template: twomode.RateModelParams, j: float, rel_grid: Sequence[float],
                  threshold_high: float = THRESHOLD_HIGH) -> Optional[float]:
    """gamma_RB at one J from an empty-start scan over ``rel_grid * J``,
    bracketed at the grid resolution."""
    gs = np.asarray(rel_grid, dtype=float) * j
    p = template.with_j(j)
    fill = []
    for g in gs:
        rec = twomode.steady_record(p.with_gamma(float(g)), InitialCondition.EMPTY, with_tau=False)
        fill.append(rec.filling_ratio if rec.converged else np.nan)
    return _bracket(gs, np.asarray(fill) < threshold_high)
