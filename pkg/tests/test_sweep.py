import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddjj import sweep, twomode
from ddjj.core import DomainError, InitialCondition, LatticeParams, Solver, SteadyStateRecord
from ddjj.sweep import PhaseLabel


def rec(kind, fill, j=230.0, gamma=100.0, tau=None):
    return SteadyStateRecord(j, gamma, kind, fill, 700.0, 0.0, tau, Solver.TWOMODE)


def pair(full, empty, j=230.0, gamma=100.0, tau=None):
    return sweep.classify(rec(InitialCondition.FULL, full, j, gamma), rec(InitialCondition.EMPTY, empty, j, gamma, tau))


@pytest.mark.parametrize("full, empty, label", [
    (1.00, 0.98, PhaseLabel.SUPERFLUID),
    (1.00, 0.35, PhaseLabel.BISTABLE),
    (0.12, 0.10, PhaseLabel.RESISTIVE),
])
def test_classify_examples(full, empty, label):
    assert pair(full, empty).label is label


def test_classify_pairing_error():
    with pytest.raises(sweep.PairingError):
        sweep.classify(rec(InitialCondition.FULL, 1.0, gamma=100.0), rec(InitialCondition.EMPTY, 1.0, gamma=101.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1.05), st.floats(0, 1.05))
def test_classification_total(a, b):
    pt = pair(a, b)
    assert pt.label in set(PhaseLabel)
    if a >= 0.9 and b >= 0.9:
        assert pt.label is PhaseLabel.SUPERFLUID
    if abs(a - b) >= 0.1:
        assert pt.label is PhaseLabel.BISTABLE


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 1000), st.floats(0, 5000), st.floats(0, 1.05))
def test_record_current_consistency(j, g, f):
    r = rec(InitialCondition.FULL, f, j, g)
    assert r.current == g * f * 700.0


def synthetic_line(gammas, empty_fill, full_fill=None, taus=None):
    pts = []
    for k, g in enumerate(gammas):
        fe = empty_fill(g)
        ff = full_fill(g) if full_fill else 1.0
        pts.append(pair(ff, fe, gamma=float(g), tau=None if taus is None else taus[k]))
    return pts


def test_synthetic_step_gamma_rb():
    gs = np.arange(0.0, 10.01, 0.5)
    cr = sweep.extract_critical_rates(synthetic_line(gs, lambda g: 1.0 if g < 5 else 0.3))
    assert abs(cr.gamma_rb - 4.75) <= 0.25
    assert cr.resolution == 0.25
    assert cr.gamma_sf is None


def test_tau_argmax():
    gs = np.arange(0.0, 10.01, 1.0)
    taus = [1.0, 1.5, 2.0, 4.0, 9.0, 3.0, 2.0, 1.0, 1.0, 0.5, 0.5]
    cr = sweep.extract_critical_rates(synthetic_line(gs, lambda g: 1.0, taus=taus))
    assert cr.gamma_csd == gs[4]


def test_tau_maximum_at_edge_not_reported():
    gs = np.arange(0.0, 5.01, 1.0)
    cr = sweep.extract_critical_rates(synthetic_line(gs, lambda g: 1.0, taus=[1, 2, 3, 4, 5, 6]))
    assert cr.gamma_csd is None


def test_unsorted_points_rejected():
    pts = synthetic_line([2.0, 1.0, 3.0], lambda g: 1.0)
    with pytest.raises(DomainError):
        sweep.extract_critical_rates(pts)


def test_constant_coupling_gamma_sf_contains_4j(constant_rate):
    j = constant_rate.lattice.j_coupling
    gs = np.linspace(3.0, 5.0, 21) * j
    pd = sweep.build_phase_diagram([j], gs, Solver.TWOMODE, constant_rate, with_tau=False)
    cr = pd.critical_rates[0]
    assert cr.gamma_sf - cr.resolution <= 4 * j <= cr.gamma_sf + cr.resolution


@pytest.mark.parametrize("fn, b", [(lambda j: 2 * j ** 2, 2.0), (lambda j: 3 * j, 1.0)])
def test_power_law_synthetic(fn, b):
    js = np.geomspace(100, 1000, 8)
    fit = sweep.fit_power_law([(j, fn(j)) for j in js])
    assert abs(fit.exponent - b) < 1e-3
    assert fit.exponent_stderr < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.floats(-3, 3))
def test_power_law_recovery(a, b):
    js = np.geomspace(10, 1000, 6)
    fit = sweep.fit_power_law([(j, a * j ** b) for j in js])
    assert abs(fit.exponent - b) < 1e-3
    assert fit.amplitude == pytest.approx(a, rel=1e-6)


@pytest.mark.parametrize("pairs", [[(1, 2), (2, 0), (3, 5)], [(1, 2), (-2, 3), (3, 5)], [(1, 2), (2, 3)]])
def test_power_law_rejects(pairs):
    with pytest.raises(DomainError):
        sweep.fit_power_law(pairs)


def test_zero_gamma_all_superfluid(default_rate):
    pd = sweep.build_phase_diagram([100.0, 230.0, 600.0], [0.0], Solver.TWOMODE, default_rate, with_tau=False)
    assert [p.label for p in pd.points] == [PhaseLabel.SUPERFLUID] * 3


def test_grids_validated(default_rate):
    with pytest.raises(DomainError):
        sweep.build_phase_diagram([230.0, 100.0], [0.0], Solver.TWOMODE, default_rate)
    with pytest.raises(DomainError):
        sweep.build_phase_diagram([230.0], [1.0, 1.0], Solver.TWOMODE, default_rate)


def test_failed_point_recorded(default_rate):
    pd = sweep.build_phase_diagram([230.0], [0.0, 10.0], Solver.LINDBLAD, default_rate)
    assert all(p.label is None and p.error for p in pd.points)


@pytest.fixture(scope="module")
def small_diagram():
    p = twomode.RateModelParams()
    js = [150.0, 230.0, 400.0]
    return sweep.build_phase_diagram(js, lambda j: np.linspace(0.0, 6.0 * j, 25), Solver.TWOMODE, p)


def test_small_phase_diagram_ordering(small_diagram):
    for j in (150.0, 230.0, 400.0):
        seq = sweep.region_sequence([p for p in small_diagram.points if p.j_coupling == j])
        assert seq == [PhaseLabel.SUPERFLUID, PhaseLabel.BISTABLE, PhaseLabel.RESISTIVE]
    for cr in small_diagram.critical_rates:
        assert cr.ordered()
    rb = [cr.gamma_rb for cr in small_diagram.critical_rates]
    assert all(b > a for a, b in zip(rb, rb[1:]))


def test_records_sorted(small_diagram):
    keys = [(r.j_coupling, r.gamma, r.initial_condition is InitialCondition.EMPTY) for r in small_diagram.records]
    assert keys == sorted(keys)
    assert len(small_diagram.records) == 2 * len(small_diagram.points)


def test_deterministic_and_parallel_invariant(default_rate):
    args = ([150.0, 300.0], lambda j: np.linspace(0.0, 2.0 * j, 6), Solver.TWOMODE, default_rate)
    a = sweep.build_phase_diagram(*args)
    b = sweep.build_phase_diagram(*args, threads=2)
    assert [r.as_row() for r in a.records] == [r.as_row() for r in b.records]
    assert [c.as_row() for c in a.critical_rates] == [c.as_row() for c in b.critical_rates]


def test_is_ordered_sequence():
    S, B, R = PhaseLabel.SUPERFLUID, PhaseLabel.BISTABLE, PhaseLabel.RESISTIVE
    assert sweep.is_ordered_sequence([S, B, R]) and sweep.is_ordered_sequence([S, R])
    assert not sweep.is_ordered_sequence([S, R, B])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.floats(0, 100), st.floats(0.01, 10))
def test_refine_grid_keeps_points_and_stays_separated(gs, center, half):
    out = sweep.refine_grid(gs, center, half)
    assert set(np.unique(gs)) <= set(out)
    assert np.all(np.diff(out) > 0)
    fresh = np.setdiff1d(out, gs)
    if fresh.size and len(gs):
        gap = np.min(np.abs(fresh[:, None] - np.asarray(gs)[None, :]))
        assert gap > 1e-9 * max(1.0, float(np.max(np.abs(fresh))))


def test_refine_critical_rates_narrows_bracket(default_rate):
    j = 600.0
    pts = sweep.build_phase_diagram([j], np.linspace(0, 2 * j, 11), Solver.TWOMODE, default_rate,
                                    with_tau=False).points
    coarse = sweep.extract_critical_rates(pts)
    fine_pts, fine = sweep.refine_critical_rates(pts, Solver.TWOMODE, default_rate, levels=1, with_tau=False)
    onset = twomode.resistive_onset_gamma(default_rate.with_j(j))
    assert abs(coarse.gamma_rb - onset) <= coarse.resolution
    assert abs(fine.gamma_rb - onset) <= fine.resolution < coarse.resolution / 5
    assert len(fine_pts) > len(pts)
