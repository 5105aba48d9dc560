import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddjj.core import (
    ChemicalPotentialModel,
    CouplingModel,
    DomainError,
    InitialCondition,
    LatticeParams,
    Solver,
    SteadyStateRecord,
    chemical_potential_difference,
    effective_coupling,
)

J = 230.0


def test_lattice_defaults():
    p = LatticeParams()
    assert p.n_sites == 41 and p.lossy_site == 20
    assert p.j_coupling == 230.0 and p.n0 == 700.0


@pytest.mark.parametrize("kw", [
    {"n_sites": 0}, {"lossy_site": 41}, {"lossy_site": -1}, {"gamma": -1.0},
    {"j_coupling": 0.0}, {"n0": 0.0}, {"gamma": math.nan}, {"j_coupling": math.inf},
    {"u_interaction": -0.1},
])
def test_lattice_rejects(kw):
    with pytest.raises(DomainError):
        LatticeParams(**kw)


def test_fc_examples():
    fc = CouplingModel.franck_condon(350.0)
    assert effective_coupling(fc, J, 0.0) == J
    assert effective_coupling(fc, J, 350.0) == pytest.approx(J * math.exp(-1), rel=1e-14)
    assert effective_coupling(fc, J, 350.0) / J == pytest.approx(0.3679, abs=1e-4)


def test_constant_example():
    assert effective_coupling(CouplingModel.constant(), J, 700.0) == J


def test_effective_coupling_rejects_nonfinite():
    with pytest.raises(DomainError):
        effective_coupling(CouplingModel.constant(), J, math.nan)
    with pytest.raises(DomainError):
        effective_coupling(CouplingModel.constant(), J, math.inf)


def test_fc_monotone_on_grid():
    fc = CouplingModel.franck_condon(175.0)
    dn = np.linspace(-700, 3000, 1000)
    vals = J * fc.overlap(dn)
    assert np.all(np.diff(vals) <= 0)
    assert np.all(vals > 0) and np.all(vals <= J)


@given(st.floats(-1e6, 1e6), st.floats(1.0, 1e4))
def test_fc_range(delta_n, width):
    v = effective_coupling(CouplingModel.franck_condon(width), J, delta_n)
    assert 0 < v <= J


def test_fc_stays_positive_far_out():
    assert effective_coupling(CouplingModel.franck_condon(1.0), J, 1e5) > 0


def test_mu_examples():
    assert chemical_potential_difference(ChemicalPotentialModel(1.0), 700, 700) == 0
    assert chemical_potential_difference(ChemicalPotentialModel(1.0), 700, 0) == 700
    assert chemical_potential_difference(ChemicalPotentialModel(0.5), 700, 350) == 175


def test_mu_rejects_negative():
    with pytest.raises(DomainError):
        chemical_potential_difference(ChemicalPotentialModel(), -1, 3)


@given(st.floats(0, 1e5), st.floats(0, 1e5), st.floats(1e-3, 10))
def test_mu_antisymmetric(a, b, u):
    m = ChemicalPotentialModel(u)
    assert chemical_potential_difference(m, a, b) == -chemical_potential_difference(m, b, a)


@pytest.mark.parametrize("bad", [math.nan, math.inf, 0.0, -1.0])
def test_models_reject_bad(bad):
    with pytest.raises(DomainError):
        CouplingModel.franck_condon(bad)
    with pytest.raises(DomainError):
        ChemicalPotentialModel(bad)


@given(st.floats(0, 1e4), st.floats(0, 1.05), st.floats(1, 1e4))
def test_record_current_identity(gamma, ratio, n0):
    r = SteadyStateRecord(J, gamma, "full", ratio, n0, 0.0, None, "twomode")
    assert r.current == gamma * ratio * n0
    assert r.initial_condition is InitialCondition.FULL and r.solver is Solver.TWOMODE
