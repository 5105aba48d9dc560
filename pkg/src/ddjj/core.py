"""Shared value types and the filling-dependent coupling models.

Units: hbar = 1. Every energy (tunneling, interaction, chemical potential) is
stored as an angular rate in s^-1, so ``J = 230`` means J/hbar = 230 s^-1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional


class DomainError(ValueError):
    """A physical parameter or argument is outside its allowed range."""


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class LatticeParams:
    n_sites: int = 41
    j_coupling: float = 230.0
    u_interaction: float = 1.0
    gamma: float = 0.0
    lossy_site: Optional[int] = None
    n0: float = 700.0

    def __post_init__(self):
        if isinstance(self.n_sites, bool) or int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise DomainError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        for name in ("j_coupling", "u_interaction", "gamma", "n0"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))
        if self.j_coupling <= 0:
            raise DomainError("j_coupling must be > 0")
        if self.u_interaction < 0:
            raise DomainError("u_interaction must be >= 0")
        if self.gamma < 0:
            raise DomainError("gamma must be >= 0")
        if self.n0 <= 0:
            raise DomainError("n0 must be > 0")
        m = self.n_sites // 2 if self.lossy_site is None else self.lossy_site
        if isinstance(m, bool) or int(m) != m or not 0 <= m < self.n_sites:
            raise DomainError(f"lossy_site must lie in [0, {self.n_sites}), got {m!r}")
        object.__setattr__(self, "lossy_site", int(m))

    def replace(self, **changes) -> "LatticeParams":
        values = asdict(self)
        values.update(changes)
        return LatticeParams(**values)


class CouplingVariant(str, Enum):
    CONSTANT = "constant"
    FRANCK_CONDON = "franck_condon"


@dataclass(frozen=True)
class CouplingModel:
    """Tunneling into the lossy site, J'(dN), as a function of the population
    difference dN = N_reservoir - N_site.

    ``FRANCK_CONDON`` uses a Gaussian overlap suppression
    ``J * exp(-(max(dN, 0) / fc_width)**2)``.
    """

    variant: CouplingVariant = CouplingVariant.FRANCK_CONDON
    fc_width: float = 175.0

    def __post_init__(self):
        object.__setattr__(self, "variant", CouplingVariant(self.variant))
        width = _finite("fc_width", self.fc_width)
        if width <= 0:
            raise DomainError("fc_width must be > 0")
        object.__setattr__(self, "fc_width", width)

    @classmethod
    def constant(cls) -> "CouplingModel":
        return cls(CouplingVariant.CONSTANT)

    @classmethod
    def franck_condon(cls, width: float) -> "CouplingModel":
        return cls(CouplingVariant.FRANCK_CONDON, width)

    @classmethod
    def default_for(cls, n0: float) -> "CouplingModel":
        """Franck-Condon coupling with width n0 / 4."""
        return cls(CouplingVariant.FRANCK_CONDON, n0 / 4.0)

    def overlap(self, delta_n):
        """J'/J, vectorised over ``delta_n``."""
        if self.variant is CouplingVariant.CONSTANT:
            return 1.0 if _is_scalar(delta_n) else _ones_like(delta_n)
        import numpy as np

        d = np.maximum(np.asarray(delta_n, dtype=float), 0.0) / self.fc_width
        # floor keeps J' > 0 where the Gaussian underflows
        out = np.maximum(np.exp(-d * d), np.finfo(float).tiny)
        return float(out) if _is_scalar(delta_n) else out


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float))


def _ones_like(x):
    import numpy as np

    return np.ones_like(np.asarray(x, dtype=float))


class MuVariant(str, Enum):
    LINEAR = "linear"


@dataclass(frozen=True)
class ChemicalPotentialModel:
    """mu(N) = U * N."""

    u_interaction: float = 1.0
    variant: MuVariant = MuVariant.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "variant", MuVariant(self.variant))
        u = _finite("u_interaction", self.u_interaction)
        if u <= 0:
            raise DomainError("chemical potential needs u_interaction > 0")
        object.__setattr__(self, "u_interaction", u)

    def mu(self, n):
        return self.u_interaction * n


def effective_coupling(model: CouplingModel, j: float, delta_n: float) -> float:
    j = _finite("j", j)
    if j <= 0:
        raise DomainError("j must be > 0")
    delta_n = _finite("delta_n", delta_n)
    return j * model.overlap(delta_n)


def chemical_potential_difference(model: ChemicalPotentialModel, n_reservoir: float, n_site: float) -> float:
    n_reservoir = _finite("n_reservoir", n_reservoir)
    n_site = _finite("n_site", n_site)
    if n_reservoir < 0 or n_site < 0:
        raise DomainError("fillings must be >= 0")
    return model.mu(n_reservoir) - model.mu(n_site)


class InitialCondition(str, Enum):
    FULL = "full"
    EMPTY = "empty"


class Solver(str, Enum):
    MEANFIELD = "meanfield"
    TWOMODE = "twomode"
    LINDBLAD = "lindblad"


@dataclass(frozen=True)
class SteadyStateRecord:
    """Outcome of one (J, gamma, initial condition) run.

    ``current`` is always ``gamma * filling_ratio * n0``; ``tau`` is ``None``
    when the run did not converge (or relaxation was not measured).
    """

    j_coupling: float
    gamma: float
    initial_condition: InitialCondition
    filling_ratio: float
    n0: float
    delta_phi: float
    tau: Optional[float]
    solver: Solver
    converged: bool = True
    current: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "initial_condition", InitialCondition(self.initial_condition))
        object.__setattr__(self, "solver", Solver(self.solver))
        object.__setattr__(self, "current", self.gamma * self.filling_ratio * self.n0)

    @property
    def n_steady(self) -> float:
        return self.filling_ratio * self.n0

    def as_row(self) -> dict:
        return {
            "j_coupling": self.j_coupling,
            "gamma": self.gamma,
            "initial_condition": self.initial_condition.value,
            "filling_ratio": self.filling_ratio,
            "n0": self.n0,
            "current": self.current,
            "delta_phi": self.delta_phi,
            "tau": self.tau,
            "solver": self.solver.value,
            "converged": self.converged,
        }
