"""Run configuration (strict ``key = value`` text) and tabular record output."""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

from .core import (
    ChemicalPotentialModel,
    CouplingModel,
    CouplingVariant,
    DomainError,
    InitialCondition,
    LatticeParams,
    MuVariant,
    Solver,
)


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key, self.line = key, line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class OutputError(OSError):
    pass


class OutputFormat(str, Enum):
    CSV = "csv"
    JSONL = "jsonl"


class LindbladMethod(str, Enum):
    MASTER = "master"
    TRAJECTORIES = "trajectories"
    BOTH = "both"


@dataclass(frozen=True)
class ScanConfig:
    j_grid: Tuple[float, ...]
    gamma_grid: Tuple[float, ...]
    gamma_relative: bool = True


@dataclass(frozen=True)
class Tolerances:
    tol: float = 1e-8
    epsilon: float = 0.05
    threshold_high: float = 0.9
    threshold_agree: float = 0.1


@dataclass(frozen=True)
class LindbladSettings:
    n_max: int = 3
    n_total_cap: Optional[int] = None
    n_traj: int = 1000
    occupation: Optional[Tuple[int, ...]] = None
    method: LindbladMethod = LindbladMethod.BOTH


@dataclass(frozen=True)
class RunConfig:
    solver: Solver
    params: LatticeParams
    coupling: CouplingModel
    mu_model: ChemicalPotentialModel
    kappa_coefficient: float = 1e-3
    phase_relaxation: Optional[float] = None
    initial_condition: Optional[InitialCondition] = None
    t_final: Optional[float] = None
    n_samples: int = 201
    clamp_edges: bool = False
    scan: Optional[ScanConfig] = None
    lindblad: LindbladSettings = field(default_factory=LindbladSettings)
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_path: Optional[str] = None
    output_format: OutputFormat = OutputFormat.CSV
    rng_seed: int = 0

    def rate_params(self):
        from .twomode import RateModelParams

        return RateModelParams(self.params, self.coupling, self.kappa_coefficient, self.mu_model,
                               self.phase_relaxation)


# --- value parsers ---------------------------------------------------------

def _norm_token(s: str) -> str:
    return re.sub(r"[\s_\-]", "", s.strip().lower())


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(s: str) -> int:
    s = s.strip()
    if not re.fullmatch(r"[+-]?\d+", s):
        raise ValueError(f"expected an integer, got {s!r}")
    return int(s)


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _enum(cls, aliases=None):
    table = {_norm_token(m.value): m for m in cls}
    table.update({_norm_token(m.name): m for m in cls})
    table.update(aliases or {})

    def parse(s):
        try:
            return table[_norm_token(s)]
        except KeyError:
            raise ValueError(f"expected one of {', '.join(m.value for m in cls)}, got {s.strip()!r}") from None

    return parse


def _float_list(s: str) -> Tuple[float, ...]:
    parts = [p for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of numbers")
    return tuple(_float(p) for p in parts)


def _int_list(s: str) -> Tuple[int, ...]:
    parts = [p for p in s.split(",") if p.strip()]
    if not parts:
        raise ValueError("expected a comma-separated list of integers")
    return tuple(_int(p) for p in parts)


def _opt(parser):
    def parse(s):
        return None if s.strip().lower() in ("", "none") else parser(s)

    return parse


def _str(s: str) -> str:
    if not s.strip():
        raise ValueError("must not be empty")
    return s.strip()


def _seed(s: str) -> int:
    v = _int(s)
    if not 0 <= v < 2 ** 64:
        raise ValueError("must be a 64-bit unsigned integer")
    return v


_SCHEMA = {
    "solver": _enum(Solver),
    "n_sites": _int,
    "j_coupling": _float,
    "u_interaction": _float,
    "gamma": _float,
    "lossy_site": _opt(_int),
    "n0": _float,
    "coupling": _enum(CouplingVariant, {"fc": CouplingVariant.FRANCK_CONDON}),
    "fc_width": _opt(_float),
    "mu_model": _enum(MuVariant),
    "kappa_coefficient": _float,
    "phase_relaxation": _opt(_float),
    "initial_condition": _opt(_enum(InitialCondition)),
    "t_final": _opt(_float),
    "n_samples": _int,
    "clamp_edges": _bool,
    "j_grid": _opt(_float_list),
    "gamma_grid": _opt(_float_list),
    "gamma_relative": _bool,
    "n_max": _int,
    "n_total_cap": _opt(_int),
    "n_traj": _int,
    "occupation": _opt(_int_list),
    "lindblad_method": _enum(LindbladMethod),
    "tol": _float,
    "epsilon": _float,
    "threshold_high": _float,
    "threshold_agree": _float,
    "output_path": _opt(_str),
    "output_format": _enum(OutputFormat, {"jsonlines": OutputFormat.JSONL, "json": OutputFormat.JSONL}),
    "rng_seed": _seed,
}

_ALIASES = {"j": "j_coupling", "u": "u_interaction", "seed": "rng_seed"}

# Which key to blame when an object constructor rejects a value.
_BLAME = ["n_sites", "lossy_site", "j_coupling", "u_interaction", "gamma", "n0", "fc_width",
          "kappa_coefficient", "phase_relaxation"]


def _defaults() -> Dict[str, Any]:
    lat, lb, tol = LatticeParams(), LindbladSettings(), Tolerances()
    return {
        "n_sites": lat.n_sites, "j_coupling": lat.j_coupling, "u_interaction": lat.u_interaction,
        "gamma": lat.gamma, "lossy_site": None, "n0": lat.n0,
        "coupling": CouplingVariant.FRANCK_CONDON, "fc_width": None, "mu_model": MuVariant.LINEAR,
        "kappa_coefficient": 1e-3, "phase_relaxation": None, "initial_condition": None,
        "t_final": None, "n_samples": 201, "clamp_edges": False,
        "j_grid": None, "gamma_grid": None, "gamma_relative": True,
        "n_max": lb.n_max, "n_total_cap": lb.n_total_cap, "n_traj": lb.n_traj, "occupation": None,
        "lindblad_method": lb.method,
        "tol": tol.tol, "epsilon": tol.epsilon, "threshold_high": tol.threshold_high,
        "threshold_agree": tol.threshold_agree,
        "output_path": None, "output_format": OutputFormat.CSV, "rng_seed": 0,
    }


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration.

    One ``key = value`` per line; ``#`` starts a comment. Keys are
    case-insensitive, unknown or repeated keys are errors.
    """
    values = _defaults()
    lines: Dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno)
        key, _, val = line.partition("=")
        key = key.strip().lower()
        key = _ALIASES.get(key, key)
        if key not in _SCHEMA:
            raise ConfigError("unknown key", key, lineno)
        if key in lines:
            raise ConfigError(f"repeated key (first set on line {lines[key]})", key, lineno)
        try:
            values[key] = _SCHEMA[key](val)
        except ValueError as exc:
            raise ConfigError(str(exc), key, lineno) from None
        lines[key] = lineno
    if "solver" not in lines:
        raise ConfigError("missing solver")
    return _build(values, lines)


def _check(cond: bool, msg: str, key: str, lines: Dict[str, int]):
    if not cond:
        raise ConfigError(msg, key, lines.get(key))


def _build(v: Dict[str, Any], lines: Dict[str, int]) -> RunConfig:
    def blame(exc):
        msg = str(exc)
        for k in _BLAME:
            if msg.startswith(k) or f" {k} " in f" {msg} ":
                return ConfigError(msg, k, lines.get(k))
        return ConfigError(msg)

    try:
        params = LatticeParams(v["n_sites"], v["j_coupling"], v["u_interaction"], v["gamma"], v["lossy_site"], v["n0"])
        if v["coupling"] is CouplingVariant.CONSTANT:
            _check(v["fc_width"] is None, "fc_width only applies to franck_condon coupling", "fc_width", lines)
            coupling = CouplingModel.constant()
        else:
            width = v["fc_width"] if v["fc_width"] is not None else params.n0 / 4.0
            coupling = CouplingModel.franck_condon(width)
        _check(params.u_interaction > 0, "must be > 0 for the chemical-potential model", "u_interaction", lines)
        mu = ChemicalPotentialModel(params.u_interaction, v["mu_model"])
    except DomainError as exc:
        raise blame(exc) from None

    _check(v["kappa_coefficient"] >= 0, "must be >= 0", "kappa_coefficient", lines)
    _check(v["phase_relaxation"] is None or v["phase_relaxation"] > 0, "must be > 0", "phase_relaxation", lines)
    _check(v["t_final"] is None or v["t_final"] > 0, "must be > 0", "t_final", lines)
    _check(v["n_samples"] >= 2, "must be >= 2", "n_samples", lines)
    _check(v["tol"] > 0, "must be > 0", "tol", lines)
    _check(0 < v["epsilon"] < 1, "must lie in (0, 1)", "epsilon", lines)
    _check(0 < v["threshold_high"] <= 1, "must lie in (0, 1]", "threshold_high", lines)
    _check(0 < v["threshold_agree"] < 1, "must lie in (0, 1)", "threshold_agree", lines)
    _check(v["n_max"] >= 0, "must be >= 0", "n_max", lines)
    _check(v["n_total_cap"] is None or v["n_total_cap"] >= 0, "must be >= 0", "n_total_cap", lines)
    _check(v["n_traj"] >= 1, "must be >= 1", "n_traj", lines)
    occ = v["occupation"]
    if occ is not None:
        _check(len(occ) == params.n_sites, f"needs {params.n_sites} entries", "occupation", lines)
        _check(all(0 <= x <= v["n_max"] for x in occ), "entries must lie in [0, n_max]", "occupation", lines)
        cap = v["n_total_cap"]
        _check(cap is None or sum(occ) <= cap, "exceeds n_total_cap", "occupation", lines)

    scan = None
    if v["j_grid"] is not None or v["gamma_grid"] is not None:
        for key in ("j_grid", "gamma_grid"):
            g = v[key]
            _check(g is not None, "scan needs both j_grid and gamma_grid", key, lines)
            _check(all(b > a for a, b in zip(g, g[1:])), "must be strictly ascending", key, lines)
        _check(v["j_grid"][0] > 0, "values must be > 0", "j_grid", lines)
        _check(v["gamma_grid"][0] >= 0, "values must be >= 0", "gamma_grid", lines)
        scan = ScanConfig(v["j_grid"], v["gamma_grid"], v["gamma_relative"])
    else:
        _check("gamma_relative" not in lines, "only applies with a scan", "gamma_relative", lines)

    return RunConfig(
        solver=v["solver"], params=params, coupling=coupling, mu_model=mu,
        kappa_coefficient=v["kappa_coefficient"], phase_relaxation=v["phase_relaxation"],
        initial_condition=v["initial_condition"], t_final=v["t_final"], n_samples=v["n_samples"],
        clamp_edges=v["clamp_edges"], scan=scan,
        lindblad=LindbladSettings(v["n_max"], v["n_total_cap"], v["n_traj"], occ, v["lindblad_method"]),
        tolerances=Tolerances(v["tol"], v["epsilon"], v["threshold_high"], v["threshold_agree"]),
        output_path=v["output_path"], output_format=v["output_format"], rng_seed=v["rng_seed"],
    )


def _fmt_value(x) -> str:
    if x is None:
        return "none"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, Enum):
        return x.value
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, tuple):
        return ", ".join(_fmt_value(e) for e in x)
    return str(x)


def config_items(cfg: RunConfig) -> List[Tuple[str, Any]]:
    p, lb, tol = cfg.params, cfg.lindblad, cfg.tolerances
    fc = cfg.coupling.fc_width if cfg.coupling.variant is CouplingVariant.FRANCK_CONDON else None
    scan = cfg.scan
    return [
        ("solver", cfg.solver), ("n_sites", p.n_sites), ("j_coupling", p.j_coupling),
        ("u_interaction", p.u_interaction), ("gamma", p.gamma), ("lossy_site", p.lossy_site), ("n0", p.n0),
        ("coupling", cfg.coupling.variant), ("fc_width", fc), ("mu_model", cfg.mu_model.variant),
        ("kappa_coefficient", cfg.kappa_coefficient), ("phase_relaxation", cfg.phase_relaxation),
        ("initial_condition", cfg.initial_condition), ("t_final", cfg.t_final), ("n_samples", cfg.n_samples),
        ("clamp_edges", cfg.clamp_edges),
        ("j_grid", scan.j_grid if scan else None), ("gamma_grid", scan.gamma_grid if scan else None),
    ] + ([("gamma_relative", scan.gamma_relative)] if scan else []) + [
        ("n_max", lb.n_max), ("n_total_cap", lb.n_total_cap), ("n_traj", lb.n_traj),
        ("occupation", lb.occupation), ("lindblad_method", lb.method),
        ("tol", tol.tol), ("epsilon", tol.epsilon), ("threshold_high", tol.threshold_high),
        ("threshold_agree", tol.threshold_agree),
        ("output_path", cfg.output_path), ("output_format", cfg.output_format), ("rng_seed", cfg.rng_seed),
    ]


def dump_config(cfg: RunConfig) -> str:
    """Normalised text with every default spelled out; parses back to ``cfg``."""
    return "".join(f"{k} = {_fmt_value(v)}\n" for k, v in config_items(cfg))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_config(text)


# --- records ---------------------------------------------------------------

def _row(rec) -> Dict[str, Any]:
    if isinstance(rec, dict):
        return rec
    if hasattr(rec, "as_row"):
        return rec.as_row()
    raise TypeError(f"cannot serialise {type(rec).__name__}")


def _csv_cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, Enum):
        return str(x.value)
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _json_value(x):
    if isinstance(x, Enum):
        return x.value
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def header_lines(cfg: Optional[RunConfig] = None, extra: Optional[Dict[str, Any]] = None) -> List[str]:
    out = []
    if cfg is not None:
        out.append(f"config_sha256 = {config_hash(cfg)}")
        out.append(f"solver = {cfg.solver.value}")
    for k, v in (extra or {}).items():
        out.append(f"{k} = {v}")
    return out


def format_records(records: Iterable, fmt: OutputFormat, header: Sequence[str] = ()) -> str:
    fmt = OutputFormat(fmt)
    rows = [_row(r) for r in records]
    buf = _io.StringIO()
    for h in header:
        buf.write(f"# {h}\n")
    if not rows:
        return buf.getvalue()
    cols = list(rows[0])
    for r in rows[1:]:
        if list(r) != cols:
            raise ValueError("records are not homogeneous")
    if fmt is OutputFormat.CSV:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_csv_cell(r[c]) for c in cols])
    else:
        for r in rows:
            buf.write(json.dumps({c: _json_value(r[c]) for c in cols}, allow_nan=False) + "\n")
    return buf.getvalue()


def emit_records(records: Iterable, fmt: OutputFormat, path, header: Sequence[str] = ()) -> None:
    """Write records as CSV or JSON Lines; ``#`` lines carry the header.

    ``path`` of ``None`` or ``"-"`` writes to stdout.
    """
    text = format_records(records, fmt, header)
    if path is None or str(path) == "-":
        import sys

        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from None


def _parse_cell(s: str):
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    if re.fullmatch(r"[+-]?\d+", s):
        return int(s)
    try:
        return float(s)
    except ValueError:
        return s


_NONFINITE = ("nan", "inf", "-inf")


def read_records(path, fmt: Optional[OutputFormat] = None) -> List[Dict[str, Any]]:
    """Parse a file written by ``emit_records`` back into dicts."""
    path = Path(path)
    if fmt is None:
        fmt = OutputFormat.JSONL if path.suffix in (".jsonl", ".json") else OutputFormat.CSV
    fmt = OutputFormat(fmt)
    try:
        lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from None
    if fmt is OutputFormat.JSONL:
        out = []
        for ln in lines:
            if not ln.strip():
                continue
            d = json.loads(ln)
            out.append({k: float(v) if v in _NONFINITE else v for k, v in d.items()})
        return out
    reader = csv.reader(lines)
    rows = list(reader)
    if not rows:
        return []
    cols = rows[0]
    return [{c: _parse_cell(x) for c, x in zip(cols, r)} for r in rows[1:]]
