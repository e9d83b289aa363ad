"""Run configuration: JSON schema, parsing, validation and serialisation.

Schema (``schema_version: 1``); frequencies in MHz, times in us, angles in
radians. Sections in brackets are optional.

.. code-block:: text

    {
      "schema_version": 1,
      "experiment": "chirp" | "ise" | "epr-line" | "ase" | "scan",
      "pulse":      {"omega1", "offset_start", "offset_end", "rate_k", ["phase"]},
      "system":     {"omega0n", ["A"], ["B"], ["packet_offset"], ["nuclear_sign"],
                     ["dipolar_d", "beta"]},                # all but chirp
      ["integrator": {"dt", "t2", "relax_mode", "conv_tol", "max_halvings",
                      "sample_stride", "converge"}],
      ["chirp":  {"packets": [...], "initial": "z" | "coherence", "phi"}],
      ["line":   {"shape": "gaussian", "sigma", "n", ["center"], ["span"]}
               | {"shape": "uniform", "lo", "hi", "n"}
               | {"shape": "explicit", "offsets", ["weights"]}
               | {"shape": "random", "sigma", "n", "seed", ["center"]}],
      "ase":    {"n_sweeps", ["delay"]},                     # ase only
      "scan":   {"grid": {"omega0n"|"rate_k"|"omega1"|"beta"|"t2": [...]},
                 ["dipolar_d"]},                            # scan only
      ["workers": 1]
    }

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .errors import ParseError, ValidationError
from .experiments import DEFAULT_DIPOLAR_D, SCAN_KEYS, EprLine
from .hamiltonians import ChirpPulse, SpinSystemParams, matching_offsets
from .propagation import RELAX_MODES, IntegratorConfig

SCHEMA_VERSION = 1
EXPERIMENTS = ("chirp", "ise", "epr-line", "ase", "scan")
LINE_SHAPES = {
    "gaussian": (("sigma", "n"), ("center", "span")),
    "uniform": (("lo", "hi", "n"), ()),
    "explicit": (("offsets",), ("weights",)),
    "random": (("sigma", "n", "seed"), ("center",)),
}


@dataclass(frozen=True)
class ChirpSpec:
    packets: tuple = (0.0,)
    initial: str = "z"
    phi: float = 0.0


@dataclass(frozen=True)
class AseSpec:
    n_sweeps: int
    delay: float = 0.0


@dataclass(frozen=True)
class ScanSpec:
    grid: dict
    dipolar_d: float = DEFAULT_DIPOLAR_D

    __hash__ = None


@dataclass(frozen=True)
class LineSpec:
    shape: str
    values: dict = field(default_factory=dict)

    __hash__ = None

    def build(self, pulse: ChirpPulse) -> EprLine:
        v = self.values
        if self.shape == "gaussian":
            return EprLine.gaussian(v["sigma"], v["n"], v.get("center", 0.0), v.get("span", 2.0))
        if self.shape == "uniform":
            return EprLine.uniform(v["lo"], v["hi"], v["n"])
        if self.shape == "explicit":
            return EprLine.explicit(v["offsets"], v.get("weights"))
        return EprLine.random(v["sigma"], v["n"], v["seed"], v.get("center", 0.0))


@dataclass(frozen=True)
class RunConfig:
    """Fully validated run description (see module docstring for the JSON form)."""

    experiment: str
    pulse: ChirpPulse
    system: SpinSystemParams | None = None
    integrator: IntegratorConfig = IntegratorConfig()
    converge: bool = False
    chirp: ChirpSpec | None = None
    line: LineSpec | None = None
    ase: AseSpec | None = None
    scan: ScanSpec | None = None
    workers: int = 1

    __hash__ = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "experiment": self.experiment}
        d["pulse"] = asdict(self.pulse)
        if self.system is not None:
            d["system"] = asdict(self.system)
        d["integrator"] = {**asdict(self.integrator), "converge": self.converge}
        if self.chirp is not None:
            d["chirp"] = {**asdict(self.chirp), "packets": list(self.chirp.packets)}
        if self.line is not None:
            d["line"] = {"shape": self.line.shape, **self.line.values}
        if self.ase is not None:
            d["ase"] = asdict(self.ase)
        if self.scan is not None:
            d["scan"] = {"grid": {k: list(v) for k, v in self.scan.grid.items()}, "dipolar_d": self.scan.dipolar_d}
        d["workers"] = self.workers
        return d


# ---------------------------------------------------------------------------
# field checks

def _number(sec, key, v, *, positive=False, nonneg=False, integer=False):
    name = f"{sec}.{key}" if sec else key
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(name, "must be a number")
    if integer and not (isinstance(v, int) or float(v).is_integer()):
        raise ValidationError(name, "must be an integer")
    if not math.isfinite(v):
        raise ValidationError(name, "must be finite")
    if positive and not v > 0:
        raise ValidationError(name, "must be positive")
    if nonneg and v < 0:
        raise ValidationError(name, "must be non-negative")
    return int(v) if integer else float(v)


def _section(raw, sec, required, optional):
    if not isinstance(raw, dict):
        raise ValidationError(sec, "must be an object")
    for k in raw:
        if k not in required and k not in optional:
            raise ValidationError(f"{sec}.{k}", "unknown key")
    for k in required:
        if k not in raw:
            raise ValidationError(f"{sec}.{k}", "required field missing")
    return raw


def _number_list(sec, key, v, **kw):
    if not isinstance(v, list) or not v:
        raise ValidationError(f"{sec}.{key}", "must be a non-empty list")
    return tuple(_number(sec, f"{key}[{i}]", x, **kw) for i, x in enumerate(v))


def _pulse(raw):
    s = _section(raw, "pulse", ("omega1", "offset_start", "offset_end", "rate_k"), ("phase",))
    w1 = _number("pulse", "omega1", s["omega1"], nonneg=True)
    lo = _number("pulse", "offset_start", s["offset_start"])
    hi = _number("pulse", "offset_end", s["offset_end"])
    k = _number("pulse", "rate_k", s["rate_k"])
    if not k > 0:
        raise ValidationError("pulse.rate_k", "rate must be positive")
    if lo == hi:
        raise ValidationError("pulse.offset_end", "sweep window has zero width")
    return ChirpPulse(w1, lo, hi, k, _number("pulse", "phase", s.get("phase", 0.0)))


def _system(raw):
    s = _section(raw, "system", ("omega0n",), ("A", "B", "packet_offset", "nuclear_sign", "dipolar_d", "beta"))
    w0 = _number("system", "omega0n", s["omega0n"])
    if not w0 > 0:
        raise ValidationError("system.omega0n", "must be positive")
    sign = s.get("nuclear_sign", -1)
    if sign not in (-1, 1) or isinstance(sign, bool):
        raise ValidationError("system.nuclear_sign", "must be -1 or +1")
    d, beta = s.get("dipolar_d"), s.get("beta")
    if (d is None) != (beta is None):
        raise ValidationError("system.beta" if beta is None else "system.dipolar_d", "dipolar_d and beta go together")
    if d is not None:
        d, beta = _number("system", "dipolar_d", d), _number("system", "beta", beta)
    try:
        return SpinSystemParams(
            omega0n=w0,
            A=_number("system", "A", s.get("A", 0.0)),
            B=_number("system", "B", s.get("B", 0.0)),
            packet_offset=_number("system", "packet_offset", s.get("packet_offset", 0.0)),
            nuclear_sign=int(sign),
            dipolar_d=d,
            beta=beta,
        )
    except ValueError as exc:
        raise ValidationError("system", str(exc)) from None


def _integrator(raw):
    keys = ("dt", "t2", "relax_mode", "conv_tol", "max_halvings", "sample_stride", "converge")
    s = _section(raw, "integrator", (), keys)
    dt = s.get("dt")
    t2 = s.get("t2")
    mode = s.get("relax_mode", "dq-zq-only")
    if mode not in RELAX_MODES:
        raise ValidationError("integrator.relax_mode", f"must be one of {', '.join(RELAX_MODES)}")
    converge = s.get("converge", False)
    if not isinstance(converge, bool):
        raise ValidationError("integrator.converge", "must be true or false")
    cfg = IntegratorConfig(
        dt=None if dt is None else _number("integrator", "dt", dt, positive=True),
        t2=None if t2 is None else _number("integrator", "t2", t2, positive=True),
        relax_mode=mode,
        conv_tol=_number("integrator", "conv_tol", s.get("conv_tol", 1e-6), positive=True),
        max_halvings=_number("integrator", "max_halvings", s.get("max_halvings", 10), nonneg=True, integer=True),
        sample_stride=_number("integrator", "sample_stride", s.get("sample_stride", 1), positive=True, integer=True),
    )
    return cfg, converge


def _chirp(raw):
    s = _section(raw, "chirp", (), ("packets", "initial", "phi"))
    initial = s.get("initial", "z")
    if initial not in ("z", "coherence"):
        raise ValidationError("chirp.initial", "must be 'z' or 'coherence'")
    packets = _number_list("chirp", "packets", s.get("packets", [0.0]))
    return ChirpSpec(packets, initial, _number("chirp", "phi", s.get("phi", 0.0)))


def _line(raw):
    if not isinstance(raw, dict):
        raise ValidationError("line", "must be an object")
    shape = raw.get("shape")
    if shape not in LINE_SHAPES:
        raise ValidationError("line.shape", f"must be one of {', '.join(LINE_SHAPES)}")
    req, opt = LINE_SHAPES[shape]
    s = _section(raw, "line", ("shape",) + req, opt)
    vals: dict[str, Any] = {}
    for k in req + opt:
        if k not in s:
            continue
        if k in ("offsets", "weights"):
            vals[k] = list(_number_list("line", k, s[k], nonneg=(k == "weights")))
        elif k in ("n", "seed"):
            vals[k] = _number("line", k, s[k], integer=True, positive=(k == "n"), nonneg=True)
        elif k in ("sigma", "span"):
            vals[k] = _number("line", k, s[k], positive=True)
        else:
            vals[k] = _number("line", k, s[k])
    if "weights" in vals and len(vals["weights"]) != len(vals["offsets"]):
        raise ValidationError("line.weights", "length differs from offsets")
    if "weights" in vals and not sum(vals["weights"]) > 0:
        raise ValidationError("line.weights", "must have a positive sum")
    if shape == "uniform" and not vals["hi"] > vals["lo"]:
        raise ValidationError("line.hi", "must exceed line.lo")
    return LineSpec(shape, vals)


def _ase(raw):
    s = _section(raw, "ase", ("n_sweeps",), ("delay",))
    return AseSpec(
        _number("ase", "n_sweeps", s["n_sweeps"], positive=True, integer=True),
        _number("ase", "delay", s.get("delay", 0.0), nonneg=True),
    )


def _scan(raw):
    s = _section(raw, "scan", ("grid",), ("dipolar_d",))
    g = s["grid"]
    if not isinstance(g, dict) or not g:
        raise ValidationError("scan.grid", "must be a non-empty object")
    grid = {}
    for k, v in g.items():
        if k not in SCAN_KEYS:
            raise ValidationError(f"scan.grid.{k}", "unknown key")
        grid[k] = list(_number_list("scan.grid", k, v, positive=k != "beta"))
    return ScanSpec(grid, _number("scan", "dipolar_d", s.get("dipolar_d", DEFAULT_DIPOLAR_D)))


_NEEDS = {
    "chirp": (("pulse",), ("chirp",)),
    "ise": (("pulse", "system"), ()),
    "epr-line": (("pulse", "system"), ("line",)),
    "ase": (("pulse", "system", "ase"), ()),
    "scan": (("pulse", "system", "scan"), ()),
}


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    if not isinstance(raw, dict):
        raise ValidationError("<root>", "must be an object")
    if "schema_version" not in raw:
        raise ValidationError("schema_version", "required field missing")
    if raw["schema_version"] != SCHEMA_VERSION or isinstance(raw["schema_version"], bool):
        raise ValidationError("schema_version", f"unsupported version {raw['schema_version']!r}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ValidationError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    required, optional = _NEEDS[exp]
    allowed = {"schema_version", "experiment", "integrator", "workers", *required, *optional}
    for k in raw:
        if k not in allowed:
            raise ValidationError(k, "unknown key" if k not in _ALL_SECTIONS else f"not used by '{exp}'")
    for k in required:
        if k not in raw:
            raise ValidationError(k, "required field missing")

    pulse = _pulse(raw["pulse"])
    system = _system(raw["system"]) if "system" in raw else None
    integ, converge = _integrator(raw.get("integrator", {}))
    cfg = RunConfig(
        experiment=exp,
        pulse=pulse,
        system=system,
        integrator=integ,
        converge=converge,
        chirp=_chirp(raw["chirp"]) if "chirp" in raw else (ChirpSpec() if exp == "chirp" else None),
        line=_line(raw["line"]) if "line" in raw else None,
        ase=_ase(raw["ase"]) if "ase" in raw else None,
        scan=_scan(raw["scan"]) if "scan" in raw else None,
        workers=_number(None, "workers", raw.get("workers", 1), positive=True, integer=True),
    )
    _check_physics(cfg)
    return cfg


_ALL_SECTIONS = {"pulse", "system", "chirp", "line", "ase", "scan"}


def _check_physics(cfg: RunConfig):
    if cfg.experiment in ("ise", "epr-line", "ase") and cfg.pulse.omega1 >= cfg.system.omega0n:
        raise ValidationError("pulse.omega1", "must be below system.omega0n")
    if cfg.experiment == "ase":
        _, zq = matching_offsets(cfg.system, cfg.pulse.omega1)
        if cfg.pulse.covers(cfg.system.packet_offset + zq):
            raise ValidationError("pulse", "ASE window must not include the ZQ condition")


def _reject_constant(name):
    raise ValueError(f"non-finite literal {name}")


def parse_config_text(text: str) -> RunConfig:
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return config_from_dict(raw)


def parse_config(path) -> RunConfig:
    """Read, parse and validate a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError("config", f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def with_overrides(cfg: RunConfig, *, dt=None, t2=None, stride=None, seed=None) -> RunConfig:
    """Apply command-line overrides, re-validating the affected fields."""
    integ = cfg.integrator
    if dt is not None:
        integ = replace(integ, dt=_flag("--dt", dt, positive=True))
    if t2 is not None:
        integ = replace(integ, t2=_flag("--t2", t2, positive=True))
    if stride is not None:
        integ = replace(integ, sample_stride=int(_flag("--stride", stride, positive=True)))
    line = cfg.line
    if seed is not None:
        if line is None or line.shape != "random":
            raise ValidationError("--seed", "only applies to a 'random' line")
        line = LineSpec("random", {**line.values, "seed": int(_flag("--seed", seed, nonneg=True))})
    return replace(cfg, integrator=integ, line=line)


def _flag(name, v, **kw):
    try:
        return _number(None, name, v, **kw)
    except ValidationError as exc:
        raise ValidationError(name, exc.reason) from None
