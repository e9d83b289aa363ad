"""Experiment drivers: single-electron chirps, ISE/DSE sweeps, broad EPR
lines, repeated ASE sweeps, and parameter scans.

Outcome classification
----------------------
A full sweep crosses the first SE condition (DQ with default conventions),
the electron SQ resonance and then the second condition (ZQ). ``<Iz>`` is
read at the SQ crossing (``iz_after_dq``) and at the end (``iz_final``):

- ISE: ``|iz_final| > |iz_after_dq|`` with the same sign
- DSE: ``|iz_final| < (1 - DSE_EPSILON) |iz_after_dq|``
- NONE: anything else, including runs where ``<Iz>`` never leaves
  round-off level

The coherence predictor reads the second block's x/y coherences at its
matching time, undoes the microwave phase and orients them by the signs of
``B`` and of the nuclear Zeeman term. In that frame the ZQ stage adds to
the DQ enhancement when ``ZQy > ZQx``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ChirpDNPError, WindowCoversZQ, WindowTooNarrow
from .hamiltonians import (
    ChirpPulse,
    SpinSystemParams,
    h_chirp,
    h_ise,
    h_se_static,
    hyperfine_from_dipolar,
    matching_offsets,
)
from .operators import spin_half_operators, two_spin_operators
from .propagation import IntegratorConfig, Trajectory, evolve, evolve_converged

DSE_EPSILON = 0.05
CLASSIFY_FLOOR = 1e-9  # |<Iz>| below this is round-off, not transfer
PREDICTOR_FLOOR = 1e-9  # below this the second-block coherence carries no sign
DEFAULT_DIPOLAR_D = 1.5  # MHz; puts B at 2.25 MHz for beta = 45 deg
SCAN_KEYS = ("omega0n", "rate_k", "omega1", "beta", "t2")


def _pmap(fn, items, workers):
    items = list(items)
    if workers and workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


# ---------------------------------------------------------------------------
# single electron

def chirp_initial_state(kind: str = "z", phi: float = 0.0) -> np.ndarray:
    """``Sz`` or the coherence ``sin(phi) Sx + cos(phi) Sy`` (2x2)."""
    s = spin_half_operators()
    if kind == "z":
        return np.array(s.z)
    if kind == "coherence":
        return math.sin(phi) * s.x + math.cos(phi) * s.y
    raise ValueError(f"unknown initial state {kind!r}")


def _evolve(rho0, ham, t_span, cfg, converge=False, **kw):
    if not converge:
        return evolve(rho0, ham, t_span, cfg, **kw)
    traj, _ = evolve_converged(rho0, ham, t_span, cfg, **kw)
    return traj


def run_chirp_single(
    pulse: ChirpPulse,
    packets: Sequence[float] = (0.0,),
    initial: str = "z",
    phi: float = 0.0,
    cfg: IntegratorConfig = IntegratorConfig(),
    converge: bool = False,
) -> Trajectory:
    """Sweep non-interacting electron packets and average their observables.

    The returned trajectory holds packet-averaged Sz, Sx, Sy; per-packet
    final values are in ``meta["packets"]``. With ``converge`` the step is
    refined on the first packet and reused for the others.
    """
    packets = list(packets)
    if not packets:
        raise ValueError("need at least one packet")
    rho0 = chirp_initial_state(initial, phi)
    span = (0.0, pulse.duration)
    first = _evolve(rho0, lambda t: h_chirp(t, pulse, packets[0]), span, cfg, converge)
    runs = [first] + [
        evolve(rho0, lambda t, pk=pk: h_chirp(t, pulse, pk), span, cfg, dt=first.dt)
        for pk in packets[1:]
    ]
    obs = {k: np.mean([r[k] for r in runs], axis=0) for k in first.observables}
    per = [{"packet_offset": pk, **{k: r.final(k) for k in r.observables}} for pk, r in zip(packets, runs)]
    meta = {"packets": per, "halvings": first.meta.get("halvings", 0)}
    return Trajectory(times=first.times, observables=obs, dt=first.dt, meta=meta)


# ---------------------------------------------------------------------------
# electron-nucleus sweeps

@dataclass
class OutcomeReport:
    """ISE/DSE verdict for one sweep (see module docstring).

    ``zqx_at_zq``/``zqy_at_zq`` are the raw coherences of the second block at
    its matching time; the ``*_oriented`` pair is what the predictor compares.
    """

    classification: str
    iz_after_dq: float
    iz_final: float
    zqx_at_zq: float
    zqy_at_zq: float
    zqx_oriented: float = float("nan")
    zqy_oriented: float = float("nan")
    predicted: str = "NONE"
    predictor_agrees: bool = False
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def classify(iz_after_dq: float, iz_final: float, eps: float = DSE_EPSILON) -> str:
    if max(abs(iz_after_dq), abs(iz_final)) < CLASSIFY_FLOOR:
        return "NONE"
    if abs(iz_final) > abs(iz_after_dq) and iz_final * iz_after_dq > 0:
        return "ISE"
    if abs(iz_final) < abs(iz_after_dq) * (1.0 - eps):
        return "DSE"
    return "NONE"


def sweep_landmarks(pulse: ChirpPulse, params: SpinSystemParams):
    """Times of the first SE crossing, the SQ crossing and the second SE crossing.

    Returns a dict with keys ``first``, ``sq``, ``second`` (times, us) and
    ``first_kind``/``second_kind`` ("DQ" or "ZQ"); times are None when the
    sweep never reaches that offset.
    """
    dq, zq = matching_offsets(params, pulse.omega1)
    pk = params.packet_offset
    marks = sorted([("DQ", pk + dq), ("ZQ", pk + zq)], key=lambda m: pulse.time_at(m[1]))

    def t_of(off):
        return pulse.time_at(off) if pulse.covers(off) else None

    return {
        "first": t_of(marks[0][1]),
        "first_kind": marks[0][0],
        "sq": t_of(pk),
        "second": t_of(marks[1][1]),
        "second_kind": marks[1][0],
    }


def _oriented(x, y, block, pulse, params):
    # undo the microwave phase (DQ and ZQ coherences turn in opposite
    # senses), then orient by sgn(B) and the nuclear sign
    phi = pulse.phase if block == "ZQ" else -pulse.phase
    c, s = math.cos(phi), math.sin(phi)
    xr, yr = c * x - s * y, s * x + c * y
    g = 1.0 if params.B >= 0 else -1.0
    return g * xr, g * params.nuclear_sign * yr


def classify_outcome(traj: Trajectory, params: SpinSystemParams, pulse: ChirpPulse) -> OutcomeReport:
    """Classify a full e-n sweep as ISE, DSE or NONE and evaluate the predictor."""
    marks = sweep_landmarks(pulse, params)
    if traj is None or len(traj) == 0 or "Iz" not in traj.observables:
        return OutcomeReport("NONE", 0.0, 0.0, 0.0, 0.0, warnings=["empty trajectory"])
    if None in (marks["first"], marks["sq"], marks["second"]):
        msg = "sweep window does not span both matching conditions"
        warnings.warn(msg, WindowTooNarrow, stacklevel=2)
        return OutcomeReport("NONE", traj.final("Iz"), traj.final("Iz"), 0.0, 0.0, warnings=[msg])

    iz_dq = traj.at("Iz", marks["sq"])
    iz_f = traj.final("Iz")
    blk = marks["second_kind"]
    x = traj.at(blk + "x", marks["second"])
    y = traj.at(blk + "y", marks["second"])
    xo, yo = _oriented(x, y, blk, pulse, params)
    verdict = classify(iz_dq, iz_f)
    if math.hypot(xo, yo) < PREDICTOR_FLOOR:
        predicted = "NONE"
    else:
        predicted = "ISE" if yo > xo else "DSE"
    return OutcomeReport(
        classification=verdict,
        iz_after_dq=iz_dq,
        iz_final=iz_f,
        zqx_at_zq=x,
        zqy_at_zq=y,
        zqx_oriented=xo,
        zqy_oriented=yo,
        predicted=predicted,
        predictor_agrees=predicted == verdict,
    )


def ise_trajectory(
    pulse: ChirpPulse,
    params: SpinSystemParams,
    cfg: IntegratorConfig = IntegratorConfig(),
    rho0=None,
    converge: bool = False,
    **kw,
) -> Trajectory:
    """Full 4x4 evolution over the whole pulse, starting from ``Sz`` by default.

    The SE and SQ crossing times are always among the recorded samples.
    """
    if rho0 is None:
        rho0 = two_spin_operators().Sz
    marks = sweep_landmarks(pulse, params)
    extra = [t for t in (marks["first"], marks["sq"], marks["second"]) if t is not None]
    extra += list(kw.pop("record_at", ()))
    ham = lambda t: h_ise(t, pulse, params)  # noqa: E731
    return _evolve(rho0, ham, (0.0, pulse.duration), cfg, converge, record_at=extra, **kw)


def run_ise(pulse: ChirpPulse, params: SpinSystemParams, cfg: IntegratorConfig = IntegratorConfig(), **kw):
    """Sweep the e-n pair through both SE conditions; returns ``(trajectory, report)``."""
    traj = ise_trajectory(pulse, params, cfg, **kw)
    return traj, classify_outcome(traj, params, pulse)


# ---------------------------------------------------------------------------
# broad EPR lines

@dataclass
class EprLine:
    """Spin packets of an inhomogeneous line: sorted offsets (MHz) and weights summing to 1."""

    offsets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.offsets.ndim != 1 or len(self.offsets) == 0:
            raise ValueError("EPR line needs at least one packet")
        if self.weights.shape != self.offsets.shape:
            raise ValueError("offsets and weights differ in length")
        if np.any(self.weights < 0) or not self.weights.sum() > 0:
            raise ValueError("weights must be non-negative with a positive sum")
        order = np.argsort(self.offsets, kind="stable")
        self.offsets = self.offsets[order]
        self.weights = self.weights[order] / self.weights.sum()

    def __len__(self):
        return len(self.offsets)

    @classmethod
    def gaussian(cls, sigma: float, n: int, center: float = 0.0, span: float = 2.0):
        """``n`` packets evenly spaced over ``center +- span*sigma`` with Gaussian weights."""
        x = np.linspace(center - span * sigma, center + span * sigma, n) if n > 1 else np.array([center])
        return cls(x, np.exp(-0.5 * ((x - center) / sigma) ** 2))

    @classmethod
    def uniform(cls, lo: float, hi: float, n: int):
        x = np.linspace(lo, hi, n) if n > 1 else np.array([(lo + hi) / 2])
        return cls(x, np.ones(n))

    @classmethod
    def explicit(cls, offsets, weights=None):
        offsets = np.asarray(offsets, dtype=float)
        return cls(offsets, np.ones(len(offsets)) if weights is None else weights)

    @classmethod
    def random(cls, sigma: float, n: int, seed: int, center: float = 0.0):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(center, sigma, n), np.ones(n))

    @classmethod
    def default_for(cls, pulse: ChirpPulse, n: int = 21):
        """Gaussian centred on the window with +-2 sigma filling it."""
        lo, hi = sorted((pulse.offset_start, pulse.offset_end))
        return cls.gaussian((hi - lo) / 4.0, n, center=(lo + hi) / 2.0)


@dataclass
class DnpProfile:
    offsets: np.ndarray
    weights: np.ndarray
    iz_final: np.ndarray
    sz_final: np.ndarray
    classifications: list
    errors: dict = field(default_factory=dict)

    @property
    def aggregate(self) -> float:
        ok = np.isfinite(self.iz_final)
        return float(np.sum(self.weights[ok] * self.iz_final[ok]))


class _PacketTask:
    def __init__(self, pulse, params, cfg):
        self.pulse, self.params, self.cfg = pulse, params, cfg

    def __call__(self, offset):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WindowTooNarrow)
            try:
                traj, rep = run_ise(self.pulse, self.params.with_packet(offset), self.cfg)
            except ChirpDNPError as exc:
                return offset, float("nan"), float("nan"), "NONE", str(exc)
        return offset, traj.final("Iz"), traj.final("Sz"), rep.classification, None


def run_epr_line(
    pulse: ChirpPulse,
    params_template: SpinSystemParams,
    line: EprLine,
    cfg: IntegratorConfig = IntegratorConfig(),
    workers: int = 1,
) -> DnpProfile:
    """Run every packet of ``line`` independently and assemble the DNP profile."""
    task = _PacketTask(pulse, params_template, replace(cfg, sample_stride=10**9))
    results = _pmap(task, line.offsets, workers)
    errors = {off: err for off, _, _, _, err in results if err}
    return DnpProfile(
        offsets=line.offsets.copy(),
        weights=line.weights.copy(),
        iz_final=np.array([r[1] for r in results]),
        sz_final=np.array([r[2] for r in results]),
        classifications=[r[3] for r in results],
        errors=errors,
    )


# ---------------------------------------------------------------------------
# repeated sweeps (ASE)

def run_ase(
    pulse: ChirpPulse,
    params: SpinSystemParams,
    n_sweeps: int,
    cfg: IntegratorConfig = IntegratorConfig(),
    delay: float = 0.0,
    rho0=None,
) -> np.ndarray:
    """Repeat a narrow sweep around the DQ condition ``n_sweeps`` times.

    After each sweep the offset jumps back to the window start; the state
    carries over, optionally after ``delay`` us of free evolution with the
    microwave off. Returns ``<Iz>`` after each sweep.
    """
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    _, zq = matching_offsets(params, pulse.omega1)
    if pulse.covers(params.packet_offset + zq):
        raise WindowCoversZQ("ASE window includes the ZQ condition; use run_ise for a full sweep")
    rho = two_spin_operators().Sz if rho0 is None else np.asarray(rho0)
    cfg = replace(cfg, sample_stride=10**9)
    ham = lambda t: h_ise(t, pulse, params)  # noqa: E731
    idle = h_se_static(params, params.packet_offset - pulse.offset_start, 0.0)
    out = np.empty(n_sweeps)
    for i in range(n_sweeps):
        traj = evolve(rho, ham, (0.0, pulse.duration), cfg)
        rho = traj.final_state
        out[i] = traj.final("Iz")
        if delay > 0:
            rho = evolve(rho, lambda t: np.broadcast_to(idle, (len(t), 4, 4)), (0.0, delay), cfg).final_state
    return out


# ---------------------------------------------------------------------------
# parameter scans

@dataclass
class ScanPoint:
    point: dict
    report: OutcomeReport | None
    error: str | None = None

    @property
    def classification(self):
        return self.report.classification if self.report else "ERROR"


class _ScanTask:
    def __init__(self, params, pulse, cfg, dipolar_d):
        self.params, self.pulse, self.cfg, self.d = params, pulse, cfg, dipolar_d

    def __call__(self, point):
        params, pulse, cfg = self.params, self.pulse, self.cfg
        if "omega0n" in point:
            params = replace(params, omega0n=point["omega0n"])
        if "beta" in point:
            a, b = hyperfine_from_dipolar(self.d, point["beta"])
            params = replace(params, A=a, B=b, dipolar_d=self.d, beta=point["beta"])
        if "omega1" in point:
            pulse = replace(pulse, omega1=point["omega1"])
        if "rate_k" in point:
            pulse = replace(pulse, rate_k=point["rate_k"])
        if "t2" in point:
            cfg = replace(cfg, t2=point["t2"])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", WindowTooNarrow)
                _, rep = run_ise(pulse, params, cfg)
        except (ChirpDNPError, ValueError) as exc:
            return ScanPoint(point, None, str(exc))
        return ScanPoint(point, rep)


def grid_points(grid: dict) -> list[dict]:
    unknown = set(grid) - set(SCAN_KEYS)
    if unknown:
        raise ValueError(f"unknown scan keys {sorted(unknown)}")
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("scan grid is empty")
    keys = list(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def scan_parameters(
    grid: dict,
    base: SpinSystemParams,
    pulse: ChirpPulse,
    cfg: IntegratorConfig = IntegratorConfig(),
    dipolar_d: float = DEFAULT_DIPOLAR_D,
    workers: int = 1,
) -> list[ScanPoint]:
    """Run one ISE sweep per grid point (Cartesian product of ``grid``).

    ``grid`` keys: ``omega0n``, ``rate_k``, ``omega1``, ``beta`` (radians,
    via :func:`hyperfine_from_dipolar` with ``dipolar_d``) and ``t2``.
    Failed points are reported with ``error`` set rather than raised.
    """
    task = _ScanTask(base, pulse, replace(cfg, sample_stride=10**9), dipolar_d)
    return _pmap(task, grid_points(grid), workers)
