"""Piecewise-constant propagation of a density matrix.

Each step samples the Hamiltonian at the interval midpoint, applies the
exact propagator ``exp(-i H dt)`` (Hermitian eigendecomposition) and then,
if a T2 is set, damps selected coherences by ``exp(-dt / T2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numba
import numpy as np

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    NonHermitianHamiltonian,
    NonPositiveT2,
)
from .operators import (
    HERMITIAN_TOL,
    expect_many,
    fictitious_basis,
    hermiticity_error,
    spin_half_operators,
    two_spin_operators,
)

RelaxMode = Literal["dq-zq-only", "all-offdiagonal"]
RELAX_MODES = ("dq-zq-only", "all-offdiagonal")

DEFAULT_MAX_DT = 0.02  # us
_CHUNK = 16384

OBSERVABLE_NAMES = ("Sz", "Iz", "Sx", "Sy", "DQx", "DQy", "DQz", "ZQx", "ZQy", "ZQz")


def _observable_ops(dim):
    if dim == 2:
        s = spin_half_operators()
        return {"Sz": s.z, "Sx": s.x, "Sy": s.y}
    o, f = two_spin_operators(), fictitious_basis()
    return {
        "Sz": o.Sz, "Iz": o.Iz, "Sx": o.Sx, "Sy": o.Sy,
        "DQx": f.DQx, "DQy": f.DQy, "DQz": f.DQz,
        "ZQx": f.ZQx, "ZQy": f.ZQy, "ZQz": f.ZQz,
    }


@dataclass(frozen=True)
class IntegratorConfig:
    """Step and relaxation settings.

    ``dt=None`` picks ``min(duration / 1000, 0.02 us)``. ``t2=None`` disables
    decoherence. ``sample_stride`` controls how often observables are
    recorded (the initial and final states are always kept).
    """

    dt: float | None = None
    t2: float | None = None
    relax_mode: RelaxMode = "dq-zq-only"
    conv_tol: float = 1e-6
    max_halvings: int = 10
    sample_stride: int = 1

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t2 is not None and not self.t2 > 0:
            raise NonPositiveT2("t2 must be positive")
        if self.relax_mode not in RELAX_MODES:
            raise ValueError(f"relax_mode must be one of {RELAX_MODES}")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be >= 0")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")

    def step_for(self, duration: float) -> float:
        if self.dt is not None:
            return self.dt
        return min(duration / 1000.0, DEFAULT_MAX_DT)


@dataclass
class Trajectory:
    """Time series of expectation values.

    ``observables`` maps names from :data:`OBSERVABLE_NAMES` to arrays the
    same length as ``times``; two-level runs only carry Sz, Sx and Sy.
    ``states`` holds the recorded density matrices when requested.
    """

    times: np.ndarray
    observables: dict[str, np.ndarray]
    states: np.ndarray | None = None
    dt: float | None = None
    meta: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        for k, v in self.observables.items():
            if len(v) != n:
                raise ValueError(f"series {k} has length {len(v)}, expected {n}")

    def __len__(self):
        return len(self.times)

    def __getitem__(self, name):
        return self.observables[name]

    def final(self, name: str) -> float:
        return float(self.observables[name][-1])

    def index_at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def at(self, name: str, t: float) -> float:
        return float(self.observables[name][self.index_at(t)])


def relaxation_mask(dim: int, mode: RelaxMode) -> np.ndarray:
    """Boolean mask of the density-matrix elements damped by T2.

    On a 4x4 state ``dq-zq-only`` selects (0,3), (3,0), (1,2), (2,1); on a
    2x2 state every mode damps the single coherence pair.
    """
    mask = ~np.eye(dim, dtype=bool)
    if dim == 4 and mode == "dq-zq-only":
        mask[:] = False
        mask[0, 3] = mask[3, 0] = mask[1, 2] = mask[2, 1] = True
    return mask


def step_unitary(rho: np.ndarray, H: np.ndarray, dt: float) -> np.ndarray:
    """``U rho U^dagger`` with ``U = exp(-i H dt)`` from an eigendecomposition."""
    rho = np.asarray(rho, dtype=np.complex128)
    H = np.asarray(H)
    if H.shape != rho.shape:
        raise DimensionMismatch(f"H {H.shape} vs rho {rho.shape}")
    if hermiticity_error(H) > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(H)))):
        raise NonHermitianHamiltonian("Hamiltonian is not Hermitian")
    w, v = np.linalg.eigh(H)
    u = (v * np.exp(-1j * w * dt)) @ v.conj().T
    return u @ rho @ u.conj().T


def apply_t2(rho: np.ndarray, dt: float, t2: float, mode: RelaxMode = "dq-zq-only") -> np.ndarray:
    """Multiply the selected coherences by ``exp(-dt / t2)``."""
    if not t2 > 0:
        raise NonPositiveT2("t2 must be positive")
    rho = np.array(rho, dtype=np.complex128)
    mask = relaxation_mask(rho.shape[0], mode)
    rho[mask] *= math.exp(-dt / t2)
    return rho


@numba.njit(cache=True)
def _propagate_chunk(us, rho, mask, decay, keep, out):
    # us: (n, d, d) step propagators; keep: sorted indices (into this chunk) to record
    d = rho.shape[0]
    tmp = np.empty_like(rho)
    j = 0
    for i in range(us.shape[0]):
        for a in range(d):
            for b in range(d):
                acc = 0j
                for c in range(d):
                    acc += us[i, a, c] * rho[c, b]
                tmp[a, b] = acc
        for a in range(d):
            for b in range(d):
                acc = 0j
                for c in range(d):
                    acc += tmp[a, c] * us[i, b, c].conjugate()
                rho[a, b] = acc
        if decay != 1.0:
            for a in range(d):
                for b in range(d):
                    if mask[a, b]:
                        rho[a, b] *= decay
        if j < keep.shape[0] and keep[j] == i:
            out[j] = rho
            j += 1
    return rho


def _step_propagators(hs, dt):
    w, v = np.linalg.eigh(hs)
    return np.einsum("nij,nj,nkj->nik", v, np.exp(-1j * w * dt), v.conj())


def evolve(
    rho0: np.ndarray,
    hamiltonian: Callable[[np.ndarray], np.ndarray],
    t_span: tuple[float, float],
    cfg: IntegratorConfig = IntegratorConfig(),
    *,
    dt: float | None = None,
    record_at=(),
    keep_states: bool = False,
    check_hermitian: bool = True,
) -> Trajectory:
    """Propagate ``rho0`` under ``hamiltonian`` over ``t_span``.

    Parameters
    ----------
    rho0 : (d, d) array
        Initial deviation density matrix (d = 2 or 4).
    hamiltonian : callable
        Maps an array of times (us) to a stack of angular Hamiltonians.
    t_span : (t0, t1)
        Start and end time in us.
    cfg : IntegratorConfig
    dt : float, optional
        Overrides ``cfg``'s step choice.
    record_at : sequence of float
        Extra times to record regardless of ``sample_stride`` (snapped to
        the nearest step boundary).
    keep_states : bool
        Also store the recorded density matrices.
    """
    rho = np.array(rho0, dtype=np.complex128)
    dim = rho.shape[0]
    if rho.shape not in ((2, 2), (4, 4)):
        raise DimensionMismatch(f"state must be 2x2 or 4x4, got {rho.shape}")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    duration = t1 - t0
    step = dt if dt is not None else cfg.step_for(duration)
    n = max(1, int(math.ceil(duration / step - 1e-9)))
    step = duration / n

    keep = set(range(cfg.sample_stride - 1, n, cfg.sample_stride))
    keep.add(n - 1)
    for t in record_at:
        k = int(round((t - t0) / step))
        if 1 <= k <= n:
            keep.add(k - 1)
    keep = np.array(sorted(keep), dtype=np.int64)

    mask = relaxation_mask(dim, cfg.relax_mode)
    decay = math.exp(-step / cfg.t2) if cfg.t2 is not None else 1.0
    states = np.empty((len(keep) + 1, dim, dim), dtype=np.complex128)
    states[0] = rho
    filled = 1
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        mids = t0 + (np.arange(start, stop) + 0.5) * step
        hs = np.asarray(hamiltonian(mids), dtype=np.complex128)
        if hs.shape != (stop - start, dim, dim):
            raise DimensionMismatch(f"Hamiltonian stack has shape {hs.shape}")
        if check_hermitian and hermiticity_error(hs) > HERMITIAN_TOL * max(1.0, float(np.max(np.abs(hs)))):
            raise NonHermitianHamiltonian("Hamiltonian is not Hermitian")
        sel = keep[(keep >= start) & (keep < stop)] - start
        out = np.empty((len(sel), dim, dim), dtype=np.complex128)
        rho = _propagate_chunk(_step_propagators(hs, step), rho, mask, decay, sel, out)
        states[filled:filled + len(sel)] = out
        filled += len(sel)

    times = np.concatenate(([t0], t0 + (keep + 1) * step))
    obs = {name: expect_many(op, states) for name, op in _observable_ops(dim).items()}
    return Trajectory(
        times=times,
        observables=obs,
        states=states if keep_states else None,
        dt=step,
        final_state=rho.copy(),
    )


def evolve_converged(
    rho0,
    hamiltonian,
    t_span,
    cfg: IntegratorConfig = IntegratorConfig(),
    **kw,
) -> tuple[Trajectory, float]:
    """Halve the step until the final Sz and Iz stop moving.

    A step is accepted once halving it changes the final Sz and Iz by less
    than ``cfg.conv_tol``; that trajectory and its step are returned, with
    the number of halvings taken in ``meta["halvings"]``. Raises
    :class:`ConvergenceFailure` when ``cfg.max_halvings`` halvings are
    exhausted.
    """
    duration = t_span[1] - t_span[0]
    # a step longer than the span would be clamped to one step and
    # "converge" trivially, so start from at most the span itself
    dt = min(kw.pop("dt", None) or cfg.step_for(duration), duration)
    prev = evolve(rho0, hamiltonian, t_span, cfg, dt=dt, **kw)
    key = ("Sz", "Iz") if "Iz" in prev.observables else ("Sz",)

    def finals(tr):
        return np.array([tr.final(k) for k in key])

    for halving in range(cfg.max_halvings + 1):
        dt /= 2
        cur = evolve(rho0, hamiltonian, t_span, cfg, dt=dt, **kw)
        if np.max(np.abs(finals(cur) - finals(prev))) < cfg.conv_tol:
            prev.meta["halvings"] = halving
            return prev, prev.dt
        if halving == cfg.max_halvings:
            break
        prev = cur
    raise ConvergenceFailure(
        f"no convergence after {cfg.max_halvings} halvings (dt={prev.dt:.3g} us)",
        last_values=(finals(prev).tolist(), finals(cur).tolist()),
    )
