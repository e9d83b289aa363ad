"""Spin-1/2 operator algebra for an electron (S) and a nucleus (I).

Basis convention
----------------
Two-spin matrices use the product basis ``|aa>, |ab>, |ba>, |bb>`` with the
electron as the first Kronecker factor (``a`` = spin up, ``b`` = spin down).
Every index-based subspace extraction in the package relies on this order:

- DQ block (flip-flip pair ``|aa> <-> |bb>``): indices 0 and 3
- ZQ block (flip-flop pair ``|ab> <-> |ba>``): indices 1 and 2

Density matrices are deviation matrices (traceless); the reference initial
state is ``rho = Sz`` with no Boltzmann prefactor, so enhancements are read
directly as ``<Iz> / <Sz>(0)``.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, ImaginaryResidue, NonHermitianObservable

HERMITIAN_TOL = 1e-12
IMAG_TOL = 1e-10

DQ_INDICES = (0, 3)
ZQ_INDICES = (1, 2)

# Bloch components are 2 Tr[sigma_a/2 rho]; with a deviation matrix of
# polarization 1/2 (e.g. diag(1/2, -1/2)) the poles sit at +-1.
BLOCH_NORMALIZATION = 2.0


class SpinHalf(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    plus: np.ndarray
    minus: np.ndarray
    identity: np.ndarray


class TwoSpin(NamedTuple):
    Sx: np.ndarray
    Sy: np.ndarray
    Sz: np.ndarray
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray
    Splus: np.ndarray
    Sminus: np.ndarray
    Iplus: np.ndarray
    Iminus: np.ndarray
    identity: np.ndarray

    def product(self, a: str, b: str) -> np.ndarray:
        """Return ``S_a I_b`` for ``a, b`` in ``{'x', 'y', 'z'}``."""
        return getattr(self, "S" + a) @ getattr(self, "I" + b)


class FictitiousBasis(NamedTuple):
    DQx: np.ndarray
    DQy: np.ndarray
    DQz: np.ndarray
    ZQx: np.ndarray
    ZQy: np.ndarray
    ZQz: np.ndarray


def _frozen(a):
    a = np.asarray(a, dtype=np.complex128)
    a.setflags(write=False)
    return a


def spin_half_operators() -> SpinHalf:
    """Single spin-1/2 operators (Pauli matrices / 2) plus ladder operators."""
    x = np.array([[0, 0.5], [0.5, 0]])
    y = np.array([[0, -0.5j], [0.5j, 0]])
    z = np.array([[0.5, 0], [0, -0.5]])
    return SpinHalf(
        x=_frozen(x),
        y=_frozen(y),
        z=_frozen(z),
        plus=_frozen(x + 1j * y),
        minus=_frozen(x - 1j * y),
        identity=_frozen(np.eye(2)),
    )


def two_spin_operators() -> TwoSpin:
    """Kronecker-lifted operators ``S (x) 1`` and ``1 (x) I``."""
    s = spin_half_operators()
    e = np.eye(2)

    def el(a):
        return _frozen(np.kron(a, e))

    def nu(a):
        return _frozen(np.kron(e, a))

    return TwoSpin(
        Sx=el(s.x), Sy=el(s.y), Sz=el(s.z),
        Ix=nu(s.x), Iy=nu(s.y), Iz=nu(s.z),
        Splus=el(s.plus), Sminus=el(s.minus),
        Iplus=nu(s.plus), Iminus=nu(s.minus),
        identity=_frozen(np.eye(4)),
    )


def fictitious_basis() -> FictitiousBasis:
    """DQ and ZQ fictitious spin-1/2 operators.

    DQ operators live on the ``{|aa>, |bb>}`` block and ZQ operators on the
    ``{|ab>, |ba>}`` block. ``ZQy = SxIy - SyIx`` is the conventional choice
    but it makes the ZQ triple left-handed: ``[ZQx, ZQy] = -i ZQz``, so
    ``(ZQy, ZQx, ZQz)`` is the cyclic su(2) order and the ZQ-reduced Bloch
    y component equals ``-2 <ZQy>``.
    """
    o = two_spin_operators()
    xx, yy = o.Sx @ o.Ix, o.Sy @ o.Iy
    xy, yx = o.Sx @ o.Iy, o.Sy @ o.Ix
    return FictitiousBasis(
        DQx=_frozen(xx - yy),
        DQy=_frozen(xy + yx),
        DQz=_frozen(0.5 * (o.Sz + o.Iz)),
        ZQx=_frozen(xx + yy),
        ZQy=_frozen(xy - yx),
        ZQz=_frozen(0.5 * (o.Sz - o.Iz)),
    )


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def hermiticity_error(m: np.ndarray) -> float:
    """Max element-wise ``|M - M^dagger|`` (works on stacks too)."""
    m = np.asarray(m)
    return float(np.max(np.abs(m - np.swapaxes(m, -1, -2).conj()))) if m.size else 0.0


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return hermiticity_error(m) <= tol


def expect(op: np.ndarray, rho: np.ndarray, tol: float = HERMITIAN_TOL) -> float:
    """Expectation value ``Tr[op rho]`` of a Hermitian observable.

    Raises
    ------
    DimensionMismatch
        If ``op`` and ``rho`` are not square matrices of the same size.
    NonHermitianObservable
        If ``op`` deviates from Hermitian by more than ``tol``.
    ImaginaryResidue
        If the trace has an imaginary part above 1e-10, which only happens
        for a corrupted (non-Hermitian) state.
    """
    op = np.asarray(op)
    rho = np.asarray(rho)
    if op.ndim != 2 or op.shape[0] != op.shape[1] or op.shape != rho.shape:
        raise DimensionMismatch(f"operator {op.shape} vs state {rho.shape}")
    if not is_hermitian(op, tol):
        raise NonHermitianObservable(f"observable is not Hermitian (err={hermiticity_error(op):.3g})")
    value = np.trace(op @ rho)
    if abs(value.imag) > IMAG_TOL:
        raise ImaginaryResidue(f"Tr[O rho] has imaginary part {value.imag:.3g}")
    return float(value.real)


def expect_many(op: np.ndarray, rhos: np.ndarray) -> np.ndarray:
    """Vectorised ``Tr[op rho_n]`` over a stack of states (real part only)."""
    return np.einsum("ij,nji->n", op, rhos).real


def reduce_subspace(rho: np.ndarray, which: str) -> np.ndarray:
    """Extract the 2x2 DQ (rows/cols 0,3) or ZQ (rows/cols 1,2) block."""
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise DimensionMismatch(f"subspace reduction needs a 4x4 state, got {rho.shape}")
    idx = {"DQ": DQ_INDICES, "ZQ": ZQ_INDICES}[which.upper()]
    return rho[np.ix_(idx, idx)].copy()


def bloch_vector(rho2: np.ndarray) -> tuple[float, float, float]:
    """Bloch vector ``(x, y, z)`` of a 2x2 (reduced) density matrix.

    Components are ``2 Tr[sigma_a/2 rho]`` (see ``BLOCH_NORMALIZATION``), so
    ``diag(1/2, -1/2)`` maps to ``(0, 0, 1)``.
    """
    rho2 = np.asarray(rho2)
    if rho2.shape != (2, 2):
        raise DimensionMismatch(f"Bloch vector needs a 2x2 state, got {rho2.shape}")
    s = spin_half_operators()
    return tuple(BLOCH_NORMALIZATION * float(np.trace(a @ rho2).real) for a in (s.x, s.y, s.z))


def product_basis() -> dict[str, np.ndarray]:
    """The 16 orthogonal operators ``S_a I_b`` with ``a, b`` in ``{1, x, y, z}``.

    Identity factors are written as ``E``; e.g. ``"xE"`` is ``Sx``.
    """
    s = spin_half_operators()
    single = {"E": s.identity, "x": s.x, "y": s.y, "z": s.z}
    return {a + b: np.kron(single[a], single[b]) for a in single for b in single}


def decompose(rho: np.ndarray) -> dict[str, complex]:
    """Coefficients of ``rho`` on the product basis (``Tr[B rho] / Tr[B B]``)."""
    out = {}
    for name, b in product_basis().items():
        out[name] = np.trace(b @ rho) / np.trace(b @ b).real
    return out


def rotate_electron(rho: np.ndarray, angle: float) -> np.ndarray:
    """Apply ``exp(-i angle Sy) rho exp(+i angle Sy)`` on the electron factor."""
    rho = np.asarray(rho)
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    r2 = np.array([[c, -s], [s, c]], dtype=np.complex128)
    r = r2 if rho.shape[-1] == 2 else np.kron(r2, np.eye(2))
    return r @ rho @ r.conj().T
