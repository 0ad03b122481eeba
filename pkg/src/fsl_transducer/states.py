"""Input states, ideal transduction targets, fidelity and Wigner functions.

Wigner convention: ``x = (a + a^dag)/sqrt(2)``, ``p = (a - a^dag)/(i sqrt(2))``,
``W(x, p) = (1/pi) Tr[rho D(beta) P D(beta)^dag]`` with ``beta = (x + i p)/sqrt(2)``
and ``P`` the photon-number parity, so that ``\\iint W dx dp = 1`` and the vacuum
gives ``W(0, 0) = 1/pi``. The displaced-parity trace is evaluated in closed form
on the Fock basis (Laguerre recursion), with no second truncation.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .hilbert import (
    Atom,
    ModeBasis,
    ProductBasis,
    QuantumState,
    SiteLabel,
    Slot,
    coherent_truncation,
    squeezed_truncation,
)

__all__ = [
    "Fock",
    "Coherent",
    "SqueezedVacuum",
    "InputStateSpec",
    "TruncationError",
    "GridWarning",
    "fock_amplitudes",
    "default_basis",
    "prepare_initial",
    "ideal_target",
    "fidelity",
    "wigner",
    "wigner_extent",
    "write_wigner_csv",
]

TAIL = 1e-6


class TruncationError(ValueError):
    pass


class GridWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Fock:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError("Fock photon number must be a nonnegative integer")

    def n_max(self) -> int:
        return int(self.n)


@dataclass(frozen=True)
class Coherent:
    alpha: complex

    def n_max(self) -> int:
        return coherent_truncation(self.alpha, TAIL)


@dataclass(frozen=True)
class SqueezedVacuum:
    """``exp[(xi^* b^2 - xi b^dag^2)/2] |0>`` with ``xi = r e^{i theta}``."""

    r: float
    theta: float = 0.0

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("squeezing magnitude r must be nonnegative")

    def n_max(self) -> int:
        return squeezed_truncation(self.r, TAIL)


InputStateSpec = Union[Fock, Coherent, SqueezedVacuum]


def fock_amplitudes(spec: InputStateSpec, n_max: int, sign_flip: bool = False) -> np.ndarray:
    """Fock amplitudes ``c_0..c_{n_max}`` of a single-mode input state.

    ``sign_flip`` multiplies component ``n`` by ``(-1)^n``.
    """
    c = np.zeros(n_max + 1, dtype=complex)
    if isinstance(spec, Fock):
        if spec.n > n_max:
            raise TruncationError(f"Fock({spec.n}) exceeds truncation {n_max}")
        c[spec.n] = 1.0
    elif isinstance(spec, Coherent):
        alpha = complex(spec.alpha)
        logn = np.array([math.lgamma(k + 1) for k in range(n_max + 1)])
        if alpha == 0:
            c[0] = 1.0
        else:
            n = np.arange(n_max + 1)
            mag = np.exp(-0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * logn)
            c = mag * np.exp(1j * n * np.angle(alpha))
    elif isinstance(spec, SqueezedVacuum):
        t = math.tanh(spec.r)
        pref = 1.0 / math.sqrt(math.cosh(spec.r))
        for k in range(n_max // 2 + 1):
            # <2k|S(xi)|0> = (-e^{i theta} tanh r)^k sqrt((2k)!) / (2^k k!) / sqrt(cosh r)
            logmag = 0.5 * math.lgamma(2 * k + 1) - k * math.log(2) - math.lgamma(k + 1)
            c[2 * k] = pref * (-np.exp(1j * spec.theta) * t) ** k * math.exp(logmag)
    else:
        raise TypeError(f"unknown input state spec {spec!r}")
    if sign_flip:
        c = c * (-1.0) ** np.arange(n_max + 1)
    return c


def default_basis(spec: InputStateSpec) -> ProductBasis:
    """Excitation-capped product basis wide enough for ``spec``."""
    n = max(spec.n_max(), 1)
    return ProductBasis(n, n, max_excitation=n)


def _product_state(basis: ProductBasis, amps: np.ndarray, photon_slot: Slot) -> QuantumState:
    vec = np.zeros(basis.dim, dtype=complex)
    for n, a in enumerate(amps):
        if a == 0:
            continue
        lab = SiteLabel(n, Atom.G, 0) if photon_slot is Slot.MW else SiteLabel(0, Atom.G, n)
        try:
            vec[basis.index(lab)] = a
        except KeyError as exc:
            raise TruncationError(f"component {lab} outside basis") from exc
    retained = float(np.vdot(vec, vec).real)
    if retained < 1.0 - TAIL:
        raise TruncationError(f"basis retains only {retained:.8f} of the state norm")
    return QuantumState.pure(basis, vec / math.sqrt(retained))


def _amplitudes_for(spec: InputStateSpec, basis: ProductBasis, slot: Slot, sign_flip=False):
    n_max = basis.n_max_mw if slot is Slot.MW else basis.n_max_opt
    if basis.max_excitation is not None:
        n_max = min(n_max, basis.max_excitation)
    amps = fock_amplitudes(spec, n_max, sign_flip)
    retained = float(np.sum(np.abs(amps) ** 2))
    if retained < 1.0 - TAIL:
        raise TruncationError(
            f"truncation {n_max} keeps {retained:.8f} of {spec!r}; need >= {1 - TAIL}"
        )
    return amps


def prepare_initial(spec: InputStateSpec, basis: ProductBasis | None = None) -> QuantumState:
    """``(MW input state) (x) |G> (x) |0_o>`` on ``basis`` (default: :func:`default_basis`).

    The truncated amplitudes are renormalized after checking that at least
    ``1 - 1e-6`` of the norm is retained.
    """
    basis = default_basis(spec) if basis is None else basis
    return _product_state(basis, _amplitudes_for(spec, basis, Slot.MW), Slot.MW)


def ideal_target(spec: InputStateSpec, basis: ProductBasis | None = None) -> QuantumState:
    """``|0_m, G> (x) (optical copy of the input)`` with a ``(-1)^n`` phase per Fock component.

    For a coherent input that is the optical coherent state of amplitude ``-alpha``;
    squeezed vacuum (even support only) maps to the same ``xi``; a Fock input
    ``n`` maps to ``|0_m, G, n_o>``.
    """
    basis = default_basis(spec) if basis is None else basis
    return _product_state(basis, _amplitudes_for(spec, basis, Slot.OPT, sign_flip=True), Slot.OPT)


def fidelity(rho: QuantumState, target: QuantumState) -> float:
    """``<target| rho |target>`` for a pure target, clipped to [0, 1]."""
    if not target.is_pure:
        raise ValueError("target must be a pure state")
    if rho.basis != target.basis or rho.dim != target.dim:
        raise ValueError("fidelity needs both states on the same basis")
    t = target.data
    if rho.is_pure:
        val = complex(abs(np.vdot(t, rho.data)) ** 2)
    else:
        val = complex(np.vdot(t, rho.data @ t))
    if abs(val.imag) > 1e-10:
        raise ValueError(f"fidelity has imaginary residue {val.imag!r}")
    return float(min(1.0, max(0.0, val.real)))


def wigner_extent(n_max: int) -> float:
    """Half-width ``sqrt(2 n_max) + 3`` of a grid holding the state's Wigner function."""
    return math.sqrt(2 * n_max) + 3.0


def wigner(rho_mode, xvec, pvec) -> np.ndarray:
    """Wigner function on the grid ``W[i, j] = W(x_i, p_j)``.

    ``rho_mode`` is a single-mode :class:`QuantumState` (pure or mixed) or a square
    density matrix in the Fock basis. A :class:`GridWarning` is issued when the
    grid integral of ``W`` falls below 0.999.
    """
    if isinstance(rho_mode, QuantumState):
        rho = rho_mode.density_matrix()
    else:
        rho = np.asarray(rho_mode, dtype=complex)
        if rho.ndim == 1:
            rho = np.outer(rho, rho.conj())
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("wigner needs a square single-mode density matrix")
    xvec = np.asarray(xvec, dtype=float)
    pvec = np.asarray(pvec, dtype=float)
    X, P = np.meshgrid(xvec, pvec, indexing="ij")
    beta = (X + 1j * P) / math.sqrt(2.0)
    M = rho.shape[0]

    # Wigner function of |m><n| (m <= n):
    #   (1/pi) (-1)^m sqrt(m!/n!) (2 conj(beta))^(n-m) exp(-2|beta|^2) L_m^(n-m)(4|beta|^2)
    # generated by the recursions below; W = sum_{m,n} rho[n, m] W_{mn}.
    wlist = [np.zeros_like(beta) for _ in range(M)]
    wlist[0] = np.exp(-2.0 * np.abs(beta) ** 2) / np.pi
    W = rho[0, 0].real * wlist[0].real
    for n in range(1, M):
        wlist[n] = 2.0 * np.conj(beta) * wlist[n - 1] / math.sqrt(n)
        W += 2.0 * np.real(rho[n, 0] * wlist[n])
    for m in range(1, M):
        temp = wlist[m].copy()
        wlist[m] = (2.0 * beta * temp - math.sqrt(m) * wlist[m - 1]) / math.sqrt(m)
        W += np.real(rho[m, m] * wlist[m])
        for n in range(m + 1, M):
            temp2 = (2.0 * np.conj(beta) * wlist[n - 1] - math.sqrt(m) * temp) / math.sqrt(n)
            temp = wlist[n].copy()
            wlist[n] = temp2
            W += 2.0 * np.real(rho[n, m] * wlist[n])
    W = np.real(W)
    if len(xvec) > 1 and len(pvec) > 1:
        total = np.trapezoid(np.trapezoid(W, pvec, axis=1), xvec)
        if total < 0.999:
            warnings.warn(f"Wigner grid captures only {total:.5f} of the norm", GridWarning)
    return W


def write_wigner_csv(path, W, xvec, pvec, label: str = "") -> None:
    """CSV with ``#`` header lines recording grid and convention, then one row per
    ``(x, p)`` point: ``x,p,W``."""
    xvec = np.asarray(xvec, dtype=float)
    pvec = np.asarray(pvec, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(f"# wigner {label}\n")
        fh.write("# convention: x=(a+a^dag)/sqrt(2), p=(a-a^dag)/(i sqrt(2)), integral W dx dp = 1\n")
        fh.write(f"# x: min={xvec[0]!r} max={xvec[-1]!r} n={len(xvec)}\n")
        fh.write(f"# p: min={pvec[0]!r} max={pvec[-1]!r} n={len(pvec)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "p", "W"])
        for i, x in enumerate(xvec):
            for j, p in enumerate(pvec):
                w.writerow([repr(float(x)), repr(float(p)), repr(float(W[i, j]))])
