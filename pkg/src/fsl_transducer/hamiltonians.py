"""Dual-mode Jaynes-Cummings Hamiltonian, Fock-state-lattice and SSH chains,
the pumping schedule and quenched coupling disorder.

Units: angular frequencies in rad/us, times in us.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .hilbert import Atom, ProductBasis, Slot, annihilation_operator, embed

__all__ = [
    "DEFAULT_G",
    "Couplings",
    "CouplingSchedule",
    "ChainKind",
    "ChainModel",
    "chain_hoppings",
    "chain_hamiltonian",
    "chain_hamiltonian_parts",
    "dual_mode_jc_hamiltonian",
    "jc_hamiltonian_parts",
    "excitation_number_operator",
    "schedule_at",
    "sample_disorder",
]

#: g/2pi = 0.282 MHz expressed in rad/us.
DEFAULT_G = 2 * math.pi * 0.282


@dataclass(frozen=True)
class Couplings:
    """Collective couplings of the superatom to the MW (``g_m``) and optical (``g_o``) modes."""

    g_m: float
    g_o: float

    def __post_init__(self):
        for name in ("g_m", "g_o"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")

    @property
    def magnitude(self) -> float:
        return math.hypot(self.g_m, self.g_o)

    @classmethod
    def from_ratio(cls, ratio: float, g: float = 1.0) -> "Couplings":
        """Couplings with ``g_m / g_o = ratio`` and ``g_m^2 + g_o^2 = g^2``."""
        theta = math.atan(ratio)
        return cls(g * math.sin(theta), g * math.cos(theta))


@dataclass(frozen=True)
class CouplingSchedule:
    """``G_m(t) = g sin(pi t / 2T) (1 + eps_m)``, ``G_o(t) = g cos(pi t / 2T) (1 + eps_o)``."""

    g: float
    T: float
    eps_m: float = 0.0
    eps_o: float = 0.0

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"g must be positive, got {self.g!r}")
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T!r}")
        if self.eps_m <= -1 or self.eps_o <= -1:
            raise ValueError("disorder multipliers must stay positive")

    def at(self, t: float) -> Couplings:
        return schedule_at(self, t)

    def amplitudes(self, t):
        """Vectorized ``(G_m(t), G_o(t))`` without range checks (integrator use)."""
        phase = np.pi * np.asarray(t) / (2 * self.T)
        return (
            self.g * np.sin(phase) * (1 + self.eps_m),
            self.g * np.cos(phase) * (1 + self.eps_o),
        )


def schedule_at(s: CouplingSchedule, t: float) -> Couplings:
    if not 0 <= t <= s.T:
        raise ValueError(f"t={t!r} outside [0, T={s.T!r}]")
    gm, go = s.amplitudes(t)
    # cos(pi/2) leaves ~1e-17 instead of 0 at t = T
    if t == s.T:
        go = 0.0
    return Couplings(float(gm), float(go))


class ChainKind(str, enum.Enum):
    FSL = "fsl"
    SSH = "ssh"


@dataclass(frozen=True)
class ChainModel:
    kind: ChainKind
    N: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ChainKind(self.kind))
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"excitation number must be a positive integer, got {self.N!r}")

    @property
    def dim(self) -> int:
        return 2 * self.N + 1


def chain_hoppings(model: ChainModel, c: Couplings) -> tuple[np.ndarray, np.ndarray]:
    """Intra-cell hoppings ``u_j`` and inter-cell hoppings ``v_j``, ``j = 1..N``."""
    j = np.arange(1, model.N + 1)
    if model.kind is ChainKind.FSL:
        return c.g_m * np.sqrt(model.N - j + 1), c.g_o * np.sqrt(j)
    return np.full(model.N, c.g_m, dtype=float), np.full(model.N, c.g_o, dtype=float)


def _offdiag(model: ChainModel, c: Couplings) -> np.ndarray:
    u, v = chain_hoppings(model, c)
    off = np.empty(2 * model.N)
    off[0::2] = u
    off[1::2] = v
    return off


def chain_hamiltonian(model: ChainModel, c: Couplings) -> sp.csr_matrix:
    """Real symmetric tridiagonal chain Hamiltonian of dimension ``2N+1``."""
    off = _offdiag(model, c)
    return sp.diags([off, off], [-1, 1], shape=(model.dim, model.dim), format="csr", dtype=float)


def chain_hamiltonian_parts(model: ChainModel) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``(A, B)`` with ``H = G_m A + G_o B``."""
    A = chain_hamiltonian(model, Couplings(1.0, 0.0)).toarray()
    B = chain_hamiltonian(model, Couplings(0.0, 1.0)).toarray()
    return A, B


def _raising_atom() -> sp.csr_matrix:
    m = np.zeros((2, 2), dtype=complex)
    m[int(Atom.R), int(Atom.G)] = 1.0
    return sp.csr_matrix(m)


def jc_hamiltonian_parts(basis: ProductBasis) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """``(H_m, H_o)`` with ``H_D = G_m H_m + G_o H_o``."""
    if basis.n_max_mw < 1 or basis.n_max_opt < 1:
        raise ValueError("both mode truncations must be at least 1")
    m, _, o = basis.full_shape
    s_plus = embed(_raising_atom(), Slot.ATOM, basis)
    b = embed(annihilation_operator(m), Slot.MW, basis)
    a = embed(annihilation_operator(o), Slot.OPT, basis)
    hm = s_plus @ b
    ho = s_plus @ a
    return (hm + hm.conj().T).tocsr(), (ho + ho.conj().T).tocsr()


def dual_mode_jc_hamiltonian(basis: ProductBasis, c: Couplings) -> sp.csr_matrix:
    """``G_m |R><G| b + G_o |R><G| a + h.c.`` on ``basis``."""
    hm, ho = jc_hamiltonian_parts(basis)
    return (c.g_m * hm + c.g_o * ho).tocsr()


def excitation_number_operator(basis: ProductBasis) -> sp.csr_matrix:
    return sp.diags(basis.excitation_numbers().astype(complex), 0, format="csr")


def sample_disorder(eta_m: float, eta_o: float, rng) -> tuple[float, float]:
    """One quenched draw ``eps_m ~ U[-eta_m, eta_m]``, ``eps_o ~ U[-eta_o, eta_o]``.

    ``rng`` is a :class:`numpy.random.Generator` or anything accepted by
    :func:`numpy.random.default_rng` (an int seed, a sequence of ints).
    """
    for name, eta in (("eta_m", eta_m), ("eta_o", eta_o)):
        if not 0 <= eta <= 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5], got {eta!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    u = rng.uniform(-1.0, 1.0, size=2)
    return float(eta_m * u[0]) + 0.0, float(eta_o * u[1]) + 0.0
