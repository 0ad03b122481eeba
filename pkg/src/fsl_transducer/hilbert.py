"""Bases, elementary operators, tensor embedding and partial traces.

Two kinds of basis are used throughout the package:

* :class:`FockChain` -- the ``2N+1`` joint states of one excitation-number block,
  ordered as a one-dimensional lattice (site 1 holds all photons in the MW mode,
  site ``2N+1`` holds all photons in the optical mode).
* :class:`ProductBasis` -- truncated ``MW (x) atom (x) optical`` product space.
  Enumeration order is MW slowest, atom middle, optical fastest. An optional
  ``max_excitation`` keeps only states with ``n_m + atom + n_o <= max_excitation``;
  that subspace is invariant under the Jaynes-Cummings Hamiltonian and under all
  lowering jump operators, so it reproduces the full truncated product exactly.

Operators are plain :mod:`scipy.sparse` CSR matrices; density matrices are dense
:class:`numpy.ndarray`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Atom",
    "Slot",
    "SiteLabel",
    "FockChain",
    "ProductBasis",
    "ModeBasis",
    "ReducedBasis",
    "QuantumState",
    "build_chain_basis",
    "annihilation_operator",
    "number_operator",
    "embed",
    "partial_trace",
    "chain_to_product_embedding",
    "coherent_truncation",
    "squeezed_truncation",
    "basis_descriptor",
]

PURE_NORM_TOL = 1e-10
DENSITY_TRACE_TOL = 1e-10
DENSITY_HERMITIAN_TOL = 1e-10
DENSITY_MIN_EIG = -1e-8


class Atom(enum.IntEnum):
    G = 0
    R = 1


class Slot(str, enum.Enum):
    MW = "mw"
    ATOM = "atom"
    OPT = "opt"


_SLOT_ORDER = (Slot.MW, Slot.ATOM, Slot.OPT)


@dataclass(frozen=True, order=True)
class SiteLabel:
    """Joint state ``|n_m, atom, n_o>``."""

    n_m: int
    atom: Atom
    n_o: int

    def __post_init__(self):
        if self.n_m < 0 or self.n_o < 0:
            raise ValueError(f"photon numbers must be nonnegative, got {self}")
        object.__setattr__(self, "atom", Atom(self.atom))

    @property
    def excitation(self) -> int:
        return self.n_m + int(self.atom) + self.n_o

    def __str__(self):
        return f"|{self.n_m}_m,{self.atom.name},{self.n_o}_o>"


@dataclass(frozen=True)
class FockChain:
    """Sites of the excitation-``N`` block, 1-based site ``s`` at ``sites[s - 1]``."""

    excitation_number: int
    sites: tuple[SiteLabel, ...]

    def __post_init__(self):
        if len(self.sites) != 2 * self.excitation_number + 1:
            raise ValueError("a FockChain of excitation N holds exactly 2N+1 sites")
        if any(s.excitation != self.excitation_number for s in self.sites):
            raise ValueError("all chain sites must share the excitation number")

    @property
    def dim(self) -> int:
        return len(self.sites)

    def __len__(self):
        return len(self.sites)

    def site(self, index: int) -> SiteLabel:
        """Return the label of 1-based site ``index``."""
        if not 1 <= index <= self.dim:
            raise IndexError(f"site index {index} outside 1..{self.dim}")
        return self.sites[index - 1]

    def index_of(self, label: SiteLabel) -> int:
        """1-based site index of ``label``."""
        return self.sites.index(label) + 1


def build_chain_basis(N: int) -> FockChain:
    """Sites of the ``2N+1``-site Fock-state lattice of excitation number ``N``.

    For ``j = 1..N``: site ``2j-1`` is ``|(N-j+1)_m, G, (j-1)_o>``, site ``2j`` is
    ``|(N-j)_m, R, (j-1)_o>`` and site ``2j+1`` is ``|(N-j)_m, G, j_o>``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"excitation number must be a positive integer, got {N!r}")
    N = int(N)
    sites = [SiteLabel(N, Atom.G, 0)]
    for j in range(1, N + 1):
        sites.append(SiteLabel(N - j, Atom.R, j - 1))
        sites.append(SiteLabel(N - j, Atom.G, j))
    return FockChain(N, tuple(sites))


@dataclass(frozen=True)
class ProductBasis:
    """Truncated ``MW (x) atom (x) optical`` space.

    Args:
        n_max_mw: highest retained MW photon number.
        n_max_opt: highest retained optical photon number.
        max_excitation: if given, keep only states whose total excitation number
            does not exceed it (an exactly invariant subspace of the dynamics).
    """

    n_max_mw: int
    n_max_opt: int
    max_excitation: int | None = None
    atom_dim: int = field(default=2, init=False)

    def __post_init__(self):
        if self.n_max_mw < 0 or self.n_max_opt < 0:
            raise ValueError("truncations must be nonnegative")
        if self.max_excitation is not None and self.max_excitation < 0:
            raise ValueError("max_excitation must be nonnegative")

    @property
    def full_shape(self) -> tuple[int, int, int]:
        return (self.n_max_mw + 1, self.atom_dim, self.n_max_opt + 1)

    @property
    def full_dim(self) -> int:
        return math.prod(self.full_shape)

    @property
    def is_capped(self) -> bool:
        return self.max_excitation is not None and self.max_excitation < (
            self.n_max_mw + 1 + self.n_max_opt
        )

    @property
    def labels(self) -> tuple[SiteLabel, ...]:
        return _product_labels(self)

    @property
    def full_indices(self) -> np.ndarray:
        """Positions of the retained states inside the uncapped product ordering."""
        return _product_full_indices(self)

    @property
    def dim(self) -> int:
        return len(self.full_indices)

    def index(self, label: SiteLabel) -> int:
        """0-based index of ``label`` in this basis."""
        m, a, o = self.full_shape
        if label.n_m >= m or label.n_o >= o:
            raise KeyError(f"{label} exceeds truncation ({self.n_max_mw}, {self.n_max_opt})")
        flat = (label.n_m * a + int(label.atom)) * o + label.n_o
        pos = np.searchsorted(self.full_indices, flat)
        if pos >= self.dim or self.full_indices[pos] != flat:
            raise KeyError(f"{label} excluded by max_excitation={self.max_excitation}")
        return int(pos)

    def excitation_numbers(self) -> np.ndarray:
        return np.array([lab.excitation for lab in self.labels])

    def slot_dim(self, slot: Slot) -> int:
        return dict(zip(_SLOT_ORDER, self.full_shape))[Slot(slot)]


_LABEL_CACHE: dict[ProductBasis, tuple] = {}


def _product_tables(basis: ProductBasis):
    cached = _LABEL_CACHE.get(basis)
    if cached is None:
        m, a, o = basis.full_shape
        nm, at, no = np.meshgrid(np.arange(m), np.arange(a), np.arange(o), indexing="ij")
        exc = (nm + at + no).ravel()
        keep = np.arange(m * a * o)
        if basis.max_excitation is not None:
            keep = keep[exc <= basis.max_excitation]
        labels = tuple(
            SiteLabel(int(nm.ravel()[k]), Atom(int(at.ravel()[k])), int(no.ravel()[k]))
            for k in keep
        )
        keep.setflags(write=False)
        cached = (labels, keep)
        _LABEL_CACHE[basis] = cached
    return cached


def _product_labels(basis):
    return _product_tables(basis)[0]


def _product_full_indices(basis):
    return _product_tables(basis)[1]


@dataclass(frozen=True)
class ModeBasis:
    """Single-slot basis (one bosonic mode or the two-level superatom)."""

    slot: Slot
    dim: int


@dataclass(frozen=True)
class ReducedBasis:
    """Sub-product of a :class:`ProductBasis` kept after a partial trace."""

    slots: tuple[Slot, ...]
    shape: tuple[int, ...]

    @property
    def dim(self) -> int:
        return math.prod(self.shape)


Basis = Union[FockChain, ProductBasis, ModeBasis, ReducedBasis]


def _basis_dim(basis) -> int:
    return basis.dim


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Pure state vector or density matrix tagged with its basis.

    Validation happens at construction; use :meth:`pure` / :meth:`density` or the
    constructor directly. ``validate=False`` skips the physical checks (used for
    states reconstructed from integrator output).
    """

    basis: Basis
    data: np.ndarray
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        dim = _basis_dim(self.basis)
        if data.ndim == 1:
            if data.shape != (dim,):
                raise ValueError(f"state vector length {data.shape[0]} != basis dim {dim}")
            if self.validate and abs(np.linalg.norm(data) - 1.0) > PURE_NORM_TOL:
                raise ValueError(f"pure state not normalized: |psi| = {np.linalg.norm(data)!r}")
        elif data.ndim == 2:
            if data.shape != (dim, dim):
                raise ValueError(f"density matrix shape {data.shape} != ({dim}, {dim})")
            if self.validate:
                _check_density(data)
        else:
            raise ValueError("state data must be a vector or a square matrix")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def pure(cls, basis, vector, validate=True) -> "QuantumState":
        return cls(basis, np.asarray(vector, dtype=complex).reshape(-1), validate)

    @classmethod
    def density(cls, basis, matrix, validate=True) -> "QuantumState":
        return cls(basis, np.asarray(matrix, dtype=complex), validate)

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def to_density(self) -> "QuantumState":
        if not self.is_pure:
            return self
        return QuantumState(self.basis, np.outer(self.data, self.data.conj()), self.validate)

    def density_matrix(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)


def _check_density(rho: np.ndarray):
    if np.max(np.abs(rho - rho.conj().T), initial=0.0) > DENSITY_HERMITIAN_TOL:
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > DENSITY_TRACE_TOL:
        raise ValueError(f"density matrix trace {tr!r} != 1")
    lam = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if lam[0] < DENSITY_MIN_EIG:
        raise ValueError(f"density matrix has negative eigenvalue {lam[0]!r}")


def annihilation_operator(dim: int) -> sp.csr_matrix:
    """Truncated bosonic lowering operator, ``<n-1|a|n> = sqrt(n)``."""
    if int(dim) != dim or dim < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {dim!r}")
    n = np.arange(1, int(dim))
    return sp.diags(np.sqrt(n).astype(complex), 1, shape=(dim, dim), format="csr")


def number_operator(dim: int) -> sp.csr_matrix:
    return sp.diags(np.arange(dim).astype(complex), 0, format="csr")


def embed(op, slot: Slot | str, basis: ProductBasis) -> sp.csr_matrix:
    """Lift a single-slot operator to ``basis``, acting as identity elsewhere."""
    slot = Slot(slot)
    op = sp.csr_matrix(op, dtype=complex)
    shape = basis.full_shape
    target = basis.slot_dim(slot)
    if op.shape != (target, target):
        raise ValueError(f"operator shape {op.shape} does not match {slot.value} slot dim {target}")
    factors = [sp.identity(d, dtype=complex, format="csr") for d in shape]
    factors[_SLOT_ORDER.index(slot)] = op
    full = sp.kron(sp.kron(factors[0], factors[1], format="csr"), factors[2], format="csr")
    if basis.dim == basis.full_dim:
        return full
    keep = basis.full_indices
    return full[keep][:, keep].tocsr()


def _as_full_tensor(state: QuantumState) -> tuple[np.ndarray, tuple[int, ...]]:
    basis = state.basis
    rho = state.density_matrix()
    if isinstance(basis, ProductBasis):
        shape = basis.full_shape
        if basis.dim != basis.full_dim:
            full = np.zeros((basis.full_dim, basis.full_dim), dtype=complex)
            keep = basis.full_indices
            full[np.ix_(keep, keep)] = rho
            rho = full
        return rho.reshape(shape + shape), tuple(_SLOT_ORDER)
    if isinstance(basis, ReducedBasis):
        return rho.reshape(basis.shape + basis.shape), basis.slots
    raise TypeError(f"partial trace needs a product-type basis, got {type(basis).__name__}")


def partial_trace(state: QuantumState, keep: Slot | str | Sequence[Slot | str]) -> QuantumState:
    """Reduced density matrix on the ``keep`` slot(s).

    A single slot returns a state on :class:`ModeBasis`; several slots return a
    state on :class:`ReducedBasis` (slots kept in basis order).
    """
    single = isinstance(keep, (str, Slot))
    keep_slots = [Slot(keep)] if single else [Slot(k) for k in keep]
    tensor, slots = _as_full_tensor(state)
    missing = [k for k in keep_slots if k not in slots]
    if missing:
        raise ValueError(f"slots {[m.value for m in missing]} not present in state basis")
    n = len(slots)
    kept = [i for i, s in enumerate(slots) if s in keep_slots]
    letters = "abcdefghij"
    row = list(letters[:n])
    col = list(letters[n : 2 * n])
    for i in range(n):
        if i not in kept:
            col[i] = row[i]
    out = "".join(row[i] for i in kept) + "".join(col[i] for i in kept)
    reduced = np.einsum("".join(row) + "".join(col) + "->" + out, tensor)
    shape = tuple(tensor.shape[i] for i in kept)
    d = math.prod(shape)
    reduced = reduced.reshape(d, d)
    reduced = 0.5 * (reduced + reduced.conj().T)
    if single:
        basis = ModeBasis(slots[kept[0]], d)
    else:
        basis = ReducedBasis(tuple(slots[i] for i in kept), shape)
    return QuantumState(basis, reduced, validate=state.validate)


def chain_to_product_embedding(chain: FockChain, basis: ProductBasis) -> np.ndarray:
    """Indices in ``basis`` of the chain sites, in site order."""
    out = []
    for s in chain.sites:
        try:
            out.append(basis.index(s))
        except KeyError as exc:
            raise ValueError(f"chain site {s} not representable in {basis}") from exc
    return np.array(out, dtype=int)


def _coherent_probs(alpha: complex, n_max: int) -> np.ndarray:
    n = np.arange(n_max + 1)
    x = abs(alpha) ** 2
    logp = -x + n * np.log(x) - np.array([math.lgamma(k + 1) for k in n]) if x > 0 else None
    if logp is None:
        p = np.zeros(n_max + 1)
        p[0] = 1.0
        return p
    return np.exp(logp)


def _squeezed_probs(r: float, n_max: int) -> np.ndarray:
    p = np.zeros(n_max + 1)
    t = math.tanh(r)
    for k in range(n_max // 2 + 1):
        logc = math.lgamma(2 * k + 1) - 2 * math.lgamma(k + 1) - 2 * k * math.log(2)
        p[2 * k] = math.exp(logc + (2 * k * math.log(t) if t > 0 else (0 if k == 0 else -np.inf)))
    return p / math.cosh(r)


def coherent_truncation(alpha: complex, tail: float = 1e-6) -> int:
    """Fock cutoff for a coherent state: ``ceil(|a|^2 + 6|a| + 6)``, grown until the
    discarded probability is below ``tail``."""
    a = abs(alpha)
    n_max = math.ceil(a * a + 6 * a + 6)
    while 1.0 - _coherent_probs(alpha, n_max).sum() >= tail:
        n_max += 1
    return n_max


def squeezed_truncation(r: float, tail: float = 1e-6) -> int:
    """Even Fock cutoff for squeezed vacuum: ``ceil(6 sinh^2 r + 10)`` rounded up to
    even, grown in steps of two until the discarded probability is below ``tail``."""
    n_max = math.ceil(6 * math.sinh(r) ** 2 + 10)
    n_max += n_max % 2
    while 1.0 - _squeezed_probs(r, n_max).sum() >= tail:
        n_max += 2
    return n_max


def basis_descriptor(basis) -> dict:
    """JSON-serializable description of a basis.

    Schema::

        {"type": "fock_chain", "excitation_number": N,
         "sites": [[n_m, "G"|"R", n_o], ...]}
        {"type": "product", "n_max_mw": int, "n_max_opt": int,
         "max_excitation": int | null, "dim": int,
         "order": ["mw", "atom", "opt"]}          # first entry varies slowest
        {"type": "mode", "slot": "mw"|"atom"|"opt", "dim": int}
    """
    if isinstance(basis, FockChain):
        return {
            "type": "fock_chain",
            "excitation_number": basis.excitation_number,
            "sites": [[s.n_m, s.atom.name, s.n_o] for s in basis.sites],
        }
    if isinstance(basis, ProductBasis):
        return {
            "type": "product",
            "n_max_mw": basis.n_max_mw,
            "n_max_opt": basis.n_max_opt,
            "max_excitation": basis.max_excitation,
            "dim": basis.dim,
            "order": [s.value for s in _SLOT_ORDER],
        }
    if isinstance(basis, ModeBasis):
        return {"type": "mode", "slot": basis.slot.value, "dim": basis.dim}
    if isinstance(basis, ReducedBasis):
        return {"type": "reduced", "slots": [s.value for s in basis.slots], "shape": list(basis.shape)}
    raise TypeError(f"unknown basis type {type(basis).__name__}")


def labels_to_indices(basis: ProductBasis, labels: Iterable[SiteLabel]) -> np.ndarray:
    return np.array([basis.index(lab) for lab in labels], dtype=int)
