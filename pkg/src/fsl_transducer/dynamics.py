"""Time evolution and observable recording.

Pure states are propagated with the Schrodinger equation, density matrices with a
zero-temperature Lindblad master equation. Both use scipy's adaptive
Dormand-Prince 4(5) integrator (``RK45``) with the Hamiltonian evaluated at every
internal stage time.

A Hamiltonian may be given either as a callable ``t -> operator`` or as a list of
``(operator, coefficient)`` pairs meaning ``sum_k coefficient_k(t) * operator_k``;
the second form is cheaper because the operators are converted once.

Observables are callables receiving the raw state data at each grid point (a
vector for pure states, a Hermitian matrix for density matrices) and returning a
float or a 1-D array.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import RK45, solve_ivp

from .hilbert import (
    Atom,
    FockChain,
    ProductBasis,
    QuantumState,
    Slot,
    annihilation_operator,
    chain_to_product_embedding,
    embed,
)

__all__ = [
    "RTOL",
    "ATOL",
    "DecayRates",
    "Trajectory",
    "IntegratorError",
    "PositivityError",
    "time_grid",
    "evolve_schrodinger",
    "evolve_lindblad",
    "propagate_constant",
    "pump_final_states",
    "jump_operators",
    "expectation",
    "site_populations",
    "operator_observable",
]

log = logging.getLogger(__name__)

RTOL = 1e-9
ATOL = 1e-12
DEFAULT_GRID_POINTS = 501
# dense linear algebra beats sparse products below this dimension
DENSE_LIMIT = 160
POSITIVITY_WARN = -1e-6
POSITIVITY_ABORT = -1e-4


class IntegratorError(RuntimeError):
    """Raised when the ODE integrator fails; ``time`` is where it stopped."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (at t = {time:.6g} us)")
        self.time = time


class PositivityError(RuntimeError):
    pass


@dataclass(frozen=True)
class DecayRates:
    """Superatom decay ``gamma0`` and mode decays ``kappa_m``, ``kappa_o`` in rad/us."""

    gamma0: float = 0.0
    kappa_m: float = 0.0
    kappa_o: float = 0.0

    def __post_init__(self):
        for name in ("gamma0", "kappa_m", "kappa_o"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")

    @classmethod
    def from_khz(cls, gamma0_khz: float, kappa_m_khz: float, kappa_o_khz: float) -> "DecayRates":
        """Build from ``rate / 2pi`` values in kHz."""
        k = 2 * math.pi * 1e-3
        return cls(k * gamma0_khz, k * kappa_m_khz, k * kappa_o_khz)

    @property
    def is_zero(self) -> bool:
        return self.gamma0 == 0 and self.kappa_m == 0 and self.kappa_o == 0


@dataclass
class Trajectory:
    """Time grid plus recorded observables.

    ``records`` maps observable names to arrays whose first axis runs over
    ``times``. ``states`` holds the raw state data per grid point when requested.
    """

    times: np.ndarray
    records: dict[str, np.ndarray]
    states: list[np.ndarray] | None = None
    metadata: dict = field(default_factory=dict)
    final_state: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory time grid must be strictly increasing with >= 2 points")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.records[name]

    def final(self, name: str):
        return self.records[name][-1]

    def columns(self) -> tuple[list[str], np.ndarray]:
        """Flattened column names and a 2-D table (one row per grid point)."""
        names = ["t_us"]
        cols = [self.times[:, None]]
        for key in sorted(self.records):
            arr = np.asarray(self.records[key])
            if arr.ndim == 1:
                names.append(key)
                cols.append(arr[:, None])
            else:
                arr = arr.reshape(len(self.times), -1)
                names.extend(f"{key}_{k + 1}" for k in range(arr.shape[1]))
                cols.append(arr)
        table = np.hstack([np.real_if_close(c).astype(float) for c in cols])
        return names, table

    def to_csv(self, path) -> None:
        """One row per grid point; header row names the columns.

        Vector-valued records expand to ``name_1 .. name_k`` (1-based). Floats are
        written with ``repr`` so reruns are byte-identical.
        """
        names, table = self.columns()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for row in table:
                w.writerow([repr(float(x)) for x in row])

    def to_json(self, path, provenance: Mapping | None = None) -> None:
        names, table = self.columns()
        doc = {
            "provenance": dict(provenance or {}),
            "metadata": _jsonable(self.metadata),
            "columns": names,
            "data": table.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def time_grid(T: float, n_points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    if not T > 0:
        raise ValueError("duration must be positive")
    if n_points < 2:
        raise ValueError("need at least two grid points")
    return np.linspace(0.0, T, n_points)


def _dense_or_sparse(op, dense: bool):
    if sp.issparse(op):
        return op.toarray() if dense else op.tocsr()
    arr = np.asarray(op)
    return arr if dense else sp.csr_matrix(arr)


def _hamiltonian_fn(hamiltonian, dim: int) -> Callable[[float], object]:
    dense = dim <= DENSE_LIMIT
    if callable(hamiltonian):
        return lambda t: _dense_or_sparse(hamiltonian(t), dense)
    terms = [(_dense_or_sparse(op, dense).astype(complex), coeff) for op, coeff in hamiltonian]
    for op, _ in terms:
        if op.shape != (dim, dim):
            raise ValueError(f"Hamiltonian term shape {op.shape} != ({dim}, {dim})")

    def h(t):
        out = terms[0][1](t) * terms[0][0]
        for op, coeff in terms[1:]:
            out = out + coeff(t) * op
        return out

    return h


def _check_grid(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing with >= 2 points")
    return times


def _integrate(rhs, y0, times, rtol, atol, max_step, visit) -> int:
    """Step RK45 across ``times`` and call ``visit(k, y)`` at every grid point.

    Grid values between steps come from the step's dense output, as in
    ``solve_ivp`` with ``t_eval``, but nothing is stored here, so memory does
    not grow with the number of grid points. Returns the number of RHS calls.
    """
    visit(0, np.array(y0))
    solver = RK45(rhs, times[0], y0, times[-1], rtol=rtol, atol=atol, max_step=max_step)
    k = 1
    while k < len(times):
        msg = solver.step()
        if solver.status == "failed":
            raise IntegratorError(msg or "step failed", float(solver.t))
        if solver.t >= times[k] or solver.status == "finished":
            interp = solver.dense_output()
            while k < len(times) and (times[k] <= solver.t or solver.status == "finished"):
                visit(k, solver.y.copy() if times[k] == solver.t else interp(times[k]))
                k += 1
    return solver.nfev


def evolve_schrodinger(
    hamiltonian,
    psi0: QuantumState,
    times: Sequence[float],
    observables: Mapping[str, Callable] | None = None,
    *,
    keep_states: bool = False,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float = np.inf,
) -> Trajectory:
    """Propagate a pure state under a (possibly time-dependent) Hamiltonian."""
    if not psi0.is_pure:
        raise ValueError("evolve_schrodinger needs a pure initial state")
    times = _check_grid(times)
    dim = psi0.dim
    h = _hamiltonian_fn(hamiltonian, dim)

    def rhs(t, y):
        return -1j * (h(t) @ y)

    obs = dict(observables or {})
    recs = {name: [None] * len(times) for name in obs}
    norms = np.empty(len(times))
    kept = [None] * len(times) if keep_states else None
    last = {}

    def visit(k, y):
        norms[k] = np.linalg.norm(y)
        for name, fn in obs.items():
            recs[name][k] = fn(y)
        if kept is not None:
            kept[k] = y
        last["y"] = y

    nfev = _integrate(rhs, np.array(psi0.data, dtype=complex), times, rtol, atol, max_step, visit)
    traj = Trajectory(times, {n: np.asarray(v) for n, v in recs.items()}, kept)
    traj.final_state = last["y"]
    traj.metadata.update(
        integrator="RK45", rtol=rtol, atol=atol, nfev=int(nfev),
        max_norm_error=float(np.max(np.abs(norms - 1.0))),
    )
    return traj


def jump_operators(basis: ProductBasis, rates: DecayRates) -> list[sp.csr_matrix]:
    """``sqrt(gamma0) |G><R|``, ``sqrt(kappa_m) b``, ``sqrt(kappa_o) a`` (zero rates dropped)."""
    m, _, o = basis.full_shape
    lower = np.zeros((2, 2), dtype=complex)
    lower[int(Atom.G), int(Atom.R)] = 1.0
    ops = []
    for rate, op, slot in (
        (rates.gamma0, sp.csr_matrix(lower), Slot.ATOM),
        (rates.kappa_m, annihilation_operator(m), Slot.MW),
        (rates.kappa_o, annihilation_operator(o), Slot.OPT),
    ):
        if rate > 0:
            ops.append((math.sqrt(rate) * embed(op, slot, basis)).tocsr())
    return ops


def evolve_lindblad(
    hamiltonian,
    rho0: QuantumState,
    rates: DecayRates,
    times: Sequence[float],
    observables: Mapping[str, Callable] | None = None,
    *,
    jumps: Sequence | None = None,
    keep_states: bool = False,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_step: float = np.inf,
    positivity_stride: int = 10,
) -> Trajectory:
    """Propagate ``d rho/dt = -i[H, rho] + sum_k D[L_k] rho``.

    The jump operators default to :func:`jump_operators` on ``rho0.basis``.
    The state is Hermitized before every right-hand-side evaluation. The minimum
    eigenvalue is monitored every ``positivity_stride`` grid points (and at the
    final point); below ``-1e-4`` the run aborts with :class:`PositivityError`.
    """
    rho0 = rho0.to_density()
    times = _check_grid(times)
    dim = rho0.dim
    if jumps is None:
        if not isinstance(rho0.basis, ProductBasis):
            raise ValueError("default jump operators need a ProductBasis state")
        jumps = jump_operators(rho0.basis, rates)
    dense = dim <= DENSE_LIMIT
    Ls = [_dense_or_sparse(L, dense).astype(complex) for L in jumps]
    if Ls:
        LdL = sum(L.conj().T @ L for L in Ls)
    else:
        LdL = np.zeros((dim, dim), dtype=complex) if dense else sp.csr_matrix((dim, dim), dtype=complex)
    h = _hamiltonian_fn(hamiltonian, dim)

    def rhs(t, y):
        rho = y.reshape(dim, dim)
        rho = 0.5 * (rho + rho.conj().T)
        X = (-1j * h(t) - 0.5 * LdL) @ rho
        out = X + X.conj().T
        for L in Ls:
            # rho is Hermitian, so L (L rho)^dag = L rho L^dag
            out += L @ (L @ rho).conj().T
        return np.asarray(out).reshape(-1)

    obs = dict(observables or {})
    recs = {name: [None] * len(times) for name in obs}
    traces = np.empty(len(times))
    kept = [None] * len(times) if keep_states else None
    stride = max(1, positivity_stride)
    state = {"min_eig": np.inf}

    def visit(k, y):
        r = y.reshape(dim, dim)
        r = 0.5 * (r + r.conj().T)
        traces[k] = np.trace(r).real
        if k % stride == 0 or k == len(times) - 1:
            lam = np.linalg.eigvalsh(r)[0]
            state["min_eig"] = min(state["min_eig"], lam)
            if lam < POSITIVITY_ABORT:
                raise PositivityError(f"density matrix eigenvalue {lam:.3e} at t = {times[k]:.6g} us")
        for name, fn in obs.items():
            recs[name][k] = fn(r)
        if kept is not None:
            kept[k] = r
        state["final"] = r

    nfev = _integrate(rhs, rho0.density_matrix().reshape(-1).astype(complex), times, rtol, atol, max_step, visit)
    min_eig = state["min_eig"]
    if min_eig < POSITIVITY_WARN:
        warnings.warn(f"density matrix eigenvalue {min_eig:.3e} below {POSITIVITY_WARN}", RuntimeWarning)

    traj = Trajectory(times, {n: np.asarray(v) for n, v in recs.items()}, kept)
    traj.final_state = state["final"]
    traj.metadata.update(
        integrator="RK45", rtol=rtol, atol=atol, nfev=int(nfev),
        max_trace_error=float(np.max(np.abs(traces - 1.0))),
        min_eigenvalue=float(min_eig),
        rates={"gamma0": rates.gamma0, "kappa_m": rates.kappa_m, "kappa_o": rates.kappa_o},
    )
    return traj


def propagate_constant(H, psi0, times) -> np.ndarray:
    """Exact propagation under a time-independent Hermitian ``H``.

    Returns an array of shape ``(len(times), dim)`` with ``psi(t_k)`` in row ``k``.
    """
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    E, V = np.linalg.eigh(Hd)
    data = psi0.data if isinstance(psi0, QuantumState) else np.asarray(psi0, dtype=complex)
    c = V.conj().T @ data
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), E))
    return (phases * c) @ V.T


def pump_final_states(A, B, psi0, g: float, durations, *, rtol: float = RTOL, atol: float = ATOL) -> np.ndarray:
    """Final states of ``H(t) = g sin(pi t/2T) A + g cos(pi t/2T) B`` for many ``T`` at once.

    Time is rescaled to ``s = t/T`` so every duration shares one integration over
    ``s in [0, 1]``; the adaptive step is controlled on the whole batch. Returns an
    array of shape ``(len(durations), dim)``.
    """
    A = np.asarray(A.toarray() if sp.issparse(A) else A, dtype=complex)
    B = np.asarray(B.toarray() if sp.issparse(B) else B, dtype=complex)
    Ts = np.asarray(durations, dtype=float).reshape(-1)
    if np.any(Ts <= 0):
        raise ValueError("durations must be positive")
    data = psi0.data if isinstance(psi0, QuantumState) else np.asarray(psi0, dtype=complex)
    dim = len(data)
    n = len(Ts)
    Y0 = np.tile(np.asarray(data, dtype=complex)[:, None], (1, n))
    scale = -1j * g * Ts[None, :]

    def rhs(s, y):
        Y = y.reshape(dim, n)
        ph = 0.5 * np.pi * s
        return (scale * ((math.sin(ph) * A + math.cos(ph) * B) @ Y)).reshape(-1)

    sol = solve_ivp(rhs, (0.0, 1.0), Y0.reshape(-1), method="RK45", t_eval=[1.0], rtol=rtol, atol=atol)
    if sol.status != 0:
        raise IntegratorError(sol.message, float(sol.t[-1]) if len(sol.t) else 0.0)
    return sol.y[:, -1].reshape(dim, n).T


def _is_hermitian(op, tol=1e-12) -> bool:
    if sp.issparse(op):
        diff = op - op.conj().T
        return diff.nnz == 0 or np.max(np.abs(diff.data)) <= tol * max(1.0, np.max(np.abs(op.data), initial=0.0))
    op = np.asarray(op)
    return np.max(np.abs(op - op.conj().T), initial=0.0) <= tol * max(1.0, np.max(np.abs(op), initial=0.0))


def _expect_raw(op, data) -> complex:
    if data.ndim == 1:
        return np.vdot(data, op @ data)
    if sp.issparse(op):
        return (op.multiply(data.T)).sum()
    return np.einsum("ij,ji->", op, data)


def expectation(op, state) -> float:
    """``<op>`` for a Hermitian ``op``; imaginary residue above 1e-10 is an error."""
    if not _is_hermitian(op):
        raise ValueError("expectation needs a Hermitian operator")
    data = state.data if isinstance(state, QuantumState) else np.asarray(state)
    val = _expect_raw(op, data)
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError(f"expectation has imaginary part {val.imag!r}")
    return float(val.real)


def operator_observable(op) -> Callable[[np.ndarray], float]:
    """Observable callable for a fixed Hermitian operator (no per-call check)."""
    if not _is_hermitian(op):
        raise ValueError("observable operator must be Hermitian")
    op_c = op.tocsr() if sp.issparse(op) else np.asarray(op)
    return lambda data: float(_expect_raw(op_c, data).real)


def site_populations(state, chain: FockChain, basis: ProductBasis | None = None) -> np.ndarray:
    """Populations of the ``2N+1`` chain sites.

    ``state`` is a :class:`QuantumState` on ``chain`` or on a product basis, or raw
    data together with ``basis`` (``None`` meaning the chain itself).
    """
    if isinstance(state, QuantumState):
        basis = state.basis
        data = state.data
    else:
        data = np.asarray(state)
    if basis is None or isinstance(basis, FockChain):
        if len(data) != chain.dim:
            raise ValueError("state dimension does not match chain")
        idx = slice(None)
    else:
        idx = chain_to_product_embedding(chain, basis)
    if data.ndim == 1:
        return np.abs(data[idx]) ** 2
    return np.real(np.diagonal(data)[idx]).copy()
