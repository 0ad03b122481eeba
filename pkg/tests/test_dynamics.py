import csv
import json
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.linalg import expm

from fsl_transducer import dynamics
from fsl_transducer.dynamics import (
    DecayRates,
    IntegratorError,
    PositivityError,
    Trajectory,
    evolve_lindblad,
    evolve_schrodinger,
    expectation,
    jump_operators,
    operator_observable,
    propagate_constant,
    pump_final_states,
    site_populations,
    time_grid,
)
from fsl_transducer.hamiltonians import (
    DEFAULT_G,
    ChainModel,
    CouplingSchedule,
    Couplings,
    chain_hamiltonian,
    chain_hamiltonian_parts,
    jc_hamiltonian_parts,
)
from fsl_transducer.hilbert import (
    Atom,
    ProductBasis,
    QuantumState,
    SiteLabel,
    Slot,
    build_chain_basis,
    embed,
    number_operator,
)
from fsl_transducer.states import Coherent, Fock, fock_amplitudes, prepare_initial

QUOTED = DecayRates.from_khz(3.6, 2.0, 3.4)


def _schedule_terms(basis_or_parts, g, T, eps=(0.0, 0.0)):
    s = CouplingSchedule(g, T, *eps)
    A, B = basis_or_parts
    return [(A, lambda t: s.amplitudes(t)[0]), (B, lambda t: s.amplitudes(t)[1])]


def _chain_start(N, site=1):
    v = np.zeros(2 * N + 1, dtype=complex)
    v[site - 1] = 1
    return QuantumState.pure(build_chain_basis(N), v)


def test_decay_rates_units():
    r = DecayRates.from_khz(3.6, 2.0, 3.4)
    assert r.kappa_o == pytest.approx(2 * math.pi * 0.0034)
    assert r.gamma0 == pytest.approx(2 * math.pi * 0.0036)
    with pytest.raises(ValueError):
        DecayRates(-1.0, 0.0, 0.0)


def test_time_grid():
    t = time_grid(8.2)
    assert len(t) == 501 and t[0] == 0 and t[-1] == 8.2


def test_zero_hamiltonian_is_identity():
    psi = _chain_start(2, 3)
    tr = evolve_schrodinger(lambda t: sp.csr_matrix((5, 5)), psi, np.linspace(0, 2, 11),
                            {"pop": lambda d: np.abs(d) ** 2})
    assert np.allclose(tr["pop"], np.tile(np.abs(psi.data) ** 2, (11, 1)))


def test_two_level_rabi():
    g = 1.3
    H = chain_hamiltonian(ChainModel("fsl", 1), Couplings(0.0, g))
    t = np.linspace(0, 5, 201)
    tr = evolve_schrodinger([(H, lambda s: 1.0)], _chain_start(1, 3), t,
                            {"pop": lambda d: np.abs(d) ** 2})
    assert np.max(np.abs(tr["pop"][:, 2] - np.cos(g * t) ** 2)) < 1e-8
    assert np.max(np.abs(tr["pop"][:, 1] - np.sin(g * t) ** 2)) < 1e-8


def test_schrodinger_matches_exact_propagation():
    H = chain_hamiltonian(ChainModel("fsl", 4), Couplings(0.6, 1.1))
    t = np.linspace(0, 6, 31)
    tr = evolve_schrodinger([(H, lambda s: 1.0)], _chain_start(4, 2), t, keep_states=True)
    exact = propagate_constant(H, _chain_start(4, 2), t)
    assert np.max(np.abs(np.array(tr.states) - exact)) < 1e-8
    assert tr.metadata["max_norm_error"] < 1e-8


def test_energy_conserved_for_piecewise_constant_h():
    H1 = chain_hamiltonian(ChainModel("fsl", 3), Couplings(0.5, 1.0)).toarray()
    H2 = chain_hamiltonian(ChainModel("fsl", 3), Couplings(1.0, 0.3)).toarray()
    psi = _chain_start(3, 1)
    t1 = np.linspace(0, 2, 21)
    a = evolve_schrodinger([(H1, lambda s: 1.0)], psi, t1, {"E": operator_observable(H1)})
    assert np.ptp(a["E"]) < 1e-8
    psi_mid = QuantumState.pure(psi.basis, a.final_state / np.linalg.norm(a.final_state))
    b = evolve_schrodinger([(H2, lambda s: 1.0)], psi_mid, t1, {"E": operator_observable(H2)})
    assert np.ptp(b["E"]) < 1e-8


def test_pumping_site_populations_normalized():
    N = 5
    A, B = chain_hamiltonian_parts(ChainModel("fsl", N))
    chain = build_chain_basis(N)
    tr = evolve_schrodinger(_schedule_terms((A, B), DEFAULT_G, 8.2), _chain_start(N), time_grid(8.2),
                            {"pop": lambda d: site_populations(d, chain)})
    assert np.array_equal(tr["pop"][0], np.eye(11)[0])
    assert np.max(np.abs(tr["pop"].sum(axis=1) - 1)) < 1e-8
    assert tr["pop"][-1, -1] >= 0.99


@pytest.mark.xfail(strict=True, reason="measured final site-11 population at gT = 14.78 is 0.986; the N=5 peak sits at gT = 14.37")
def test_pumping_at_quoted_critical_product():
    N = 5
    g, T = DEFAULT_G, 14.78 / DEFAULT_G
    A, B = chain_hamiltonian_parts(ChainModel("fsl", N))
    tr = evolve_schrodinger(_schedule_terms((A, B), g, T), _chain_start(N), time_grid(T))
    assert abs(tr.final_state[-1]) ** 2 >= 0.99


def test_pump_final_states_matches_single_runs():
    N = 3
    A, B = chain_hamiltonian_parts(ChainModel("fsl", N))
    gTs = np.array([5.0, 9.0, 13.0])
    batch = pump_final_states(A, B, _chain_start(N).data, 1.0, gTs)
    for gT, row in zip(gTs, batch):
        tr = evolve_schrodinger(_schedule_terms((A, B), 1.0, gT), _chain_start(N), [0.0, gT])
        assert np.max(np.abs(tr.final_state - row)) < 1e-7


def test_lindblad_zero_rates_match_schrodinger():
    N = 3
    basis = ProductBasis(N, N)
    hm, ho = jc_hamiltonian_parts(basis)
    T = 6.0
    psi0 = prepare_initial(Fock(N), basis)
    n_o = operator_observable(embed(number_operator(N + 1), Slot.OPT, basis))
    t = time_grid(T, 61)
    pure = evolve_schrodinger(_schedule_terms((hm, ho), DEFAULT_G, T), psi0, t, {"N_o": n_o})
    mixed = evolve_lindblad(_schedule_terms((hm, ho), DEFAULT_G, T), psi0, DecayRates(), t, {"N_o": n_o})
    assert np.max(np.abs(pure["N_o"] - mixed["N_o"])) < 1e-6


def test_lindblad_photon_decay():
    basis = ProductBasis(1, 1)
    rho0 = QuantumState.pure(basis, np.eye(basis.dim)[basis.index(SiteLabel(0, Atom.G, 1))])
    kappa = 0.7
    t = np.linspace(0, 3, 31)
    n_o = operator_observable(embed(number_operator(2), Slot.OPT, basis))
    tr = evolve_lindblad(lambda s: sp.csr_matrix((basis.dim, basis.dim)), rho0, DecayRates(0, 0, kappa), t,
                         {"N_o": n_o})
    assert np.max(np.abs(tr["N_o"] - np.exp(-kappa * t))) < 1e-8


def test_lindblad_trace_and_hermiticity():
    basis = ProductBasis(3, 3)
    hm, ho = jc_hamiltonian_parts(basis)
    tr = evolve_lindblad(_schedule_terms((hm, ho), DEFAULT_G, 8.2), prepare_initial(Fock(3), basis), QUOTED,
                         time_grid(8.2, 41), keep_states=True)
    assert tr.metadata["max_trace_error"] < 1e-6
    assert tr.metadata["min_eigenvalue"] > -1e-6
    for r in tr.states:
        assert np.array_equal(r, r.conj().T)


def test_lindblad_linearity():
    basis = ProductBasis(2, 2)
    hm, ho = jc_hamiltonian_parts(basis)
    H = _schedule_terms((hm, ho), DEFAULT_G, 5.0)
    rates = DecayRates(0.3, 0.2, 0.1)
    t = [0.0, 2.5, 5.0]
    r1 = prepare_initial(Fock(2), basis).to_density()
    r2 = QuantumState.pure(basis, np.eye(basis.dim)[basis.index(SiteLabel(1, Atom.R, 0))]).to_density()
    avg = QuantumState.density(basis, 0.5 * (r1.data + r2.data))
    f1 = evolve_lindblad(H, r1, rates, t).final_state
    f2 = evolve_lindblad(H, r2, rates, t).final_state
    fa = evolve_lindblad(H, avg, rates, t).final_state
    assert np.max(np.abs(fa - 0.5 * (f1 + f2))) < 1e-8


def test_block_leakage_without_decay():
    N = 3
    basis = ProductBasis(4, 4)
    hm, ho = jc_hamiltonian_parts(basis)
    outside = basis.excitation_numbers() != N
    tr = evolve_lindblad(_schedule_terms((hm, ho), DEFAULT_G, 8.2), prepare_initial(Fock(N), basis), DecayRates(),
                         time_grid(8.2, 21), {"leak": lambda r: float(np.real(np.diagonal(r)[outside]).sum())})
    assert np.max(np.abs(tr["leak"])) < 1e-10


@pytest.mark.parametrize("N", [2, 3])
def test_capped_basis_reproduces_full_basis(N):
    T = 8.2
    out = {}
    for basis in (ProductBasis(N, N), ProductBasis(N, N, max_excitation=N)):
        hm, ho = jc_hamiltonian_parts(basis)
        n_o = operator_observable(embed(number_operator(N + 1), Slot.OPT, basis))
        n_m = operator_observable(embed(number_operator(N + 1), Slot.MW, basis))
        tr = evolve_lindblad(_schedule_terms((hm, ho), DEFAULT_G, T), prepare_initial(Fock(N), basis), QUOTED,
                             time_grid(T, 51), {"N_o": n_o, "N_m": n_m})
        out[basis.is_capped] = tr
    for key in ("N_o", "N_m"):
        assert np.max(np.abs(out[True][key] - out[False][key])) < 1e-8


def test_step_halving_convergence():
    N = 3
    basis = ProductBasis(N, N, max_excitation=N)
    hm, ho = jc_hamiltonian_parts(basis)
    H = _schedule_terms((hm, ho), DEFAULT_G, 8.2)
    obs = {"N_o": operator_observable(embed(number_operator(N + 1), Slot.OPT, basis))}
    t = time_grid(8.2, 41)
    a = evolve_lindblad(H, prepare_initial(Fock(N), basis), QUOTED, t, obs, max_step=8.2 / 400)
    b = evolve_lindblad(H, prepare_initial(Fock(N), basis), QUOTED, t, obs, max_step=8.2 / 800)
    assert np.max(np.abs(a["N_o"] - b["N_o"])) < 1e-6


@pytest.mark.xfail(strict=True, reason="measured final N_o = 4.33 with the quoted rates; the loss exp(-(k_m+k_o)T/2) alone gives 4.35")
def test_open_system_n5_small_loss():
    N = 5
    basis = ProductBasis(N, N, max_excitation=N)
    hm, ho = jc_hamiltonian_parts(basis)
    n_o = operator_observable(embed(number_operator(N + 1), Slot.OPT, basis))
    tr = evolve_lindblad(_schedule_terms((hm, ho), DEFAULT_G, 8.2), prepare_initial(Fock(N), basis), QUOTED,
                         [0.0, 8.2], {"N_o": n_o})
    assert tr.final("N_o") >= 0.95 * N


def test_positivity_abort(monkeypatch):
    basis = ProductBasis(1, 1)
    rho0 = prepare_initial(Fock(1), basis)
    monkeypatch.setattr(dynamics, "POSITIVITY_ABORT", 0.01)
    with pytest.raises(PositivityError):
        evolve_lindblad(lambda t: sp.csr_matrix((basis.dim, basis.dim)), rho0, DecayRates(), [0.0, 1.0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_integrator_failure_reports_time():
    def bad(t):
        return sp.csr_matrix(np.full((3, 3), np.nan if t > 0.5 else 0.0))

    with pytest.raises(IntegratorError) as info:
        evolve_schrodinger(bad, _chain_start(1), [0.0, 1.0])
    assert 0.0 <= info.value.time <= 1.0


def test_expectation_examples():
    n = number_operator(5)
    assert expectation(n, np.eye(5)[3]) == pytest.approx(3)
    rng = np.random.default_rng(0)
    v = rng.normal(size=5) + 1j * rng.normal(size=5)
    assert expectation(sp.identity(5), v / np.linalg.norm(v)) == pytest.approx(1)
    c = fock_amplitudes(Coherent(1.0), 13)
    assert expectation(number_operator(14), c) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        expectation(sp.csr_matrix(np.triu(np.ones((3, 3)))), np.eye(3)[0])


def test_jump_operators():
    basis = ProductBasis(2, 2)
    Ls = jump_operators(basis, DecayRates(0.5, 0.0, 2.0))
    assert len(Ls) == 2
    k = basis.index(SiteLabel(0, Atom.R, 0))
    j = basis.index(SiteLabel(0, Atom.G, 0))
    assert Ls[0][j, k] == pytest.approx(math.sqrt(0.5))


def test_site_populations_on_product_basis():
    N = 2
    basis = ProductBasis(N, N, max_excitation=N)
    state = prepare_initial(Fock(N), basis)
    chain = build_chain_basis(N)
    assert np.array_equal(site_populations(state, chain), np.eye(5)[0])
    assert np.array_equal(site_populations(state.to_density(), chain), np.eye(5)[0])


def test_trajectory_serialization(tmp_path):
    t = np.linspace(0, 1, 4)
    tr = Trajectory(t, {"a": t ** 2, "v": np.outer(t, [1.0, 2.0])})
    tr.to_csv(tmp_path / "x.csv")
    rows = list(csv.reader(open(tmp_path / "x.csv")))
    assert rows[0] == ["t_us", "a", "v_1", "v_2"]
    assert float(rows[2][1]) == t[1] ** 2
    tr.to_json(tmp_path / "x.json", {"seed": 3})
    doc = json.load(open(tmp_path / "x.json"))
    assert doc["provenance"]["seed"] == 3 and doc["columns"][0] == "t_us"
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], {})


def test_rk45_dense_output_matches_solve_ivp():
    # the streaming stepper must reproduce solve_ivp with t_eval exactly
    from scipy.integrate import solve_ivp

    H = chain_hamiltonian(ChainModel("fsl", 3), Couplings(0.5, 1.2)).toarray()
    y0 = np.eye(7, dtype=complex)[1]
    t = np.linspace(0, 4, 17)
    sol = solve_ivp(lambda s, y: -1j * (H @ y), (0, 4), y0, t_eval=t, rtol=1e-9, atol=1e-12)
    tr = evolve_schrodinger([(H, lambda s: 1.0)], QuantumState.pure(build_chain_basis(3), y0), t, keep_states=True)
    assert np.max(np.abs(np.array(tr.states).T - sol.y)) < 1e-13
    assert np.max(np.abs(tr.final_state - expm(-4j * H) @ y0)) < 1e-8
